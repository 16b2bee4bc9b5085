"""Per-video forward pass, the anticipation loss, and checkpointing.

Each frame's object features are refined by the aggregation block using
the previous hidden state, mean-pooled into a frame descriptor,
concatenated with the full-frame feature, and fed to the LSTM; a linear
head plus softmax turns each hidden state into accident/non-accident
probabilities. The loss is cross entropy with frame weights that grow
exponentially toward the accident frame of positive videos.
"""

from __future__ import annotations

import io
import math
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import autodiff as ad
from . import fa_block, recurrent
from .autodiff import ContractError, NumericError, ShapeError, Tensor
from .data import VideoSample
from .fa_block import FAParams, Variant
from .recurrent import LSTMParams, LSTMState

INIT_STD = 0.01
LOG_EPS = 1e-12

LOSS_EXPONENT_MODES = ("intent", "intent-frames", "literal")


@dataclass
class ModelParams:
    """Every learnable tensor: aggregation block, LSTM, classifier head."""

    d: int
    hidden: int
    variant: Variant
    fa: FAParams
    lstm: LSTMParams
    w_o: Tensor
    b_o: Tensor

    @classmethod
    def initialise(cls, d: int, variant: Variant | str,
                   rng: np.random.Generator, dtype=np.float32) -> "ModelParams":
        variant = Variant(variant)
        hidden = 2 * d
        fa = FAParams.initialise(d, hidden, variant, rng, dtype)
        lstm = LSTMParams.initialise(2 * d, hidden, rng, dtype)
        w_o = Tensor(rng.normal(0.0, INIT_STD, (hidden, 2)), requires_grad=True, dtype=dtype)
        b_o = Tensor(rng.normal(0.0, INIT_STD, 2), requires_grad=True, dtype=dtype)
        return cls(d=d, hidden=hidden, variant=variant, fa=fa, lstm=lstm, w_o=w_o, b_o=b_o)

    def named(self) -> list[tuple[str, Tensor]]:
        return self.fa.named() + self.lstm.named() + [("head.w_o", self.w_o), ("head.b_o", self.b_o)]

    def census(self) -> dict[str, int]:
        """Per-parameter element counts plus a 'total' entry."""
        counts = {name: t.size for name, t in self.named()}
        counts["total"] = sum(counts.values())
        return counts

    def zero_grads(self) -> None:
        for _, t in self.named():
            t.grad = None

    @property
    def dtype(self):
        return self.w_o.dtype


def _check_sample(sample: VideoSample, params: ModelParams) -> None:
    if sample.d != params.d:
        raise ShapeError(f"sample feature dim {sample.d} != model d {params.d}")


def forward_video(sample: VideoSample, params: ModelParams,
                  training: bool = False, dropout_rate: float = 0.0,
                  rng: np.random.Generator | None = None,
                  collect_alpha: bool = False):
    """Per-frame class probabilities for one video, shape (S, 2).

    Causal: row t is a function of frames 1..t only. With collect_alpha a
    list of attention snapshots (numpy, one per frame) is returned too.
    """
    _check_sample(sample, params)
    dtype = params.dtype
    state = LSTMState.zeros(params.hidden, dtype=dtype)
    probs = []
    alphas = [] if collect_alpha else None
    for t in range(sample.n_frames):
        x_t = _frame_input(sample, t, state, params, dtype, alphas)
        state, h_out = recurrent.lstm_step(x_t, state, params.lstm,
                                           dropout_rate, training, rng)
        logits = ad.add(ad.matmul(h_out, params.w_o), params.b_o)
        probs.append(ad.softmax_rows(logits))
    stacked = ad.vstack(probs)
    return (stacked, alphas) if collect_alpha else stacked


def _frame_input(sample: VideoSample, t: int, state: LSTMState,
                 params: ModelParams, dtype, alphas) -> Tensor:
    """[frame feature; frame descriptor] for frame t, shape (1, 2d)."""
    k = int(sample.n_objects[t])
    big_x = Tensor(sample.frame_feats[t].astype(dtype, copy=False))
    if k == 0:
        # No detections: no context to aggregate, descriptor is zero.
        m = Tensor(np.zeros(params.d, dtype=dtype))
        if alphas is not None:
            n = sample.max_objects
            alphas.append(np.zeros((n, n), dtype=dtype))
    else:
        o_t = Tensor(sample.object_feats[t].astype(dtype, copy=False))
        m, alpha = fa_block.fa_forward(o_t, state.h, params.fa, n_valid=k)
        if alphas is not None:
            alphas.append(alpha.data.copy())
    return ad.reshape(ad.concat(big_x, m), (1, 2 * params.d))


def frame_weights(s: int, positive: bool, tau: float, fps: float,
                  mode: str = "intent", dtype=np.float64) -> np.ndarray:
    """Per-frame loss weights.

    Positives weight frame t by an exponential in the time remaining to
    the accident: "intent" uses exp(-(tau-t)/fps) so weights rise from
    near zero to exactly 1 at tau and stay 1 after; "intent-frames" is
    the same with the exponent in frames; "literal" uses exp(tau-t),
    which grows for early frames and overflows float32 for tau-t beyond
    about 88 frames. Negatives weight every frame 1.
    """
    if mode not in LOSS_EXPONENT_MODES:
        raise ContractError(f"unknown loss-exponent mode {mode!r}")
    if not positive:
        return np.ones(s, dtype=dtype)
    t = np.arange(1, s + 1, dtype=dtype)
    remaining = np.maximum(0.0, tau - t)
    if mode == "intent":
        w = np.exp(-remaining / fps)
    elif mode == "intent-frames":
        w = np.exp(-remaining)
    else:
        with np.errstate(over="ignore"):
            w = np.exp((tau - t).astype(dtype))
    if not np.all(np.isfinite(w)):
        raise NumericError(
            f"loss weights overflow {np.dtype(dtype).name} in mode {mode!r} "
            f"(tau={tau}, S={s}); use the 64-bit mode for the literal exponent")
    return w


def anticipation_loss(probs: Tensor, positive: bool, tau: float, fps: float,
                      mode: str = "intent") -> Tensor:
    """Mean weighted cross entropy over a video's frames (scalar tensor)."""
    if probs.data.ndim != 2 or probs.shape[1] != 2:
        raise ShapeError(f"anticipation_loss: expected (S, 2) probabilities, got {probs.shape}")
    s = probs.shape[0]
    if positive != math.isfinite(tau):
        raise ContractError(f"tau {tau} inconsistent with positive={positive}")
    if positive and not 1 <= tau <= s:
        raise ContractError(f"tau {tau} outside [1, {s}]")
    w = frame_weights(s, positive, tau, fps, mode, dtype=probs.dtype)
    target = np.zeros((s, 2), dtype=probs.dtype)
    target[:, 1 if positive else 0] = -w / s
    logp = ad.log(ad.clamp_min(probs, LOG_EPS))
    return ad.sum_all(ad.mul(logp, Tensor(target)))


# ---------------------------------------------------------------------------
# streaming prediction


class StreamPredictor:
    """Frame-at-a-time inference that matches forward_video bit for bit.

    Frames must arrive in order (1-based); the internal LSTM state can be
    serialised mid-stream and restored to resume on the same sequence.
    """

    def __init__(self, params: ModelParams):
        self.params = params
        self.state = LSTMState.zeros(params.hidden, dtype=params.dtype)
        self.next_frame = 1

    def feed(self, t: int, object_feats: np.ndarray, frame_feat: np.ndarray,
             n_valid: int | None = None) -> float:
        """Consume frame t, returning the accident probability after it."""
        if t != self.next_frame:
            raise ContractError(f"out-of-order frame {t}, expected {self.next_frame}")
        dtype = self.params.dtype
        n, d = object_feats.shape
        k = n if n_valid is None else int(n_valid)
        big_x = Tensor(frame_feat.astype(dtype, copy=False))
        if k == 0:
            m = Tensor(np.zeros(d, dtype=dtype))
        else:
            o_t = Tensor(object_feats.astype(dtype, copy=False))
            m, _ = fa_block.fa_forward(o_t, self.state.h, self.params.fa, n_valid=k)
        x_t = ad.reshape(ad.concat(big_x, m), (1, 2 * d))
        self.state, h_out = recurrent.lstm_step(x_t, self.state, self.params.lstm)
        logits = ad.add(ad.matmul(h_out, self.params.w_o), self.params.b_o)
        prob = ad.softmax_rows(logits).data[0, 1]
        self.next_frame += 1
        return float(prob)

    def feed_sample(self, sample: VideoSample) -> list[float]:
        return [
            self.feed(self.next_frame, sample.object_feats[t], sample.frame_feats[t],
                      int(sample.n_objects[t]))
            for t in range(sample.n_frames)
        ]

    def state_blob(self) -> bytes:
        """Serialised (next_frame, h, c) for mid-stream restart."""
        buf = io.BytesIO()
        dtype_code = b"d" if self.params.dtype == np.float64 else b"f"
        buf.write(struct.pack("<IcI", self.next_frame, dtype_code, self.params.hidden))
        buf.write(self.state.h.data.astype("<f8").tobytes())
        buf.write(self.state.c.data.astype("<f8").tobytes())
        return buf.getvalue()

    def restore(self, blob: bytes) -> None:
        next_frame, dtype_code, hidden = struct.unpack_from("<IcI", blob, 0)
        if hidden != self.params.hidden:
            raise ContractError(f"state blob hidden size {hidden} != model {self.params.hidden}")
        offset = struct.calcsize("<IcI")
        count = hidden
        h = np.frombuffer(blob, dtype="<f8", count=count, offset=offset)
        c = np.frombuffer(blob, dtype="<f8", count=count, offset=offset + 8 * count)
        dtype = np.float64 if dtype_code == b"d" else np.float32
        self.state = LSTMState(h=Tensor(h.reshape(1, -1).astype(dtype)),
                               c=Tensor(c.reshape(1, -1).astype(dtype)))
        self.next_frame = next_frame


# ---------------------------------------------------------------------------
# checkpoints

CHECKPOINT_MAGIC = b"FACP"
CHECKPOINT_VERSION = 1


def save_checkpoint(path, params: ModelParams, max_objects: int = 9) -> None:
    """Single-file checkpoint: version, config, manifest, float32 arrays."""
    variant = params.variant.value.encode()
    with open(path, "wb") as fh:
        fh.write(CHECKPOINT_MAGIC)
        fh.write(struct.pack("<HIIIH", CHECKPOINT_VERSION, params.d, max_objects,
                             params.hidden, len(variant)))
        fh.write(variant)
        named = params.named()
        fh.write(struct.pack("<I", len(named)))
        for name, tensor in named:
            encoded = name.encode()
            fh.write(struct.pack("<H", len(encoded)))
            fh.write(encoded)
            fh.write(struct.pack("<B", tensor.data.ndim))
            fh.write(struct.pack(f"<{tensor.data.ndim}I", *tensor.shape))
        for _, tensor in named:
            fh.write(tensor.data.astype("<f4").tobytes())


def load_checkpoint(path, dtype=np.float32) -> tuple[ModelParams, dict]:
    raw = Path(path).read_bytes()
    if raw[:4] != CHECKPOINT_MAGIC:
        raise ValueError(f"{path}: not a checkpoint file")
    version, d, max_objects, hidden, vlen = struct.unpack_from("<HIIIH", raw, 4)
    if version != CHECKPOINT_VERSION:
        raise ValueError(f"{path}: unsupported checkpoint version {version}")
    offset = 4 + struct.calcsize("<HIIIH")
    variant = Variant(raw[offset:offset + vlen].decode())
    offset += vlen
    (n_params,) = struct.unpack_from("<I", raw, offset)
    offset += 4

    manifest: list[tuple[str, tuple[int, ...]]] = []
    for _ in range(n_params):
        (nlen,) = struct.unpack_from("<H", raw, offset)
        offset += 2
        name = raw[offset:offset + nlen].decode()
        offset += nlen
        (ndim,) = struct.unpack_from("<B", raw, offset)
        offset += 1
        shape = struct.unpack_from(f"<{ndim}I", raw, offset)
        offset += 4 * ndim
        manifest.append((name, shape))

    params = ModelParams.initialise(d, variant, np.random.default_rng(0), dtype=dtype)
    if params.hidden != hidden:
        raise ValueError(f"{path}: hidden size {hidden} inconsistent with d={d}")
    by_name = dict(params.named())
    for name, shape in manifest:
        count = int(np.prod(shape)) if shape else 1
        arr = np.frombuffer(raw, dtype="<f4", count=count, offset=offset).reshape(shape)
        offset += 4 * count
        tensor = by_name.get(name)
        if tensor is None:
            raise ValueError(f"{path}: checkpoint parameter {name!r} unknown to variant {variant.value}")
        if tensor.shape != shape:
            raise ShapeError(f"{path}: {name} has shape {shape}, model expects {tensor.shape}")
        tensor.data = arr.astype(dtype)
    meta = {"d": d, "max_objects": max_objects, "hidden": hidden, "variant": variant}
    return params, meta
