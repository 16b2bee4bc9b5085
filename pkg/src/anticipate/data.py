"""Feature-file I/O, dataset manifests, and the synthetic generator.

A video's features live in one binary file: a fixed little-endian header
(magic "FAAB"), a per-frame object-count table, and a float32 payload of
S frames times (N+1) rows of d values, where row 0 of each frame is the
full-frame feature and rows 1..N are object features, zero-padded past
the frame's object count.

The generator fabricates desk-scale datasets with the same shapes:
negative videos are stationary noise around prototype features, positive
videos additionally drive two designated object tracks toward a shared
collision signature whose magnitude ramps up toward the accident frame.
"""

from __future__ import annotations

import math
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

MAGIC = b"FAAB"
FORMAT_VERSION = 1
TAU_SENTINEL = 0xFFFFFFFF

_HEADER = struct.Struct("<4sHIIIfBI")  # magic, version, S, N, d, fps, label, tau


class FeatureFileError(ValueError):
    """Malformed feature file; carries the byte offset of the defect."""

    def __init__(self, message: str, offset: int):
        super().__init__(f"{message} (at byte offset {offset})")
        self.offset = offset


@dataclass
class VideoSample:
    """Per-frame features plus the video-level label.

    object_feats is (S, N, d) with zero padding past each frame's object
    count; frame_feats is (S, d). tau is the 1-based accident frame for
    positives and math.inf for negatives.
    """

    object_feats: np.ndarray
    frame_feats: np.ndarray
    positive: bool
    tau: float
    fps: float = 20.0
    n_objects: np.ndarray | None = None
    video_id: str = ""

    def __post_init__(self):
        s, n, d = self.object_feats.shape
        if self.frame_feats.shape != (s, d):
            raise ValueError(
                f"frame_feats shape {self.frame_feats.shape} does not match objects {(s, d)}")
        if self.n_objects is None:
            self.n_objects = np.full(s, n, dtype=np.uint8)
        if self.positive:
            if not (math.isfinite(self.tau) and 1 <= self.tau <= s):
                raise ValueError(f"positive video needs tau in [1, {s}], got {self.tau}")
        elif math.isfinite(self.tau):
            raise ValueError("negative video must use the infinite tau sentinel")
        if not (np.all(np.isfinite(self.object_feats)) and np.all(np.isfinite(self.frame_feats))):
            raise ValueError("features must be finite")

    @property
    def n_frames(self) -> int:
        return self.object_feats.shape[0]

    @property
    def max_objects(self) -> int:
        return self.object_feats.shape[1]

    @property
    def d(self) -> int:
        return self.object_feats.shape[2]

    @property
    def y(self) -> np.ndarray:
        """One-hot label, index 0 = non-accident, 1 = accident."""
        return np.array([0.0, 1.0] if self.positive else [1.0, 0.0], dtype=np.float32)


def write_feature_file(sample: VideoSample, path: str | Path) -> None:
    s, n, d = sample.object_feats.shape
    tau = TAU_SENTINEL if not sample.positive else int(sample.tau)
    header = _HEADER.pack(MAGIC, FORMAT_VERSION, s, n, d,
                          float(sample.fps), int(sample.positive), tau)
    payload = np.empty((s, n + 1, d), dtype="<f4")
    payload[:, 0, :] = sample.frame_feats
    payload[:, 1:, :] = sample.object_feats
    with open(path, "wb") as fh:
        fh.write(header)
        fh.write(np.ascontiguousarray(sample.n_objects, dtype=np.uint8).tobytes())
        fh.write(payload.tobytes())


def read_feature_file(path: str | Path) -> VideoSample:
    raw = Path(path).read_bytes()
    if len(raw) < _HEADER.size:
        raise FeatureFileError(f"{path}: truncated header", len(raw))
    magic, version, s, n, d, fps, label, tau = _HEADER.unpack_from(raw, 0)
    if magic != MAGIC:
        raise FeatureFileError(f"{path}: bad magic {magic!r}", 0)
    if version != FORMAT_VERSION:
        raise FeatureFileError(f"{path}: unsupported format version {version}", 4)
    counts_end = _HEADER.size + s
    if len(raw) < counts_end:
        raise FeatureFileError(f"{path}: truncated object-count table", len(raw))
    counts = np.frombuffer(raw, dtype=np.uint8, count=s, offset=_HEADER.size)
    if counts.size and counts.max(initial=0) > n:
        bad = int(np.argmax(counts > n))
        raise FeatureFileError(f"{path}: frame {bad} claims {counts[bad]} objects > N={n}",
                               _HEADER.size + bad)
    expected_end = counts_end + s * (n + 1) * d * 4
    if len(raw) < expected_end:
        raise FeatureFileError(
            f"{path}: truncated payload, expected {expected_end} bytes got {len(raw)}", len(raw))
    positive = bool(label)
    if positive == (tau == TAU_SENTINEL):
        raise FeatureFileError(f"{path}: label {label} inconsistent with tau field {tau}", 22)
    payload = np.frombuffer(raw, dtype="<f4", count=s * (n + 1) * d,
                            offset=counts_end).reshape(s, n + 1, d)
    return VideoSample(
        object_feats=payload[:, 1:, :].copy(),
        frame_feats=payload[:, 0, :].copy(),
        positive=positive,
        tau=float(tau) if positive else math.inf,
        fps=fps,
        n_objects=counts.copy(),
        video_id=Path(path).stem,
    )


# ---------------------------------------------------------------------------
# manifests


@dataclass
class DatasetManifest:
    """Paths per split, as stored in a plain-text manifest file."""

    train: list[Path] = field(default_factory=list)
    test: list[Path] = field(default_factory=list)
    comments: list[str] = field(default_factory=list)

    def paths(self, split: str) -> list[Path]:
        if split not in ("train", "test"):
            raise ValueError(f"unknown split {split!r}")
        return self.train if split == "train" else self.test


def write_manifest(manifest: DatasetManifest, path: str | Path) -> None:
    lines = [f"# {c}" for c in manifest.comments]
    lines += [f"{p}\ttrain" for p in manifest.train]
    lines += [f"{p}\ttest" for p in manifest.test]
    Path(path).write_text("\n".join(lines) + "\n")


def read_manifest(path: str | Path) -> DatasetManifest:
    manifest = DatasetManifest()
    seen: set[str] = set()
    for lineno, line in enumerate(Path(path).read_text().splitlines(), start=1):
        line = line.strip()
        if not line:
            continue
        if line.startswith("#"):
            manifest.comments.append(line[1:].strip())
            continue
        try:
            file_path, split = line.split("\t")
        except ValueError:
            raise ValueError(f"{path}:{lineno}: expected 'path<TAB>split', got {line!r}") from None
        if file_path in seen:
            raise ValueError(f"{path}:{lineno}: duplicate path {file_path!r}")
        seen.add(file_path)
        manifest.paths(split).append(Path(file_path))
    return manifest


def load_split(manifest: DatasetManifest, split: str,
               base_dir: str | Path | None = None) -> list[VideoSample]:
    samples = []
    for p in manifest.paths(split):
        full = Path(base_dir) / p if base_dir is not None and not p.is_absolute() else p
        samples.append(read_feature_file(full))
    return samples


# ---------------------------------------------------------------------------
# synthetic generator

# Shape of the fabricated data, relative to unit-scale prototype features.
_N_PROTOTYPES = 6
_OBS_NOISE = 0.15          # per-frame observation noise
_WALK_NOISE = 0.02         # per-frame random-walk drift of each track
_SIGNATURE_GAIN = 3.0      # collision signature norm, in units of sqrt(d)
_EARLY_CUE = 0.65          # fraction of full amplitude present from frame 1
_RAMP_FRAMES = 30          # frames before tau over which the ramp rises


def _collision_amplitude(s: int, tau: int, difficulty: float) -> np.ndarray:
    """Per-frame signature mix-in, monotone and equal to difficulty from tau on."""
    t = np.arange(1, s + 1, dtype=np.float64)
    start = max(1, tau - _RAMP_FRAMES)
    ramp = np.clip((t - start) / max(tau - start, 1), 0.0, 1.0)
    return difficulty * (_EARLY_CUE + (1.0 - _EARLY_CUE) * ramp)


def default_tau(s: int) -> int:
    """Accident frame placed at the last tenth of the sequence."""
    return max(1, s - max(1, round(s / 10)))


def generate_synthetic(count_pos: int, count_neg: int, s: int = 100, n: int = 9,
                       d: int = 32, fps: float = 20.0, seed: int = 0,
                       difficulty: float = 1.0, tau: int | None = None) -> list[VideoSample]:
    """Fabricate a labelled dataset of per-frame feature sequences.

    Negative videos: each object follows a prototype plus a slow random
    walk plus observation noise; the full-frame feature is a separate
    prototype plus noise. Positive videos additionally blend two chosen
    object tracks toward a shared signature vector with the amplitude
    profile above; their noise is kept orthogonal to the signature so the
    signature projection is exactly non-decreasing through the ramp. At
    difficulty 0 the positive branch is skipped entirely, making the two
    classes identically distributed.

    Deterministic for a given seed; positives come first in the result.
    """
    if count_pos < 0 or count_neg < 0 or count_pos + count_neg == 0:
        raise ValueError("need a positive total video count")
    if not 0.0 <= difficulty <= 1.0:
        raise ValueError(f"difficulty must be in [0, 1], got {difficulty}")
    if tau is None:
        tau = default_tau(s)
    if not 1 <= tau <= s:
        raise ValueError(f"tau must be in [1, {s}], got {tau}")

    rng = np.random.default_rng(seed)
    signature = rng.normal(0.0, 1.0, d)
    signature *= _SIGNATURE_GAIN * math.sqrt(d) / np.linalg.norm(signature)
    prototypes = rng.normal(0.0, 1.0, (_N_PROTOTYPES, d))
    frame_prototypes = rng.normal(0.0, 1.0, (_N_PROTOTYPES, d))
    amp = _collision_amplitude(s, tau, difficulty)

    def make_video(positive: bool, index: int) -> VideoSample:
        bases = prototypes[rng.integers(0, _N_PROTOTYPES, n)] + rng.normal(0.0, 0.3, (n, d))
        walk = np.cumsum(rng.normal(0.0, _WALK_NOISE, (s, n, d)), axis=0)
        noise = rng.normal(0.0, _OBS_NOISE, (s, n, d))
        frame_base = frame_prototypes[rng.integers(0, _N_PROTOTYPES)]
        frame_feats = frame_base + rng.normal(0.0, _OBS_NOISE, (s, d))
        pair = rng.choice(n, size=min(2, n), replace=False)

        objects = bases[None, :, :] + walk + noise
        if positive and difficulty > 0.0:
            unit = signature / np.linalg.norm(signature)

            def perp(x):
                return x - np.outer(x @ unit, unit)

            # Colliding tracks keep no component along the signature except
            # the ramp itself, so the signature projection of these rows is
            # exactly amp(t) * ||signature||^2: monotone by construction.
            for k in pair:
                track = perp(bases[k][None, :] + walk[:, k, :])
                objects[:, k, :] = ((1.0 - amp[:, None]) * track
                                    + amp[:, None] * signature[None, :]
                                    + perp(noise[:, k, :]))

        return VideoSample(
            object_feats=objects.astype(np.float32),
            frame_feats=frame_feats.astype(np.float32),
            positive=positive,
            tau=float(tau) if positive else math.inf,
            fps=fps,
            video_id=f"{'pos' if positive else 'neg'}_{index:03d}",
        )

    videos = [make_video(True, i) for i in range(count_pos)]
    videos += [make_video(False, i) for i in range(count_neg)]
    return videos


def collision_signature(seed: int, d: int) -> np.ndarray:
    """The signature vector a given seed's dataset drifts toward."""
    rng = np.random.default_rng(seed)
    signature = rng.normal(0.0, 1.0, d)
    return signature * (_SIGNATURE_GAIN * math.sqrt(d) / np.linalg.norm(signature))
