"""Single-layer LSTM whose gates also observe the cell state.

The input and forget gates read the previous cell state and the output
gate reads the freshly updated one; the candidate path has no such term.
The cell-state couplings are full matrices, not the diagonal form some
peephole cells use. One step consumes one frame descriptor; a video is
processed strictly sequentially from a zero state.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import ShapeError, Tensor

INIT_STD = 0.01


@dataclass
class LSTMParams:
    """Gate weights: input maps w_*, recurrent maps u_*, cell-state maps v_*."""

    input_size: int
    hidden: int
    w_i: Tensor; u_i: Tensor; v_i: Tensor; b_i: Tensor
    w_f: Tensor; u_f: Tensor; v_f: Tensor; b_f: Tensor
    w_c: Tensor; u_c: Tensor; b_c: Tensor
    w_q: Tensor; u_q: Tensor; v_q: Tensor; b_q: Tensor

    @classmethod
    def initialise(cls, input_size: int, hidden: int,
                   rng: np.random.Generator, dtype=np.float32) -> "LSTMParams":
        def param(*shape):
            return Tensor(rng.normal(0.0, INIT_STD, shape), requires_grad=True, dtype=dtype)

        return cls(
            input_size=input_size,
            hidden=hidden,
            w_i=param(input_size, hidden), u_i=param(hidden, hidden),
            v_i=param(hidden, hidden), b_i=param(hidden),
            w_f=param(input_size, hidden), u_f=param(hidden, hidden),
            v_f=param(hidden, hidden), b_f=param(hidden),
            w_c=param(input_size, hidden), u_c=param(hidden, hidden),
            b_c=param(hidden),
            w_q=param(input_size, hidden), u_q=param(hidden, hidden),
            v_q=param(hidden, hidden), b_q=param(hidden),
        )

    def named(self) -> list[tuple[str, Tensor]]:
        return [
            ("lstm.w_i", self.w_i), ("lstm.u_i", self.u_i), ("lstm.v_i", self.v_i), ("lstm.b_i", self.b_i),
            ("lstm.w_f", self.w_f), ("lstm.u_f", self.u_f), ("lstm.v_f", self.v_f), ("lstm.b_f", self.b_f),
            ("lstm.w_c", self.w_c), ("lstm.u_c", self.u_c), ("lstm.b_c", self.b_c),
            ("lstm.w_q", self.w_q), ("lstm.u_q", self.u_q), ("lstm.v_q", self.v_q), ("lstm.b_q", self.b_q),
        ]


@dataclass
class LSTMState:
    """Hidden and cell state carried across frames, (1, hidden) each."""

    h: Tensor
    c: Tensor

    @classmethod
    def zeros(cls, hidden: int, dtype=np.float32) -> "LSTMState":
        return cls(h=Tensor(np.zeros((1, hidden), dtype=dtype)),
                   c=Tensor(np.zeros((1, hidden), dtype=dtype)))


def _gate(x, w, h, u, b, c=None, v=None):
    pre = ad.add(ad.matmul(x, w), ad.matmul(h, u))
    if c is not None:
        pre = ad.add(pre, ad.matmul(c, v))
    return ad.add(pre, b)


def lstm_step(x_t: Tensor, state: LSTMState, params: LSTMParams,
              dropout_rate: float = 0.0, training: bool = False,
              rng: np.random.Generator | None = None) -> tuple[LSTMState, Tensor]:
    """One recurrence step.

    Returns the new state plus the output view of the hidden state, which
    is the dropout-masked copy meant for the classifier head; the state
    itself carries the clean hidden state forward.
    """
    if x_t.shape != (1, params.input_size):
        raise ShapeError(f"lstm_step: expected input (1, {params.input_size}), got {x_t.shape}")
    h, c = state.h, state.c
    i = ad.sigmoid(_gate(x_t, params.w_i, h, params.u_i, params.b_i, c, params.v_i))
    f = ad.sigmoid(_gate(x_t, params.w_f, h, params.u_f, params.b_f, c, params.v_f))
    p = ad.tanh(_gate(x_t, params.w_c, h, params.u_c, params.b_c))
    c_new = ad.add(ad.mul(f, c), ad.mul(i, p))
    q = ad.sigmoid(_gate(x_t, params.w_q, h, params.u_q, params.b_q, c_new, params.v_q))
    h_new = ad.mul(q, ad.tanh(c_new))
    out = ad.dropout(h_new, dropout_rate, training, rng)
    return LSTMState(h=h_new, c=c_new), out


def unroll(x_seq: Tensor, params: LSTMParams,
           dropout_rate: float = 0.0, training: bool = False,
           rng: np.random.Generator | None = None) -> Tensor:
    """Run the cell over every row of x_seq from a zero state.

    Returns the stacked hidden states, one row per frame. Causal by
    construction: row t depends only on rows <= t.
    """
    if x_seq.data.ndim != 2 or x_seq.shape[0] < 1:
        raise ShapeError(f"unroll: expected non-empty (S, {params.input_size}) input, got {x_seq.shape}")
    state = LSTMState.zeros(params.hidden, dtype=x_seq.dtype)
    outputs = []
    for t in range(x_seq.shape[0]):
        state, _ = lstm_step(ad.take_row(x_seq, t), state, params,
                             dropout_rate, training, rng)
        outputs.append(state.h)
    return ad.vstack(outputs)
