"""Attention block that refines per-object features within one frame.

Each object's feature is strengthened by a weighted sum over all objects
in the frame; the weights come from dot-product similarity of learned
transformations of the features, conditioned on the recurrent hidden
state from the previous frame. Five selectable variants cover the
ablations: the final form, no query/key projections, mean scaling in
place of softmax, relu activations, and a concatenation relation head.
"""

from __future__ import annotations

from dataclasses import dataclass
from enum import Enum

import numpy as np

from . import autodiff as ad
from .autodiff import ShapeError, Tensor

INIT_STD = 0.01

# Additive logit mask for padded object slots; large enough that the
# masked entries underflow to exactly zero after max-subtraction.
_MASK_LOGIT = -1e30


class Variant(str, Enum):
    """Selectable forms of the aggregation block."""

    FINAL = "final"
    NO_PROJECTIONS = "fa1"     # query/key projection layers removed
    MEAN_SCALE = "fa2"         # softmax replaced by multiplication with 1/N
    RELU = "fa3"               # tanh replaced by relu
    RELATION_HEAD = "fa4"      # dot product replaced by a concat+relu head


@dataclass
class FAParams:
    """Learnable weights of the aggregation block.

    w_theta/w_phi project queries and keys (absent for NO_PROJECTIONS),
    w_u couples the recurrent hidden state in, w_g transforms the values,
    and w_r/b_r form the scalar relation head used by RELATION_HEAD only.
    """

    d: int
    hidden: int
    variant: Variant
    w_theta: Tensor | None
    b_theta: Tensor | None
    w_phi: Tensor | None
    b_phi: Tensor | None
    w_u: Tensor
    w_g: Tensor
    b_g: Tensor
    w_r: Tensor | None = None
    b_r: Tensor | None = None

    @classmethod
    def initialise(cls, d: int, hidden: int, variant: Variant,
                   rng: np.random.Generator, dtype=np.float32) -> "FAParams":
        def param(*shape):
            return Tensor(rng.normal(0.0, INIT_STD, shape), requires_grad=True, dtype=dtype)

        variant = Variant(variant)
        has_proj = variant is not Variant.NO_PROJECTIONS
        return cls(
            d=d,
            hidden=hidden,
            variant=variant,
            w_theta=param(d, d) if has_proj else None,
            b_theta=param(d) if has_proj else None,
            w_phi=param(d, d) if has_proj else None,
            b_phi=param(d) if has_proj else None,
            w_u=param(hidden, d),
            w_g=param(d, d),
            b_g=param(d),
            w_r=param(2 * d, 1) if variant is Variant.RELATION_HEAD else None,
            b_r=param(1) if variant is Variant.RELATION_HEAD else None,
        )

    def named(self) -> list[tuple[str, Tensor]]:
        """Parameters in declaration order, skipping absent ones."""
        pairs = [
            ("fa.w_theta", self.w_theta), ("fa.b_theta", self.b_theta),
            ("fa.w_phi", self.w_phi), ("fa.b_phi", self.b_phi),
            ("fa.w_u", self.w_u),
            ("fa.w_g", self.w_g), ("fa.b_g", self.b_g),
            ("fa.w_r", self.w_r), ("fa.b_r", self.b_r),
        ]
        return [(n, t) for n, t in pairs if t is not None]


def _act(params: FAParams, x: Tensor) -> Tensor:
    return ad.relu(x) if params.variant is Variant.RELU else ad.tanh(x)


def project_query(o_t: Tensor, params: FAParams) -> Tensor:
    """Row-wise affine query projection; identity under NO_PROJECTIONS."""
    if params.variant is Variant.NO_PROJECTIONS:
        return o_t
    return ad.add(ad.matmul(o_t, params.w_theta), params.b_theta)


def project_key(o_t: Tensor, params: FAParams) -> Tensor:
    """Row-wise affine key projection; identity under NO_PROJECTIONS."""
    if params.variant is Variant.NO_PROJECTIONS:
        return o_t
    return ad.add(ad.matmul(o_t, params.w_phi), params.b_phi)


def hidden_coupling(h_prev: Tensor, params: FAParams) -> Tensor:
    """Linear (bias-free) map of the previous hidden state into feature space."""
    if h_prev.shape != (1, params.hidden):
        raise ShapeError(f"hidden_coupling: expected (1, {params.hidden}), got {h_prev.shape}")
    return ad.reshape(ad.matmul(h_prev, params.w_u), (params.d,))


def _mask_bias(n: int, n_valid: int, dtype) -> Tensor:
    bias = np.zeros((n, n), dtype=dtype)
    bias[:, n_valid:] = _MASK_LOGIT
    return Tensor(bias)


def appearance_compare(o_t: Tensor, h_prev: Tensor, params: FAParams,
                       n_valid: int | None = None) -> Tensor:
    """Attention weights alpha (one row per query object).

    Rows are softmax-normalised except under MEAN_SCALE, where the raw
    similarity scores are scaled by 1/N instead. Object slots at index
    >= n_valid are padding: their columns are excluded from every row.
    """
    n = o_t.shape[0]
    if n < 1:
        raise ShapeError("appearance_compare: need at least one object")
    n_valid = n if n_valid is None else n_valid
    u = hidden_coupling(h_prev, params)
    a = _act(params, ad.add(project_query(o_t, params), u))
    b = _act(params, ad.add(project_key(o_t, params), u))

    if params.variant is Variant.RELATION_HEAD:
        e = _relation_scores(a, b, params)
    else:
        e = ad.matmul(a, ad.transpose(b))

    if params.variant is Variant.MEAN_SCALE:
        # 1/N over the objects actually present; padded columns zeroed.
        w = np.zeros((n, n), dtype=o_t.dtype)
        w[:, :n_valid] = 1.0 / n_valid
        return ad.mul(e, Tensor(w))
    if n_valid < n:
        e = ad.add(e, _mask_bias(n, n_valid, o_t.dtype))
    return ad.softmax_rows(e)


def _relation_scores(a: Tensor, b: Tensor, params: FAParams) -> Tensor:
    """relu(w_r[a_i; b_j] + b_r) for all pairs, without forming the pairs.

    The head weight splits into the halves applied to a_i and b_j, so the
    score matrix is an outer sum of the two projected columns.
    """
    n, d = a.shape
    av = ad.matmul(a, ad.slice_rows(params.w_r, 0, d))        # (n, 1)
    bv = ad.matmul(b, ad.slice_rows(params.w_r, d, 2 * d))    # (n, 1)
    ones_row = Tensor(np.ones((1, n), dtype=a.dtype))
    grid = ad.add(ad.matmul(av, ones_row), ad.reshape(bv, (n,)))
    return ad.relu(ad.add(grid, ad.broadcast_scalar(params.b_r, (n, n))))


def feature_refine(o_t: Tensor, alpha: Tensor, params: FAParams) -> Tensor:
    """Residual refinement: each object plus its attention-weighted context."""
    g = ad.add(ad.matmul(o_t, params.w_g), params.b_g)
    return ad.add(o_t, ad.matmul(alpha, g))


def aggregate(z_t: Tensor) -> Tensor:
    """Mean refined feature over the frame's objects."""
    return ad.mean_axis(z_t, axis=0)


def fa_forward(o_t: Tensor, h_prev: Tensor, params: FAParams,
               n_valid: int | None = None) -> tuple[Tensor, Tensor]:
    """Full block: returns the frame descriptor and the attention matrix.

    With n_valid < N the padded rows still pass through the block (static
    shapes) but are excluded from the attention columns and the mean.
    """
    n = o_t.shape[0]
    n_valid = n if n_valid is None else n_valid
    if not 1 <= n_valid <= n:
        raise ShapeError(f"fa_forward: n_valid={n_valid} out of range for {n} objects")
    alpha = appearance_compare(o_t, h_prev, params, n_valid)
    z = feature_refine(o_t, alpha, params)
    if n_valid == n:
        m = aggregate(z)
    else:
        w = np.zeros((1, n), dtype=o_t.dtype)
        w[0, :n_valid] = 1.0 / n_valid
        m = ad.reshape(ad.matmul(Tensor(w), z), (o_t.shape[1],))
    return m, alpha
