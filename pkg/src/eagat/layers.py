"""One enhanced graph-attention layer.

The attention grid is an additive outer sum of per-clause row and
column scores. Normalization is the literal LeakyReLU ratio (not a
softmax): each row is divided by the sum of its activated scores, so
rows can hold negative entries and need not sum to 1 when some scores
are negative. Aggregation runs three mask-restricted operators with
separate weights, one per clause-relationship class, and sums them.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .autodiff import (
    Tensor,
    add,
    constant,
    div,
    elu,
    leaky_relu,
    matmul,
    mul,
    row_sums,
    transpose,
)
from .segmentation import MultiMask, mask_partition


@dataclass
class EgatParams:
    """Learnable weights of one layer.

    The first layer scores clauses from their content embeddings
    (``w_row``/``w_col``). Deeper layers score from the rank bridge
    instead (``w_rank_row``/``w_rank_col``); unused projections are None.
    Every layer owns three independent aggregation matrices, one per
    mask class.
    """

    w_mask: tuple[Tensor, Tensor, Tensor]
    w_row: Tensor | None = None
    w_col: Tensor | None = None
    w_rank_row: Tensor | None = None
    w_rank_col: Tensor | None = None

    def named(self, prefix: str) -> list[tuple[str, Tensor]]:
        names: list[tuple[str, Tensor]] = []
        if self.w_row is not None:
            names.append((f"{prefix}.w_row", self.w_row))
        if self.w_col is not None:
            names.append((f"{prefix}.w_col", self.w_col))
        if self.w_rank_row is not None:
            names.append((f"{prefix}.w_rank_row", self.w_rank_row))
        if self.w_rank_col is not None:
            names.append((f"{prefix}.w_rank_col", self.w_rank_col))
        for m, w in enumerate(self.w_mask):
            names.append((f"{prefix}.w_mask{m}", w))
        return names


def outer_sum(row_scores: Tensor, col_scores: Tensor) -> Tensor:
    """Grid e[i][j] = row_scores[i] + col_scores[j] from two (n,1) columns."""
    n = row_scores.shape[0]
    ones_row = constant(np.ones((1, n)))
    ones_col = constant(np.ones((n, 1)))
    return add(matmul(row_scores, ones_row), matmul(ones_col, transpose(col_scores)))


def attention_scores(x: Tensor, params: EgatParams) -> Tensor:
    """Additive score grid from clause embeddings: (X w_row)_i + (X w_col)_j."""
    return outer_sum(matmul(x, params.w_row), matmul(x, params.w_col))


def rank_attention_scores(r_e_emb: Tensor, r_c_emb: Tensor, params: EgatParams) -> Tensor:
    """Score grid with rows from emotion-rank features, columns from cause-rank features."""
    return outer_sum(matmul(r_e_emb, params.w_rank_row), matmul(r_c_emb, params.w_rank_col))


def normalize(e: Tensor, slope: float, eps: float) -> Tensor:
    """Rowwise LeakyReLU ratio with an eps-stabilized denominator.

    A row whose activated scores cancel to |sum| < eps has no meaningful
    ratio; it falls back to the uniform row 1/n with zero gradient.
    """
    n = e.shape[0]
    activated = leaky_relu(e, slope)
    sums = row_sums(activated)
    degenerate = np.abs(sums.values) < eps
    ones_row = constant(np.ones((1, n)))
    if degenerate.any():
        keep = constant((~degenerate).astype(float))
        # Force the dead rows' denominator to 1 so the zeroed branch stays finite.
        safe_sums = add(mul(sums, keep), constant(degenerate.astype(float)))
        denominator = matmul(add(safe_sums, constant([[eps]])), ones_row)
        ratio = mul(div(activated, denominator), matmul(keep, ones_row))
        uniform = constant(degenerate.astype(float) * np.full((n, n), 1.0 / n))
        return add(ratio, uniform)
    denominator = matmul(add(sums, constant([[eps]])), ones_row)
    return div(activated, denominator)


def masked_aggregate(a: Tensor, x: Tensor, mask: MultiMask, params: EgatParams, alpha: float) -> Tensor:
    """Sum of the three mask-restricted attention operators.

    h = sum over m of ELU(A_m X W_m), where A_m keeps exactly the
    adjacency entries whose relationship class is m.
    """
    h: Tensor | None = None
    for m, w_m in enumerate(params.w_mask):
        indicator = constant(mask_partition(mask, m).astype(float))
        a_m = mul(a, indicator)
        term = elu(matmul(matmul(a_m, x), w_m), alpha)
        h = term if h is None else add(h, term)
    assert h is not None
    return h


def residual_adjacency(e: Tensor, a_prev: Tensor, slope: float, eps: float) -> tuple[Tensor, Tensor]:
    """Normalized scores plus the previous layer's adjacency.

    Returns (adjacency, normalized_scores); the normalized grid is kept
    so the layered recurrence can be audited as a telescoping sum.
    """
    normalized = normalize(e, slope, eps)
    return add(normalized, a_prev), normalized
