"""Per-clause emotion/cause heads, the pair scorer, and the four loss terms.

One head parameter set is shared across all layers. The pair scorer is
a minimal concat-projection: the logit for pair (i, j) is the first
half of ``w_pair`` applied to clause i plus the second half applied to
clause j, plus a bias.
"""

from __future__ import annotations

from dataclasses import dataclass, field

from .autodiff import (
    Tensor,
    add,
    clip,
    constant,
    log,
    matmul,
    max0,
    mul,
    neg,
    sigmoid,
    slice_rows,
    stop_gradient,
    sub,
    sum_all,
)
from .errors import ConfigError, ContractError
from .layers import outer_sum

PROB_CLAMP = 1e-7


@dataclass
class HeadParams:
    """Shared prediction heads: emotion, cause, and pair scoring."""

    w_emotion: Tensor
    b_emotion: Tensor
    w_cause: Tensor
    b_cause: Tensor
    w_pair: Tensor
    b_pair: Tensor

    def named(self) -> list[tuple[str, Tensor]]:
        return [
            ("heads.w_emotion", self.w_emotion),
            ("heads.b_emotion", self.b_emotion),
            ("heads.w_cause", self.w_cause),
            ("heads.b_cause", self.b_cause),
            ("heads.w_pair", self.w_pair),
            ("heads.b_pair", self.b_pair),
        ]


def predict_emotion_cause(h: Tensor, heads: HeadParams) -> tuple[Tensor, Tensor]:
    """Per-clause sigmoid scores for the two subtasks, each (n,1)."""
    yhat_e = sigmoid(add(matmul(h, heads.w_emotion), heads.b_emotion))
    yhat_c = sigmoid(add(matmul(h, heads.w_cause), heads.b_cause))
    return yhat_e, yhat_c


def predict_pairs(h: Tensor, heads: HeadParams) -> Tensor:
    """Pair-probability grid: sigmoid of the concat projection, (n,n)."""
    d = h.shape[1]
    half_row = slice_rows(heads.w_pair, 0, d)
    half_col = slice_rows(heads.w_pair, d, 2 * d)
    logits = add(outer_sum(matmul(h, half_row), matmul(h, half_col)), heads.b_pair)
    return sigmoid(logits)


def bce_loss(yhat: Tensor, y, swapped: bool = False) -> Tensor:
    """Binary cross-entropy summed over all entries.

    Predictions are clamped to [1e-7, 1 - 1e-7] before the logs.
    ``swapped=True`` exchanges the two log arguments, reproducing the
    non-standard pairing some formulations print; the default is the
    standard form.
    """
    target = constant(y)
    if target.shape != yhat.shape:
        raise ContractError(
            f"bce_loss: prediction shape {yhat.shape} does not match target shape {target.shape}"
        )
    p = clip(yhat, PROB_CLAMP, 1.0 - PROB_CLAMP)
    one = constant([[1.0]])
    log_p = log(p)
    log_1p = log(sub(one, p))
    if swapped:
        log_p, log_1p = log_1p, log_p
    pos = mul(target, log_p)
    negative = mul(sub(one, target), log_1p)
    return neg(sum_all(add(pos, negative)))


def gold_pair_probability(yhat_pair: Tensor, gold_pairs: set[tuple[int, int]]) -> Tensor:
    """Arithmetic mean of the pair probabilities at the gold positions.

    Indices are 1-based. Returns a scalar graph node.
    """
    if not gold_pairs:
        raise ContractError("gold_pair_probability needs at least one gold pair")
    n = yhat_pair.shape[0]
    weights = [[0.0] * n for _ in range(n)]
    share = 1.0 / len(gold_pairs)
    for i, j in gold_pairs:
        weights[i - 1][j - 1] += share
    return sum_all(mul(yhat_pair, constant(weights)))


def sort_loss(
    pair_probs_per_layer: list[Tensor],
    margin: float = 0.05,
    stop_gradient_enabled: bool = True,
) -> Tensor:
    """Layer-progress hinge on gold-pair probabilities.

    For each transition l-1 -> l adds max(0, P[l-1] - P[l]) + margin,
    pushing deeper layers to score gold pairs at least as high as the
    previous one. The earlier operand is gradient-stopped so this loss
    never pushes earlier layers down; ``stop_gradient_enabled=False``
    is a debug switch that lets the gradient through for contrast runs.
    With fewer than two layers the loss is 0 (no transitions).
    """
    total = constant([[0.0]])
    for prev, curr in zip(pair_probs_per_layer, pair_probs_per_layer[1:]):
        frozen = stop_gradient(prev) if stop_gradient_enabled else prev
        hinge = max0(sub(frozen, curr))
        total = add(total, add(hinge, constant([[margin]])))
    return total


@dataclass
class LossReport:
    """The four loss terms, their per-layer breakdown, and the weighted total."""

    loss_e: float
    loss_c: float
    loss_pair: float
    loss_sort: float
    total: float
    per_layer_e: list[float] = field(default_factory=list)
    per_layer_c: list[float] = field(default_factory=list)
    per_layer_pair: list[float] = field(default_factory=list)
    per_transition_sort: list[float] = field(default_factory=list)
    documents: int = 1

    def to_dict(self) -> dict:
        return {
            "loss_e": self.loss_e,
            "loss_c": self.loss_c,
            "loss_pair": self.loss_pair,
            "loss_sort": self.loss_sort,
            "total": self.total,
            "per_layer_e": self.per_layer_e,
            "per_layer_c": self.per_layer_c,
            "per_layer_pair": self.per_layer_pair,
            "per_transition_sort": self.per_transition_sort,
            "documents": self.documents,
        }

    @staticmethod
    def combine(reports: list["LossReport"]) -> "LossReport":
        """Sum reports over a batch (losses are sums, not means)."""
        if not reports:
            raise ContractError("cannot combine an empty list of loss reports")

        def sum_lists(lists: list[list[float]]) -> list[float]:
            width = max((len(x) for x in lists), default=0)
            return [sum(x[i] for x in lists if i < len(x)) for i in range(width)]

        return LossReport(
            loss_e=sum(r.loss_e for r in reports),
            loss_c=sum(r.loss_c for r in reports),
            loss_pair=sum(r.loss_pair for r in reports),
            loss_sort=sum(r.loss_sort for r in reports),
            total=sum(r.total for r in reports),
            per_layer_e=sum_lists([r.per_layer_e for r in reports]),
            per_layer_c=sum_lists([r.per_layer_c for r in reports]),
            per_layer_pair=sum_lists([r.per_layer_pair for r in reports]),
            per_transition_sort=sum_lists([r.per_transition_sort for r in reports]),
            documents=sum(r.documents for r in reports),
        )


def total_loss(
    loss_e: Tensor,
    loss_c: Tensor,
    loss_pair: Tensor,
    loss_sort_term: Tensor,
    weights: tuple[float, float, float, float],
) -> Tensor:
    """Weighted sum of the four terms. Weights must be non-negative."""
    if any(w < 0 for w in weights):
        raise ConfigError(f"loss weights must be non-negative; got {weights}")
    w_e, w_c, w_p, w_s = weights
    total = mul(loss_e, constant([[w_e]]))
    total = add(total, mul(loss_c, constant([[w_c]])))
    total = add(total, mul(loss_pair, constant([[w_p]])))
    total = add(total, mul(loss_sort_term, constant([[w_s]])))
    return total
