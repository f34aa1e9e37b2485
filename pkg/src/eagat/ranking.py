"""Rank-label mapping of prediction sequences and the learnable rank embedding.

A prediction sequence in [0, 1] is replaced by a permutation of a fixed
label sequence: the clause with the k-th smallest prediction receives
the k-th label value, ties broken by original index. Because labels are
non-decreasing, larger predictions always receive larger-or-equal
labels. The mapping is rank-based, so no gradient flows through it;
only the embedding table looked up afterwards is learnable.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .autodiff import Tensor, constant, matmul
from .errors import ConfigError, ContractError

LABEL_SCHEMES = ("linear", "log2")


def make_labels(n: int, kind: str) -> list[int]:
    """The label sequence of length n for the given scheme.

    ``linear`` is 1..n. ``log2`` assigns position i (1-based) the value
    2**(floor(log2 n) - floor(log2 (n - i + 1))), computed on exact
    integers via bit_length, never through floating-point logs.
    """
    if n < 1:
        raise ContractError(f"label sequence needs n >= 1; got {n}")
    if kind == "linear":
        return list(range(1, n + 1))
    if kind == "log2":
        top = n.bit_length() - 1
        return [2 ** (top - ((n - i + 1).bit_length() - 1)) for i in range(1, n + 1)]
    raise ConfigError(f"unknown label scheme {kind!r}; expected one of {LABEL_SCHEMES}")


def rank_map(yhat: Sequence[float], labels: Sequence[int]) -> list[int]:
    """Assign labels by rank: k-th smallest prediction gets labels[k].

    Stable on ties (earlier clause index wins the smaller label). The
    output is always a permutation of ``labels``.
    """
    n = len(yhat)
    if n != len(labels):
        raise ContractError(f"prediction length {n} does not match label length {len(labels)}")
    if not all(math.isfinite(float(v)) for v in yhat):
        raise ContractError("predictions must be finite")
    order = sorted(range(n), key=lambda i: (float(yhat[i]), i))
    out = [0] * n
    for k, i in enumerate(order):
        out[i] = labels[k]
    return out


@dataclass
class RankMap:
    """Rank-label sequences for both subtasks plus the scheme that produced them."""

    r_e: list[int]
    r_c: list[int]
    scheme: str


def label_values_up_to(max_len: int, kind: str) -> list[int]:
    """Every label value producible for documents up to max_len clauses."""
    if max_len < 1:
        raise ContractError(f"maximum document length must be >= 1; got {max_len}")
    return sorted(set(make_labels(max_len, kind)))


@dataclass
class RankEmbedding:
    """Learnable vector per label value (rows of ``table``)."""

    table: Tensor
    value_to_row: dict[int, int]

    @property
    def dim(self) -> int:
        return self.table.shape[1]


def build_rank_embedding(max_len: int, kind: str, dim: int, rng: np.random.Generator) -> RankEmbedding:
    values = label_values_up_to(max_len, kind)
    table = Tensor(rng.uniform(-0.1, 0.1, size=(len(values), dim)), requires_grad=True)
    table.name = "rank_embedding"
    return RankEmbedding(table=table, value_to_row={v: i for i, v in enumerate(values)})


def embed_ranks(ranks: Sequence[int], emb: RankEmbedding) -> Tensor:
    """Look up the table row for each rank value; rows stack to (n, dim).

    Gradients flow into the table (it is learnable) but not back through
    the integer ranks.
    """
    rows = np.zeros((len(ranks), emb.table.shape[0]))
    for i, value in enumerate(ranks):
        row = emb.value_to_row.get(int(value))
        if row is None:
            raise ConfigError(
                f"rank value {value} is not covered by the embedding table; "
                f"raise the configured maximum document length"
            )
        rows[i, row] = 1.0
    return matmul(constant(rows, name="rank_selector"), emb.table)
