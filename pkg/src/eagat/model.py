"""Full L-layer clause encoder: embedding stand-in, stacked attention
layers bridged by rank sorting, shared heads, losses, optimization, and
the finite-difference gradient audit.

Layer 1 scores clauses from their content embeddings. Every deeper
layer re-scores the document from the previous layer's predictions:
both prediction sequences are rank-mapped (a hard, gradient-free step),
embedded, projected to row/column scores, normalized, and added to the
previous adjacency as a residual. Aggregation at every layer consumes
the original clause embeddings unless ``feed_previous_h`` is set.

The layer-progress (sort) loss must not touch parameters of earlier
layers. Its deeper operand is therefore computed on a value-identical
branch whose residual adjacency is gradient-stopped; the live branch
keeps full gradients for the three prediction losses.
"""

from __future__ import annotations

import dataclasses
import json
import math
from dataclasses import dataclass
from typing import Callable

import numpy as np

from . import heads as heads_mod
from .autodiff import Tensor, add, backward, constant, matmul, stop_gradient
from .errors import ConfigError, ContractError, TrainingError
from .heads import HeadParams, LossReport
from .layers import (
    EgatParams,
    attention_scores,
    masked_aggregate,
    normalize,
    rank_attention_scores,
)
from .ranking import RankEmbedding, RankMap, build_rank_embedding, embed_ranks, make_labels, rank_map
from .segmentation import Document, build_multimask

from .data import UNK_TOKEN

BRIDGE_KINDS = ("sort", "tanh")

_VERSION = 1


@dataclass
class ModelConfig:
    """Every knob of the model, training loop, and numeric behavior."""

    num_layers: int = 2
    hidden_size: int = 64
    rank_embed_dim: int = 64
    max_doc_len: int = 64
    label_scheme: str = "log2"
    bridge_activation: str = "sort"
    leaky_slope: float = 0.2
    elu_alpha: float = 1.0
    epsilon: float = 1e-12
    loss_weight_e: float = 1.0
    loss_weight_c: float = 1.0
    loss_weight_pair: float = 1.0
    loss_weight_sort: float = 1.0
    sort_margin: float = 0.05
    swapped_bce: bool = False
    rank_raw_scalar: bool = False
    feed_previous_h: bool = False
    stop_gradient_enabled: bool = True
    learning_rate: float = 1e-3
    weight_decay: float = 1e-5
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_epsilon: float = 1e-8
    steps: int = 500
    batch_size: int = 0
    threshold: float = 0.5
    seed: int = 0

    def validate(self) -> None:
        if self.num_layers < 1:
            raise ConfigError(f"num_layers must be >= 1; got {self.num_layers}")
        for name in ("hidden_size", "rank_embed_dim", "max_doc_len"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be positive; got {getattr(self, name)}")
        if self.label_scheme not in ("linear", "log2"):
            raise ConfigError(f"label_scheme must be 'linear' or 'log2'; got {self.label_scheme!r}")
        if self.bridge_activation not in BRIDGE_KINDS:
            raise ConfigError(
                f"bridge_activation must be one of {BRIDGE_KINDS}; got {self.bridge_activation!r}"
            )
        weights = (self.loss_weight_e, self.loss_weight_c, self.loss_weight_pair, self.loss_weight_sort)
        if any(w < 0 for w in weights):
            raise ConfigError(f"loss weights must be non-negative; got {weights}")
        if self.sort_margin < 0:
            raise ConfigError(f"sort_margin must be non-negative; got {self.sort_margin}")
        if not 0.0 < self.threshold < 1.0:
            raise ConfigError(f"threshold must lie strictly inside (0, 1); got {self.threshold}")
        if self.steps < 0 or self.batch_size < 0:
            raise ConfigError("steps and batch_size must be non-negative")

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    @staticmethod
    def from_dict(values: dict) -> "ModelConfig":
        known = {f.name: f for f in dataclasses.fields(ModelConfig)}
        kwargs = {}
        for key, value in values.items():
            if key not in known:
                raise ConfigError(f"unknown configuration key {key!r}")
            kwargs[key] = _cast_config_value(known[key].type, key, value)
        config = ModelConfig(**kwargs)
        config.validate()
        return config

    @property
    def loss_weights(self) -> tuple[float, float, float, float]:
        return (self.loss_weight_e, self.loss_weight_c, self.loss_weight_pair, self.loss_weight_sort)


def _cast_config_value(type_name: str, key: str, value):
    if type_name == "bool":
        if isinstance(value, bool):
            return value
        if isinstance(value, str):
            lowered = value.strip().lower()
            if lowered in ("true", "1", "yes", "on"):
                return True
            if lowered in ("false", "0", "no", "off"):
                return False
        raise ConfigError(f"configuration key {key!r} expects a boolean; got {value!r}")
    try:
        if type_name == "int":
            return int(value)
        if type_name == "float":
            return float(value)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"configuration key {key!r} expects a {type_name}; got {value!r}") from exc
    return str(value)


def _bridge_feature_dim(config: ModelConfig) -> int:
    if config.bridge_activation == "sort" and not config.rank_raw_scalar:
        return config.rank_embed_dim
    return 1


@dataclass
class ModelState:
    """All learnable parameters plus optimizer moments and the step counter."""

    vocabulary: dict[str, int]
    embeddings: Tensor
    layers: list[EgatParams]
    rank_embedding: RankEmbedding | None
    heads: HeadParams
    adam_m: dict[str, np.ndarray]
    adam_v: dict[str, np.ndarray]
    step: int
    seed: int

    def parameters(self) -> list[tuple[str, Tensor]]:
        """Stable-ordered registry of every learnable tensor."""
        named: list[tuple[str, Tensor]] = [("embeddings", self.embeddings)]
        for index, layer in enumerate(self.layers, start=1):
            named.extend(layer.named(f"layer{index}"))
        if self.rank_embedding is not None:
            named.append(("rank_embedding", self.rank_embedding.table))
        named.extend(self.heads.named())
        return named

    def zero_grad(self) -> None:
        for _, p in self.parameters():
            p.zero_grad()


def _xavier(rng: np.random.Generator, fan_in: int, fan_out: int) -> np.ndarray:
    limit = math.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=(fan_in, fan_out))


def init_state(config: ModelConfig, vocabulary: dict[str, int]) -> ModelState:
    """Seed-deterministic parameter initialization for the given vocabulary."""
    config.validate()
    if UNK_TOKEN not in vocabulary:
        raise ConfigError(f"vocabulary must contain the {UNK_TOKEN!r} entry")
    rng = np.random.default_rng(config.seed)
    d = config.hidden_size
    embeddings = Tensor(rng.uniform(-0.1, 0.1, size=(len(vocabulary), d)), requires_grad=True)
    embeddings.name = "embeddings"

    feature_dim = _bridge_feature_dim(config)
    layers: list[EgatParams] = []
    for index in range(1, config.num_layers + 1):
        w_mask = tuple(Tensor(_xavier(rng, d, d), requires_grad=True) for _ in range(3))
        if index == 1:
            layers.append(
                EgatParams(
                    w_mask=w_mask,  # type: ignore[arg-type]
                    w_row=Tensor(_xavier(rng, d, 1), requires_grad=True),
                    w_col=Tensor(_xavier(rng, d, 1), requires_grad=True),
                )
            )
        else:
            layers.append(
                EgatParams(
                    w_mask=w_mask,  # type: ignore[arg-type]
                    w_rank_row=Tensor(_xavier(rng, feature_dim, 1), requires_grad=True),
                    w_rank_col=Tensor(_xavier(rng, feature_dim, 1), requires_grad=True),
                )
            )

    rank_embedding = None
    if config.num_layers >= 2 and config.bridge_activation == "sort" and not config.rank_raw_scalar:
        rank_embedding = build_rank_embedding(
            config.max_doc_len, config.label_scheme, config.rank_embed_dim, rng
        )

    heads = HeadParams(
        w_emotion=Tensor(_xavier(rng, d, 1), requires_grad=True),
        b_emotion=Tensor([[0.0]], requires_grad=True),
        w_cause=Tensor(_xavier(rng, d, 1), requires_grad=True),
        b_cause=Tensor([[0.0]], requires_grad=True),
        w_pair=Tensor(_xavier(rng, 2 * d, 1), requires_grad=True),
        b_pair=Tensor([[0.0]], requires_grad=True),
    )

    state = ModelState(
        vocabulary=dict(vocabulary),
        embeddings=embeddings,
        layers=layers,
        rank_embedding=rank_embedding,
        heads=heads,
        adam_m={},
        adam_v={},
        step=0,
        seed=config.seed,
    )
    for name, p in state.parameters():
        state.adam_m[name] = np.zeros_like(p.values)
        state.adam_v[name] = np.zeros_like(p.values)
    return state


def embed_document(doc: Document, state: ModelState) -> Tensor:
    """Clause embeddings as token-vector means, (n, d).

    Each clause row averages the embedding rows of its tokens; unknown
    tokens share the UNK vector. Implemented as a constant averaging
    matrix times the embedding table so gradients reach the table.
    """
    unk = state.vocabulary[UNK_TOKEN]
    weights = np.zeros((len(doc), state.embeddings.shape[0]))
    for i, clause in enumerate(doc.clauses):
        if not clause.text:
            raise ContractError(f"clause {i + 1} of document {doc.doc_id!r} has no tokens")
        share = 1.0 / len(clause.text)
        for token in clause.text:
            weights[i, state.vocabulary.get(token, unk)] += share
    return matmul(constant(weights, name="token_average"), state.embeddings)


@dataclass
class LayerState:
    """Everything one layer produced, as live graph nodes."""

    adjacency: Tensor
    raw_scores: Tensor
    normalized_scores: Tensor
    h: Tensor
    yhat_e: Tensor
    yhat_c: Tensor
    yhat_pair: Tensor
    ranks: RankMap | None = None
    live_pair_prob: Tensor | None = None
    sort_pair_prob: Tensor | None = None


@dataclass
class ForwardTrace:
    """Per-layer states for one document, in layer order."""

    doc_id: str
    x: Tensor
    layers: list[LayerState]

    @property
    def final(self) -> LayerState:
        return self.layers[-1]


def _bridge_features(
    prev: LayerState, config: ModelConfig, state: ModelState, n: int
) -> tuple[Tensor, Tensor, RankMap | None]:
    """Row/column feature matrices for a deeper layer's score grid.

    Derived from the previous layer's raw prediction values; the bridge
    itself carries no gradient (ranks are integers, the tanh variant is
    detached), only the embedding table and projections stay live.
    """
    ye = [float(v) for v in prev.yhat_e.values[:, 0]]
    yc = [float(v) for v in prev.yhat_c.values[:, 0]]
    if config.bridge_activation == "tanh":
        return (
            constant(np.tanh(np.asarray(ye)).reshape(-1, 1)),
            constant(np.tanh(np.asarray(yc)).reshape(-1, 1)),
            None,
        )
    labels = make_labels(n, config.label_scheme)
    ranks = RankMap(r_e=rank_map(ye, labels), r_c=rank_map(yc, labels), scheme=config.label_scheme)
    if config.rank_raw_scalar:
        row = constant(np.asarray(ranks.r_e, dtype=float).reshape(-1, 1))
        col = constant(np.asarray(ranks.r_c, dtype=float).reshape(-1, 1))
        return row, col, ranks
    assert state.rank_embedding is not None
    return (
        embed_ranks(ranks.r_e, state.rank_embedding),
        embed_ranks(ranks.r_c, state.rank_embedding),
        ranks,
    )


def forward(doc: Document, state: ModelState, config: ModelConfig) -> ForwardTrace:
    """Run all layers over one document and record every intermediate."""
    n = len(doc)
    mask = build_multimask(doc)
    x = embed_document(doc, state)
    layer_states: list[LayerState] = []
    h_prev: Tensor | None = None
    a_prev: Tensor | None = None

    for index, params in enumerate(state.layers, start=1):
        if index == 1:
            e = attention_scores(x, params)
            normalized = normalize(e, config.leaky_slope, config.epsilon)
            adjacency = normalized
            source = x
            h = masked_aggregate(adjacency, source, mask, params, config.elu_alpha)
            sort_grid = None
            ranks = None
        else:
            prev = layer_states[-1]
            row_feat, col_feat, ranks = _bridge_features(prev, config, state, n)
            e = rank_attention_scores(row_feat, col_feat, params)
            normalized = normalize(e, config.leaky_slope, config.epsilon)
            assert a_prev is not None
            adjacency = add(normalized, a_prev)
            source = h_prev if (config.feed_previous_h and h_prev is not None) else x
            h = masked_aggregate(adjacency, source, mask, params, config.elu_alpha)
            # Value-identical branch with a frozen residual: the layer-progress
            # loss reads its deeper operand here so it cannot reach back into
            # earlier layers through the adjacency recurrence.
            residual = stop_gradient(a_prev) if config.stop_gradient_enabled else a_prev
            sort_adjacency = add(normalized, residual)
            h_sort = masked_aggregate(sort_adjacency, source, mask, params, config.elu_alpha)
            sort_grid = heads_mod.predict_pairs(h_sort, state.heads)

        yhat_e, yhat_c = heads_mod.predict_emotion_cause(h, state.heads)
        yhat_pair = heads_mod.predict_pairs(h, state.heads)
        live_prob = (
            heads_mod.gold_pair_probability(yhat_pair, doc.gold_pairs) if doc.gold_pairs else None
        )
        sort_prob = (
            heads_mod.gold_pair_probability(sort_grid, doc.gold_pairs)
            if (sort_grid is not None and doc.gold_pairs)
            else None
        )
        layer_states.append(
            LayerState(
                adjacency=adjacency,
                raw_scores=e,
                normalized_scores=normalized,
                h=h,
                yhat_e=yhat_e,
                yhat_c=yhat_c,
                yhat_pair=yhat_pair,
                ranks=ranks,
                live_pair_prob=live_prob,
                sort_pair_prob=sort_prob,
            )
        )
        h_prev = h
        a_prev = adjacency

    return ForwardTrace(doc_id=doc.doc_id, x=x, layers=layer_states)


@dataclass
class LossNodes:
    """Scalar graph nodes for each loss term plus the numeric report."""

    total: Tensor
    loss_e: Tensor
    loss_c: Tensor
    loss_pair: Tensor
    loss_sort: Tensor
    report: LossReport


def _gold_columns(doc: Document) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    n = len(doc)
    y_e = np.zeros((n, 1))
    y_c = np.zeros((n, 1))
    y_pair = np.zeros((n, n))
    for i in doc.gold_emotions:
        y_e[i - 1, 0] = 1.0
    for j in doc.gold_causes:
        y_c[j - 1, 0] = 1.0
    for i, j in doc.gold_pairs:
        y_pair[i - 1, j - 1] = 1.0
    return y_e, y_c, y_pair


def compute_losses(trace: ForwardTrace, doc: Document, config: ModelConfig) -> LossNodes:
    """All four loss terms for one document, summed over layers."""
    y_e, y_c, y_pair = _gold_columns(doc)
    per_layer_e: list[Tensor] = []
    per_layer_c: list[Tensor] = []
    per_layer_pair: list[Tensor] = []
    for layer in trace.layers:
        per_layer_e.append(heads_mod.bce_loss(layer.yhat_e, y_e, config.swapped_bce))
        per_layer_c.append(heads_mod.bce_loss(layer.yhat_c, y_c, config.swapped_bce))
        per_layer_pair.append(heads_mod.bce_loss(layer.yhat_pair, y_pair, config.swapped_bce))

    def total_of(nodes: list[Tensor]) -> Tensor:
        out = nodes[0]
        for node in nodes[1:]:
            out = add(out, node)
        return out

    loss_e = total_of(per_layer_e)
    loss_c = total_of(per_layer_c)
    loss_pair = total_of(per_layer_pair)

    sort_inputs: list[Tensor] = []
    if doc.gold_pairs and len(trace.layers) >= 2:
        for index, layer in enumerate(trace.layers):
            if index == 0:
                assert layer.live_pair_prob is not None
                sort_inputs.append(layer.live_pair_prob)
            else:
                assert layer.sort_pair_prob is not None
                sort_inputs.append(layer.sort_pair_prob)
    loss_sort = heads_mod.sort_loss(sort_inputs, config.sort_margin, config.stop_gradient_enabled)

    total = heads_mod.total_loss(loss_e, loss_c, loss_pair, loss_sort, config.loss_weights)

    transition_values = []
    for prev, curr in zip(sort_inputs, sort_inputs[1:]):
        transition_values.append(max(0.0, prev.item() - curr.item()) + config.sort_margin)
    report = LossReport(
        loss_e=loss_e.item(),
        loss_c=loss_c.item(),
        loss_pair=loss_pair.item(),
        loss_sort=loss_sort.item(),
        total=total.item(),
        per_layer_e=[t.item() for t in per_layer_e],
        per_layer_c=[t.item() for t in per_layer_c],
        per_layer_pair=[t.item() for t in per_layer_pair],
        per_transition_sort=transition_values,
        documents=1,
    )
    return LossNodes(
        total=total,
        loss_e=loss_e,
        loss_c=loss_c,
        loss_pair=loss_pair,
        loss_sort=loss_sort,
        report=report,
    )


def _adam_update(state: ModelState, config: ModelConfig) -> None:
    state.step += 1
    t = state.step
    b1, b2 = config.adam_beta1, config.adam_beta2
    for name, p in state.parameters():
        g = p.grad if p.grad is not None else np.zeros_like(p.values)
        if config.weight_decay:
            g = g + config.weight_decay * p.values
        m = state.adam_m[name] = b1 * state.adam_m[name] + (1.0 - b1) * g
        v = state.adam_v[name] = b2 * state.adam_v[name] + (1.0 - b2) * g * g
        m_hat = m / (1.0 - b1**t)
        v_hat = v / (1.0 - b2**t)
        p.values -= config.learning_rate * m_hat / (np.sqrt(v_hat) + config.adam_epsilon)


def train_step(batch: list[Document], state: ModelState, config: ModelConfig) -> LossReport:
    """One optimizer update from the summed gradients of a document batch."""
    if not batch:
        raise ContractError("train_step requires a non-empty batch")
    state.zero_grad()
    reports = []
    for doc in batch:
        trace = forward(doc, state, config)
        nodes = compute_losses(trace, doc, config)
        if not math.isfinite(nodes.report.total):
            raise TrainingError(
                f"non-finite loss {nodes.report.total} on document {doc.doc_id!r}", doc_id=doc.doc_id
            )
        backward(nodes.total)
        reports.append(nodes.report)
    _adam_update(state, config)
    return LossReport.combine(reports)


def train(
    documents: list[Document],
    state: ModelState,
    config: ModelConfig,
    on_step: Callable[[int, LossReport], None] | None = None,
) -> list[LossReport]:
    """Run ``config.steps`` updates over the corpus; returns per-step reports.

    With ``batch_size == 0`` every step consumes the whole corpus;
    otherwise consecutive fixed-order slices cycle through it.
    """
    if not documents:
        raise ContractError("training requires at least one document")
    reports: list[LossReport] = []
    cursor = 0
    for step_index in range(config.steps):
        if config.batch_size <= 0:
            batch = documents
        else:
            batch = [documents[(cursor + k) % len(documents)] for k in range(config.batch_size)]
            cursor = (cursor + config.batch_size) % len(documents)
        report = train_step(batch, state, config)
        reports.append(report)
        if on_step is not None:
            on_step(step_index, report)
    return reports


def predict(
    doc: Document, state: ModelState, config: ModelConfig, threshold: float | None = None
) -> tuple[set[int], set[int], set[tuple[int, int]]]:
    """Final-layer extraction with a strict threshold (ties never extract)."""
    cut = config.threshold if threshold is None else threshold
    trace = forward(doc, state, config)
    final = trace.final
    emotions = {i + 1 for i in range(len(doc)) if final.yhat_e.values[i, 0] > cut}
    causes = {j + 1 for j in range(len(doc)) if final.yhat_c.values[j, 0] > cut}
    pair_values = final.yhat_pair.values
    pairs = {
        (i + 1, j + 1)
        for i in range(len(doc))
        for j in range(len(doc))
        if pair_values[i, j] > cut
    }
    return emotions, causes, pairs


# ---------------------------------------------------------------------------
# Gradient audit


@dataclass
class GroupAudit:
    name: str
    max_rel_error: float
    coords_checked: int


@dataclass
class AuditReport:
    """Finite-difference audit of the analytic gradients.

    ``groups`` hold the worst relative error of the total loss per
    parameter group. ``sort_grad_earlier`` holds, per earlier-layer
    group, the largest absolute analytic gradient of the layer-progress
    loss alone; with gradient stopping enabled every entry must be
    exactly zero. ``hinge_active`` flags transitions whose earlier
    gold-pair probability exceeds the deeper one (only then can the
    debug contrast produce nonzero leakage).
    """

    groups: list[GroupAudit]
    max_rel_error: float
    tolerance: float
    fd_passed: bool
    hinge_active: list[bool]
    sort_grad_earlier: dict[str, float]
    sort_grad_deeper_max: float
    stop_gradient_enabled: bool
    passed: bool

    def to_dict(self) -> dict:
        return {
            "groups": [dataclasses.asdict(g) for g in self.groups],
            "max_rel_error": self.max_rel_error,
            "tolerance": self.tolerance,
            "fd_passed": self.fd_passed,
            "hinge_active": self.hinge_active,
            "sort_grad_earlier": self.sort_grad_earlier,
            "sort_grad_deeper_max": self.sort_grad_deeper_max,
            "stop_gradient_enabled": self.stop_gradient_enabled,
            "passed": self.passed,
        }


def _earlier_layer_groups(state: ModelState) -> set[str]:
    names = set()
    for index in range(1, len(state.layers)):  # all but the deepest layer
        names.update(name for name, _ in state.layers[index - 1].named(f"layer{index}"))
    return names


def gradient_audit(
    doc: Document,
    state: ModelState,
    config: ModelConfig,
    *,
    fd_step: float = 1e-5,
    max_coords_per_group: int = 40,
    tolerance: float = 1e-4,
) -> AuditReport:
    """Compare analytic gradients of the total loss against central
    finite differences, group by group, and verify the layer-progress
    loss leaves earlier layers untouched.

    Large groups are spot-checked on a seed-deterministic subset of
    coordinates (``max_coords_per_group``; 0 checks everything).
    Relative error uses a 1e-3 floor in the denominator so near-zero
    gradients are compared absolutely at the same tolerance scale.
    """
    state.zero_grad()
    trace = forward(doc, state, config)
    nodes = compute_losses(trace, doc, config)
    backward(nodes.total)
    analytic = {
        name: (p.grad.copy() if p.grad is not None else np.zeros_like(p.values))
        for name, p in state.parameters()
    }

    def eval_total() -> float:
        fresh = compute_losses(forward(doc, state, config), doc, config)
        return fresh.report.total

    rng = np.random.default_rng(config.seed)
    groups: list[GroupAudit] = []
    for name, p in state.parameters():
        size = p.values.size
        if max_coords_per_group and size > max_coords_per_group:
            coords = np.sort(rng.choice(size, size=max_coords_per_group, replace=False))
        else:
            coords = np.arange(size)
        worst = 0.0
        flat = p.values.reshape(-1)
        for idx in coords:
            original = flat[idx]
            flat[idx] = original + fd_step
            f_plus = eval_total()
            flat[idx] = original - fd_step
            f_minus = eval_total()
            flat[idx] = original
            fd = (f_plus - f_minus) / (2.0 * fd_step)
            a = analytic[name].reshape(-1)[idx]
            rel = abs(a - fd) / max(abs(a), abs(fd), 1e-3)
            worst = max(worst, rel)
        groups.append(GroupAudit(name=name, max_rel_error=worst, coords_checked=len(coords)))

    max_rel = max((g.max_rel_error for g in groups), default=0.0)
    fd_passed = max_rel < tolerance

    # Gradient of the layer-progress loss alone, on a fresh graph.
    state.zero_grad()
    fresh_nodes = compute_losses(forward(doc, state, config), doc, config)
    backward(fresh_nodes.loss_sort)
    earlier = _earlier_layer_groups(state)
    sort_grad_earlier: dict[str, float] = {}
    deeper_max = 0.0
    for name, p in state.parameters():
        magnitude = float(np.abs(p.grad).max()) if p.grad is not None else 0.0
        if name in earlier:
            sort_grad_earlier[name] = magnitude
        else:
            deeper_max = max(deeper_max, magnitude)

    hinge_active = [
        prev > curr
        for prev, curr in zip(
            [layer.live_pair_prob.item() for layer in trace.layers if layer.live_pair_prob is not None],
            [
                layer.sort_pair_prob.item()
                for layer in trace.layers[1:]
                if layer.sort_pair_prob is not None
            ],
        )
    ]

    earlier_max = max(sort_grad_earlier.values(), default=0.0)
    if config.stop_gradient_enabled:
        sort_ok = earlier_max == 0.0
    else:
        # Debug contrast: leakage into earlier layers is the expected outcome,
        # observable only when at least one hinge is active.
        sort_ok = earlier_max > 0.0 if any(hinge_active) else True
    state.zero_grad()

    return AuditReport(
        groups=groups,
        max_rel_error=max_rel,
        tolerance=tolerance,
        fd_passed=fd_passed,
        hinge_active=hinge_active,
        sort_grad_earlier=sort_grad_earlier,
        sort_grad_deeper_max=deeper_max,
        stop_gradient_enabled=config.stop_gradient_enabled,
        passed=fd_passed and sort_ok,
    )


# ---------------------------------------------------------------------------
# Checkpointing


def save_checkpoint(path: str, state: ModelState, config: ModelConfig) -> None:
    """Write a self-contained JSON checkpoint (exact float round-trip)."""
    tokens = [None] * len(state.vocabulary)
    for token, idx in state.vocabulary.items():
        tokens[idx] = token
    payload = {
        "format_version": _VERSION,
        "config": config.to_dict(),
        "vocabulary": tokens,
        "parameters": {name: p.values.tolist() for name, p in state.parameters()},
        "adam_m": {name: m.tolist() for name, m in state.adam_m.items()},
        "adam_v": {name: v.tolist() for name, v in state.adam_v.items()},
        "step": state.step,
        "seed": state.seed,
    }
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(payload, fh)
        fh.write("\n")


def load_checkpoint(path: str) -> tuple[ModelState, ModelConfig]:
    with open(path, "r", encoding="utf-8") as fh:
        payload = json.load(fh)
    version = payload.get("format_version")
    if version != _VERSION:
        raise ConfigError(f"unsupported checkpoint format version {version!r}")
    config = ModelConfig.from_dict(payload["config"])
    vocabulary = {token: idx for idx, token in enumerate(payload["vocabulary"])}
    state = init_state(config, vocabulary)
    saved = payload["parameters"]
    for name, p in state.parameters():
        if name not in saved:
            raise ConfigError(f"checkpoint is missing parameter group {name!r}")
        values = np.asarray(saved[name], dtype=np.float64)
        if values.shape != p.values.shape:
            raise ConfigError(
                f"checkpoint parameter {name!r} has shape {values.shape}; expected {p.values.shape}"
            )
        p.values[...] = values
    for name in state.adam_m:
        state.adam_m[name] = np.asarray(payload["adam_m"][name], dtype=np.float64)
        state.adam_v[name] = np.asarray(payload["adam_v"][name], dtype=np.float64)
    state.step = int(payload["step"])
    state.seed = int(payload["seed"])
    return state, config
