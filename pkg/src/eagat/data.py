"""Corpus ingestion, synthetic corpora, fold splitting, and evaluation.

The canonical corpus format is JSONL, one document per line:

    {"doc_id": str,
     "clauses": [{"text": str, "sentence_id": int}, ...],
     "emotions": [int], "causes": [int], "pairs": [[int, int]]}

All clause indices are 1-based. Prediction files reuse the same
``doc_id``/``emotions``/``causes``/``pairs`` fields without clauses.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

import numpy as np

from .errors import (
    ConfigError,
    ContractError,
    CorpusValidationError,
    DegenerateSampleError,
    EmptyDocumentError,
)
from .segmentation import Clause, Document, document_from_json, document_to_json

UNK_TOKEN = "<unk>"

EMOTION_TOKEN = "joyful"
CAUSE_TOKEN = "trigger"


@dataclass
class Corpus:
    documents: list[Document]
    vocabulary: dict[str, int]

    def __len__(self) -> int:
        return len(self.documents)

    def by_id(self) -> dict[str, Document]:
        return {doc.doc_id: doc for doc in self.documents}


def build_vocabulary(documents: list[Document]) -> dict[str, int]:
    """Token -> id map covering every corpus token plus UNK (id 0)."""
    vocabulary = {UNK_TOKEN: 0}
    for doc in documents:
        for clause in doc.clauses:
            for token in clause.text:
                if token not in vocabulary:
                    vocabulary[token] = len(vocabulary)
    return vocabulary


def corpus_from_documents(documents: list[Document]) -> Corpus:
    seen: set[str] = set()
    for doc in documents:
        if doc.doc_id in seen:
            raise CorpusValidationError("duplicate doc_id", doc_id=doc.doc_id)
        seen.add(doc.doc_id)
    return Corpus(documents=documents, vocabulary=build_vocabulary(documents))


def load_corpus(path: str) -> Corpus:
    """Parse and validate a JSONL corpus; errors carry line numbers."""
    documents: list[Document] = []
    seen: set[str] = set()
    with open(path, "r", encoding="utf-8") as fh:
        for line_no, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as exc:
                raise CorpusValidationError(f"malformed JSON: {exc.msg}", line=line_no) from exc
            doc = document_from_json(obj, line=line_no)
            if doc.doc_id in seen:
                raise CorpusValidationError("duplicate doc_id", doc_id=doc.doc_id, line=line_no)
            seen.add(doc.doc_id)
            documents.append(doc)
    if not documents:
        raise EmptyDocumentError(f"empty corpus: {path}")
    return Corpus(documents=documents, vocabulary=build_vocabulary(documents))


def save_corpus(path: str, documents: list[Document]) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for doc in documents:
            fh.write(json.dumps(document_to_json(doc)) + "\n")


# ---------------------------------------------------------------------------
# Synthetic corpora


@dataclass
class SyntheticSpec:
    """Ranges controlling synthetic document generation (inclusive)."""

    clauses: tuple[int, int] = (4, 8)
    sentences: tuple[int, int] = (2, 3)
    pairs: tuple[int, int] = (1, 2)
    tokens_per_clause: int = 4
    filler_vocab: int = 25


def generate_synthetic(n_docs: int, seed: int, spec: SyntheticSpec | None = None) -> Corpus:
    """Seed-deterministic corpus with planted emotion/cause tokens.

    One emotion clause per document carries EMOTION_TOKEN; each of its
    cause clauses carries CAUSE_TOKEN; gold pairs are the full
    emotion-by-causes product, so the task is learnable by a factorized
    pair scorer and a perfect extractor exists.
    """
    spec = spec or SyntheticSpec()
    if n_docs < 1:
        raise ConfigError(f"need at least one document; got {n_docs}")
    lo_c, hi_c = spec.clauses
    lo_s, hi_s = spec.sentences
    lo_p, hi_p = spec.pairs
    if lo_c < 1 or lo_c > hi_c or lo_s < 1 or lo_s > hi_s or lo_p < 1 or lo_p > hi_p:
        raise ConfigError(f"malformed synthetic ranges: {spec}")
    if hi_p + 1 > lo_c:
        raise ConfigError(
            f"infeasible spec: up to {hi_p} pairs need {hi_p + 1} clauses, "
            f"but documents may have as few as {lo_c}"
        )
    rng = np.random.default_rng(seed)
    fillers = [f"w{k}" for k in range(spec.filler_vocab)]
    documents: list[Document] = []
    for index in range(n_docs):
        n = int(rng.integers(lo_c, hi_c + 1))
        n_sent = min(int(rng.integers(lo_s, hi_s + 1)), n)
        boundaries = set(rng.choice(n - 1, size=n_sent - 1, replace=False).tolist()) if n_sent > 1 else set()
        sentence_ids = []
        sid = 1
        for pos in range(n):
            sentence_ids.append(sid)
            if pos in boundaries:
                sid += 1
        n_pairs = min(int(rng.integers(lo_p, hi_p + 1)), n - 1)
        special = rng.choice(n, size=n_pairs + 1, replace=False)
        emotion_clause = int(special[0]) + 1
        cause_clauses = {int(c) + 1 for c in special[1:]}
        clauses = []
        for pos in range(n):
            tokens = [fillers[int(t)] for t in rng.integers(0, spec.filler_vocab, size=spec.tokens_per_clause)]
            if pos + 1 == emotion_clause:
                tokens[int(rng.integers(0, len(tokens)))] = EMOTION_TOKEN
            elif pos + 1 in cause_clauses:
                tokens[int(rng.integers(0, len(tokens)))] = CAUSE_TOKEN
            clauses.append(Clause(text=tokens, sentence_id=sentence_ids[pos]))
        documents.append(
            Document(
                doc_id=f"syn-{index:04d}",
                clauses=clauses,
                gold_emotions={emotion_clause},
                gold_causes=set(cause_clauses),
                gold_pairs={(emotion_clause, c) for c in cause_clauses},
            )
        )
    return corpus_from_documents(documents)


# ---------------------------------------------------------------------------
# Fold splitting


@dataclass
class FoldSplit:
    folds: list[list[str]]
    seed: int


@dataclass
class FoldStatistics:
    """Distribution summary of one fold's (1-based) corpus positions.

    Skewness is the population third standardized moment m3/m2^1.5 and
    kurtosis the population excess m4/m2^2 - 3; both are 0 for
    degenerate (constant) folds. ``window_rates`` holds the fraction of
    each consecutive block of 10 corpus positions that landed in the
    fold; ``window_rate_std`` is that sequence's population deviation.
    """

    fold_index: int
    size: int
    mean: float
    std: float
    skewness: float
    excess_kurtosis: float
    window_rates: list[float] = field(default_factory=list)
    window_rate_std: float = 0.0

    def to_dict(self) -> dict:
        return {
            "fold_index": self.fold_index,
            "size": self.size,
            "mean": self.mean,
            "std": self.std,
            "skewness": self.skewness,
            "excess_kurtosis": self.excess_kurtosis,
            "window_rates": self.window_rates,
            "window_rate_std": self.window_rate_std,
        }


def _moments(values: np.ndarray) -> tuple[float, float, float, float]:
    mean = float(values.mean())
    centered = values - mean
    m2 = float((centered**2).mean())
    if m2 == 0.0:
        return mean, 0.0, 0.0, 0.0
    m3 = float((centered**3).mean())
    m4 = float((centered**4).mean())
    return mean, math.sqrt(m2), m3 / m2**1.5, m4 / m2**2 - 3.0


def kfold_split(corpus: Corpus, k: int, seed: int) -> tuple[FoldSplit, list[FoldStatistics]]:
    """Uniform random partition into k folds with sizes differing by <= 1."""
    if k < 2:
        raise ConfigError(f"k-fold splitting needs k >= 2; got {k}")
    if k > len(corpus):
        raise ConfigError(f"cannot split {len(corpus)} documents into {k} folds")
    rng = np.random.default_rng(seed)
    order = rng.permutation(len(corpus))
    chunks = np.array_split(order, k)
    ids = [doc.doc_id for doc in corpus.documents]
    folds = [[ids[i] for i in chunk] for chunk in chunks]
    statistics = []
    window_count = (len(corpus) + 9) // 10
    for fold_index, chunk in enumerate(chunks):
        positions = np.sort(chunk) + 1
        mean, std, skew, kurt = _moments(positions.astype(float))
        rates = []
        for w in range(window_count):
            lo, hi = 10 * w + 1, min(10 * (w + 1), len(corpus))
            width = hi - lo + 1
            inside = int(((positions >= lo) & (positions <= hi)).sum())
            rates.append(inside / width)
        rate_std = float(np.sqrt(np.mean((np.asarray(rates) - np.mean(rates)) ** 2))) if rates else 0.0
        statistics.append(
            FoldStatistics(
                fold_index=fold_index,
                size=len(chunk),
                mean=mean,
                std=std,
                skewness=skew,
                excess_kurtosis=kurt,
                window_rates=rates,
                window_rate_std=rate_std,
            )
        )
    return FoldSplit(folds=folds, seed=seed), statistics


# ---------------------------------------------------------------------------
# Evaluation


@dataclass
class Prediction:
    """Extracted sets for one document (1-based indices)."""

    emotions: set[int] = field(default_factory=set)
    causes: set[int] = field(default_factory=set)
    pairs: set[tuple[int, int]] = field(default_factory=set)


@dataclass
class TaskScores:
    tp: int
    fp: int
    fn: int

    @property
    def precision(self) -> float:
        return self.tp / (self.tp + self.fp) if self.tp + self.fp else 0.0

    @property
    def recall(self) -> float:
        return self.tp / (self.tp + self.fn) if self.tp + self.fn else 0.0

    @property
    def f1(self) -> float:
        p, r = self.precision, self.recall
        return 2 * p * r / (p + r) if p + r else 0.0

    def to_dict(self) -> dict:
        return {
            "tp": self.tp,
            "fp": self.fp,
            "fn": self.fn,
            "precision": self.precision,
            "recall": self.recall,
            "f1": self.f1,
        }


@dataclass
class EvalResult:
    """Micro-aggregated scores for the three tasks plus pair pos/neg/avg F1.

    The negative pair class covers every grid cell (including the
    diagonal) that is not a gold pair; predicting no pair there counts
    as a negative true positive.
    """

    emotion: TaskScores
    cause: TaskScores
    pair: TaskScores
    pair_negative: TaskScores

    @property
    def pair_pos_f1(self) -> float:
        return self.pair.f1

    @property
    def pair_neg_f1(self) -> float:
        return self.pair_negative.f1

    @property
    def avg_f1(self) -> float:
        return (self.pair_pos_f1 + self.pair_neg_f1) / 2

    def to_dict(self) -> dict:
        return {
            "emotion": self.emotion.to_dict(),
            "cause": self.cause.to_dict(),
            "pair": self.pair.to_dict(),
            "pair_negative": self.pair_negative.to_dict(),
            "pair_pos_f1": self.pair_pos_f1,
            "pair_neg_f1": self.pair_neg_f1,
            "avg_f1": self.avg_f1,
        }


def evaluate(predictions: dict[str, Prediction], documents: list[Document]) -> EvalResult:
    """Score predictions against gold annotations, micro-averaged."""
    gold_ids = {doc.doc_id for doc in documents}
    if set(predictions) != gold_ids:
        missing = sorted(gold_ids - set(predictions))[:3]
        extra = sorted(set(predictions) - gold_ids)[:3]
        raise ContractError(
            f"prediction and gold document sets differ (missing={missing}, unexpected={extra})"
        )
    emotion = TaskScores(0, 0, 0)
    cause = TaskScores(0, 0, 0)
    pair = TaskScores(0, 0, 0)
    negative = TaskScores(0, 0, 0)
    for doc in documents:
        pred = predictions[doc.doc_id]
        for scores, predicted, gold in (
            (emotion, pred.emotions, doc.gold_emotions),
            (cause, pred.causes, doc.gold_causes),
            (pair, pred.pairs, doc.gold_pairs),
        ):
            scores.tp += len(predicted & gold)
            scores.fp += len(predicted - gold)
            scores.fn += len(gold - predicted)
        n = len(doc)
        cells = n * n
        predicted_pairs = len(pred.pairs)
        gold_pairs = len(doc.gold_pairs)
        pair_tp = len(pred.pairs & doc.gold_pairs)
        # Negative class: cells neither predicted nor gold are true
        # negatives; missed gold pairs are wrongly called negative (fp);
        # spurious extractions are wrongly denied the negative label (fn).
        negative.tp += cells - predicted_pairs - gold_pairs + pair_tp
        negative.fp += gold_pairs - pair_tp
        negative.fn += predicted_pairs - pair_tp
    return EvalResult(emotion=emotion, cause=cause, pair=pair, pair_negative=negative)


def load_predictions(path: str) -> dict[str, Prediction]:
    """Read a JSONL prediction file keyed by doc_id."""
    predictions: dict[str, Prediction] = {}
    with open(path, "r", encoding="utf-8") as fh:
        for line_no, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                obj = json.loads(line)
                doc_id = str(obj["doc_id"])
                predictions[doc_id] = Prediction(
                    emotions={int(i) for i in obj.get("emotions", [])},
                    causes={int(i) for i in obj.get("causes", [])},
                    pairs={(int(p[0]), int(p[1])) for p in obj.get("pairs", [])},
                )
            except (json.JSONDecodeError, KeyError, TypeError, ValueError, IndexError) as exc:
                raise CorpusValidationError(f"malformed prediction line: {exc}", line=line_no) from exc
    return predictions


# ---------------------------------------------------------------------------
# One-sample t-test (no external stats dependency)


def _betacf(a: float, b: float, x: float) -> float:
    """Continued fraction for the regularized incomplete beta (Lentz)."""
    tiny = 1e-300
    qab, qap, qam = a + b, a + 1.0, a - 1.0
    c = 1.0
    d = 1.0 - qab * x / qap
    if abs(d) < tiny:
        d = tiny
    d = 1.0 / d
    h = d
    for m in range(1, 300):
        m2 = 2 * m
        aa = m * (b - m) * x / ((qam + m2) * (a + m2))
        d = 1.0 + aa * d
        if abs(d) < tiny:
            d = tiny
        c = 1.0 + aa / c
        if abs(c) < tiny:
            c = tiny
        d = 1.0 / d
        h *= d * c
        aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2))
        d = 1.0 + aa * d
        if abs(d) < tiny:
            d = tiny
        c = 1.0 + aa / c
        if abs(c) < tiny:
            c = tiny
        d = 1.0 / d
        delta = d * c
        h *= delta
        if abs(delta - 1.0) < 1e-15:
            break
    return h


def _betainc_reg(a: float, b: float, x: float) -> float:
    """Regularized incomplete beta I_x(a, b) via the continued fraction."""
    if x <= 0.0:
        return 0.0
    if x >= 1.0:
        return 1.0
    log_front = (
        math.lgamma(a + b)
        - math.lgamma(a)
        - math.lgamma(b)
        + a * math.log(x)
        + b * math.log1p(-x)
    )
    front = math.exp(log_front)
    if x < (a + 1.0) / (a + b + 2.0):
        return front * _betacf(a, b, x) / a
    return 1.0 - front * _betacf(b, a, 1.0 - x) / b


def ttest_onesample(scores: list[float], popmean: float) -> tuple[float, float]:
    """One-sample t statistic and two-sided p-value.

    Uses the sample standard deviation (ddof=1); the p-value comes from
    the symmetric-t identity p = I_{df/(df+t^2)}(df/2, 1/2).
    """
    if len(scores) < 2:
        raise ContractError(f"t-test needs at least two scores; got {len(scores)}")
    values = np.asarray(scores, dtype=float)
    df = len(values) - 1
    s = float(values.std(ddof=1))
    if s == 0.0:
        raise DegenerateSampleError("all scores are identical; the t statistic is undefined")
    t = float((values.mean() - popmean) / (s / math.sqrt(len(values))))
    if t == 0.0:
        return 0.0, 1.0
    p = _betainc_reg(df / 2.0, 0.5, df / (df + t * t))
    return t, min(1.0, max(0.0, p))
