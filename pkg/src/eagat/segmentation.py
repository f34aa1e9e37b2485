"""Clause segmentation, sentence attribution, and the clause-relationship mask.

Documents are ordered clause lists. Each clause knows which sentence it
belongs to; sentence ids start at 1 and never decrease. The multi-mask
matrix classifies every ordered clause pair into one of three
relationship classes:

* 0 - same clause (self influence),
* 1 - different clauses inside one sentence,
* 2 - clauses from different sentences.
"""

from __future__ import annotations

import re
from dataclasses import dataclass, field

import numpy as np

from .errors import ContractError, CorpusValidationError, EmptyDocumentError

SENTENCE_MARKS = ".?!"
CLAUSE_MARKS = ",;"

_BOUNDARY_RE = re.compile(r"([.?!,;])")


@dataclass
class Clause:
    """A token sequence attributed to one sentence."""

    text: list[str]
    sentence_id: int


@dataclass
class Document:
    """Clause sequence plus gold emotion/cause/pair annotations.

    All clause indices in the gold sets are 1-based, matching every
    external format of this package.
    """

    doc_id: str
    clauses: list[Clause]
    gold_emotions: set[int] = field(default_factory=set)
    gold_causes: set[int] = field(default_factory=set)
    gold_pairs: set[tuple[int, int]] = field(default_factory=set)

    def __len__(self) -> int:
        return len(self.clauses)

    @property
    def sentence_ids(self) -> list[int]:
        return [c.sentence_id for c in self.clauses]


def validate_document(doc: Document, line: int | None = None) -> None:
    """Check every Document invariant; raise CorpusValidationError on breach."""

    def fail(rule: str):
        raise CorpusValidationError(rule, doc_id=doc.doc_id, line=line)

    if len(doc.clauses) < 1:
        fail("a document must contain at least one clause")
    previous = 0
    for pos, clause in enumerate(doc.clauses, start=1):
        if not clause.text:
            fail(f"clause {pos} has no tokens")
        sid = clause.sentence_id
        if sid < 1:
            fail(f"clause {pos} has sentence_id {sid}; ids must be positive")
        if sid < previous or sid > previous + 1:
            fail(
                f"sentence ids must be non-decreasing without gaps, starting at 1; "
                f"clause {pos} jumps from {previous} to {sid}"
            )
        previous = sid
    n = len(doc.clauses)
    for label, indices in (("emotion", doc.gold_emotions), ("cause", doc.gold_causes)):
        for i in indices:
            if not 1 <= i <= n:
                fail(f"{label} index {i} outside [1, {n}]")
    for pair in doc.gold_pairs:
        i, j = pair
        if i not in doc.gold_emotions:
            fail(f"pair {pair} references clause {i} that is not a gold emotion")
        if j not in doc.gold_causes:
            fail(f"pair {pair} references clause {j} that is not a gold cause")


def segment(raw_text: str, doc_id: str = "doc") -> Document:
    """Split raw text into sentence-attributed clauses.

    ``. ? !`` each end a sentence; boundaries are implied at the start
    and end of the document. Commas and semicolons split clauses within
    a sentence. Consecutive boundary marks collapse and whitespace-only
    clauses are dropped. Tokens are whitespace-separated.
    """
    clauses: list[Clause] = []
    sentence_id = 1
    clauses_in_sentence = 0
    for piece in _BOUNDARY_RE.split(raw_text):
        if piece in SENTENCE_MARKS:
            if clauses_in_sentence:
                sentence_id += 1
                clauses_in_sentence = 0
            continue
        if piece in CLAUSE_MARKS:
            continue
        tokens = piece.split()
        if tokens:
            clauses.append(Clause(text=tokens, sentence_id=sentence_id))
            clauses_in_sentence += 1
    if not clauses:
        raise EmptyDocumentError("text contains no clause content", doc_id=doc_id)
    return Document(doc_id=doc_id, clauses=clauses)


@dataclass
class MultiMask:
    """|D| x |D| clause-relationship matrix with entries in {0, 1, 2}."""

    entries: np.ndarray

    @property
    def size(self) -> int:
        return self.entries.shape[0]


def build_multimask(doc: Document) -> MultiMask:
    """Classify every clause pair: 0 self, 1 same sentence, 2 otherwise."""
    ids = np.asarray(doc.sentence_ids)
    same_sentence = ids[:, None] == ids[None, :]
    entries = np.where(same_sentence, 1, 2)
    np.fill_diagonal(entries, 0)
    return MultiMask(entries=entries)


def mask_partition(mask: MultiMask, m: int) -> np.ndarray:
    """Boolean indicator of entries equal to m.

    The three indicators for m in {0, 1, 2} partition all positions.
    """
    if m not in (0, 1, 2):
        raise ContractError(f"mask class must be 0, 1 or 2; got {m}")
    return mask.entries == m


def document_to_json(doc: Document) -> dict:
    """Serialize to the canonical corpus schema (1-based indices)."""
    return {
        "doc_id": doc.doc_id,
        "clauses": [{"text": " ".join(c.text), "sentence_id": c.sentence_id} for c in doc.clauses],
        "emotions": sorted(doc.gold_emotions),
        "causes": sorted(doc.gold_causes),
        "pairs": [list(p) for p in sorted(doc.gold_pairs)],
    }


def document_from_json(obj: dict, line: int | None = None) -> Document:
    """Parse and validate one document from the canonical schema."""
    try:
        doc = Document(
            doc_id=str(obj["doc_id"]),
            clauses=[
                Clause(text=str(c["text"]).split(), sentence_id=int(c["sentence_id"]))
                for c in obj["clauses"]
            ],
            gold_emotions={int(i) for i in obj.get("emotions", [])},
            gold_causes={int(i) for i in obj.get("causes", [])},
            gold_pairs={(int(p[0]), int(p[1])) for p in obj.get("pairs", [])},
        )
    except (KeyError, TypeError, ValueError, IndexError) as exc:
        raise CorpusValidationError(f"malformed document object: {exc}", line=line) from exc
    validate_document(doc, line=line)
    return doc
