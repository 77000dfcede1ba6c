"""Domain types shared by every pipeline stage.

All values are immutable after construction and therefore safe to share
between concurrent workers.  Each type has a ``to_record``/``from_record``
pair defining the JSONL wire schema (snake_case field names); serializing a
value and re-parsing it yields an equal value.
"""

from __future__ import annotations

import hashlib
import string
from dataclasses import dataclass, field, replace
from enum import Enum
from fractions import Fraction
from typing import Any, Mapping, Optional, Sequence

__all__ = [
    "Dataset",
    "AnswerOrigin",
    "LengthMode",
    "QcStatus",
    "QcFailureReason",
    "PairLabel",
    "PairType",
    "QAItem",
    "AnswerCandidate",
    "Evidence",
    "FactoidPair",
    "EvidencePair",
    "LabelDistribution",
    "normalize_answer",
    "stable_id",
    "make_pair",
    "verify_pair_references",
]


class Dataset(Enum):
    NQ_OPEN = "NQ_OPEN"
    CWQ = "CWQ"
    STRATEGYQA = "STRATEGYQA"
    OTHER = "OTHER"


class AnswerOrigin(Enum):
    GOLD = "GOLD"
    GENERATED = "GENERATED"


class LengthMode(Enum):
    SHORT = "SHORT"
    LONG = "LONG"


class QcStatus(Enum):
    UNCHECKED = "UNCHECKED"
    PASSED = "PASSED"
    FAILED = "FAILED"


class QcFailureReason(Enum):
    NLI_NOT_ENTAILED = "NLI_NOT_ENTAILED"
    LLM_ANSWER_MISMATCH = "LLM_ANSWER_MISMATCH"
    FACTOID_NOT_ENTAILED = "FACTOID_NOT_ENTAILED"
    FACTOID_NOT_CONTRADICTED = "FACTOID_NOT_CONTRADICTED"
    PARSE_FAILURE = "PARSE_FAILURE"


class PairLabel(Enum):
    CONFLICTING = "CONFLICTING"
    NON_CONFLICTING = "NON_CONFLICTING"


class PairType(Enum):
    ANSWER_DIRECT = "ANSWER_DIRECT"
    POLLUTED_CLOSE = "POLLUTED_CLOSE"
    POLLUTED_FAR = "POLLUTED_FAR"
    POLLUTED_NONCONFLICT = "POLLUTED_NONCONFLICT"
    FACTOID = "FACTOID"


def stable_id(*parts: Any) -> str:
    """Content hash over the given parts; replays with identical inputs get
    identical ids."""
    digest = hashlib.sha256("".join(str(p) for p in parts).encode("utf-8"))
    return digest.hexdigest()[:16]


def normalize_answer(text: str) -> str:
    """Single comparison semantics for answer distinctness and belief matching:
    case-fold, trim, collapse internal whitespace, strip surrounding punctuation.
    """
    collapsed = " ".join(text.split())
    return collapsed.strip(string.punctuation + " ").lower()


@dataclass(frozen=True)
class QAItem:
    id: str
    question: str
    gold_answer: str
    extra_answers: tuple[str, ...] = ()
    dataset: Dataset = Dataset.OTHER
    factoids: Optional[tuple[str, ...]] = None

    def __post_init__(self):
        if not self.question:
            raise ValueError("question must be non-empty")
        object.__setattr__(self, "extra_answers", tuple(self.extra_answers))
        if self.factoids is not None:
            object.__setattr__(self, "factoids", tuple(self.factoids))

    def to_record(self) -> dict:
        return {
            "id": self.id,
            "question": self.question,
            "gold_answer": self.gold_answer,
            "extra_answers": list(self.extra_answers),
            "dataset": self.dataset.value,
            "factoids": list(self.factoids) if self.factoids is not None else None,
        }

    @classmethod
    def from_record(cls, rec: Mapping[str, Any]) -> "QAItem":
        return cls(
            id=rec["id"],
            question=rec["question"],
            gold_answer=rec["gold_answer"],
            extra_answers=tuple(rec.get("extra_answers") or ()),
            dataset=Dataset(rec.get("dataset", "OTHER")),
            factoids=tuple(rec["factoids"]) if rec.get("factoids") is not None else None,
        )


@dataclass(frozen=True)
class AnswerCandidate:
    qa_id: str
    index: int
    text: str
    origin: AnswerOrigin

    def __post_init__(self):
        if self.index < 0:
            raise ValueError("index must be >= 0")
        if (self.index == 0) != (self.origin is AnswerOrigin.GOLD):
            raise ValueError("index 0 iff origin GOLD")

    def to_record(self) -> dict:
        return {
            "qa_id": self.qa_id,
            "index": self.index,
            "text": self.text,
            "origin": self.origin.value,
        }

    @classmethod
    def from_record(cls, rec: Mapping[str, Any]) -> "AnswerCandidate":
        return cls(
            qa_id=rec["qa_id"],
            index=rec["index"],
            text=rec["text"],
            origin=AnswerOrigin(rec["origin"]),
        )


@dataclass(frozen=True)
class Evidence:
    """A generated evidence text with full lineage.

    Exactly one of ``supported_answer_index`` (answer-split evidence) and
    ``indicator`` (factoid-split evidence) is set.  ``factoid_positions``
    records which of the item's factoid positions the indicator covers when
    evidence was generated from a subset (corroboration ladders); it is
    parallel to ``indicator`` and defaults to the full prefix.
    """

    id: str
    qa_id: str
    text: str
    supported_answer_index: Optional[int] = None
    length_mode: LengthMode = LengthMode.SHORT
    indicator: Optional[tuple[int, ...]] = None
    factoid_positions: Optional[tuple[int, ...]] = None
    pollution_source: Optional[str] = None
    qc_status: QcStatus = QcStatus.UNCHECKED
    qc_failure_reason: Optional[QcFailureReason] = None

    def __post_init__(self):
        if (self.supported_answer_index is None) == (self.indicator is None):
            raise ValueError(
                "exactly one of supported_answer_index / indicator must be set"
            )
        if self.indicator is not None:
            object.__setattr__(self, "indicator", tuple(int(b) for b in self.indicator))
            if any(b not in (0, 1) for b in self.indicator):
                raise ValueError("indicator must be a bit vector")
            if self.factoid_positions is not None:
                object.__setattr__(
                    self, "factoid_positions", tuple(int(p) for p in self.factoid_positions)
                )
                if len(self.factoid_positions) != len(self.indicator):
                    raise ValueError("factoid_positions must parallel indicator")
        elif self.factoid_positions is not None:
            raise ValueError("factoid_positions requires indicator")
        if self.qc_status is QcStatus.FAILED and self.qc_failure_reason is None:
            raise ValueError("FAILED evidence must record a failure reason")

    @property
    def word_count(self) -> int:
        return len(self.text.split())

    def to_record(self) -> dict:
        return {
            "id": self.id,
            "qa_id": self.qa_id,
            "text": self.text,
            "supported_answer_index": self.supported_answer_index,
            "length_mode": self.length_mode.value,
            "indicator": list(self.indicator) if self.indicator is not None else None,
            "factoid_positions": (
                list(self.factoid_positions) if self.factoid_positions is not None else None
            ),
            "pollution_source": self.pollution_source,
            "qc_status": self.qc_status.value,
            "qc_failure_reason": (
                self.qc_failure_reason.value if self.qc_failure_reason else None
            ),
            "word_count": self.word_count,
        }

    @classmethod
    def from_record(cls, rec: Mapping[str, Any]) -> "Evidence":
        return cls(
            id=rec["id"],
            qa_id=rec["qa_id"],
            text=rec["text"],
            supported_answer_index=rec.get("supported_answer_index"),
            length_mode=LengthMode(rec.get("length_mode", "SHORT")),
            indicator=tuple(rec["indicator"]) if rec.get("indicator") is not None else None,
            factoid_positions=(
                tuple(rec["factoid_positions"])
                if rec.get("factoid_positions") is not None
                else None
            ),
            pollution_source=rec.get("pollution_source"),
            qc_status=QcStatus(rec.get("qc_status", "UNCHECKED")),
            qc_failure_reason=(
                QcFailureReason(rec["qc_failure_reason"])
                if rec.get("qc_failure_reason")
                else None
            ),
        )

    def with_qc(self, status: QcStatus, reason: Optional[QcFailureReason] = None) -> "Evidence":
        return replace(self, qc_status=status, qc_failure_reason=reason)


@dataclass(frozen=True)
class FactoidPair:
    qa_id: str
    position: int
    original: str
    perturbed: str

    def __post_init__(self):
        if not self.perturbed:
            raise ValueError("perturbed factoid must be non-empty")
        if self.perturbed == self.original:
            raise ValueError("perturbed factoid must differ from the original")

    def to_record(self) -> dict:
        return {
            "qa_id": self.qa_id,
            "position": self.position,
            "original": self.original,
            "perturbed": self.perturbed,
        }

    @classmethod
    def from_record(cls, rec: Mapping[str, Any]) -> "FactoidPair":
        return cls(
            qa_id=rec["qa_id"],
            position=rec["position"],
            original=rec["original"],
            perturbed=rec["perturbed"],
        )


@dataclass(frozen=True)
class EvidencePair:
    """Two evidence references plus the gold label and pair metadata.

    For FACTOID pairs the gold label is fully determined by the intensity
    (0 iff NON_CONFLICTING); it is derived at construction rather than
    stored independently so label and intensity cannot drift.
    """

    id: str
    qa_id: str
    left: str
    right: str
    gold_label: PairLabel
    pair_type: PairType
    intensity: Optional[Fraction] = None
    facets: Mapping[str, str] = field(default_factory=dict)

    def __post_init__(self):
        if self.left == self.right:
            raise ValueError("a pair must reference two distinct evidence ids")
        if (self.pair_type is PairType.FACTOID) != (self.intensity is not None):
            raise ValueError("intensity present iff pair_type FACTOID")
        if self.intensity is not None:
            frac = Fraction(self.intensity)
            if not 0 <= frac <= 1:
                raise ValueError("intensity must lie in [0, 1]")
            object.__setattr__(self, "intensity", frac)
            expected = PairLabel.CONFLICTING if frac > 0 else PairLabel.NON_CONFLICTING
            if self.gold_label is not expected:
                raise ValueError("factoid gold_label must derive from intensity")
        object.__setattr__(self, "facets", dict(self.facets))

    def to_record(self) -> dict:
        return {
            "id": self.id,
            "qa_id": self.qa_id,
            "left": self.left,
            "right": self.right,
            "gold_label": self.gold_label.value,
            "pair_type": self.pair_type.value,
            "intensity": str(self.intensity) if self.intensity is not None else None,
            "facets": dict(sorted(self.facets.items())),
        }

    @classmethod
    def from_record(cls, rec: Mapping[str, Any]) -> "EvidencePair":
        return cls(
            id=rec["id"],
            qa_id=rec["qa_id"],
            left=rec["left"],
            right=rec["right"],
            gold_label=PairLabel(rec["gold_label"]),
            pair_type=PairType(rec["pair_type"]),
            intensity=Fraction(rec["intensity"]) if rec.get("intensity") is not None else None,
            facets=dict(rec.get("facets") or {}),
        )


_DISTRIBUTION_SUM_TOL = 1e-6


@dataclass(frozen=True)
class LabelDistribution:
    entailment: float
    neutral: float
    contradiction: float

    def __post_init__(self):
        for name, p in (
            ("entailment", self.entailment),
            ("neutral", self.neutral),
            ("contradiction", self.contradiction),
        ):
            if not 0.0 <= p <= 1.0:
                raise ValueError(f"{name} probability {p} outside [0, 1]")
        total = self.entailment + self.neutral + self.contradiction
        if abs(total - 1.0) > _DISTRIBUTION_SUM_TOL:
            raise ValueError(f"probabilities sum to {total}, expected 1.0")

    def to_record(self) -> dict:
        return {
            "entailment": self.entailment,
            "neutral": self.neutral,
            "contradiction": self.contradiction,
        }

    @classmethod
    def from_record(cls, rec: Mapping[str, Any]) -> "LabelDistribution":
        return cls(
            entailment=rec["entailment"],
            neutral=rec["neutral"],
            contradiction=rec["contradiction"],
        )


def make_pair(
    qa_id: str,
    left: Evidence,
    right: Evidence,
    pair_type: PairType,
    gold_label: Optional[PairLabel] = None,
    intensity: Optional[Fraction] = None,
    facets: Optional[Mapping[str, str]] = None,
) -> EvidencePair:
    """Construct a pair from two QC-passed evidence records.

    Factoid pairs derive their gold label from ``intensity``; all other
    types require an explicit ``gold_label``.
    """
    for e in (left, right):
        if e.qc_status is not QcStatus.PASSED:
            raise ValueError(f"evidence {e.id} has qc_status {e.qc_status.value}, not PASSED")
    if pair_type is PairType.FACTOID:
        if intensity is None:
            raise ValueError("factoid pairs require an intensity")
        gold_label = PairLabel.CONFLICTING if intensity > 0 else PairLabel.NON_CONFLICTING
    elif gold_label is None:
        raise ValueError("non-factoid pairs require an explicit gold_label")
    return EvidencePair(
        id=stable_id("pair", qa_id, left.id, right.id, pair_type.value),
        qa_id=qa_id,
        left=left.id,
        right=right.id,
        gold_label=gold_label,
        pair_type=pair_type,
        intensity=intensity,
        facets=dict(facets or {}),
    )


def verify_pair_references(
    pairs: Sequence[EvidencePair], evidence_by_id: Mapping[str, Evidence]
) -> list[str]:
    """Global scan property: no pair may reference missing or non-PASSED
    evidence.  Returns human-readable violation strings (empty = sound)."""
    violations = []
    for pair in pairs:
        for side, eid in (("left", pair.left), ("right", pair.right)):
            ev = evidence_by_id.get(eid)
            if ev is None:
                violations.append(f"pair {pair.id}: {side} evidence {eid} missing")
            elif ev.qc_status is not QcStatus.PASSED:
                violations.append(
                    f"pair {pair.id}: {side} evidence {eid} is {ev.qc_status.value}"
                )
    return violations
