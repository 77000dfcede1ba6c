"""Conflict-resolution protocol: CoT answering, belief probing, behavior stats.

Models answer a question twice: once with both conflicting evidences in the
prompt and once closed-book.  The closed-book answer determines whether the
model holds an internal belief over one of the pair's answers.  Behavior
labels are human-assigned through the annotation service, never inferred.
"""

from __future__ import annotations

import logging
import re
from dataclasses import dataclass
from enum import Enum
from typing import Any, Mapping, Optional, Sequence

from .core import EvidencePair, PairLabel, QAItem, normalize_answer, stable_id
from .errors import ParseFailure
from .gateway import GenerationRequest, ModelGateway
from .prompts import TEMPLATES

__all__ = [
    "ResolutionMode",
    "Belief",
    "BehaviorKind",
    "ResolutionTranscript",
    "BehaviorLabel",
    "answer_with_evidence",
    "answer_closed_book",
    "determine_belief",
    "behavior_distribution",
    "DEFAULT_RESOLUTION_SAMPLE",
    "BEHAVIOR_VOCABULARY",
]

logger = logging.getLogger(__name__)

DEFAULT_RESOLUTION_SAMPLE = 120

_ANSWER_MARKER = re.compile(r"final answer\s*:", re.IGNORECASE)


class ResolutionMode(Enum):
    WITH_EVIDENCE = "WITH_EVIDENCE"
    CLOSED_BOOK = "CLOSED_BOOK"


class Belief(Enum):
    BELIEF_A1 = "BELIEF_A1"
    BELIEF_A2 = "BELIEF_A2"
    NO_BELIEF = "NO_BELIEF"


class BehaviorKind(Enum):
    """Resolution behavior taxonomy; values are the annotation display strings."""

    REFRAIN = "Refrain from answering"
    RESOLVE_CONTENT_RELIABILITY = "Resolve by content reliability"
    RESOLVE_INTERNAL_KNOWLEDGE = "Resolve by internal knowledge"
    RESOLVE_BY_CHANCE = "Resolve by chance"
    INTEGRATION = "Integration"
    OTHER_RATIONALIZE_BY_CHANCE = "Rationalize by chance"
    OTHER_RATIONALIZE_INTEGRATION_WITH_BELIEF = "Rationalize-integration with belief"


BEHAVIOR_VOCABULARY: tuple[str, ...] = tuple(kind.value for kind in BehaviorKind)


@dataclass(frozen=True)
class ResolutionTranscript:
    id: str
    pair_id: str
    qa_id: str
    mode: ResolutionMode
    prompt: str
    rationale: str
    final_answer: str
    backend: str

    def to_record(self) -> dict:
        return {
            "id": self.id,
            "pair_id": self.pair_id,
            "qa_id": self.qa_id,
            "mode": self.mode.value,
            "prompt": self.prompt,
            "rationale": self.rationale,
            "final_answer": self.final_answer,
            "backend": self.backend,
        }

    @classmethod
    def from_record(cls, rec: Mapping[str, Any]) -> "ResolutionTranscript":
        return cls(
            id=rec["id"],
            pair_id=rec["pair_id"],
            qa_id=rec["qa_id"],
            mode=ResolutionMode(rec["mode"]),
            prompt=rec["prompt"],
            rationale=rec["rationale"],
            final_answer=rec["final_answer"],
            backend=rec["backend"],
        )


@dataclass(frozen=True)
class BehaviorLabel:
    transcript_id: str
    label: BehaviorKind
    annotator: str

    def to_record(self) -> dict:
        return {
            "transcript_id": self.transcript_id,
            "label": self.label.name,
            "annotator": self.annotator,
        }

    @classmethod
    def from_record(cls, rec: Mapping[str, Any]) -> "BehaviorLabel":
        raw = rec["label"]
        try:
            kind = BehaviorKind[raw]
        except KeyError:
            kind = BehaviorKind(raw)  # accept display strings too
        return cls(
            transcript_id=rec["transcript_id"], label=kind, annotator=rec["annotator"]
        )


def _split_on_marker(raw: str) -> Optional[tuple[str, str]]:
    matches = list(_ANSWER_MARKER.finditer(raw))
    if not matches:
        return None
    last = matches[-1]
    rationale = raw[: last.start()].strip()
    final_answer = raw[last.end():].strip()
    if not final_answer:
        return None
    return rationale, final_answer


def _run_cot(
    gateway: ModelGateway,
    backend: str,
    prompt: str,
    pair_id: str,
    qa_id: str,
    mode: ResolutionMode,
    max_attempts: Optional[int],
) -> ResolutionTranscript:
    attempts = max_attempts or gateway.max_attempts
    for attempt in range(attempts):
        raw = gateway.complete(GenerationRequest(backend, prompt, attempt=attempt))
        parts = _split_on_marker(raw)
        if parts is None:
            continue
        rationale, final_answer = parts
        return ResolutionTranscript(
            id=stable_id("transcript", pair_id, mode.value, backend),
            pair_id=pair_id,
            qa_id=qa_id,
            mode=mode,
            prompt=prompt,
            rationale=rationale,
            final_answer=final_answer,
            backend=backend,
        )
    raise ParseFailure(
        "no answer marker in response after retries", pair_id=pair_id, mode=mode.value
    )


def answer_with_evidence(
    gateway: ModelGateway,
    backend: str,
    qa: QAItem,
    pair: EvidencePair,
    left_text: str,
    right_text: str,
    max_attempts: Optional[int] = None,
) -> ResolutionTranscript:
    """Chain-of-thought answer with both conflicting evidences in context."""
    if pair.gold_label is not PairLabel.CONFLICTING:
        raise ValueError(f"pair {pair.id} is not CONFLICTING")
    prompt = TEMPLATES["resolve_with_evidence"].render(
        {"q": qa.question, "e1": left_text, "e2": right_text}
    )
    return _run_cot(
        gateway, backend, prompt, pair.id, qa.id, ResolutionMode.WITH_EVIDENCE, max_attempts
    )


def answer_closed_book(
    gateway: ModelGateway,
    backend: str,
    qa: QAItem,
    pair_id: str,
    max_attempts: Optional[int] = None,
) -> ResolutionTranscript:
    """Chain-of-thought answer from the question alone (parametric knowledge)."""
    prompt = TEMPLATES["resolve_closed_book"].render({"q": qa.question})
    return _run_cot(
        gateway, backend, prompt, pair_id, qa.id, ResolutionMode.CLOSED_BOOK, max_attempts
    )


def determine_belief(
    closed_book_answer: str,
    a1: str,
    a2: str,
    gateway: Optional[ModelGateway] = None,
    nli_backend: Optional[str] = None,
) -> Belief:
    """Match the closed-book answer against the pair's two answers.

    Tier 1: normalized equality.  Tier 2: normalized containment in either
    direction.  Tier 3 (when an NLI backend is given): entailment argmax
    between the answer sentences.  The first tier matching exactly one
    answer decides; a tier matching both is ambiguous and yields NO_BELIEF.
    """
    if not a1 or not a2:
        raise ValueError("candidate answers must be non-empty")
    norm_closed = normalize_answer(closed_book_answer)
    norm_a = (normalize_answer(a1), normalize_answer(a2))

    def decide(match_1: bool, match_2: bool) -> Optional[Belief]:
        if match_1 and match_2:
            return Belief.NO_BELIEF
        if match_1:
            return Belief.BELIEF_A1
        if match_2:
            return Belief.BELIEF_A2
        return None

    verdict = decide(norm_closed == norm_a[0], norm_closed == norm_a[1])
    if verdict is not None:
        return verdict

    def contains(x: str, y: str) -> bool:
        return bool(x) and bool(y) and (x in y or y in x)

    verdict = decide(contains(norm_closed, norm_a[0]), contains(norm_closed, norm_a[1]))
    if verdict is not None:
        return verdict

    if gateway is not None and nli_backend is not None and closed_book_answer.strip():
        try:
            matches = []
            for answer in (a1, a2):
                d = gateway.classify_nli(nli_backend, closed_book_answer, answer)
                matches.append(d.entailment > d.neutral and d.entailment > d.contradiction)
            verdict = decide(matches[0], matches[1])
            if verdict is not None:
                return verdict
        except Exception as exc:  # degrade to tiers 1-2
            logger.warning("belief NLI tier unavailable (%s); using string tiers only", exc)
    return Belief.NO_BELIEF


def behavior_distribution(
    labels: Sequence[BehaviorLabel],
    strata: Optional[Mapping[str, str]] = None,
    stratum_order: Optional[Sequence[str]] = None,
) -> dict:
    """Percentage of each behavior label, per stratum.

    ``strata`` maps transcript ids to stratum names (e.g. belief status or
    annotated intensity); omitted ids fall into the "all" stratum.  With
    exactly two strata a per-label delta (second minus first, in
    ``stratum_order``) is included, and empty declared strata are reported
    rather than fatal.
    """
    by_stratum: dict[str, list[BehaviorLabel]] = {}
    for label in labels:
        name = strata.get(label.transcript_id, "all") if strata else "all"
        by_stratum.setdefault(name, []).append(label)

    declared = list(stratum_order or sorted(by_stratum))
    for name in by_stratum:
        if name not in declared:
            declared.append(name)

    result: dict[str, Any] = {"strata": {}, "empty_strata": []}
    for name in declared:
        stratum_labels = by_stratum.get(name, [])
        if not stratum_labels:
            result["empty_strata"].append(name)
            continue
        counts = {kind.name: 0 for kind in BehaviorKind}
        for label in stratum_labels:
            counts[label.label.name] += 1
        total = len(stratum_labels)
        result["strata"][name] = {
            "count": total,
            "counts": counts,
            "percentages": {k: 100.0 * v / total for k, v in counts.items()},
        }

    populated = [name for name in declared if name in result["strata"]]
    if len(populated) == 2:
        first, second = populated
        result["deltas"] = {
            kind.name: (
                result["strata"][second]["percentages"][kind.name]
                - result["strata"][first]["percentages"][kind.name]
            )
            for kind in BehaviorKind
        }
    return result
