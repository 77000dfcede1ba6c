"""Answer-conflict pipeline: alternative answers, supporting evidence, pairs.

Conflicting pairs cross evidence for different answers to the same question;
non-conflicting pairs stay within one answer.  Distinctness of answers is
defined once, by ``core.normalize_answer``.
"""

from __future__ import annotations

import itertools
import random
from typing import Mapping, Optional, Sequence

from .core import (
    AnswerCandidate,
    AnswerOrigin,
    Dataset,
    Evidence,
    EvidencePair,
    LengthMode,
    PairLabel,
    PairType,
    QAItem,
    QcStatus,
    make_pair,
    normalize_answer,
    stable_id,
)
from .errors import (
    DuplicateAnswers,
    GenerationParseFailure,
    InsufficientEvidence,
    KeyAbsent,
    NoJsonFound,
    NonStringValue,
)
from .gateway import GenerationRequest, ModelGateway
from .prompts import TEMPLATES, extract_json_object

__all__ = [
    "DEFAULT_ALTERNATIVES",
    "DEFAULT_EVIDENCE_PER_ANSWER",
    "gold_candidate",
    "generate_alternative_answers",
    "generate_supporting_evidence",
    "build_answer_pairs",
]

DEFAULT_ALTERNATIVES = 3  # the generation prompt asks for THREE answers
DEFAULT_EVIDENCE_PER_ANSWER = 2  # the evidence prompts ask for TWO texts

_EVIDENCE_TEMPLATES = {
    LengthMode.SHORT: "evidence_gen_short",
    LengthMode.LONG: "evidence_gen_long",
}


def gold_candidate(qa: QAItem) -> AnswerCandidate:
    return AnswerCandidate(qa_id=qa.id, index=0, text=qa.gold_answer, origin=AnswerOrigin.GOLD)


def _ordered_values(obj: Mapping[str, str]) -> list[str]:
    def sort_key(key: str):
        return (0, int(key)) if key.isdigit() else (1, key)

    return [obj[k] for k in sorted(obj, key=sort_key)]


def generate_alternative_answers(
    gateway: ModelGateway,
    backend: str,
    qa: QAItem,
    k: int = DEFAULT_ALTERNATIVES,
    max_attempts: Optional[int] = None,
) -> list[AnswerCandidate]:
    """k generated answers, each distinct (after normalization) from the gold
    answer, its dataset aliases, and each other."""
    if k < 1:
        raise ValueError("k must be >= 1")
    if not qa.gold_answer:
        raise ValueError(f"item {qa.id} has no gold answer")
    prompt = TEMPLATES["answer_gen"].render({"q": qa.question})
    reserved = {normalize_answer(qa.gold_answer)}
    reserved.update(normalize_answer(a) for a in qa.extra_answers)
    attempts = max_attempts or gateway.max_attempts
    last_error: Exception = GenerationParseFailure("no attempts made")
    for attempt in range(attempts):
        raw = gateway.complete(GenerationRequest(backend, prompt, attempt=attempt))
        try:
            values = _ordered_values(extract_json_object(raw))
        except (NoJsonFound, NonStringValue) as exc:
            last_error = GenerationParseFailure(str(exc), qa_id=qa.id)
            continue
        if len(values) < k:
            last_error = GenerationParseFailure(
                "too few answers in response", qa_id=qa.id, got=len(values), want=k
            )
            continue
        values = values[:k]
        normalized = [normalize_answer(v) for v in values]
        if any(n in reserved for n in normalized) or len(set(normalized)) != len(normalized):
            last_error = DuplicateAnswers(
                "generated answers collide with the gold answer or each other", qa_id=qa.id
            )
            continue
        return [
            AnswerCandidate(qa_id=qa.id, index=i + 1, text=text, origin=AnswerOrigin.GENERATED)
            for i, text in enumerate(values)
        ]
    raise last_error


def generate_supporting_evidence(
    gateway: ModelGateway,
    backend: str,
    qa: QAItem,
    answer: AnswerCandidate,
    length_mode: LengthMode,
    m: int = DEFAULT_EVIDENCE_PER_ANSWER,
    max_attempts: Optional[int] = None,
) -> list[Evidence]:
    """m UNCHECKED evidence texts supporting one answer at one length mode."""
    if m < 1:
        raise ValueError("m must be >= 1")
    template = TEMPLATES[_EVIDENCE_TEMPLATES[length_mode]]
    prompt = template.render({"q": qa.question, "a": answer.text})
    attempts = max_attempts or gateway.max_attempts
    last_error: Exception = GenerationParseFailure("no attempts made")
    for attempt in range(attempts):
        raw = gateway.complete(GenerationRequest(backend, prompt, attempt=attempt))
        try:
            values = _ordered_values(extract_json_object(raw))
        except (NoJsonFound, NonStringValue) as exc:
            last_error = GenerationParseFailure(str(exc), qa_id=qa.id, answer=answer.index)
            continue
        if len(values) < m:
            last_error = GenerationParseFailure(
                "too few evidence texts in response", qa_id=qa.id, got=len(values), want=m
            )
            continue
        return [
            Evidence(
                id=stable_id(
                    "evidence", qa.id, f"a{answer.index}", length_mode.value, ordinal
                ),
                qa_id=qa.id,
                text=text,
                supported_answer_index=answer.index,
                length_mode=length_mode,
                qc_status=QcStatus.UNCHECKED,
            )
            for ordinal, text in enumerate(values[:m])
        ]
    raise last_error


def build_answer_pairs(
    qa_id: str,
    evidence_by_answer: Mapping[int, Sequence[Evidence]],
    conflicting: bool = True,
    non_conflicting: bool = True,
    max_conflicting: Optional[int] = None,
    max_non_conflicting: Optional[int] = None,
    seed: int = 0,
    strict: bool = True,
    facets: Optional[Mapping[str, str]] = None,
) -> list[EvidencePair]:
    """All cross-answer (conflicting) and within-answer (non-conflicting)
    combinations over QC-passed evidence.

    ``strict`` raises INSUFFICIENT_EVIDENCE when a requested pairing cannot
    be satisfied (an empty answer group, or a within-answer request on a
    single-evidence group); the pipeline passes strict=False to skip such
    groups so QC drops reduce counts combinatorially instead of failing the
    question.
    """
    groups = {idx: list(evs) for idx, evs in evidence_by_answer.items()}
    for idx, evs in groups.items():
        if strict and not evs:
            raise InsufficientEvidence(
                "answer has no passed evidence", qa_id=qa_id, answer=idx
            )
        for ev in evs:
            if ev.qc_status is not QcStatus.PASSED:
                raise ValueError(f"evidence {ev.id} has not passed QC")
        if strict and non_conflicting and len(evs) < 2:
            raise InsufficientEvidence(
                "within-answer pairing needs two passed evidence",
                qa_id=qa_id,
                answer=idx,
                available=len(evs),
            )

    def pair_facets(left: Evidence, right: Evidence) -> dict[str, str]:
        merged = dict(facets or {})
        if left.length_mode is right.length_mode:
            merged.setdefault("length_mode", left.length_mode.value)
        else:
            merged.setdefault("length_mode", "MIXED")
        return merged

    conflicting_pairs: list[EvidencePair] = []
    non_conflicting_pairs: list[EvidencePair] = []
    ordered_indices = sorted(groups)
    if conflicting:
        for i, j in itertools.combinations(ordered_indices, 2):
            for left, right in itertools.product(groups[i], groups[j]):
                conflicting_pairs.append(
                    make_pair(
                        qa_id,
                        left,
                        right,
                        PairType.ANSWER_DIRECT,
                        gold_label=PairLabel.CONFLICTING,
                        facets=pair_facets(left, right),
                    )
                )
    if non_conflicting:
        for idx in ordered_indices:
            for left, right in itertools.combinations(groups[idx], 2):
                non_conflicting_pairs.append(
                    make_pair(
                        qa_id,
                        left,
                        right,
                        PairType.ANSWER_DIRECT,
                        gold_label=PairLabel.NON_CONFLICTING,
                        facets=pair_facets(left, right),
                    )
                )

    rng = random.Random(seed)
    conflicting_pairs = _cap(conflicting_pairs, max_conflicting, rng)
    non_conflicting_pairs = _cap(non_conflicting_pairs, max_non_conflicting, rng)
    return conflicting_pairs + non_conflicting_pairs


def _cap(pairs: list[EvidencePair], cap: Optional[int], rng: random.Random) -> list[EvidencePair]:
    if cap is None or len(pairs) <= cap:
        return pairs
    chosen = set(rng.sample(range(len(pairs)), cap))
    return [p for i, p in enumerate(pairs) if i in chosen]  # stable original order
