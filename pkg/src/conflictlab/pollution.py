"""Pollution attack: minimally edit evidence to support a different answer.

A polluted pair taxonomy over one question needs four roles: two organic
evidences for answer A, one organic evidence for answer B, and A's first
evidence rewritten to support B.  Pairing those roles yields five typed
pairs (three conflicting, two non-conflicting controls).
"""

from __future__ import annotations

import random
from dataclasses import dataclass
from typing import Mapping, Optional, Sequence

from .core import (
    AnswerCandidate,
    Evidence,
    EvidencePair,
    PairLabel,
    PairType,
    QAItem,
    QcStatus,
    make_pair,
    stable_id,
)
from .errors import (
    GenerationParseFailure,
    KeyAbsent,
    MissingRole,
    NoJsonFound,
    NonStringValue,
    SameAnswer,
)
from .gateway import GenerationRequest, ModelGateway
from .prompts import TEMPLATES, extract_json_field

__all__ = ["PollutionRoles", "choose_target_answer", "revise_evidence", "build_pollution_pairs"]


def choose_target_answer(
    candidates: Sequence[AnswerCandidate],
    source_index: int,
    rng: Optional[random.Random] = None,
) -> AnswerCandidate:
    """Target answer for pollution: the first candidate distinct from the
    source (a seeded choice when an rng is supplied)."""
    eligible = sorted(
        (c for c in candidates if c.index != source_index), key=lambda c: c.index
    )
    if not eligible:
        raise MissingRole("no alternative answer to pollute towards", source=source_index)
    return rng.choice(eligible) if rng is not None else eligible[0]


def revise_evidence(
    gateway: ModelGateway,
    backend: str,
    qa: QAItem,
    a_src: AnswerCandidate,
    a_tgt: AnswerCandidate,
    evidence: Evidence,
    max_attempts: Optional[int] = None,
) -> Evidence:
    """Modify ``evidence`` (which supports ``a_src``) to support ``a_tgt``
    with as few edits as possible.  The result is UNCHECKED and must re-pass
    the full quality check for the target answer before pairing."""
    if a_src.index == a_tgt.index:
        raise SameAnswer("source and target answers are identical", index=a_src.index)
    if evidence.supported_answer_index != a_src.index:
        raise ValueError(
            f"evidence {evidence.id} supports answer {evidence.supported_answer_index}, "
            f"not {a_src.index}"
        )
    if evidence.qc_status is not QcStatus.PASSED:
        raise ValueError(f"evidence {evidence.id} has not passed QC")
    prompt = TEMPLATES["pollute"].render(
        {"q": qa.question, "e": evidence.text, "a": a_tgt.text}
    )
    attempts = max_attempts or gateway.max_attempts
    last_error: Exception = GenerationParseFailure("no attempts made")
    for attempt in range(attempts):
        raw = gateway.complete(GenerationRequest(backend, prompt, attempt=attempt))
        try:
            text = extract_json_field(raw, "Modified_passage")
        except (NoJsonFound, KeyAbsent, NonStringValue) as exc:
            last_error = GenerationParseFailure(str(exc), evidence=evidence.id)
            continue
        return Evidence(
            id=stable_id("evidence", qa.id, f"pollute:{evidence.id}->a{a_tgt.index}"),
            qa_id=qa.id,
            text=text,
            supported_answer_index=a_tgt.index,
            length_mode=evidence.length_mode,
            pollution_source=evidence.id,
            qc_status=QcStatus.UNCHECKED,
        )
    raise last_error


@dataclass(frozen=True)
class PollutionRoles:
    """The four evidence roles of one polluted question group."""

    e_a1: Evidence  # organic, answer A
    e_a2: Evidence  # organic, answer A
    e_b: Evidence  # organic, answer B
    e_ab1: Evidence  # e_a1 polluted to support answer B


def build_pollution_pairs(
    qa_id: str,
    roles: PollutionRoles,
    facets: Optional[Mapping[str, str]] = None,
) -> list[EvidencePair]:
    """The five typed pairs of the pollution breakdown.

    Conflicting: direct (e_a1, e_b), close polluted (e_ab1, e_a1), far
    polluted (e_ab1, e_a2).  Non-conflicting controls: (e_a1, e_a2) and
    (e_ab1, e_b), the latter typed POLLUTED_NONCONFLICT since both support B.
    """
    for role_name in ("e_a1", "e_a2", "e_b", "e_ab1"):
        ev = getattr(roles, role_name, None)
        if ev is None:
            raise MissingRole("pollution role absent", role=role_name, qa_id=qa_id)
    e_a1, e_a2, e_b, e_ab1 = roles.e_a1, roles.e_a2, roles.e_b, roles.e_ab1
    if e_a1.supported_answer_index != e_a2.supported_answer_index:
        raise ValueError("e_a1 and e_a2 must support the same answer")
    if e_b.supported_answer_index == e_a1.supported_answer_index:
        raise ValueError("e_b must support a different answer than e_a1")
    if e_ab1.pollution_source != e_a1.id:
        raise ValueError("e_ab1 must be polluted from e_a1")
    if e_ab1.supported_answer_index != e_b.supported_answer_index:
        raise ValueError("e_ab1 must support the same answer as e_b")

    base = dict(facets or {})
    return [
        make_pair(qa_id, e_a1, e_b, PairType.ANSWER_DIRECT,
                  gold_label=PairLabel.CONFLICTING, facets=base),
        make_pair(qa_id, e_ab1, e_a1, PairType.POLLUTED_CLOSE,
                  gold_label=PairLabel.CONFLICTING, facets=base),
        make_pair(qa_id, e_ab1, e_a2, PairType.POLLUTED_FAR,
                  gold_label=PairLabel.CONFLICTING, facets=base),
        make_pair(qa_id, e_a1, e_a2, PairType.ANSWER_DIRECT,
                  gold_label=PairLabel.NON_CONFLICTING, facets=base),
        make_pair(qa_id, e_ab1, e_b, PairType.POLLUTED_NONCONFLICT,
                  gold_label=PairLabel.NON_CONFLICTING, facets=base),
    ]
