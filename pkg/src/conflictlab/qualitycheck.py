"""Automatic validation gates for generated evidence.

Answer evidence passes a two-step check: an NLI gate (question + evidence
entails a declarative answer hypothesis) and an LLM reasoning gate (a model
answering from the evidence recovers the intended answer, judged by NLI or
normalized containment).  Factoid evidence must entail every factoid used to
generate it and contradict every unused counterpart.  The cheaper NLI gate
runs first and short-circuits.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Sequence

from .core import (
    AnswerCandidate,
    Evidence,
    LabelDistribution,
    QAItem,
    QcFailureReason,
    QcStatus,
    normalize_answer,
)
from .gateway import GenerationRequest, ModelGateway
from .prompts import TEMPLATES

__all__ = ["QcLogEntry", "check_answer_evidence", "check_factoid_evidence"]


@dataclass(frozen=True)
class QcLogEntry:
    evidence_id: str
    step: str
    verdict: str
    reason: Optional[str] = None
    raw_distribution: Optional[LabelDistribution] = None
    position: Optional[int] = None
    detail: Optional[str] = None

    def to_record(self) -> dict:
        return {
            "evidence_id": self.evidence_id,
            "step": self.step,
            "verdict": self.verdict,
            "reason": self.reason,
            "raw_distribution": (
                self.raw_distribution.to_record() if self.raw_distribution else None
            ),
            "position": self.position,
            "detail": self.detail,
        }


def _entailment_argmax(d: LabelDistribution) -> bool:
    return d.entailment > d.neutral and d.entailment > d.contradiction


def _contradiction_argmax(d: LabelDistribution) -> bool:
    return d.contradiction > d.entailment and d.contradiction > d.neutral


def check_answer_evidence(
    gateway: ModelGateway,
    nli_backend: str,
    llm_backend: str,
    qa: QAItem,
    answer: AnswerCandidate,
    evidence: Evidence,
) -> tuple[Evidence, list[QcLogEntry]]:
    """Two-step answer-evidence check; returns the evidence with its QC
    status resolved plus the per-step log.

    Backend failures propagate, leaving the evidence UNCHECKED (retryable).
    """
    if evidence.qc_status is not QcStatus.UNCHECKED:
        raise ValueError(f"evidence {evidence.id} was already checked")
    log: list[QcLogEntry] = []

    premise = f"{qa.question} {evidence.text}"
    hypothesis = TEMPLATES["qc_answer_hypothesis"].render(
        {"q": qa.question, "a": answer.text}
    )
    d1 = gateway.classify_nli(nli_backend, premise, hypothesis)
    step1_pass = _entailment_argmax(d1)
    log.append(
        QcLogEntry(
            evidence_id=evidence.id,
            step="nli",
            verdict="pass" if step1_pass else "fail",
            reason=None if step1_pass else QcFailureReason.NLI_NOT_ENTAILED.value,
            raw_distribution=d1,
        )
    )
    if not step1_pass:
        return evidence.with_qc(QcStatus.FAILED, QcFailureReason.NLI_NOT_ENTAILED), log

    prompt = TEMPLATES["qc_answer"].render({"e": evidence.text, "q": qa.question})
    predicted = gateway.complete(GenerationRequest(llm_backend, prompt)).strip()
    norm_answer = normalize_answer(answer.text)
    norm_predicted = normalize_answer(predicted)
    containment = bool(norm_answer) and bool(norm_predicted) and (
        norm_answer in norm_predicted or norm_predicted in norm_answer
    )
    d2 = gateway.classify_nli(nli_backend, predicted, answer.text) if predicted else None
    nli_ok = d2 is not None and _entailment_argmax(d2)
    step2_pass = nli_ok or containment
    log.append(
        QcLogEntry(
            evidence_id=evidence.id,
            step="llm",
            verdict="pass" if step2_pass else "fail",
            reason=None if step2_pass else QcFailureReason.LLM_ANSWER_MISMATCH.value,
            raw_distribution=d2,
            detail=f"predicted={predicted!r} nli_ok={nli_ok} containment={containment}",
        )
    )
    if not step2_pass:
        return evidence.with_qc(QcStatus.FAILED, QcFailureReason.LLM_ANSWER_MISMATCH), log
    return evidence.with_qc(QcStatus.PASSED), log


def check_factoid_evidence(
    gateway: ModelGateway,
    nli_backend: str,
    evidence: Evidence,
    used: Sequence[str],
    unused: Sequence[str],
) -> tuple[Evidence, list[QcLogEntry]]:
    """Entail/contradict check for factoid-seeded evidence.

    Every used factoid must be entailed and every unused counterpart
    contradicted; the first failing position is recorded.  An empty unused
    list passes the contradiction side vacuously.
    """
    if evidence.qc_status is not QcStatus.UNCHECKED:
        raise ValueError(f"evidence {evidence.id} was already checked")
    if evidence.indicator is None:
        raise ValueError(f"evidence {evidence.id} is not factoid-split")
    log: list[QcLogEntry] = []

    for position, factoid in enumerate(used):
        d = gateway.classify_nli(nli_backend, evidence.text, factoid)
        ok = _entailment_argmax(d)
        log.append(
            QcLogEntry(
                evidence_id=evidence.id,
                step="factoid_entail",
                verdict="pass" if ok else "fail",
                reason=None if ok else QcFailureReason.FACTOID_NOT_ENTAILED.value,
                raw_distribution=d,
                position=position,
            )
        )
        if not ok:
            return (
                evidence.with_qc(QcStatus.FAILED, QcFailureReason.FACTOID_NOT_ENTAILED),
                log,
            )
    for position, factoid in enumerate(unused):
        d = gateway.classify_nli(nli_backend, evidence.text, factoid)
        ok = _contradiction_argmax(d)
        log.append(
            QcLogEntry(
                evidence_id=evidence.id,
                step="factoid_contradict",
                verdict="pass" if ok else "fail",
                reason=None if ok else QcFailureReason.FACTOID_NOT_CONTRADICTED.value,
                raw_distribution=d,
                position=position,
            )
        )
        if not ok:
            return (
                evidence.with_qc(QcStatus.FAILED, QcFailureReason.FACTOID_NOT_CONTRADICTED),
                log,
            )
    return evidence.with_qc(QcStatus.PASSED), log
