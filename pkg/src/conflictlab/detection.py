"""Conflict detectors and the evaluation harness.

Decision rules use strict inequalities, so ties fall to NON_CONFLICTING.
Backend-driven detectors are order-sensitive through the model, never the
rule: in BOTH-orders mode every detector issues two distinct backend calls
with swapped inputs, and reported metrics average the per-order metric
values (not metrics of merged predictions).
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field
from enum import Enum
from typing import Any, Mapping, Optional, Sequence

from .core import Evidence, EvidencePair, LabelDistribution, PairLabel, QAItem
from .errors import (
    ConfigError,
    GenerationParseFailure,
    OutOfRange,
    ScoreOutOfRange,
)
from .gateway import GenerationRequest, ModelGateway
from .prompts import TEMPLATES, extract_json_field

__all__ = [
    "Prediction",
    "Order",
    "AuxKind",
    "DetectionRecord",
    "MetricsCell",
    "MetricsReport",
    "detect_nli_max",
    "detect_nli_ce",
    "detect_fc",
    "detect_llm",
    "detect_llm_scored",
    "detect_ensemble",
    "Detector",
    "NliRuleDetector",
    "FcDetector",
    "LlmDetector",
    "LlmScoreDetector",
    "EnsembleDetector",
    "build_detector",
    "run_detector",
    "pair_inputs",
    "evaluate",
    "threshold_sweep",
    "FC_DEFAULT_THRESHOLD",
    "SWEEP_THRESHOLDS",
]

FC_DEFAULT_THRESHOLD = 0.5
SWEEP_THRESHOLDS = (0.2, 0.4, 0.6, 0.8, 1.0)

METRIC_FIELDS = (
    "precision",
    "recall",
    "f1",
    "macro_precision",
    "macro_recall",
    "macro_f1",
    "accuracy",
)


class Prediction(Enum):
    CONFLICTING = "CONFLICTING"
    NON_CONFLICTING = "NON_CONFLICTING"
    INVALID = "INVALID"


class Order(Enum):
    AB = "AB"
    BA = "BA"


class AuxKind(Enum):
    NLI_PRED = "NLI_PRED"
    FC_PRED = "FC_PRED"
    FC_SCORE = "FC_SCORE"


# --- decision rules ----------------------------------------------------------


def detect_nli_max(d: LabelDistribution) -> Prediction:
    """Conflict iff contradiction strictly exceeds both other classes."""
    if d.contradiction > d.entailment and d.contradiction > d.neutral:
        return Prediction.CONFLICTING
    return Prediction.NON_CONFLICTING


def detect_nli_ce(d: LabelDistribution) -> Prediction:
    """Conflict iff contradiction strictly exceeds entailment (neutral ignored)."""
    if d.contradiction > d.entailment:
        return Prediction.CONFLICTING
    return Prediction.NON_CONFLICTING


def detect_fc(score: float, threshold: float = FC_DEFAULT_THRESHOLD) -> Prediction:
    """Consistency scores below the threshold are read as conflicting."""
    if not 0.0 <= score <= 1.0:
        raise OutOfRange("consistency score outside [0, 1]", score=score)
    return Prediction.CONFLICTING if score < threshold else Prediction.NON_CONFLICTING


def _parse_yes_no(raw: str) -> Prediction:
    value = extract_json_field(raw, "Answer").strip().lower()
    if value == "yes":
        return Prediction.CONFLICTING
    if value == "no":
        return Prediction.NON_CONFLICTING
    raise GenerationParseFailure("Answer field is neither Yes nor No", value=value)


def detect_llm(
    gateway: ModelGateway,
    backend: str,
    question: str,
    e_a: str,
    e_b: str,
    template: str = "detect_answer",
    max_attempts: Optional[int] = None,
) -> Prediction:
    """Yes/No conflict prompt; unparseable outputs become INVALID after retries."""
    if not (question and e_a and e_b):
        raise ValueError("question and both evidence texts must be non-empty")
    prompt = TEMPLATES[template].render({"q": question, "e1": e_a, "e2": e_b})
    attempts = max_attempts or gateway.max_attempts
    for attempt in range(attempts):
        raw = gateway.complete(GenerationRequest(backend, prompt, attempt=attempt))
        try:
            return _parse_yes_no(raw)
        except Exception:
            continue
    return Prediction.INVALID


def detect_llm_scored(
    gateway: ModelGateway,
    backend: str,
    question: str,
    e_a: str,
    e_b: str,
    threshold: float,
    max_attempts: Optional[int] = None,
) -> tuple[Optional[float], Prediction]:
    """0-5 conflict rating normalized to [0, 1]; conflict iff score >= threshold."""
    if not 0.0 <= threshold <= 1.0:
        raise ValueError("threshold must lie in [0, 1]")
    prompt = TEMPLATES["detect_score"].render({"q": question, "e1": e_a, "e2": e_b})
    attempts = max_attempts or gateway.max_attempts
    for attempt in range(attempts):
        raw = gateway.complete(GenerationRequest(backend, prompt, attempt=attempt))
        value = _first_int(raw)
        if value is None:
            continue
        if not 0 <= value <= 5:
            raise ScoreOutOfRange("conflict rating outside 0..5", value=value)
        score = value / 5.0
        label = Prediction.CONFLICTING if score >= threshold else Prediction.NON_CONFLICTING
        return score, label
    return None, Prediction.INVALID


def _first_int(raw: str) -> Optional[int]:
    digits = ""
    for ch in raw:
        if ch.isdigit():
            digits += ch
        elif digits:
            break
    return int(digits) if digits else None


_AUX_TEMPLATES = {
    AuxKind.NLI_PRED: "detect_ensemble_nli",
    AuxKind.FC_PRED: "detect_ensemble_fc_pred",
    AuxKind.FC_SCORE: "detect_ensemble_fc_score",
}


def detect_ensemble(
    gateway: ModelGateway,
    backend: str,
    question: str,
    e_a: str,
    e_b: str,
    aux_kind: AuxKind,
    aux_value: Any,
    max_attempts: Optional[int] = None,
) -> Prediction:
    """Yes/No detection with an auxiliary detector signal injected into the prompt."""
    template = _AUX_TEMPLATES.get(aux_kind)
    if template is None:
        raise ConfigError("unknown ensemble aux kind", kind=aux_kind)
    rendered_aux = f"{aux_value:g}" if isinstance(aux_value, float) else str(aux_value)
    prompt = TEMPLATES[template].render(
        {"q": question, "e1": e_a, "e2": e_b, "aux": rendered_aux}
    )
    attempts = max_attempts or gateway.max_attempts
    for attempt in range(attempts):
        raw = gateway.complete(GenerationRequest(backend, prompt, attempt=attempt))
        try:
            return _parse_yes_no(raw)
        except Exception:
            continue
    return Prediction.INVALID


# --- detector zoo ------------------------------------------------------------


@dataclass(frozen=True)
class DetectionOutcome:
    predicted: Prediction
    raw_score: Optional[float] = None
    aux: Optional[dict] = None


class Detector:
    """A named conflict detector over (question, left text, right text)."""

    name: str

    def detect(self, question: str, left: str, right: str) -> DetectionOutcome:
        raise NotImplementedError


class NliRuleDetector(Detector):
    def __init__(self, gateway: ModelGateway, backend: str, rule: str = "max"):
        if rule not in ("max", "ce"):
            raise ConfigError("NLI rule must be 'max' or 'ce'", rule=rule)
        self.gateway = gateway
        self.backend = backend
        self.rule = rule
        self.name = f"nli-{rule}"

    def detect(self, question: str, left: str, right: str) -> DetectionOutcome:
        # NLI detectors see only the evidence texts: premise=left, hypothesis=right.
        d = self.gateway.classify_nli(self.backend, left, right)
        pred = detect_nli_max(d) if self.rule == "max" else detect_nli_ce(d)
        return DetectionOutcome(pred, raw_score=None)


class FcDetector(Detector):
    def __init__(self, gateway: ModelGateway, backend: str, threshold: float = FC_DEFAULT_THRESHOLD):
        self.gateway = gateway
        self.backend = backend
        self.threshold = threshold
        self.name = "fc"

    def detect(self, question: str, left: str, right: str) -> DetectionOutcome:
        # claim=left, context=right; the question is not part of the FC interface.
        score = self.gateway.score_consistency(self.backend, left, right)
        return DetectionOutcome(detect_fc(score, self.threshold), raw_score=score)


class LlmDetector(Detector):
    def __init__(self, gateway: ModelGateway, backend: str, template: str = "detect_answer"):
        self.gateway = gateway
        self.backend = backend
        self.template = template
        self.name = "llm"

    def detect(self, question: str, left: str, right: str) -> DetectionOutcome:
        pred = detect_llm(self.gateway, self.backend, question, left, right, self.template)
        return DetectionOutcome(pred)


class LlmScoreDetector(Detector):
    def __init__(self, gateway: ModelGateway, backend: str, threshold: float = 0.2):
        self.gateway = gateway
        self.backend = backend
        self.threshold = threshold
        self.name = "llm-score"

    def detect(self, question: str, left: str, right: str) -> DetectionOutcome:
        score, pred = detect_llm_scored(
            self.gateway, self.backend, question, left, right, self.threshold
        )
        return DetectionOutcome(pred, raw_score=score)


class EnsembleDetector(Detector):
    """LLM detector with an NLI or FC signal injected into the prompt."""

    def __init__(
        self,
        gateway: ModelGateway,
        backend: str,
        aux_kind: AuxKind,
        nli_backend: Optional[str] = None,
        nli_rule: str = "ce",
        fc_backend: Optional[str] = None,
        fc_threshold: float = FC_DEFAULT_THRESHOLD,
    ):
        self.gateway = gateway
        self.backend = backend
        self.aux_kind = aux_kind
        self.nli_backend = nli_backend
        self.nli_rule = nli_rule
        self.fc_backend = fc_backend
        self.fc_threshold = fc_threshold
        suffix = {"NLI_PRED": "nli", "FC_PRED": "fc-pred", "FC_SCORE": "fc-score"}[aux_kind.value]
        self.name = f"ensemble-{suffix}"
        if aux_kind is AuxKind.NLI_PRED and not nli_backend:
            raise ConfigError("ensemble-nli requires an NLI backend")
        if aux_kind in (AuxKind.FC_PRED, AuxKind.FC_SCORE) and not fc_backend:
            raise ConfigError("FC ensembles require an FC backend")

    def _aux_value(self, left: str, right: str) -> Any:
        if self.aux_kind is AuxKind.NLI_PRED:
            d = self.gateway.classify_nli(self.nli_backend, left, right)
            pred = detect_nli_max(d) if self.nli_rule == "max" else detect_nli_ce(d)
            return "conflicting" if pred is Prediction.CONFLICTING else "non-conflicting"
        score = self.gateway.score_consistency(self.fc_backend, left, right)
        if self.aux_kind is AuxKind.FC_SCORE:
            return score
        pred = detect_fc(score, self.fc_threshold)
        return "conflicting" if pred is Prediction.CONFLICTING else "non-conflicting"

    def detect(self, question: str, left: str, right: str) -> DetectionOutcome:
        aux_value = self._aux_value(left, right)
        pred = detect_ensemble(
            self.gateway, self.backend, question, left, right, self.aux_kind, aux_value
        )
        return DetectionOutcome(
            pred, aux={"kind": self.aux_kind.value, "value": aux_value}
        )


def build_detector(
    kind: str,
    gateway: ModelGateway,
    backend: str,
    nli_backend: Optional[str] = None,
    fc_backend: Optional[str] = None,
    threshold: float = 0.2,
    template: str = "detect_answer",
) -> Detector:
    """CLI detector names -> detector instances."""
    if kind == "nli-max":
        return NliRuleDetector(gateway, backend, "max")
    if kind == "nli-ce":
        return NliRuleDetector(gateway, backend, "ce")
    if kind == "fc":
        return FcDetector(gateway, backend)
    if kind == "llm":
        return LlmDetector(gateway, backend, template)
    if kind == "llm-score":
        return LlmScoreDetector(gateway, backend, threshold)
    if kind == "ensemble-nli":
        return EnsembleDetector(gateway, backend, AuxKind.NLI_PRED, nli_backend=nli_backend or backend)
    if kind == "ensemble-fc-pred":
        return EnsembleDetector(gateway, backend, AuxKind.FC_PRED, fc_backend=fc_backend or backend)
    if kind == "ensemble-fc-score":
        return EnsembleDetector(gateway, backend, AuxKind.FC_SCORE, fc_backend=fc_backend or backend)
    raise ConfigError("unknown detector kind", kind=kind)


# --- detection records and runs ----------------------------------------------


@dataclass(frozen=True)
class DetectionRecord:
    pair_id: str
    detector: str
    order: Order
    predicted: Prediction
    raw_score: Optional[float] = None
    latency_ms: int = 0
    aux: Optional[dict] = None

    def to_record(self) -> dict:
        return {
            "pair_id": self.pair_id,
            "detector": self.detector,
            "order": self.order.value,
            "predicted": self.predicted.value,
            "raw_score": self.raw_score,
            "latency_ms": self.latency_ms,
            "aux": self.aux,
        }

    @classmethod
    def from_record(cls, rec: Mapping[str, Any]) -> "DetectionRecord":
        return cls(
            pair_id=rec["pair_id"],
            detector=rec["detector"],
            order=Order(rec["order"]),
            predicted=Prediction(rec["predicted"]),
            raw_score=rec.get("raw_score"),
            latency_ms=rec.get("latency_ms", 0),
            aux=rec.get("aux"),
        )


def pair_inputs(
    pair: EvidencePair,
    qa_by_id: Mapping[str, QAItem],
    evidence_by_id: Mapping[str, Evidence],
) -> tuple[str, str, str]:
    qa = qa_by_id.get(pair.qa_id)
    left = evidence_by_id.get(pair.left)
    right = evidence_by_id.get(pair.right)
    if qa is None or left is None or right is None:
        missing = [n for n, v in (("qa", qa), ("left", left), ("right", right)) if v is None]
        raise ValueError(f"pair {pair.id} references unresolvable {missing}")
    return qa.question, left.text, right.text


def run_detector(
    detector: Detector,
    pair: EvidencePair,
    question: str,
    left_text: str,
    right_text: str,
    orders: str = "BOTH",
) -> list[DetectionRecord]:
    """Run one detector on one pair in the requested order(s).

    BOTH always issues two distinct backend calls with swapped inputs; the
    model, not the rule, is what may be order-sensitive.
    """
    wanted: Sequence[Order]
    if orders == "BOTH":
        wanted = (Order.AB, Order.BA)
    elif orders in (Order.AB.value, Order.BA.value):
        wanted = (Order(orders),)
    else:
        raise ConfigError("orders must be AB, BA, or BOTH", orders=orders)
    records = []
    for order in wanted:
        a, b = (left_text, right_text) if order is Order.AB else (right_text, left_text)
        started = time.perf_counter()
        outcome = detector.detect(question, a, b)
        elapsed_ms = int((time.perf_counter() - started) * 1000)
        records.append(
            DetectionRecord(
                pair_id=pair.id,
                detector=detector.name,
                order=order,
                predicted=outcome.predicted,
                raw_score=outcome.raw_score,
                latency_ms=elapsed_ms,
                aux=outcome.aux,
            )
        )
    return records


# --- metrics -----------------------------------------------------------------


@dataclass
class MetricsCell:
    tp: int = 0
    fp: int = 0
    fn: int = 0
    tn: int = 0
    invalid: int = 0
    precision: float = 0.0
    recall: float = 0.0
    f1: float = 0.0
    macro_precision: float = 0.0
    macro_recall: float = 0.0
    macro_f1: float = 0.0
    accuracy: float = 0.0
    support_conflicting: int = 0
    support_non_conflicting: int = 0
    zero_division: bool = False

    def to_record(self) -> dict:
        return dict(self.__dict__)


@dataclass
class MetricsReport:
    detector: str
    facet: str
    value: str
    orders: dict[str, MetricsCell] = field(default_factory=dict)
    order_mean: dict[str, float] = field(default_factory=dict)
    notes: list[str] = field(default_factory=list)

    def to_record(self) -> dict:
        return {
            "detector": self.detector,
            "facet": self.facet,
            "value": self.value,
            "orders": {k: v.to_record() for k, v in self.orders.items()},
            "order_mean": dict(self.order_mean),
            "notes": list(self.notes),
        }


def _prf(tp: int, fp: int, fn: int) -> tuple[float, float, float, bool]:
    zero_division = False
    if tp + fp == 0:
        precision, zero_division = 0.0, True
    else:
        precision = tp / (tp + fp)
    recall = tp / (tp + fn) if tp + fn else 0.0
    f1 = 0.0 if precision + recall == 0 else 2 * precision * recall / (precision + recall)
    return precision, recall, f1, zero_division


def _cell_from_counts(tp: int, fp: int, fn: int, tn: int, invalid: int) -> MetricsCell:
    precision, recall, f1, zdiv = _prf(tp, fp, fn)
    # The negative class mirrors the confusion matrix: predicted-N correctness.
    p_neg, r_neg, f1_neg, zdiv_neg = _prf(tn, fn, fp)
    total = tp + fp + fn + tn
    return MetricsCell(
        tp=tp,
        fp=fp,
        fn=fn,
        tn=tn,
        invalid=invalid,
        precision=precision,
        recall=recall,
        f1=f1,
        macro_precision=(precision + p_neg) / 2,
        macro_recall=(recall + r_neg) / 2,
        macro_f1=(f1 + f1_neg) / 2,
        accuracy=(tp + tn) / total if total else 0.0,
        support_conflicting=tp + fn,
        support_non_conflicting=fp + tn,
        zero_division=zdiv or zdiv_neg,
    )


def _confusion(
    records: Sequence[DetectionRecord], gold_by_pair: Mapping[str, PairLabel]
) -> MetricsCell:
    tp = fp = fn = tn = invalid = 0
    for rec in records:
        gold = gold_by_pair[rec.pair_id]
        pred = rec.predicted
        if pred is Prediction.INVALID:
            invalid += 1
            pred = Prediction.NON_CONFLICTING  # counted as negative, tallied separately
        if gold is PairLabel.CONFLICTING:
            if pred is Prediction.CONFLICTING:
                tp += 1
            else:
                fn += 1
        else:
            if pred is Prediction.CONFLICTING:
                fp += 1
            else:
                tn += 1
    return _cell_from_counts(tp, fp, fn, tn, invalid)


def evaluate(
    records: Sequence[DetectionRecord],
    pairs_by_id: Mapping[str, EvidencePair],
    facet_keys: Sequence[str] = (),
) -> list[MetricsReport]:
    """Per-detector metrics for the overall cell plus one cell per facet value.

    Per-order confusion matrices are computed independently and the reported
    mean is the arithmetic mean of per-order metric values.
    """
    missing = sorted({r.pair_id for r in records} - set(pairs_by_id))
    if missing:
        raise ValueError(f"records reference pairs without gold labels: {missing[:3]}")
    gold_by_pair = {pid: p.gold_label for pid, p in pairs_by_id.items()}

    by_detector: dict[str, list[DetectionRecord]] = {}
    for rec in records:
        by_detector.setdefault(rec.detector, []).append(rec)

    reports = []
    for detector in sorted(by_detector):
        det_records = by_detector[detector]
        cells: list[tuple[str, str, list[DetectionRecord]]] = [("all", "all", det_records)]
        for key in facet_keys:
            groups: dict[str, list[DetectionRecord]] = {}
            for rec in det_records:
                value = pairs_by_id[rec.pair_id].facets.get(key)
                if value is None and key == "pair_type":
                    value = pairs_by_id[rec.pair_id].pair_type.value
                if value is None:
                    continue
                groups.setdefault(value, []).append(rec)
            for value in sorted(groups):
                cells.append((key, value, groups[value]))
        for facet, value, cell_records in cells:
            report = MetricsReport(detector=detector, facet=facet, value=value)
            orders_present = sorted({r.order for r in cell_records}, key=lambda o: o.value)
            if not orders_present:
                report.notes.append("EMPTY_CELL: no records")
                reports.append(report)
                continue
            for order in orders_present:
                subset = [r for r in cell_records if r.order is order]
                report.orders[order.value] = _confusion(subset, gold_by_pair)
            for metric in METRIC_FIELDS:
                values = [getattr(cell, metric) for cell in report.orders.values()]
                report.order_mean[metric] = sum(values) / len(values)
            reports.append(report)
    return reports


def threshold_sweep(
    records: Sequence[DetectionRecord],
    pairs_by_id: Mapping[str, EvidencePair],
    thresholds: Sequence[float] = SWEEP_THRESHOLDS,
) -> list[dict]:
    """Re-threshold scored records: one metrics row per threshold.

    Applies the conflict-score rule (predict CONFLICTING iff raw_score >=
    threshold), so recall is non-increasing in the threshold.
    """
    scored = [r for r in records if r.predicted is not Prediction.INVALID]
    if any(r.raw_score is None for r in scored):
        raise ValueError("threshold_sweep requires raw scores on all records")
    gold_by_pair = {pid: p.gold_label for pid, p in pairs_by_id.items()}
    rows = []
    for threshold in thresholds:
        tp = fp = fn = tn = 0
        for rec in scored:
            pred_positive = rec.raw_score >= threshold
            gold = gold_by_pair[rec.pair_id]
            if gold is PairLabel.CONFLICTING:
                tp, fn = tp + int(pred_positive), fn + int(not pred_positive)
            else:
                fp, tn = fp + int(pred_positive), tn + int(not pred_positive)
        cell = _cell_from_counts(tp, fp, fn, tn, invalid=len(records) - len(scored))
        row = {"threshold": threshold, "predicted_positive": tp + fp}
        row.update({k: getattr(cell, k) for k in METRIC_FIELDS})
        row.update({"tp": tp, "fp": fp, "fn": fn, "tn": tn})
        rows.append(row)
    return rows
