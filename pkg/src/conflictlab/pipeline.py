"""Stage orchestration: sequences generation, QC, pairing, detection, resolution.

Stages communicate through JSONL artifacts in the run's output directory and
each stage writes a manifest.  Item processing within a stage is
deterministic (input order, derived seeds), so identical config + seed +
cache replay to byte-identical outputs.
"""

from __future__ import annotations

import logging
import random
from pathlib import Path
from typing import Callable, Optional, Sequence

from . import answergen, factoidgen, pollution, qualitycheck, resolution
from .config import RunConfig, build_gateway, stage_seed
from .core import (
    AnswerCandidate,
    Dataset,
    Evidence,
    EvidencePair,
    LengthMode,
    PairLabel,
    PairType,
    QAItem,
    QcStatus,
)
from .detection import build_detector, pair_inputs, run_detector
from .errors import ConfigError, ConflictLabError, StageError
from .gateway import ModelGateway
from .storage import load_qa_dataset, read_jsonl, write_jsonl, write_manifest

__all__ = ["STAGES", "run_stage", "pipeline_run"]

logger = logging.getLogger(__name__)

STAGES = (
    "answers",
    "evidence",
    "qc-answer",
    "answer-pairs",
    "pollution",
    "factoid",
    "detect",
    "resolve",
)

# Artifact names each stage consumes; used for dependency errors that name
# the missing artifact.
_REQUIRES: dict[str, tuple[str, ...]] = {
    "answers": (),
    "evidence": ("qa_items.jsonl", "answers.jsonl"),
    "qc-answer": ("qa_items.jsonl", "answers.jsonl", "evidence.jsonl"),
    "answer-pairs": ("qa_items.jsonl", "evidence.checked.jsonl"),
    "pollution": ("qa_items.jsonl", "answers.jsonl", "evidence.checked.jsonl"),
    "factoid": ("qa_items.jsonl",),
    "detect": ("qa_items.jsonl",),
    "resolve": ("qa_items.jsonl", "pairs.jsonl", "evidence.checked.jsonl"),
}


def _out(config: RunConfig, name: str) -> Path:
    return Path(config.out_dir) / name


def _require(config: RunConfig, stage: str) -> dict[str, Path]:
    found = {}
    for name in _REQUIRES[stage]:
        path = _out(config, name)
        if not path.exists():
            raise StageError(
                f"stage {stage!r} is missing its input artifact",
                missing=name,
                hint="run the producing stage first",
            )
        found[name] = path
    return found


def _load_items(config: RunConfig) -> list[QAItem]:
    return [QAItem.from_record(r) for r in read_jsonl(_out(config, "qa_items.jsonl"))]


def _load_answers(config: RunConfig) -> dict[str, list[AnswerCandidate]]:
    by_qa: dict[str, list[AnswerCandidate]] = {}
    for rec in read_jsonl(_out(config, "answers.jsonl")):
        candidate = AnswerCandidate.from_record(rec)
        by_qa.setdefault(candidate.qa_id, []).append(candidate)
    return by_qa


def _load_evidence(path: Path) -> list[Evidence]:
    return [Evidence.from_record(r) for r in read_jsonl(path)]


def _length_modes(config: RunConfig) -> list[LengthMode]:
    names = config.generation.get("length_modes", ["SHORT", "LONG"])
    return [LengthMode(name) for name in names]


# --- stages ------------------------------------------------------------------


def stage_answers(config: RunConfig, gateway: ModelGateway) -> dict:
    generation = config.generation
    input_path = generation.get("input")
    if not input_path:
        raise ConfigError("generation.input (QA dataset path) is required")
    dataset = Dataset(generation.get("dataset", "OTHER"))
    backend = generation.get("backend")
    if not backend:
        raise ConfigError("generation.backend is required")
    k = int(generation.get("k", answergen.DEFAULT_ALTERNATIVES))
    limit = generation.get("limit")

    items, load_report = load_qa_dataset(input_path, dataset)
    items.sort(key=lambda qa: qa.id)
    if limit:
        items = items[: int(limit)]

    answers: list[dict] = []
    failures: list[dict] = []
    kept_items: list[QAItem] = []
    for qa in items:
        if qa.factoids is not None and not qa.gold_answer:
            continue
        kept_items.append(qa)
        if qa.factoids is not None and generation.get("skip_factoid_answers", True):
            continue  # factoid items go through the factoid stage instead
        try:
            candidates = [answergen.gold_candidate(qa)]
            candidates += answergen.generate_alternative_answers(gateway, backend, qa, k=k)
        except ConflictLabError as exc:
            failures.append({"qa_id": qa.id, "error": exc.code, "detail": str(exc)})
            continue
        answers.extend(c.to_record() for c in candidates)

    qa_path = _out(config, "qa_items.jsonl")
    answers_path = _out(config, "answers.jsonl")
    write_jsonl(qa_path, (qa.to_record() for qa in kept_items))
    write_jsonl(answers_path, answers)
    outputs = {"qa_items.jsonl": qa_path, "answers.jsonl": answers_path}
    if failures:
        failures_path = _out(config, "answers.failures.jsonl")
        write_jsonl(failures_path, failures)
        outputs["answers.failures.jsonl"] = failures_path
    return {
        "inputs": {"dataset": Path(input_path)},
        "outputs": outputs,
        "counts": {
            "items": len(kept_items),
            "answers": len(answers),
            "failures": len(failures),
            **{f"load_{k}": v for k, v in load_report.to_record().items()},
        },
    }


def stage_evidence(config: RunConfig, gateway: ModelGateway) -> dict:
    inputs = _require(config, "evidence")
    backend = config.generation.get("backend")
    per_answer = int(config.generation.get("per_answer", answergen.DEFAULT_EVIDENCE_PER_ANSWER))
    modes = _length_modes(config)
    items = {qa.id: qa for qa in _load_items(config)}
    answers = _load_answers(config)

    evidence_records: list[dict] = []
    failures: list[dict] = []
    for qa_id in sorted(answers):
        qa = items[qa_id]
        for candidate in sorted(answers[qa_id], key=lambda c: c.index):
            for mode in modes:
                try:
                    batch = answergen.generate_supporting_evidence(
                        gateway, backend, qa, candidate, mode, m=per_answer
                    )
                except ConflictLabError as exc:
                    failures.append(
                        {"qa_id": qa.id, "answer": candidate.index,
                         "length_mode": mode.value, "error": exc.code}
                    )
                    continue
                evidence_records.extend(e.to_record() for e in batch)

    evidence_path = _out(config, "evidence.jsonl")
    write_jsonl(evidence_path, evidence_records)
    outputs = {"evidence.jsonl": evidence_path}
    if failures:
        failures_path = _out(config, "evidence.failures.jsonl")
        write_jsonl(failures_path, failures)
        outputs["evidence.failures.jsonl"] = failures_path
    return {
        "inputs": inputs,
        "outputs": outputs,
        "counts": {"evidence": len(evidence_records), "failures": len(failures)},
    }


def stage_qc_answer(config: RunConfig, gateway: ModelGateway) -> dict:
    inputs = _require(config, "qc-answer")
    nli_backend = config.qc.get("nli_backend")
    llm_backend = config.qc.get("llm_backend")
    if not nli_backend or not llm_backend:
        raise ConfigError("qc.nli_backend and qc.llm_backend are required")
    items = {qa.id: qa for qa in _load_items(config)}
    answers = _load_answers(config)
    candidates = {
        (qa_id, c.index): c for qa_id, group in answers.items() for c in group
    }

    checked: list[dict] = []
    log_records: list[dict] = []
    passed = failed = 0
    for evidence in _load_evidence(_out(config, "evidence.jsonl")):
        qa = items[evidence.qa_id]
        answer = candidates[(evidence.qa_id, evidence.supported_answer_index)]
        result, log = qualitycheck.check_answer_evidence(
            gateway, nli_backend, llm_backend, qa, answer, evidence
        )
        checked.append(result.to_record())
        log_records.extend(entry.to_record() for entry in log)
        if result.qc_status is QcStatus.PASSED:
            passed += 1
        else:
            failed += 1

    checked_path = _out(config, "evidence.checked.jsonl")
    log_path = _out(config, "qc_log.jsonl")
    write_jsonl(checked_path, checked)
    write_jsonl(log_path, log_records)
    return {
        "inputs": inputs,
        "outputs": {"evidence.checked.jsonl": checked_path, "qc_log.jsonl": log_path},
        "counts": {"checked": len(checked), "passed": passed, "failed": failed},
    }


def stage_answer_pairs(config: RunConfig, gateway: ModelGateway) -> dict:
    inputs = _require(config, "answer-pairs")
    items = {qa.id: qa for qa in _load_items(config)}
    seed = config.stage_seed("answer-pairs")
    max_conflicting = config.generation.get("max_conflicting")
    max_non_conflicting = config.generation.get("max_non_conflicting")

    # Short and long splits stay separate: pairs combine evidence of one
    # question and one length mode only.
    by_cell: dict[tuple[str, str], dict[int, list[Evidence]]] = {}
    for evidence in _load_evidence(_out(config, "evidence.checked.jsonl")):
        if evidence.qc_status is not QcStatus.PASSED:
            continue
        cell = (evidence.qa_id, evidence.length_mode.value)
        by_cell.setdefault(cell, {}).setdefault(
            evidence.supported_answer_index, []
        ).append(evidence)

    pairs: list[dict] = []
    for qa_id, mode in sorted(by_cell):
        qa = items[qa_id]
        groups = {idx: evs for idx, evs in by_cell[(qa_id, mode)].items() if evs}
        question_pairs = answergen.build_answer_pairs(
            qa_id,
            groups,
            max_conflicting=max_conflicting,
            max_non_conflicting=max_non_conflicting,
            seed=seed,
            strict=False,
            facets={"dataset": qa.dataset.value},
        )
        pairs.extend(p.to_record() for p in question_pairs)

    pairs_path = _out(config, "pairs.jsonl")
    write_jsonl(pairs_path, pairs)
    return {
        "inputs": inputs,
        "outputs": {"pairs.jsonl": pairs_path},
        "counts": {"pairs": len(pairs)},
        "seeds": {"answer-pairs": seed},
    }


def stage_pollution(config: RunConfig, gateway: ModelGateway) -> dict:
    inputs = _require(config, "pollution")
    backend = config.generation.get("backend")
    nli_backend = config.qc.get("nli_backend")
    llm_backend = config.qc.get("llm_backend")
    if not (backend and nli_backend and llm_backend):
        raise ConfigError("pollution needs generation.backend and qc backends")
    mode = LengthMode(config.generation.get("pollution_length_mode", "SHORT"))
    items = {qa.id: qa for qa in _load_items(config)}
    answers = _load_answers(config)

    by_question: dict[str, dict[int, list[Evidence]]] = {}
    for evidence in _load_evidence(_out(config, "evidence.checked.jsonl")):
        if evidence.qc_status is QcStatus.PASSED and evidence.length_mode is mode:
            by_question.setdefault(evidence.qa_id, {}).setdefault(
                evidence.supported_answer_index, []
            ).append(evidence)

    polluted_records: list[dict] = []
    pair_records: list[dict] = []
    log_records: list[dict] = []
    skipped = 0
    for qa_id in sorted(by_question):
        qa = items[qa_id]
        groups = by_question[qa_id]
        source = groups.get(0, [])
        target_candidates = [
            c for c in answers.get(qa_id, [])
            if c.index != 0 and groups.get(c.index)
        ]
        if len(source) < 2 or not target_candidates:
            skipped += 1
            continue
        a_src = next(c for c in answers[qa_id] if c.index == 0)
        a_tgt = pollution.choose_target_answer(target_candidates, 0)
        e_a1, e_a2 = source[0], source[1]
        e_b = groups[a_tgt.index][0]
        try:
            revised = pollution.revise_evidence(gateway, backend, qa, a_src, a_tgt, e_a1)
            checked, log = qualitycheck.check_answer_evidence(
                gateway, nli_backend, llm_backend, qa, a_tgt, revised
            )
        except ConflictLabError as exc:
            log_records.append({"qa_id": qa_id, "error": exc.code, "detail": str(exc)})
            skipped += 1
            continue
        polluted_records.append(checked.to_record())
        log_records.extend(entry.to_record() for entry in log)
        if checked.qc_status is not QcStatus.PASSED:
            skipped += 1
            continue
        roles = pollution.PollutionRoles(e_a1=e_a1, e_a2=e_a2, e_b=e_b, e_ab1=checked)
        question_pairs = pollution.build_pollution_pairs(
            qa_id,
            roles,
            facets={"dataset": qa.dataset.value, "length_mode": mode.value},
        )
        pair_records.extend(p.to_record() for p in question_pairs)

    polluted_path = _out(config, "evidence.polluted.jsonl")
    pairs_path = _out(config, "pairs.pollution.jsonl")
    log_path = _out(config, "qc_log.pollution.jsonl")
    write_jsonl(polluted_path, polluted_records)
    write_jsonl(pairs_path, pair_records)
    write_jsonl(log_path, log_records)
    return {
        "inputs": inputs,
        "outputs": {
            "evidence.polluted.jsonl": polluted_path,
            "pairs.pollution.jsonl": pairs_path,
            "qc_log.pollution.jsonl": log_path,
        },
        "counts": {
            "polluted": len(polluted_records),
            "pairs": len(pair_records),
            "skipped_questions": skipped,
        },
    }


def stage_factoid(config: RunConfig, gateway: ModelGateway) -> dict:
    inputs = _require(config, "factoid")
    backend = config.generation.get("backend")
    nli_backend = config.qc.get("nli_backend")
    if not (backend and nli_backend):
        raise ConfigError("factoid stage needs generation.backend and qc.nli_backend")
    ladder_specs = [
        factoidgen.LadderSpec(
            mode=factoidgen.LadderMode(spec["mode"]),
            level=int(spec["level"]),
        )
        for spec in config.generation.get(
            "factoid_ladders",
            [{"mode": "CONFLICT", "level": level} for level in (1, 2, 3)],
        )
    ]
    n_pairs = int(config.generation.get("factoid_pairs_per_item", 1))
    include_controls = bool(config.generation.get("factoid_controls", True))
    shuffle = bool(config.generation.get("shuffle", False))
    seed = config.stage_seed("factoid")

    factoid_records: list[dict] = []
    evidence_records: list[dict] = []
    pair_records: list[dict] = []
    log_records: list[dict] = []
    dropped = 0

    items = [qa for qa in _load_items(config) if qa.factoids]
    for qa in sorted(items, key=lambda q: q.id):
        try:
            factoid_pairs = factoidgen.perturb_factoids(gateway, backend, qa)
        except ConflictLabError as exc:
            log_records.append({"qa_id": qa.id, "error": exc.code, "detail": str(exc)})
            continue
        factoid_records.extend(p.to_record() for p in factoid_pairs)

        plan_specs: list[tuple[str, factoidgen.IndicatorPlan]] = []
        for spec in ladder_specs:
            try:
                plans = factoidgen.build_intensity_ladder(
                    qa,
                    spec,
                    seed=stage_seed(seed, f"{qa.id}:{spec.mode.value}:{spec.level}"),
                    n_pairs=n_pairs,
                )
            except ConflictLabError:
                continue  # item lacks factoids for this ladder level
            level_key = (
                "conflict_level" if spec.mode is factoidgen.LadderMode.CONFLICT
                else "corroboration_level"
            )
            plan_specs.extend((f"{level_key}:{spec.level}", plan) for plan in plans)
        if include_controls and len(qa.factoids) >= factoidgen.CONFLICT_TOTAL_FACTOIDS:
            n = factoidgen.CONFLICT_TOTAL_FACTOIDS
            zero = tuple(0 for _ in range(n))
            plan_specs.append(
                ("conflict_level:0",
                 factoidgen.IndicatorPlan(positions=tuple(range(n)), left=zero, right=zero))
            )

        for tag, plan in plan_specs:
            level_key, level_value = tag.split(":")
            selected = [factoid_pairs[p] for p in plan.positions]
            sides = []
            ok = True
            for variant, indicator in ((0, plan.left), (1, plan.right)):
                used, unused = factoidgen.factoid_variants(selected, indicator)
                try:
                    evidence = factoidgen.generate_evidence_from_factoids(
                        gateway,
                        backend,
                        qa,
                        used,
                        indicator,
                        positions=plan.positions,
                        variant=variant,
                        shuffle_seed=(seed ^ variant) if shuffle else None,
                    )
                    checked, log = qualitycheck.check_factoid_evidence(
                        gateway, nli_backend, evidence, used, unused
                    )
                except ConflictLabError as exc:
                    log_records.append({"qa_id": qa.id, "error": exc.code, "detail": str(exc)})
                    ok = False
                    break
                evidence_records.append(checked.to_record())
                log_records.extend(entry.to_record() for entry in log)
                if checked.qc_status is not QcStatus.PASSED:
                    ok = False
                sides.append(checked)
            if not ok or len(sides) != 2:
                dropped += 1
                continue
            left, right = sides
            pair = EvidencePair(
                id=factoidgen.stable_id("pair", qa.id, left.id, right.id, "FACTOID"),
                qa_id=qa.id,
                left=left.id,
                right=right.id,
                gold_label=(
                    PairLabel.CONFLICTING
                    if factoidgen.intensity(plan.left, plan.right) > 0
                    else PairLabel.NON_CONFLICTING
                ),
                pair_type=PairType.FACTOID,
                intensity=factoidgen.intensity(plan.left, plan.right),
                facets={
                    "dataset": qa.dataset.value,
                    level_key: level_value,
                    "factoid_count": str(len(plan.positions)),
                },
            )
            pair_records.append(pair.to_record())

    outputs = {
        "factoids.jsonl": _out(config, "factoids.jsonl"),
        "evidence.factoid.jsonl": _out(config, "evidence.factoid.jsonl"),
        "pairs.factoid.jsonl": _out(config, "pairs.factoid.jsonl"),
        "qc_log.factoid.jsonl": _out(config, "qc_log.factoid.jsonl"),
    }
    write_jsonl(outputs["factoids.jsonl"], factoid_records)
    write_jsonl(outputs["evidence.factoid.jsonl"], evidence_records)
    write_jsonl(outputs["pairs.factoid.jsonl"], pair_records)
    write_jsonl(outputs["qc_log.factoid.jsonl"], log_records)
    return {
        "inputs": inputs,
        "outputs": outputs,
        "counts": {
            "factoids": len(factoid_records),
            "evidence": len(evidence_records),
            "pairs": len(pair_records),
            "dropped_pairs": dropped,
        },
        "seeds": {"factoid": seed},
    }


_PAIR_FILES = ("pairs.jsonl", "pairs.pollution.jsonl", "pairs.factoid.jsonl")
_EVIDENCE_FILES = (
    "evidence.checked.jsonl",
    "evidence.polluted.jsonl",
    "evidence.factoid.jsonl",
)


def _load_corpus(config: RunConfig) -> tuple[dict[str, QAItem], dict[str, Evidence], list[EvidencePair]]:
    items = {qa.id: qa for qa in _load_items(config)}
    evidence: dict[str, Evidence] = {}
    for name in _EVIDENCE_FILES:
        path = _out(config, name)
        if path.exists():
            for ev in _load_evidence(path):
                evidence[ev.id] = ev
    pairs: list[EvidencePair] = []
    for name in config.detection.get("pairs_files", _PAIR_FILES):
        path = _out(config, name)
        if path.exists():
            pairs.extend(EvidencePair.from_record(r) for r in read_jsonl(path))
    return items, evidence, pairs


def stage_detect(config: RunConfig, gateway: ModelGateway) -> dict:
    inputs = _require(config, "detect")
    detection = config.detection
    backend = detection.get("backend")
    detector_kinds = detection.get("detectors", [])
    if not detector_kinds:
        raise ConfigError("detection.detectors must list at least one detector")
    orders = detection.get("orders", "BOTH")
    items, evidence, pairs = _load_corpus(config)
    if not pairs:
        raise StageError("no pairs to detect on", missing="pairs.jsonl")

    detectors = [
        build_detector(
            kind,
            gateway,
            backend,
            nli_backend=detection.get("nli_backend"),
            fc_backend=detection.get("fc_backend"),
            threshold=float(detection.get("threshold", 0.2)),
        )
        for kind in detector_kinds
    ]
    records: list[dict] = []
    total_latency_ms = 0
    for detector in detectors:
        for pair in pairs:
            question, left, right = pair_inputs(pair, items, evidence)
            for record in run_detector(detector, pair, question, left, right, orders):
                total_latency_ms += record.latency_ms
                # Persisted records are canonical: wall-clock latency is
                # volatile and would break byte-identical replay, so it is
                # aggregated into the manifest instead.
                rec = record.to_record()
                rec["latency_ms"] = 0
                records.append(rec)

    output_name = detection.get("output", "detections.jsonl")
    detections_path = _out(config, output_name)
    write_jsonl(detections_path, records)
    return {
        "inputs": inputs,
        "outputs": {output_name: detections_path},
        "counts": {
            "records": len(records),
            "pairs": len(pairs),
            "total_latency_ms": total_latency_ms,
        },
    }


def stage_resolve(config: RunConfig, gateway: ModelGateway) -> dict:
    inputs = _require(config, "resolve")
    backend = config.resolution.get("backend")
    if not backend:
        raise ConfigError("resolution.backend is required")
    sample_size = int(config.resolution.get("sample", resolution.DEFAULT_RESOLUTION_SAMPLE))
    seed = config.stage_seed("resolve")
    items, evidence, pairs = _load_corpus(config)

    eligible = [
        p for p in pairs
        if p.gold_label is PairLabel.CONFLICTING and p.pair_type is PairType.ANSWER_DIRECT
    ]
    rng = random.Random(seed)
    if len(eligible) > sample_size:
        chosen = set(rng.sample(range(len(eligible)), sample_size))
        eligible = [p for i, p in enumerate(eligible) if i in chosen]

    modes = [
        resolution.ResolutionMode(m)
        for m in config.resolution.get("modes", ["WITH_EVIDENCE", "CLOSED_BOOK"])
    ]
    transcripts: list[dict] = []
    failures: list[dict] = []
    for pair in eligible:
        qa = items[pair.qa_id]
        question, left, right = pair_inputs(pair, items, evidence)
        try:
            if resolution.ResolutionMode.WITH_EVIDENCE in modes:
                transcripts.append(
                    resolution.answer_with_evidence(
                        gateway, backend, qa, pair, left, right
                    ).to_record()
                )
            if resolution.ResolutionMode.CLOSED_BOOK in modes:
                transcripts.append(
                    resolution.answer_closed_book(gateway, backend, qa, pair.id).to_record()
                )
        except ConflictLabError as exc:
            failures.append({"pair_id": pair.id, "error": exc.code, "detail": str(exc)})
            continue

    transcripts_path = _out(config, config.resolution.get("output", "transcripts.jsonl"))
    write_jsonl(transcripts_path, transcripts)
    outputs = {transcripts_path.name: transcripts_path}
    if failures:
        failures_path = _out(config, "transcripts.failures.jsonl")
        write_jsonl(failures_path, failures)
        outputs["transcripts.failures.jsonl"] = failures_path
    return {
        "inputs": inputs,
        "outputs": outputs,
        "counts": {"transcripts": len(transcripts), "failures": len(failures),
                   "sampled_pairs": len(eligible)},
        "seeds": {"resolve": seed},
    }


_STAGE_FUNCTIONS: dict[str, Callable[[RunConfig, ModelGateway], dict]] = {
    "answers": stage_answers,
    "evidence": stage_evidence,
    "qc-answer": stage_qc_answer,
    "answer-pairs": stage_answer_pairs,
    "pollution": stage_pollution,
    "factoid": stage_factoid,
    "detect": stage_detect,
    "resolve": stage_resolve,
}


def run_stage(config: RunConfig, gateway: ModelGateway, stage: str) -> dict:
    if stage not in _STAGE_FUNCTIONS:
        raise ConfigError("unknown stage", stage=stage, known=list(STAGES))
    result = _STAGE_FUNCTIONS[stage](config, gateway)
    write_manifest(
        config.out_dir,
        stage,
        config_digest=config.digest(),
        seeds={"root": config.seed, **result.get("seeds", {})},
        inputs=result.get("inputs", {}),
        outputs=result.get("outputs", {}),
        counts=result.get("counts", {}),
        backends=gateway.backend_names(),
    )
    return result


def pipeline_run(config: RunConfig, stages: Optional[Sequence[str]] = None) -> int:
    """Execute the requested stages in dependency order.

    Exit status: 0 success, 2 configuration error, 3 stage failure.
    """
    try:
        requested = list(stages) if stages else list(STAGES)
        unknown = [s for s in requested if s not in STAGES]
        if unknown:
            raise ConfigError("unknown stages requested", stages=unknown)
        ordered = [s for s in STAGES if s in requested]
        config.validate()
        gateway = build_gateway(config)
    except ConfigError as exc:
        logger.error("configuration error: %s", exc)
        return 2
    for stage in ordered:
        try:
            result = run_stage(config, gateway, stage)
        except ConfigError as exc:
            logger.error("stage %s configuration error: %s", stage, exc)
            return 2
        except ConflictLabError as exc:
            log_path = Path(config.out_dir) / "errors.log"
            log_path.parent.mkdir(parents=True, exist_ok=True)
            with open(log_path, "a", encoding="utf-8") as fh:
                fh.write(f"{stage}: {exc.code}: {exc}\n")
            logger.error("stage %s failed (%s); see %s", stage, exc.code, log_path)
            return 3
        logger.info("stage %s done: %s", stage, result.get("counts"))
    return 0
