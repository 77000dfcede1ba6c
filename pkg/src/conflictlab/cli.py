"""The ``conflictlab`` command line: pipeline stages, reports, stats, serving.

Exit codes: 0 success, 2 configuration error, 3 stage failure.
"""

from __future__ import annotations

import json
import logging
import sys
from pathlib import Path
from typing import Sequence

import click

from . import analytics, resolution
from .config import RunConfig, build_gateway
from .core import AnswerCandidate, Dataset, Evidence, EvidencePair
from .detection import evaluate, threshold_sweep, DetectionRecord, METRIC_FIELDS
from .errors import ConfigError, ConflictLabError
from .pipeline import pipeline_run, run_stage
from .storage import audit_outputs, load_qa_dataset, read_jsonl, write_jsonl

logger = logging.getLogger(__name__)

EXIT_CONFIG = 2
EXIT_STAGE = 3


def _load_config(ctx: click.Context) -> RunConfig:
    params = ctx.obj or {}
    overrides = {
        key: params.get(key)
        for key in ("seed", "cache_dir", "out_dir")
        if params.get(key) is not None
    }
    if params.get("config"):
        return RunConfig.from_file(params["config"], overrides=overrides)
    config = RunConfig()
    for key, value in overrides.items():
        setattr(config, key, value)
    return config


def _fail(exc: ConflictLabError) -> None:
    click.echo(f"error [{exc.code}]: {exc}", err=True)
    sys.exit(EXIT_CONFIG if isinstance(exc, ConfigError) else EXIT_STAGE)


def _run_single_stage(ctx: click.Context, stage: str, **section_overrides) -> None:
    try:
        config = _load_config(ctx)
        for section, values in section_overrides.items():
            getattr(config, section).update({k: v for k, v in values.items() if v is not None})
        config.validate()
        gateway = build_gateway(config)
        result = run_stage(config, gateway, stage)
    except ConflictLabError as exc:
        _fail(exc)
        return
    click.echo(json.dumps({"stage": stage, "counts": result.get("counts", {})}))


@click.group()
@click.option("--config", type=click.Path(), default=None, help="Run config JSON file.")
@click.option("--seed", type=int, default=None, help="Root seed override.")
@click.option("--cache-dir", type=click.Path(), default=None, help="Response cache directory.")
@click.option("--out", "out_dir", type=click.Path(), default=None, help="Output directory.")
@click.option("-v", "--verbose", is_flag=True, default=False)
@click.pass_context
def main(ctx, config, seed, cache_dir, out_dir, verbose):
    """Inter-evidence conflict dataset toolkit."""
    logging.basicConfig(level=logging.INFO if verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    ctx.obj = {"config": config, "seed": seed, "cache_dir": cache_dir, "out_dir": out_dir}


@main.command()
@click.option("--input", "input_path", required=True, type=click.Path(exists=True))
@click.option("--dataset", type=click.Choice([d.value for d in Dataset], case_sensitive=False),
              default="OTHER")
@click.pass_context
def ingest(ctx, input_path, dataset):
    """Validate a source dataset and write canonical qa_items.jsonl."""
    try:
        config = _load_config(ctx)
        items, report = load_qa_dataset(input_path, Dataset(dataset.upper()))
        items.sort(key=lambda qa: qa.id)
        out = Path(config.out_dir) / "qa_items.jsonl"
        write_jsonl(out, (qa.to_record() for qa in items))
    except ConflictLabError as exc:
        _fail(exc)
        return
    click.echo(json.dumps({"written": str(out), **report.to_record()}))


@main.command("gen-answers")
@click.option("--input", "input_path", required=True, type=click.Path(exists=True))
@click.option("--dataset", default="OTHER")
@click.option("--k", type=int, default=None)
@click.option("--backend", default=None)
@click.option("--limit", type=int, default=None)
@click.pass_context
def gen_answers(ctx, input_path, dataset, k, backend, limit):
    """Generate alternative answers for each question."""
    _run_single_stage(
        ctx, "answers",
        generation={"input": input_path, "dataset": dataset.upper(), "k": k,
                    "backend": backend, "limit": limit},
    )


@main.command("gen-evidence")
@click.option("--length", type=click.Choice(["short", "long", "both"]), default="both")
@click.option("--per-answer", type=int, default=None)
@click.option("--backend", default=None)
@click.pass_context
def gen_evidence(ctx, length, per_answer, backend):
    """Generate supporting evidence for every answer candidate."""
    modes = {"short": ["SHORT"], "long": ["LONG"], "both": ["SHORT", "LONG"]}[length]
    _run_single_stage(
        ctx, "evidence",
        generation={"length_modes": modes, "per_answer": per_answer, "backend": backend},
    )


@main.command()
@click.option("--split", type=click.Choice(["answer", "factoid"]), default="answer")
@click.option("--nli-backend", default=None)
@click.option("--llm-backend", default=None)
@click.pass_context
def qc(ctx, split, nli_backend, llm_backend):
    """Run the quality gates over generated evidence."""
    if split == "answer":
        _run_single_stage(ctx, "qc-answer",
                          qc={"nli_backend": nli_backend, "llm_backend": llm_backend})
        return
    # Factoid split: re-validate factoid evidence against its factoid variants.
    try:
        config = _load_config(ctx)
        if nli_backend:
            config.qc["nli_backend"] = nli_backend
        config.validate()
        gateway = build_gateway(config)
        result = _requalify_factoid(config, gateway)
    except ConflictLabError as exc:
        _fail(exc)
        return
    click.echo(json.dumps(result))


def _requalify_factoid(config: RunConfig, gateway) -> dict:
    from dataclasses import replace

    from .core import FactoidPair, QcStatus
    from .factoidgen import factoid_variants
    from .qualitycheck import check_factoid_evidence

    base = Path(config.out_dir)
    nli_backend = config.qc.get("nli_backend")
    if not nli_backend:
        raise ConfigError("qc.nli_backend is required")
    factoids: dict[str, list[FactoidPair]] = {}
    for rec in read_jsonl(base / "factoids.jsonl"):
        pair = FactoidPair.from_record(rec)
        factoids.setdefault(pair.qa_id, []).append(pair)
    for group in factoids.values():
        group.sort(key=lambda p: p.position)
    checked, passed = [], 0
    log_records = []
    for rec in read_jsonl(base / "evidence.factoid.jsonl"):
        evidence = replace(
            Evidence.from_record(rec), qc_status=QcStatus.UNCHECKED, qc_failure_reason=None
        )
        positions = evidence.factoid_positions or tuple(range(len(evidence.indicator)))
        selected = [factoids[evidence.qa_id][p] for p in positions]
        used, unused = factoid_variants(selected, evidence.indicator)
        result, log = check_factoid_evidence(gateway, nli_backend, evidence, used, unused)
        checked.append(result.to_record())
        log_records.extend(entry.to_record() for entry in log)
        passed += int(result.qc_status is QcStatus.PASSED)
    outputs = {
        "evidence.factoid.checked.jsonl": base / "evidence.factoid.checked.jsonl",
        "qc_log.factoid.recheck.jsonl": base / "qc_log.factoid.recheck.jsonl",
    }
    write_jsonl(outputs["evidence.factoid.checked.jsonl"], checked)
    write_jsonl(outputs["qc_log.factoid.recheck.jsonl"], log_records)
    from .storage import write_manifest

    write_manifest(
        base, "qc-factoid", config.digest(), {"root": config.seed},
        inputs={"factoids.jsonl": base / "factoids.jsonl",
                "evidence.factoid.jsonl": base / "evidence.factoid.jsonl"},
        outputs=outputs,
        counts={"checked": len(checked), "passed": passed},
        backends=gateway.backend_names(),
    )
    return {"checked": len(checked), "passed": passed}


@main.command("build-pairs")
@click.option("--max-conflicting", type=int, default=None)
@click.option("--max-non-conflicting", type=int, default=None)
@click.pass_context
def build_pairs(ctx, max_conflicting, max_non_conflicting):
    """Construct labeled evidence pairs from QC-passed evidence."""
    _run_single_stage(
        ctx, "answer-pairs",
        generation={"max_conflicting": max_conflicting,
                    "max_non_conflicting": max_non_conflicting},
    )


@main.command()
@click.option("--pairs-source", type=click.Path(), default=None,
              help="Directory holding the checked evidence (defaults to --out).")
@click.option("--backend", default=None)
@click.pass_context
def pollute(ctx, pairs_source, backend):
    """Rewrite evidence towards alternative answers and emit the typed pairs."""
    if pairs_source:
        ctx.obj["out_dir"] = pairs_source
    _run_single_stage(ctx, "pollution", generation={"backend": backend})


@main.command("gen-factoid")
@click.option("--mode", type=click.Choice(["conflict", "corroboration"]), default="conflict")
@click.option("--level", type=click.IntRange(1, 3), default=None)
@click.option("--backend", default=None)
@click.option("--shuffle", type=click.Choice(["on", "off"]), default="off")
@click.pass_context
def gen_factoid(ctx, mode, level, backend, shuffle):
    """Factoid perturbation, ladder construction, evidence generation, QC, pairs."""
    ladders = None
    if level is not None:
        ladders = [{"mode": mode.upper(), "level": level}]
    _run_single_stage(
        ctx, "factoid",
        generation={"backend": backend, "factoid_ladders": ladders,
                    "shuffle": shuffle == "on"},
    )


@main.command()
@click.option("--pairs", "pairs_files", multiple=True,
              help="Pair file names inside the output dir (repeatable).")
@click.option("--detector", "detectors", multiple=True, required=True,
              type=click.Choice(["nli-max", "nli-ce", "fc", "llm", "llm-score",
                                 "ensemble-nli", "ensemble-fc-pred", "ensemble-fc-score"]))
@click.option("--backend", default=None)
@click.option("--nli-backend", default=None)
@click.option("--fc-backend", default=None)
@click.option("--orders", type=click.Choice(["AB", "BA", "both"], case_sensitive=False),
              default="both")
@click.option("--threshold", type=float, default=None)
@click.option("--output", default=None, help="Detections file name.")
@click.pass_context
def detect(ctx, pairs_files, detectors, backend, nli_backend, fc_backend, orders,
           threshold, output):
    """Run detectors over evidence pairs."""
    _run_single_stage(
        ctx, "detect",
        detection={
            "pairs_files": list(pairs_files) or None,
            "detectors": list(detectors),
            "backend": backend,
            "nli_backend": nli_backend,
            "fc_backend": fc_backend,
            "orders": orders.upper() if orders.lower() != "both" else "BOTH",
            "threshold": threshold,
            "output": output,
        },
    )


def _load_pairs_for_report(config: RunConfig, pairs_files: Sequence[str]) -> dict[str, EvidencePair]:
    base = Path(config.out_dir)
    names = list(pairs_files) or ["pairs.jsonl", "pairs.pollution.jsonl", "pairs.factoid.jsonl"]
    pairs: dict[str, EvidencePair] = {}
    for name in names:
        path = base / name
        if path.exists():
            for rec in read_jsonl(path):
                pair = EvidencePair.from_record(rec)
                pairs[pair.id] = pair
    return pairs


def _format_table(rows: list[dict], columns: Sequence[str]) -> str:
    widths = {c: max(len(c), *(len(str(r.get(c, ""))) for r in rows)) if rows else len(c)
              for c in columns}
    header = "  ".join(c.ljust(widths[c]) for c in columns)
    lines = [header, "-" * len(header)]
    for row in rows:
        lines.append("  ".join(str(row.get(c, "")).ljust(widths[c]) for c in columns))
    return "\n".join(lines)


@main.command()
@click.option("--detections", default="detections.jsonl")
@click.option("--pairs", "pairs_files", multiple=True)
@click.option("--facet", default="", help="Comma-separated facet keys.")
@click.option("--sweep", default="", help="Comma-separated thresholds for scored records.")
@click.option("--output", default="report.json")
@click.pass_context
def report(ctx, detections, pairs_files, facet, sweep, output):
    """Faceted metrics report (JSON plus an aligned text table)."""
    try:
        config = _load_config(ctx)
        base = Path(config.out_dir)
        records = [DetectionRecord.from_record(r) for r in read_jsonl(base / detections)]
        pairs = _load_pairs_for_report(config, pairs_files)
        aliases = {"length": "length_mode"}
        facet_keys = [aliases.get(f, f) for f in facet.split(",") if f]
        reports = evaluate(records, pairs, facet_keys)
        payload = {"reports": [r.to_record() for r in reports]}
        if sweep:
            thresholds = [float(t) for t in sweep.split(",")]
            scored = [r for r in records if r.raw_score is not None]
            payload["sweep"] = threshold_sweep(scored, pairs, thresholds)
        out_path = base / output
        with open(out_path, "w", encoding="utf-8") as fh:
            json.dump(payload, fh, indent=2, ensure_ascii=False)
    except ConflictLabError as exc:
        _fail(exc)
        return
    rows = []
    for rep in reports:
        row = {"detector": rep.detector, "facet": rep.facet, "value": rep.value}
        row.update({m: f"{rep.order_mean.get(m, 0.0):.3f}" for m in METRIC_FIELDS})
        rows.append(row)
    click.echo(_format_table(rows, ["detector", "facet", "value", *METRIC_FIELDS]))
    click.echo(f"report written to {out_path}")


@main.command()
@click.option("--pairs", "pairs_files", multiple=True)
@click.option("--mode", type=click.Choice(["with-evidence", "closed-book", "both"]),
              default="both")
@click.option("--backend", default=None)
@click.option("--sample", type=int, default=None)
@click.pass_context
def resolve(ctx, pairs_files, mode, backend, sample):
    """Chain-of-thought conflict resolution over conflicting pairs."""
    modes = {
        "with-evidence": ["WITH_EVIDENCE"],
        "closed-book": ["CLOSED_BOOK"],
        "both": ["WITH_EVIDENCE", "CLOSED_BOOK"],
    }[mode]
    output = None if mode == "both" else f"transcripts.{mode}.jsonl"
    _run_single_stage(
        ctx, "resolve",
        resolution={"backend": backend, "sample": sample, "modes": modes, "output": output},
        detection={"pairs_files": list(pairs_files) or None},
    )


@main.command("resolve-report")
@click.option("--strata", type=click.Choice(["belief", "intensity", "none"]), default="none")
@click.option("--labels", "labels_path", type=click.Path(exists=True), required=True,
              help="Behavior labels (annotation export or BehaviorLabel JSONL).")
@click.option("--output", default="resolution_report.json")
@click.pass_context
def resolve_report(ctx, strata, labels_path, output):
    """Behavior distribution over human-assigned resolution labels."""
    try:
        config = _load_config(ctx)
        base = Path(config.out_dir)
        labels = _read_behavior_labels(labels_path)
        known = {t.id for t in _transcripts(config)}
        dangling = sorted({l.transcript_id for l in labels} - known)
        if dangling:
            raise ConfigError("labels reference unknown transcripts",
                              transcript_ids=dangling[:3])
        strata_map = None
        if strata == "belief":
            strata_map = _belief_strata(config)
        elif strata == "intensity":
            strata_map = _intensity_strata(config)
        result = resolution.behavior_distribution(labels, strata_map)
        out_path = base / output
        with open(out_path, "w", encoding="utf-8") as fh:
            json.dump(result, fh, indent=2, ensure_ascii=False)
    except ConflictLabError as exc:
        _fail(exc)
        return
    click.echo(json.dumps(result, indent=2))
    click.echo(f"report written to {out_path}")


def _read_behavior_labels(path: str) -> list[resolution.BehaviorLabel]:
    labels = []
    for rec in read_jsonl(path):
        if "labels" in rec:  # annotation export shape
            labels.append(
                resolution.BehaviorLabel(
                    transcript_id=rec["item_id"],
                    label=resolution.BehaviorKind(rec["labels"][0]),
                    annotator=rec["annotator"],
                )
            )
        else:
            labels.append(resolution.BehaviorLabel.from_record(rec))
    return labels


def _transcripts(config: RunConfig) -> list[resolution.ResolutionTranscript]:
    base = Path(config.out_dir)
    transcripts = []
    for path in sorted(base.glob("transcripts*.jsonl")):
        if path.name.endswith(".failures.jsonl"):
            continue
        transcripts.extend(
            resolution.ResolutionTranscript.from_record(r) for r in read_jsonl(path)
        )
    return transcripts


def _belief_strata(config: RunConfig) -> dict[str, str]:
    """Map WITH_EVIDENCE transcript ids to belief strata using the pair's two
    supported answers and the matching closed-book transcript."""
    base = Path(config.out_dir)
    answers: dict[tuple[str, int], str] = {}
    for rec in read_jsonl(base / "answers.jsonl"):
        c = AnswerCandidate.from_record(rec)
        answers[(c.qa_id, c.index)] = c.text
    evidence: dict[str, Evidence] = {}
    for name in ("evidence.checked.jsonl", "evidence.polluted.jsonl"):
        path = base / name
        if path.exists():
            for rec in read_jsonl(path):
                ev = Evidence.from_record(rec)
                evidence[ev.id] = ev
    pairs = {}
    for name in ("pairs.jsonl", "pairs.pollution.jsonl"):
        path = base / name
        if path.exists():
            for rec in read_jsonl(path):
                pair = EvidencePair.from_record(rec)
                pairs[pair.id] = pair
    transcripts = _transcripts(config)
    closed = {t.pair_id: t for t in transcripts if t.mode is resolution.ResolutionMode.CLOSED_BOOK}
    strata = {}
    for t in transcripts:
        if t.mode is not resolution.ResolutionMode.WITH_EVIDENCE:
            continue
        pair = pairs.get(t.pair_id)
        probe = closed.get(t.pair_id)
        if pair is None or probe is None:
            continue
        left, right = evidence.get(pair.left), evidence.get(pair.right)
        if left is None or right is None:
            continue
        a1 = answers.get((pair.qa_id, left.supported_answer_index))
        a2 = answers.get((pair.qa_id, right.supported_answer_index))
        if not a1 or not a2:
            continue
        belief = resolution.determine_belief(probe.final_answer, a1, a2)
        strata[t.id] = "w_belief" if belief is not resolution.Belief.NO_BELIEF else "wo_belief"
    return strata


def _intensity_strata(config: RunConfig) -> dict[str, str]:
    pairs = _load_pairs_for_report(config, ())
    strata = {}
    for t in _transcripts(config):
        if t.mode is not resolution.ResolutionMode.WITH_EVIDENCE:
            continue
        pair = pairs.get(t.pair_id)
        if pair is not None and pair.intensity is not None:
            strata[t.id] = str(pair.intensity)
    return strata


@main.group()
def stats():
    """Ad-hoc agreement statistics."""


@stats.command()
@click.option("--input", "input_path", required=True, type=click.Path(exists=True))
def kappa(input_path):
    """Fleiss' kappa over a JSONL count matrix (one row per item)."""
    rows = [rec["counts"] if isinstance(rec, dict) else rec for rec in read_jsonl(input_path)]
    try:
        value = analytics.fleiss_kappa(rows)
    except ConflictLabError as exc:
        _fail(exc)
        return
    click.echo(json.dumps({"kappa": value}))


@stats.command()
@click.option("--input", "input_path", required=True, type=click.Path(exists=True))
def pearson(input_path):
    """Pearson rho and p over JSONL rows {x, y}."""
    rows = read_jsonl(input_path)
    xs = [r["x"] for r in rows]
    ys = [r["y"] for r in rows]
    try:
        rho, p = analytics.pearson(xs, ys)
    except ConflictLabError as exc:
        _fail(exc)
        return
    click.echo(json.dumps({"rho": rho, "p_value": p}))


@main.group()
def annotate():
    """Human annotation service."""


@annotate.command()
@click.option("--port", type=int, default=8787)
@click.option("--host", default="127.0.0.1")
@click.option("--store", "store_dir", required=True, type=click.Path())
@click.option("--ui", "ui_dir", type=click.Path(), default=None,
              help="Static UI build to serve at /ui.")
def serve(port, host, store_dir, ui_dir):
    """Serve the annotation HTTP API (and optionally the web UI)."""
    import uvicorn

    from .annotation import TaskStore, create_app

    default_ui = Path(__file__).resolve().parents[2] / "frontend" / "dist"
    app = create_app(TaskStore(store_dir), ui_dir=ui_dir or (default_ui if default_ui.is_dir() else None))
    uvicorn.run(app, host=host, port=port)


@main.command()
@click.option("--stages", default="", help="Comma-separated stage subset.")
@click.pass_context
def run(ctx, stages):
    """Run the configured pipeline stages in dependency order."""
    try:
        config = _load_config(ctx)
    except ConflictLabError as exc:
        _fail(exc)
        return
    stage_list = [s for s in stages.split(",") if s] or None
    sys.exit(pipeline_run(config, stage_list))


@main.command()
@click.pass_context
def audit(ctx):
    """Fail if any data file is not reachable from a manifest."""
    try:
        config = _load_config(ctx)
    except ConflictLabError as exc:
        _fail(exc)
        return
    orphans = audit_outputs(config.out_dir)
    if orphans:
        click.echo(json.dumps({"orphans": orphans}))
        sys.exit(EXIT_STAGE)
    click.echo(json.dumps({"orphans": []}))


if __name__ == "__main__":
    main()
