#!/usr/bin/env python3
"""Run the full pipeline offline against fabricated data and scripted backends.

Writes a complete run directory (qa items, answers, evidence, QC logs, pairs,
pollution pairs, factoid pairs, detections, transcripts, manifests) plus a
metrics report, then prints a summary.  Useful as a smoke test and as a
template for wiring real HTTP backends.
"""

import argparse
import json
from pathlib import Path

from conflictlab.config import RunConfig
from conflictlab.core import EvidencePair
from conflictlab.detection import DetectionRecord, evaluate
from conflictlab.mock import build_mock_world
from conflictlab.pipeline import STAGES, pipeline_run
from conflictlab.storage import read_jsonl, write_jsonl


def main():
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--out", default="runs/mock", help="Run directory")
    parser.add_argument("--items", type=int, default=10)
    parser.add_argument("--factoid-items", type=int, default=2)
    parser.add_argument("--seed", type=int, default=7)
    args = parser.parse_args()

    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    world = build_mock_world(n_items=args.items, n_factoid_items=args.factoid_items,
                             failing_evidence=[(0, 0, "SHORT", 1)])
    script_path = out_dir / "backend_script.json"
    world.write_script(script_path)
    qa_input = out_dir / "qa_input.jsonl"
    write_jsonl(qa_input, (qa.to_record() for qa in world.all_items()))

    config = RunConfig.from_mapping({
        "backends": {"mock": {"kind": "scripted", "script_path": str(script_path)}},
        "generation": {
            "input": str(qa_input), "dataset": "OTHER",
            "k": world.k, "per_answer": world.m,
            "length_modes": [m.value for m in world.modes],
            "backend": "mock",
        },
        "qc": {"nli_backend": "mock", "llm_backend": "mock"},
        "detection": {"detectors": ["nli-max", "nli-ce"], "backend": "mock"},
        "resolution": {"backend": "mock", "sample": 12},
        "seed": args.seed,
        "out_dir": str(out_dir / "out"),
        "cache_dir": str(out_dir / "cache"),
    })

    status = pipeline_run(config, list(STAGES))
    if status != 0:
        raise SystemExit(status)

    run_dir = Path(config.out_dir)
    pairs = {}
    for name in ("pairs.jsonl", "pairs.pollution.jsonl", "pairs.factoid.jsonl"):
        for rec in read_jsonl(run_dir / name):
            pair = EvidencePair.from_record(rec)
            pairs[pair.id] = pair
    records = [DetectionRecord.from_record(r) for r in read_jsonl(run_dir / "detections.jsonl")]
    reports = evaluate(records, pairs, facet_keys=["dataset", "length_mode", "pair_type"])
    with open(run_dir / "report.json", "w", encoding="utf-8") as fh:
        json.dump({"reports": [r.to_record() for r in reports]}, fh, indent=2)

    print(f"run directory: {run_dir}")
    print(f"pairs: {len(pairs)}  detection records: {len(records)}")
    for report in reports:
        if report.facet == "all":
            mean = report.order_mean
            print(f"{report.detector}: F1={mean['f1']:.3f} "
                  f"P={mean['precision']:.3f} R={mean['recall']:.3f} "
                  f"acc={mean['accuracy']:.3f}")


if __name__ == "__main__":
    main()
