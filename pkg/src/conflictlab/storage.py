"""Flat-file persistence: JSONL datasets, run manifests, output audit.

One JSON object per line, UTF-8.  Manifests record enough (config digest,
backend names, template digests, seeds, input/output file digests, counts)
that identical inputs and config reproduce identical digests; only the
timestamp differs between replays.
"""

from __future__ import annotations

import hashlib
import json
import time
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Iterable, Mapping, Optional, Sequence

from .core import Dataset, QAItem, stable_id
from .errors import SchemaError
from .prompts import TEMPLATES, template_digest

__all__ = [
    "read_jsonl",
    "write_jsonl",
    "file_digest",
    "LoadReport",
    "load_qa_dataset",
    "write_manifest",
    "read_manifests",
    "audit_outputs",
]


def write_jsonl(path: str | Path, records: Iterable[Mapping[str, Any]]) -> int:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    count = 0
    with open(path, "w", encoding="utf-8") as fh:
        for record in records:
            fh.write(json.dumps(record, ensure_ascii=False))
            fh.write("\n")
            count += 1
    return count


def read_jsonl(path: str | Path) -> list[dict]:
    records = []
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                records.append(json.loads(line))
            except json.JSONDecodeError as exc:
                raise SchemaError("malformed JSON line", path=str(path), line=lineno,
                                  detail=str(exc))
    return records


def file_digest(path: str | Path) -> str:
    digest = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(65536), b""):
            digest.update(chunk)
    return digest.hexdigest()


@dataclass
class LoadReport:
    total: int = 0
    kept: int = 0
    dropped_factoid_count: int = 0

    def to_record(self) -> dict:
        return dict(self.__dict__)


def _answers_of(rec: Mapping[str, Any], path: str, lineno: int) -> list[str]:
    raw = rec.get("answer", rec.get("answers"))
    if isinstance(raw, str):
        return [raw]
    if isinstance(raw, list) and raw and all(isinstance(a, str) for a in raw):
        return list(raw)
    raise SchemaError("row needs an answer string or list", path=path, line=lineno)


def load_qa_dataset(path: str | Path, dataset: Dataset) -> tuple[list[QAItem], LoadReport]:
    """Validated QA items from a source-dataset JSONL file.

    NQ_OPEN / CWQ rows carry {question, answer|answers}; the first answer is
    gold and the rest are aliases.  STRATEGYQA rows carry {question, answer,
    facts}; rows whose fact count is not 3 or 4 are dropped and counted.
    OTHER reads the canonical QAItem schema.
    """
    path = Path(path)
    if not path.exists():
        raise SchemaError("dataset file does not exist", path=str(path))
    report = LoadReport()
    items: list[QAItem] = []
    for lineno, rec in enumerate(read_jsonl(path), start=1):
        report.total += 1
        if not isinstance(rec, dict):
            raise SchemaError("row is not an object", path=str(path), line=lineno)
        if dataset is Dataset.OTHER:
            try:
                items.append(QAItem.from_record(rec))
            except (KeyError, ValueError, TypeError) as exc:
                raise SchemaError("invalid QA record", path=str(path), line=lineno,
                                  detail=str(exc))
            report.kept += 1
            continue
        question = rec.get("question")
        if not isinstance(question, str) or not question:
            raise SchemaError("row needs a non-empty question", path=str(path), line=lineno)
        if dataset is Dataset.STRATEGYQA:
            facts = rec.get("facts", rec.get("factoids"))
            if not isinstance(facts, list) or not all(isinstance(f, str) for f in facts):
                raise SchemaError("StrategyQA row needs a facts list", path=str(path),
                                  line=lineno)
            if len(facts) not in (3, 4):
                report.dropped_factoid_count += 1
                continue
            answer = rec.get("answer")
            if isinstance(answer, bool):
                gold, extras = ("yes" if answer else "no"), []
            else:
                answers = _answers_of(rec, str(path), lineno)
                gold, extras = answers[0], answers[1:]
            items.append(
                QAItem(
                    id=rec.get("id") or stable_id("qa", dataset.value, question),
                    question=question,
                    gold_answer=gold,
                    extra_answers=tuple(extras),
                    dataset=dataset,
                    factoids=tuple(facts),
                )
            )
        else:  # NQ_OPEN / CWQ
            answers = _answers_of(rec, str(path), lineno)
            items.append(
                QAItem(
                    id=rec.get("id") or stable_id("qa", dataset.value, question),
                    question=question,
                    gold_answer=answers[0],
                    extra_answers=tuple(answers[1:]),
                    dataset=dataset,
                )
            )
        report.kept += 1
    return items, report


def write_manifest(
    out_dir: str | Path,
    stage: str,
    config_digest: str,
    seeds: Mapping[str, int],
    inputs: Mapping[str, str | Path],
    outputs: Mapping[str, str | Path],
    counts: Mapping[str, int],
    backends: Sequence[str] = (),
    extra: Optional[Mapping[str, Any]] = None,
) -> Path:
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    manifest = {
        "stage": stage,
        "created_at": time.strftime("%Y-%m-%dT%H:%M:%SZ", time.gmtime()),
        "config_digest": config_digest,
        "backends": sorted(backends),
        "template_digests": {
            name: template_digest(t) for name, t in sorted(TEMPLATES.items())
        },
        "seeds": dict(seeds),
        "inputs": {
            name: {"path": str(p), "sha256": file_digest(p)} for name, p in sorted(inputs.items())
        },
        "outputs": {
            name: {"path": str(p), "sha256": file_digest(p)} for name, p in sorted(outputs.items())
        },
        "counts": dict(counts),
        "extra": dict(extra or {}),
    }
    path = out_dir / f"manifest_{stage}.json"
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(manifest, fh, indent=2, ensure_ascii=False, sort_keys=True)
        fh.write("\n")
    return path


def read_manifests(out_dir: str | Path) -> list[dict]:
    manifests = []
    for path in sorted(Path(out_dir).glob("manifest_*.json")):
        with open(path, "r", encoding="utf-8") as fh:
            manifests.append(json.load(fh))
    return manifests


def audit_outputs(out_dir: str | Path) -> list[str]:
    """Repo-level audit: every data file must be reachable from a manifest.

    Returns the orphaned file names (empty list = audit passes).
    """
    out_dir = Path(out_dir)
    referenced: set[str] = set()
    for manifest in read_manifests(out_dir):
        for section in ("inputs", "outputs"):
            for entry in manifest.get(section, {}).values():
                referenced.add(Path(entry["path"]).name)
    orphans = []
    for path in sorted(out_dir.glob("*.jsonl")):
        if path.name not in referenced:
            orphans.append(path.name)
    return orphans
