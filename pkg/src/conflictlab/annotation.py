"""Annotation service: serves labeling tasks over HTTP and computes
agreement reports.

Vocabularies are fixed per task kind and always delivered to the client with
each item, so the UI never hardcodes them.  Evidence display order is
shuffled per annotator with a seeded hash; stored labels always reference
the item id, never the display order.  All agreement arithmetic delegates to
the analytics module.
"""

from __future__ import annotations

import hashlib
import json
import threading
import time
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import Any, Mapping, Optional, Sequence

from . import analytics
from .core import Evidence, EvidencePair, PairLabel, QAItem
from .errors import (
    ConflictLabError,
    InsufficientLabels,
    UnknownAnnotator,
    UnknownItem,
    UnknownTask,
    VocabViolation,
)
from .resolution import BEHAVIOR_VOCABULARY, BehaviorKind, BehaviorLabel, behavior_distribution
from .storage import read_jsonl

__all__ = ["TaskKind", "AnnotationTask", "TaskStore", "create_app", "VOCABULARIES"]


class TaskKind(Enum):
    PAIR_LABEL = "PAIR_LABEL"
    INTENSITY = "INTENSITY"
    CONFLICT_TYPE = "CONFLICT_TYPE"
    RESOLUTION_BEHAVIOR = "RESOLUTION_BEHAVIOR"


PAIR_LABEL_VOCAB = ("Conflicting", "Non-conflicting", "Not sure")
CONFLICT_TYPE_VOCAB = ("Entity", "Temporal", "Number", "Negation", "Degree", "Verb", "Other")

VOCABULARIES: dict[TaskKind, tuple[str, ...]] = {
    TaskKind.PAIR_LABEL: PAIR_LABEL_VOCAB,
    TaskKind.INTENSITY: analytics.INTENSITY_ORDINALS,
    TaskKind.CONFLICT_TYPE: CONFLICT_TYPE_VOCAB,
    TaskKind.RESOLUTION_BEHAVIOR: BEHAVIOR_VOCABULARY,
}

_PAIR_LABEL_TO_GOLD = {
    "Conflicting": PairLabel.CONFLICTING.value,
    "Non-conflicting": PairLabel.NON_CONFLICTING.value,
}


@dataclass
class AnnotationTask:
    id: str
    kind: TaskKind
    name: str
    required_raters: int
    annotators: tuple[str, ...]
    items: list[dict]  # ordered payloads with item_id, question, ...
    seed: int = 0
    created_at: float = field(default_factory=time.time)

    @property
    def vocabulary(self) -> tuple[str, ...]:
        return VOCABULARIES[self.kind]

    def summary(self) -> dict:
        return {
            "task_id": self.id,
            "kind": self.kind.value,
            "name": self.name,
            "required_raters": self.required_raters,
            "annotators": list(self.annotators),
            "n_items": len(self.items),
            "vocabulary": list(self.vocabulary),
        }

    def to_record(self) -> dict:
        record = self.summary()
        record.update({"items": self.items, "seed": self.seed, "created_at": self.created_at})
        return record

    @classmethod
    def from_record(cls, rec: Mapping[str, Any]) -> "AnnotationTask":
        return cls(
            id=rec["task_id"],
            kind=TaskKind(rec["kind"]),
            name=rec.get("name", ""),
            required_raters=rec["required_raters"],
            annotators=tuple(rec["annotators"]),
            items=list(rec["items"]),
            seed=rec.get("seed", 0),
            created_at=rec.get("created_at", 0.0),
        )


def _shuffle_evidence(task: AnnotationTask, annotator: str, item_id: str) -> bool:
    digest = hashlib.sha256(
        f"{task.seed}:{annotator}:{item_id}".encode("utf-8")
    ).digest()
    return digest[0] % 2 == 1


def items_from_pairs(
    pairs: Sequence[EvidencePair],
    evidence_by_id: Mapping[str, Evidence],
    qa_by_id: Mapping[str, QAItem],
    limit: Optional[int] = None,
) -> list[dict]:
    items = []
    for pair in pairs[: limit or len(pairs)]:
        qa = qa_by_id.get(pair.qa_id)
        left = evidence_by_id.get(pair.left)
        right = evidence_by_id.get(pair.right)
        if qa is None or left is None or right is None:
            continue
        items.append(
            {
                "item_id": pair.id,
                "question": qa.question,
                "evidence": [left.text, right.text],
                "gold_label": pair.gold_label.value,
                "intensity": float(pair.intensity) if pair.intensity is not None else None,
            }
        )
    return items


def items_from_transcripts(transcripts: Sequence[Mapping[str, Any]],
                           limit: Optional[int] = None) -> list[dict]:
    items = []
    for rec in transcripts[: limit or len(transcripts)]:
        if rec.get("mode") != "WITH_EVIDENCE":
            continue
        items.append(
            {
                "item_id": rec["id"],
                "question": rec.get("qa_id", ""),
                "prompt": rec.get("prompt", ""),
                "rationale": rec.get("rationale", ""),
                "final_answer": rec.get("final_answer", ""),
            }
        )
    return items


class TaskStore:
    """Task definitions plus label records, persisted as flat files.

    Mutations are serialized through one writer lock; submissions append to
    the task's records file (replacements append too, preserving a full
    audit trail replayed at load).
    """

    def __init__(self, store_dir: str | Path):
        self.store_dir = Path(store_dir)
        self.store_dir.mkdir(parents=True, exist_ok=True)
        self._lock = threading.Lock()
        self._tasks: dict[str, AnnotationTask] = {}
        # current[(task_id, item_id, annotator)] -> record dict
        self._current: dict[tuple[str, str, str], dict] = {}
        self._audit_counts: dict[str, int] = {}
        self._load()

    # --- persistence ---------------------------------------------------------

    def _task_path(self, task_id: str) -> Path:
        return self.store_dir / f"{task_id}.task.json"

    def _records_path(self, task_id: str) -> Path:
        return self.store_dir / f"{task_id}.records.jsonl"

    def _load(self) -> None:
        for path in sorted(self.store_dir.glob("*.task.json")):
            with open(path, "r", encoding="utf-8") as fh:
                task = AnnotationTask.from_record(json.load(fh))
            self._tasks[task.id] = task
            records_path = self._records_path(task.id)
            if records_path.exists():
                for rec in read_jsonl(records_path):
                    key = (task.id, rec["item_id"], rec["annotator"])
                    if key in self._current:
                        self._audit_counts[task.id] = self._audit_counts.get(task.id, 0) + 1
                    self._current[key] = rec

    # --- task lifecycle ------------------------------------------------------

    def create_task(
        self,
        kind: TaskKind,
        items: Sequence[Mapping[str, Any]],
        required_raters: int,
        annotators: Sequence[str],
        name: str = "",
        seed: int = 0,
    ) -> AnnotationTask:
        if required_raters < 1:
            raise ValueError("required_raters must be >= 1")
        if not annotators:
            raise ValueError("at least one annotator token is required")
        if not items:
            raise ValueError("a task needs at least one item")
        normalized = []
        for index, item in enumerate(items):
            payload = dict(item)
            if "item_id" not in payload:
                raise ValueError(f"item {index} lacks an item_id")
            payload["index"] = index
            normalized.append(payload)
        task_id = hashlib.sha256(
            f"{kind.value}:{name}:{time.time_ns()}:{len(normalized)}".encode()
        ).hexdigest()[:12]
        task = AnnotationTask(
            id=task_id,
            kind=kind,
            name=name,
            required_raters=required_raters,
            annotators=tuple(annotators),
            items=normalized,
            seed=seed,
        )
        with self._lock:
            self._tasks[task.id] = task
            with open(self._task_path(task.id), "w", encoding="utf-8") as fh:
                json.dump(task.to_record(), fh, ensure_ascii=False, indent=2)
        return task

    def task(self, task_id: str) -> AnnotationTask:
        task = self._tasks.get(task_id)
        if task is None:
            raise UnknownTask("no such task", task_id=task_id)
        return task

    def tasks(self) -> list[AnnotationTask]:
        return [self._tasks[k] for k in sorted(self._tasks)]

    # --- annotation flow -----------------------------------------------------

    def _require_annotator(self, task: AnnotationTask, annotator: str) -> None:
        if annotator not in task.annotators:
            raise UnknownAnnotator(
                "annotator is not registered on this task",
                task_id=task.id,
                annotator=annotator,
            )

    def progress(self, task_id: str, annotator: str) -> dict:
        task = self.task(task_id)
        self._require_annotator(task, annotator)
        done = sum(
            1 for item in task.items if (task.id, item["item_id"], annotator) in self._current
        )
        return {"done": done, "total": len(task.items)}

    def next_item(self, task_id: str, annotator: str) -> dict:
        """Lowest-index item this annotator has not labeled, or a DONE
        payload when exhausted."""
        task = self.task(task_id)
        self._require_annotator(task, annotator)
        progress = self.progress(task_id, annotator)
        for item in task.items:
            key = (task.id, item["item_id"], annotator)
            if key in self._current:
                continue
            payload = dict(item)
            payload["kind"] = task.kind.value
            payload["vocabulary"] = list(task.vocabulary)
            payload["progress"] = progress
            payload["multi_select"] = task.kind is TaskKind.CONFLICT_TYPE
            evidence = payload.get("evidence")
            if isinstance(evidence, list) and len(evidence) == 2:
                if _shuffle_evidence(task, annotator, item["item_id"]):
                    payload["evidence"] = [evidence[1], evidence[0]]
                    payload["evidence_order"] = ["right", "left"]
                else:
                    payload["evidence_order"] = ["left", "right"]
            return payload
        return {"done": True, "kind": task.kind.value, "progress": progress}

    def _validate_labels(self, task: AnnotationTask, labels: Sequence[str]) -> list[str]:
        vocabulary = set(task.vocabulary)
        if task.kind is TaskKind.CONFLICT_TYPE:
            if not labels:
                raise VocabViolation("select at least one conflict type")
        elif len(labels) != 1:
            raise VocabViolation("exactly one label is required", got=len(labels))
        bad = [label for label in labels if label not in vocabulary]
        if bad:
            raise VocabViolation(
                "labels outside the task vocabulary",
                labels=bad,
                vocabulary=sorted(vocabulary),
            )
        return list(labels)

    def submit_label(
        self,
        task_id: str,
        annotator: str,
        item_id: str,
        labels: Sequence[str],
    ) -> dict:
        """Persist one labeling decision.

        The item must be the annotator's currently assigned item or an item
        they already labeled; resubmission replaces the prior record and
        counts as an audit event.
        """
        task = self.task(task_id)
        self._require_annotator(task, annotator)
        if not any(item["item_id"] == item_id for item in task.items):
            raise UnknownItem("item does not belong to this task",
                              task_id=task_id, item_id=item_id)
        labels = self._validate_labels(task, labels)
        with self._lock:
            key = (task.id, item_id, annotator)
            replaced = key in self._current
            if not replaced:
                assigned = None
                for item in task.items:
                    if (task.id, item["item_id"], annotator) not in self._current:
                        assigned = item["item_id"]
                        break
                if assigned != item_id:
                    raise UnknownItem(
                        "item is not currently assigned to this annotator",
                        task_id=task_id,
                        item_id=item_id,
                        assigned=assigned,
                    )
            record = {
                "task_id": task.id,
                "item_id": item_id,
                "annotator": annotator,
                "labels": labels,
                "timestamp": time.time(),
            }
            self._current[key] = record
            if replaced:
                self._audit_counts[task.id] = self._audit_counts.get(task.id, 0) + 1
            with open(self._records_path(task.id), "a", encoding="utf-8") as fh:
                fh.write(json.dumps(record, ensure_ascii=False) + "\n")
        return {"ok": True, "replaced": replaced, "audit_count": self._audit_counts.get(task.id, 0)}

    def export_records(self, task_id: str) -> list[dict]:
        task = self.task(task_id)
        records = []
        for item in task.items:
            for annotator in task.annotators:
                record = self._current.get((task.id, item["item_id"], annotator))
                if record is not None:
                    records.append(record)
        return records

    # --- reports ---------------------------------------------------------------

    def _complete_items(self, task: AnnotationTask) -> list[dict]:
        complete = []
        for item in task.items:
            records = [
                self._current.get((task.id, item["item_id"], annotator))
                for annotator in task.annotators
            ]
            records = [r for r in records if r is not None]
            if len(records) >= task.required_raters:
                complete.append({"item": item, "records": records[: task.required_raters]})
        return complete

    def agreement_report(self, task_id: str, mode: str = "partial") -> dict:
        """Agreement statistics for the task.

        All kappa/rho arithmetic is the analytics module applied to the
        stored records; the service adds none of its own.
        """
        task = self.task(task_id)
        complete = self._complete_items(task)
        is_complete = len(complete) == len(task.items)
        if mode == "complete" and not is_complete:
            raise InsufficientLabels(
                "task is not fully labeled",
                task_id=task_id,
                complete_items=len(complete),
                total_items=len(task.items),
            )
        report: dict[str, Any] = {
            "task_id": task.id,
            "kind": task.kind.value,
            "complete": is_complete,
            "n_items": len(task.items),
            "n_complete_items": len(complete),
            "audit_count": self._audit_counts.get(task.id, 0),
        }
        if task.kind is TaskKind.PAIR_LABEL:
            report.update(self._pair_label_report(task, complete))
        elif task.kind is TaskKind.INTENSITY:
            report.update(self._intensity_report(task, complete))
        elif task.kind is TaskKind.CONFLICT_TYPE:
            report.update(self._conflict_type_report(task))
        else:
            report.update(self._behavior_report(task))
        return report

    def _pair_label_report(self, task: AnnotationTask, complete: list[dict]) -> dict:
        vocabulary = list(task.vocabulary)
        matrix = []
        majorities: dict[str, str] = {}
        ties: list[str] = []
        for entry in complete:
            labels = [record["labels"][0] for record in entry["records"]]
            matrix.append([labels.count(v) for v in vocabulary])
            winner = analytics.majority_vote(labels)
            if winner == analytics.TIE:
                ties.append(entry["item"]["item_id"])
            else:
                majorities[entry["item"]["item_id"]] = winner
        kappa = None
        note = None
        if matrix:
            try:
                kappa = analytics.fleiss_kappa(matrix, raters=task.required_raters)
            except ConflictLabError as exc:
                note = exc.code
        scored = matched = 0
        for entry in complete:
            item = entry["item"]
            majority = majorities.get(item["item_id"])
            mapped = _PAIR_LABEL_TO_GOLD.get(majority) if majority else None
            if mapped is None or item.get("gold_label") is None:
                continue
            scored += 1
            matched += int(mapped == item["gold_label"])
        return {
            "kappa": kappa,
            "kappa_note": note,
            "majority": majorities,
            "ties": ties,
            "pseudo_label_accuracy": (matched / scored) if scored else None,
            "n_scored": scored,
        }

    def _intensity_report(self, task: AnnotationTask, complete: list[dict]) -> dict:
        per_item = []
        xs, ys = [], []
        for entry in complete:
            item = entry["item"]
            values = [
                analytics.intensity_label_to_value(record["labels"][0])
                for record in entry["records"]
            ]
            mean_value = sum(values) / len(values)
            per_item.append(
                {
                    "item_id": item["item_id"],
                    "mean_human_value": mean_value,
                    "pipeline_intensity": item.get("intensity"),
                }
            )
            if item.get("intensity") is not None:
                xs.append(float(item["intensity"]))
                ys.append(mean_value)
        rho = p_value = None
        note = None
        if len(xs) >= 3:
            try:
                rho, p_value = analytics.pearson(xs, ys)
            except ConflictLabError as exc:
                note = exc.code
        else:
            note = "INSUFFICIENT_POINTS"
        return {"pearson_rho": rho, "p_value": p_value, "pearson_note": note,
                "per_item": per_item}

    def _conflict_type_report(self, task: AnnotationTask) -> dict:
        counts = {v: 0 for v in task.vocabulary}
        total = 0
        for record in self.export_records(task.id):
            for label in record["labels"]:
                counts[label] += 1
                total += 1
        return {
            "type_counts": counts,
            "type_percentages": {
                k: (100.0 * v / total if total else 0.0) for k, v in counts.items()
            },
            "n_selections": total,
        }

    def _behavior_report(self, task: AnnotationTask) -> dict:
        labels = [
            BehaviorLabel(
                transcript_id=record["item_id"],
                label=BehaviorKind(record["labels"][0]),
                annotator=record["annotator"],
            )
            for record in self.export_records(task.id)
        ]
        return {"behavior": behavior_distribution(labels)}


# --- HTTP app -----------------------------------------------------------------

from pydantic import BaseModel


class CreateTaskBody(BaseModel):
    kind: str
    required_raters: int = 3
    annotators: list
    name: str = ""
    seed: int = 0
    items: Optional[list] = None
    source_dir: Optional[str] = None
    limit: Optional[int] = None


class SubmitLabelBody(BaseModel):
    annotator: str
    item_id: str
    label: Optional[str] = None
    labels: Optional[list] = None


def create_app(store: TaskStore, ui_dir=None):
    from fastapi import FastAPI, Query, Request
    from fastapi.responses import JSONResponse, PlainTextResponse

    app = FastAPI(title="conflictlab annotation service")

    _STATUS = {
        "UNKNOWN_TASK": 404,
        "UNKNOWN_ANNOTATOR": 403,
        "UNKNOWN_ITEM": 404,
        "VOCAB_VIOLATION": 422,
        "INSUFFICIENT_LABELS": 409,
    }

    @app.exception_handler(ConflictLabError)
    async def _handle_domain_error(request: Request, exc: ConflictLabError):
        return JSONResponse(
            status_code=_STATUS.get(exc.code, 400),
            content={"error": exc.code, "detail": str(exc)},
        )

    @app.exception_handler(ValueError)
    async def _handle_value_error(request: Request, exc: ValueError):
        return JSONResponse(status_code=422, content={"error": "INVALID", "detail": str(exc)})

    def _items_from_source(kind: TaskKind, source_dir: str, limit: Optional[int]) -> list[dict]:
        base = Path(source_dir)
        if kind is TaskKind.RESOLUTION_BEHAVIOR:
            return items_from_transcripts(read_jsonl(base / "transcripts.jsonl"), limit)
        qa_by_id = {
            r["id"]: QAItem.from_record(r) for r in read_jsonl(base / "qa_items.jsonl")
        }
        evidence_by_id: dict[str, Evidence] = {}
        for name in ("evidence.checked.jsonl", "evidence.polluted.jsonl",
                     "evidence.factoid.jsonl", "evidence.jsonl"):
            path = base / name
            if path.exists():
                for rec in read_jsonl(path):
                    ev = Evidence.from_record(rec)
                    evidence_by_id[ev.id] = ev
        pairs: list[EvidencePair] = []
        for name in ("pairs.jsonl", "pairs.pollution.jsonl", "pairs.factoid.jsonl"):
            path = base / name
            if path.exists():
                pairs.extend(EvidencePair.from_record(r) for r in read_jsonl(path))
        return items_from_pairs(pairs, evidence_by_id, qa_by_id, limit)

    @app.post("/tasks")
    def create_task(body: CreateTaskBody):
        kind = TaskKind(body.kind)
        items = body.items
        if items is None:
            if not body.source_dir:
                raise ValueError("either items or source_dir is required")
            items = _items_from_source(kind, body.source_dir, body.limit)
        task = store.create_task(
            kind,
            items,
            required_raters=body.required_raters,
            annotators=body.annotators,
            name=body.name,
            seed=body.seed,
        )
        return task.summary()

    @app.get("/tasks")
    def list_tasks():
        return [task.summary() for task in store.tasks()]

    @app.get("/tasks/{task_id}")
    def task_summary(task_id: str):
        return store.task(task_id).summary()

    @app.get("/tasks/{task_id}/next")
    def next_item(task_id: str, annotator: str = Query(...)):
        return store.next_item(task_id, annotator)

    @app.post("/tasks/{task_id}/labels")
    def submit(task_id: str, body: SubmitLabelBody):
        labels = body.labels if body.labels is not None else (
            [body.label] if body.label is not None else []
        )
        return store.submit_label(task_id, body.annotator, body.item_id, labels)

    @app.get("/tasks/{task_id}/report")
    def report(task_id: str, mode: str = Query("partial")):
        if mode not in ("partial", "complete"):
            raise ValueError("mode must be partial or complete")
        return store.agreement_report(task_id, mode)

    @app.get("/tasks/{task_id}/export")
    def export(task_id: str):
        lines = "\n".join(
            json.dumps(rec, ensure_ascii=False) for rec in store.export_records(task_id)
        )
        return PlainTextResponse(lines + ("\n" if lines else ""),
                                 media_type="application/x-ndjson")

    if ui_dir and Path(ui_dir).is_dir():
        from fastapi.staticfiles import StaticFiles

        app.mount("/ui", StaticFiles(directory=str(ui_dir), html=True), name="ui")

    return app
