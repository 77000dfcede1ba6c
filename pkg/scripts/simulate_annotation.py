#!/usr/bin/env python3
"""Simulate three annotators labeling a pair task against a live service.

Point it at a running `conflictlab annotate serve` instance (or let it spin
up an in-process app when --base-url is omitted), label every item with a
seeded noisy policy, then print the agreement report.
"""

import argparse
import json
import random


def main():
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--base-url", default=None,
                        help="Annotation API base URL; in-process app when omitted")
    parser.add_argument("--source-dir", required=True,
                        help="Pipeline run directory holding pairs + evidence")
    parser.add_argument("--items", type=int, default=10)
    parser.add_argument("--seed", type=int, default=13)
    parser.add_argument("--noise", type=float, default=0.15,
                        help="Probability an annotator deviates from the gold label")
    args = parser.parse_args()

    if args.base_url:
        import requests

        class Client:
            def get(self, path, **kw):
                return requests.get(args.base_url.rstrip("/") + path, **kw)

            def post(self, path, **kw):
                return requests.post(args.base_url.rstrip("/") + path, **kw)

        client = Client()
    else:
        import tempfile

        from fastapi.testclient import TestClient

        from conflictlab.annotation import TaskStore, create_app

        client = TestClient(create_app(TaskStore(tempfile.mkdtemp(prefix="annstore-"))))

    annotators = ["sim-1", "sim-2", "sim-3"]
    created = client.post("/tasks", json={
        "kind": "PAIR_LABEL", "required_raters": 3, "annotators": annotators,
        "source_dir": args.source_dir, "limit": args.items, "seed": args.seed,
    })
    created.raise_for_status()
    task = created.json()
    print(f"task {task['task_id']}: {task['n_items']} items, vocab {task['vocabulary']}")

    rng = random.Random(args.seed)
    gold_to_label = {"CONFLICTING": "Conflicting", "NON_CONFLICTING": "Non-conflicting"}
    for annotator in annotators:
        while True:
            payload = client.get(f"/tasks/{task['task_id']}/next",
                                 params={"annotator": annotator}).json()
            if payload.get("done"):
                break
            label = gold_to_label.get(payload.get("gold_label"), "Not sure")
            if rng.random() < args.noise:
                label = rng.choice([v for v in task["vocabulary"] if v != label])
            client.post(f"/tasks/{task['task_id']}/labels", json={
                "annotator": annotator, "item_id": payload["item_id"], "label": label,
            }).raise_for_status()

    report = client.get(f"/tasks/{task['task_id']}/report",
                        params={"mode": "complete"}).json()
    print(json.dumps({k: report[k] for k in
                      ("kappa", "pseudo_label_accuracy", "ties", "n_scored")}, indent=2))


if __name__ == "__main__":
    main()
