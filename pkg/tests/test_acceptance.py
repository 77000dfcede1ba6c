"""Acceptance suite: one test per release criterion, run at the stated
tolerances.  Each test prints a PASS line so `pytest -s` (or -v) reads as a
checklist."""

import itertools
import json
import math
import random
import socket
import time
from fractions import Fraction
from pathlib import Path

import pytest
from fastapi.testclient import TestClient

from conflictlab import analytics
from conflictlab.annotation import TaskStore, create_app
from conflictlab.core import (
    Evidence,
    EvidencePair,
    LabelDistribution,
    PairLabel,
    PairType,
    QcFailureReason,
    QcStatus,
    verify_pair_references,
)
from conflictlab.detection import (
    DetectionRecord,
    NliRuleDetector,
    Order,
    Prediction,
    detect_nli_ce,
    detect_nli_max,
    evaluate,
    run_detector,
    threshold_sweep,
)
from conflictlab.errors import Degenerate
from conflictlab.factoidgen import intensity
from conflictlab.gateway import ModelGateway, ScriptedBackend, script_key
from conflictlab.mock import CONTRADICT, ENTAIL, NEUTRAL, build_mock_world
from conflictlab.pipeline import pipeline_run
from conflictlab.qualitycheck import check_factoid_evidence
from conflictlab.storage import read_jsonl, read_manifests
from tests.test_pipeline import make_config

ANSWER_STAGES = ["answers", "evidence", "qc-answer", "answer-pairs"]


@pytest.fixture
def no_network(monkeypatch):
    def _blocked(*args, **kwargs):
        raise AssertionError("network access attempted during an offline test")

    monkeypatch.setattr(socket.socket, "connect", _blocked)


def _passed(name):
    print(f"PASS: {name}")


# --- criterion 1: decision-rule truth tables -----------------------------------


def test_c01_decision_rule_truth_tables():
    started = time.perf_counter()
    points = 0
    ce_only = 0
    step = 100
    for i in range(step + 1):
        for j in range(step + 1 - i):
            k = step - i - j
            ent, neu, con = i / step, j / step, k / step
            d = LabelDistribution(ent, neu, con)
            max_fires = detect_nli_max(d) is Prediction.CONFLICTING
            ce_fires = detect_nli_ce(d) is Prediction.CONFLICTING
            # Direct inequality oracles.
            assert max_fires == (con > max(ent, neu))
            assert ce_fires == (con > ent)
            # Max implies C>E at every point.
            assert (not max_fires) or ce_fires
            ce_only += int(ce_fires and not max_fires)
            points += 1
    elapsed = time.perf_counter() - started
    assert points == 5151
    assert ce_only > 0, "C>E-only region must be non-empty"
    assert elapsed < 1.0, f"sweep took {elapsed:.3f}s"
    _passed("decision-rule truth tables (5151 points, oracles, implication)")


# --- criterion 2: intensity oracle ---------------------------------------------


def test_c02_intensity_oracle_exhaustive():
    started = time.perf_counter()
    for n in (3, 4):
        checked = 0
        for p in itertools.product((0, 1), repeat=n):
            for q in itertools.product((0, 1), repeat=n):
                brute = Fraction(sum(a ^ b for a, b in zip(p, q)), n)
                assert intensity(p, q) == brute
                assert intensity(q, p) == brute  # symmetry on all pairs
                checked += 1
        assert checked == (2 ** n) ** 2
    assert time.perf_counter() - started < 1.0
    _passed("intensity XOR/Hamming oracle, exhaustive n in {3,4} with symmetry")


# --- criterion 3: metrics oracle ------------------------------------------------


def _oracle_confusion(golds, preds):
    tp = sum(1 for g, p in zip(golds, preds) if g and p)
    fp = sum(1 for g, p in zip(golds, preds) if not g and p)
    fn = sum(1 for g, p in zip(golds, preds) if g and not p)
    tn = sum(1 for g, p in zip(golds, preds) if not g and not p)
    precision = tp / (tp + fp) if tp + fp else 0.0
    recall = tp / (tp + fn) if tp + fn else 0.0
    f1 = 2 * precision * recall / (precision + recall) if precision + recall else 0.0
    p_n = tn / (tn + fn) if tn + fn else 0.0
    r_n = tn / (tn + fp) if tn + fp else 0.0
    f1_n = 2 * p_n * r_n / (p_n + r_n) if p_n + r_n else 0.0
    return {
        "precision": precision,
        "recall": recall,
        "f1": f1,
        "macro_precision": (precision + p_n) / 2,
        "macro_recall": (recall + r_n) / 2,
        "macro_f1": (f1 + f1_n) / 2,
        "accuracy": (tp + tn) / len(golds),
    }


def test_c03_metrics_match_independent_oracle():
    rng = random.Random(12345)
    for trial in range(1000):
        n = rng.randint(1, 200)
        golds = [rng.random() < 0.5 for _ in range(n)]
        preds = [rng.random() < 0.5 for _ in range(n)]
        pairs = {}
        records = []
        for i, (g, p) in enumerate(zip(golds, preds)):
            pid = f"p{i}"
            pairs[pid] = EvidencePair(
                id=pid, qa_id="qa", left="L", right="R",
                gold_label=PairLabel.CONFLICTING if g else PairLabel.NON_CONFLICTING,
                pair_type=PairType.ANSWER_DIRECT,
            )
            records.append(DetectionRecord(
                pair_id=pid, detector="d", order=Order.AB,
                predicted=Prediction.CONFLICTING if p else Prediction.NON_CONFLICTING,
            ))
        cell = evaluate(records, pairs)[0].orders["AB"]
        expected = _oracle_confusion(golds, preds)
        for metric, value in expected.items():
            assert abs(getattr(cell, metric) - value) <= 1e-12, (trial, metric)
    # Zero-positive-prediction convention.
    pairs = {"p0": EvidencePair(id="p0", qa_id="qa", left="L", right="R",
                                gold_label=PairLabel.CONFLICTING,
                                pair_type=PairType.ANSWER_DIRECT)}
    records = [DetectionRecord(pair_id="p0", detector="d", order=Order.AB,
                               predicted=Prediction.NON_CONFLICTING)]
    cell = evaluate(records, pairs)[0].orders["AB"]
    assert (cell.precision, cell.recall, cell.f1) == (0.0, 0.0, 0.0)
    assert cell.zero_division
    _passed("metrics vs independent confusion oracle (1000 random vectors, 1e-12)")


# --- criterion 4: Fleiss' kappa --------------------------------------------------


def test_c04_fleiss_kappa():
    for matrix in ([[3, 0], [0, 3]], [[2, 0, 0], [0, 2, 0], [0, 0, 2], [2, 0, 0]],
                   [[5, 0], [0, 5], [5, 0], [0, 5], [5, 0]]):
        assert analytics.fleiss_kappa(matrix) == 1.0
    # Reference value computed by hand from the standard formula before
    # implementation: P_bar = 2/3, P_e = 1/2, kappa = 1/3.
    assert analytics.fleiss_kappa([[3, 0], [0, 3], [2, 1], [1, 2]], raters=3) == (
        pytest.approx(1.0 / 3.0, abs=1e-9)
    )
    with pytest.raises(Degenerate):
        analytics.fleiss_kappa([[4, 0], [4, 0], [4, 0]])
    _passed("Fleiss kappa: perfect=1.0 exactly, fixed matrix=1/3 (1e-9), degenerate")


# --- criterion 5: Pearson ---------------------------------------------------------


def _textbook_pearson(x, y):
    # Plain-loop covariance/stddev formulas, independent of the implementation.
    n = len(x)
    mx = sum(x) / n
    my = sum(y) / n
    cov = sum((a - mx) * (b - my) for a, b in zip(x, y))
    sx = math.sqrt(sum((a - mx) ** 2 for a in x))
    sy = math.sqrt(sum((b - my) ** 2 for b in y))
    return cov / (sx * sy)


def test_c05_pearson():
    from scipy import stats

    x = [float(v) for v in range(1, 40)]
    rho, _ = analytics.pearson(x, x)
    assert abs(rho - 1.0) <= 1e-12
    rho, _ = analytics.pearson(x, [-v for v in x])
    assert abs(rho + 1.0) <= 1e-12

    rng = random.Random(999)
    for _ in range(100):
        n = rng.randint(3, 150)
        xs = [rng.gauss(0, 2) for _ in range(n)]
        ys = [rng.gauss(1, 3) for _ in range(n)]
        if len(set(xs)) < 2 or len(set(ys)) < 2:
            continue
        rho, _ = analytics.pearson(xs, ys)
        assert rho == pytest.approx(_textbook_pearson(xs, ys), abs=1e-9)

    # p-value from a known t statistic vs an independent t-CDF evaluation.
    rho, n = 0.622, 45
    t = rho * math.sqrt((n - 2) / (1 - rho * rho))
    ours = analytics.student_t_two_sided_p(t, n - 2)
    independent = 2.0 * stats.t.sf(abs(t), n - 2)
    assert ours == pytest.approx(independent, abs=1e-8)
    _passed("Pearson: endpoints 1e-12, 100 oracle vectors 1e-9, t-CDF 1e-8")


# --- criterion 6: mock end-to-end answer pipeline --------------------------------


def test_c06_mock_answer_pipeline(tmp_path, no_network):
    started = time.perf_counter()
    world = build_mock_world(
        n_items=10, n_factoid_items=0, failing_evidence=[(0, 0, "SHORT", 1)]
    )
    config = make_config(tmp_path, world)
    assert pipeline_run(config, ANSWER_STAGES) == 0

    out = Path(config.out_dir)
    evidence = {r["id"]: Evidence.from_record(r)
                for r in read_jsonl(out / "evidence.checked.jsonl")}
    pairs = [EvidencePair.from_record(r) for r in read_jsonl(out / "pairs.jsonl")]

    # Label law: conflicting pairs cross answers, non-conflicting stay within.
    violations = 0
    for pair in pairs:
        left = evidence[pair.left].supported_answer_index
        right = evidence[pair.right].supported_answer_index
        crossed = left != right
        if crossed != (pair.gold_label is PairLabel.CONFLICTING):
            violations += 1
    assert violations == 0
    assert verify_pair_references(pairs, evidence) == []

    # Combinatorial expectation: k=2, m=2 gives 12+3 per intact question and
    # 8+2 for the question whose evidence was removed by QC.
    conflicting = sum(p.gold_label is PairLabel.CONFLICTING for p in pairs)
    non_conflicting = len(pairs) - conflicting
    assert conflicting == 9 * 12 + 8
    assert non_conflicting == 9 * 3 + 2

    # The scripted contradiction removed exactly the designated evidence.
    failed = [e for e in evidence.values() if e.qc_status is QcStatus.FAILED]
    assert [e.id for e in failed] == world.failing_evidence_ids
    assert failed[0].qc_failure_reason is QcFailureReason.NLI_NOT_ENTAILED
    assert not any(p.left == failed[0].id or p.right == failed[0].id for p in pairs)

    elapsed = time.perf_counter() - started
    assert elapsed < 10.0, f"pipeline took {elapsed:.2f}s"
    _passed("mock end-to-end answer pipeline (label law, counts, QC removal, offline)")


# --- criterion 7: pollution typology ----------------------------------------------


def test_c07_pollution_typology(tmp_path, no_network):
    world = build_mock_world(n_items=6, n_factoid_items=0)
    config = make_config(tmp_path, world)
    assert pipeline_run(config, ANSWER_STAGES + ["pollution"]) == 0
    out = Path(config.out_dir)
    evidence = {}
    for name in ("evidence.checked.jsonl", "evidence.polluted.jsonl"):
        for rec in read_jsonl(out / name):
            ev = Evidence.from_record(rec)
            evidence[ev.id] = ev
    pairs = [EvidencePair.from_record(r) for r in read_jsonl(out / "pairs.pollution.jsonl")]

    by_question = {}
    for pair in pairs:
        by_question.setdefault(pair.qa_id, []).append(pair)
    assert len(by_question) == 6
    for group in by_question.values():
        roles = sorted((p.pair_type.value, p.gold_label.value) for p in group)
        assert roles == sorted([
            ("ANSWER_DIRECT", "CONFLICTING"),
            ("POLLUTED_CLOSE", "CONFLICTING"),
            ("POLLUTED_FAR", "CONFLICTING"),
            ("ANSWER_DIRECT", "NON_CONFLICTING"),
            ("POLLUTED_NONCONFLICT", "NON_CONFLICTING"),
        ])
    close = [p for p in pairs if p.pair_type is PairType.POLLUTED_CLOSE]
    assert close and all(
        evidence[p.left].pollution_source == p.right for p in close
    ), "close pairs must connect polluted evidence to its source in 100% of cases"
    far = [p for p in pairs if p.pair_type is PairType.POLLUTED_FAR]
    assert all(evidence[p.left].pollution_source != p.right for p in far)
    _passed("pollution typology (5 roles per question, lineage 100%)")


# --- criterion 8: factoid ladders ---------------------------------------------------


def test_c08_factoid_ladders_and_qc_gate(tmp_path, no_network):
    world = build_mock_world(n_items=0, n_factoid_items=2)
    conflict_config = make_config(tmp_path, world, out_name="conflict")
    assert pipeline_run(conflict_config, ["answers", "factoid"]) == 0
    pairs = [EvidencePair.from_record(r)
             for r in read_jsonl(Path(conflict_config.out_dir) / "pairs.factoid.jsonl")]
    expected_conflict = {"1": Fraction(1, 4), "2": Fraction(2, 4), "3": Fraction(3, 4)}
    seen_levels = set()
    for pair in pairs:
        level = pair.facets["conflict_level"]
        if level in expected_conflict:
            assert pair.intensity == expected_conflict[level]
            seen_levels.add(level)
    assert seen_levels == {"1", "2", "3"}

    corr_config = make_config(
        tmp_path, world, out_name="corroboration",
        generation={"factoid_ladders": [
            {"mode": "CORROBORATION", "level": lvl} for lvl in (1, 2, 3)
        ], "factoid_controls": False},
    )
    assert pipeline_run(corr_config, ["answers", "factoid"]) == 0
    pairs = [EvidencePair.from_record(r)
             for r in read_jsonl(Path(corr_config.out_dir) / "pairs.factoid.jsonl")]
    expected_corr = {"1": Fraction(1, 2), "2": Fraction(1, 3), "3": Fraction(1, 4)}
    assert {p.facets["corroboration_level"] for p in pairs} == {"1", "2", "3"}
    for pair in pairs:
        assert pair.intensity == expected_corr[pair.facets["corroboration_level"]]

    # QC gate: a scripted NLI miss at one position drops the evidence with
    # the offending position reported.
    text = "paragraph under test"
    evidence = Evidence(id="fe", qa_id="qa", text=text, indicator=(1, 0))
    gateway = ModelGateway([ScriptedBackend("mock", {"nli": {"by_pair": {
        script_key(text, "s0p"): ENTAIL,
        script_key(text, "s1"): ENTAIL,
        script_key(text, "s0"): CONTRADICT,
        script_key(text, "s1p"): NEUTRAL,
    }}})])
    checked, log = check_factoid_evidence(
        gateway, "mock", evidence, ["s0p", "s1"], ["s0", "s1p"]
    )
    assert checked.qc_status is QcStatus.FAILED
    assert checked.qc_failure_reason is QcFailureReason.FACTOID_NOT_CONTRADICTED
    assert log[-1].position == 1
    _passed("factoid ladders (exact intensities) and QC gate at reported position")


# --- criterion 9: threshold sweep ----------------------------------------------------


def test_c09_threshold_sweep():
    rng = random.Random(2024)
    pairs, records = {}, []
    for i in range(120):
        pid = f"p{i}"
        gold = PairLabel.CONFLICTING if rng.random() < 0.6 else PairLabel.NON_CONFLICTING
        pairs[pid] = EvidencePair(id=pid, qa_id="qa", left="L", right="R",
                                  gold_label=gold, pair_type=PairType.ANSWER_DIRECT)
        records.append(DetectionRecord(
            pair_id=pid, detector="llm-score", order=Order.AB,
            predicted=Prediction.CONFLICTING,
            raw_score=rng.choice([0.0, 0.2, 0.4, 0.6, 0.8, 1.0]),
        ))
    thresholds = (0.2, 0.4, 0.6, 0.8, 1.0)
    rows = threshold_sweep(records, pairs, thresholds)
    assert [row["threshold"] for row in rows] == list(thresholds)  # one row each
    recalls = [row["recall"] for row in rows]
    positives = [row["predicted_positive"] for row in rows]
    assert all(a >= b for a, b in zip(recalls, recalls[1:]))
    assert all(a >= b for a, b in zip(positives, positives[1:]))
    _passed("threshold sweep (5 rows, recall and positives non-increasing)")


# --- criterion 10: deterministic replay ------------------------------------------------


def test_c10_deterministic_replay(tmp_path, no_network):
    world = build_mock_world(n_items=4, n_factoid_items=1)
    stages = ANSWER_STAGES + ["pollution", "factoid", "detect", "resolve"]
    config_a = make_config(tmp_path, world, out_name="replay_a")
    config_b = make_config(tmp_path, world, out_name="replay_b")
    shared_cache = str(tmp_path / "shared_cache")
    config_a.cache_dir = shared_cache
    config_b.cache_dir = shared_cache
    assert pipeline_run(config_a, stages) == 0
    assert pipeline_run(config_b, stages) == 0
    names = sorted(p.name for p in Path(config_a.out_dir).glob("*.jsonl"))
    assert names
    for name in names:
        assert (Path(config_a.out_dir) / name).read_bytes() == (
            Path(config_b.out_dir) / name
        ).read_bytes(), f"{name} differs"
    digests = []
    for config in (config_a, config_b):
        digests.append({
            m["stage"]: {k: v["sha256"] for k, v in m["outputs"].items()}
            for m in read_manifests(config.out_dir)
        })
    assert digests[0] == digests[1]
    _passed("deterministic replay (byte-identical outputs, matching manifest digests)")


# --- criterion 11: order handling -------------------------------------------------------


def _metrics_from_cell(cell):
    return {m: getattr(cell, m) for m in ("precision", "recall", "f1", "accuracy")}


def test_c11_order_handling():
    texts = [(f"left {i}", f"right {i}") for i in range(8)]
    pairs = {}
    for i in range(8):
        gold = PairLabel.CONFLICTING if i % 2 == 0 else PairLabel.NON_CONFLICTING
        pairs[f"p{i}"] = EvidencePair(id=f"p{i}", qa_id="qa", left=f"L{i}", right=f"R{i}",
                                      gold_label=gold, pair_type=PairType.ANSWER_DIRECT)

    def run_with(script):
        gateway = ModelGateway([ScriptedBackend("mock", {"nli": {"by_pair": script}})])
        detector = NliRuleDetector(gateway, "mock", "max")
        records = []
        for i, (left, right) in enumerate(texts):
            records.extend(
                run_detector(detector, pairs[f"p{i}"], "q", left, right, orders="BOTH")
            )
        return evaluate(records, pairs)[0]

    # Order-blind script: identical distribution regardless of direction.
    blind_script = {}
    for i, (left, right) in enumerate(texts):
        value = CONTRADICT if i % 2 == 0 else ENTAIL
        blind_script[script_key(left, right)] = value
        blind_script[script_key(right, left)] = value
    report = run_with(blind_script)
    assert report.orders["AB"] == report.orders["BA"]
    for metric, value in _metrics_from_cell(report.orders["AB"]).items():
        assert report.order_mean[metric] == pytest.approx(value, abs=1e-15)

    # Order-sensitive script: BA flips some verdicts.
    sensitive_script = {}
    for i, (left, right) in enumerate(texts):
        forward = CONTRADICT if i % 2 == 0 else ENTAIL
        backward = ENTAIL if i % 3 == 0 else forward
        sensitive_script[script_key(left, right)] = forward
        sensitive_script[script_key(right, left)] = backward
    report = run_with(sensitive_script)
    assert report.orders["AB"] != report.orders["BA"]
    for metric in ("precision", "recall", "f1", "accuracy"):
        expected = (getattr(report.orders["AB"], metric)
                    + getattr(report.orders["BA"], metric)) / 2
        assert abs(report.order_mean[metric] - expected) <= 1e-12
    _passed("order handling (order-blind identity, order-sensitive arithmetic mean)")


# --- secondary criterion: annotation loop over the HTTP API ------------------------------


def test_c12_annotation_loop_over_http(tmp_path, no_network):
    # Build a real 10-pair task from a mock pipeline run.
    world = build_mock_world(n_items=4, n_factoid_items=0)
    config = make_config(tmp_path, world)
    assert pipeline_run(config, ANSWER_STAGES) == 0
    client = TestClient(create_app(TaskStore(tmp_path / "store")))
    created = client.post("/tasks", json={
        "kind": "PAIR_LABEL", "required_raters": 3,
        "annotators": ["ann-1", "ann-2", "ann-3"],
        "source_dir": config.out_dir, "limit": 10, "seed": 11,
    })
    assert created.status_code == 200, created.text
    task = created.json()
    assert task["n_items"] == 10
    vocabulary = task["vocabulary"]
    assert vocabulary == ["Conflicting", "Non-conflicting", "Not sure"]

    # Three simulated annotators label everything with some disagreement.
    def label_plan(annotator, index):
        if index % 4 == 3:
            return vocabulary[2] if annotator == "ann-3" else vocabulary[0]
        return vocabulary[index % 2]

    submitted = {}
    for annotator in ("ann-1", "ann-2", "ann-3"):
        index = 0
        while True:
            payload = client.get(f"/tasks/{task['task_id']}/next",
                                 params={"annotator": annotator}).json()
            if payload.get("done"):
                break
            # The payload carries exactly the server vocabulary.
            assert payload["vocabulary"] == vocabulary
            label = label_plan(annotator, index)
            response = client.post(f"/tasks/{task['task_id']}/labels", json={
                "annotator": annotator, "item_id": payload["item_id"], "label": label,
            })
            assert response.status_code == 200, response.text
            submitted[(payload["item_id"], annotator)] = label
            index += 1

    # Labels round-trip unchanged through the export.
    exported = [json.loads(line) for line in
                client.get(f"/tasks/{task['task_id']}/export").text.strip().splitlines()]
    assert len(exported) == 30
    for rec in exported:
        assert rec["labels"] == [submitted[(rec["item_id"], rec["annotator"])]]

    # Report kappa equals analytics.fleiss_kappa on the exported records,
    # bit-identically.
    report = client.get(f"/tasks/{task['task_id']}/report",
                        params={"mode": "complete"}).json()
    by_item = {}
    for rec in exported:
        by_item.setdefault(rec["item_id"], []).append(rec["labels"][0])
    item_order = [item["item_id"] for item in
                  TaskStore(tmp_path / "store").task(task["task_id"]).items]
    matrix = [[by_item[item_id].count(v) for v in vocabulary] for item_id in item_order]
    assert report["kappa"] == analytics.fleiss_kappa(matrix, raters=3)

    # A unanimous task reports kappa = 1.0.
    unanimous = client.post("/tasks", json={
        "kind": "PAIR_LABEL", "required_raters": 3,
        "annotators": ["ann-1", "ann-2", "ann-3"],
        "source_dir": config.out_dir, "limit": 10, "seed": 12,
    }).json()
    for annotator in ("ann-1", "ann-2", "ann-3"):
        index = 0
        while True:
            payload = client.get(f"/tasks/{unanimous['task_id']}/next",
                                 params={"annotator": annotator}).json()
            if payload.get("done"):
                break
            client.post(f"/tasks/{unanimous['task_id']}/labels", json={
                "annotator": annotator, "item_id": payload["item_id"],
                "label": vocabulary[index % 2],
            })
            index += 1
    report = client.get(f"/tasks/{unanimous['task_id']}/report",
                        params={"mode": "complete"}).json()
    assert report["kappa"] == 1.0
    _passed("annotation loop over HTTP (kappa bit-identical, unanimous=1.0, round-trip)")
