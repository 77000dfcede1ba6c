import json
from fractions import Fraction
from pathlib import Path

import pytest

from conflictlab.config import RunConfig, build_gateway
from conflictlab.core import (
    Evidence,
    EvidencePair,
    PairLabel,
    PairType,
    QcFailureReason,
    QcStatus,
    verify_pair_references,
)
from conflictlab.mock import build_mock_world
from conflictlab.pipeline import STAGES, pipeline_run, run_stage
from conflictlab.storage import read_jsonl, read_manifests, write_jsonl

ANSWER_STAGES = ["answers", "evidence", "qc-answer", "answer-pairs"]


def make_config(tmp_path, world, seed=7, out_name="out", **extra):
    out_dir = tmp_path / out_name
    script_path = tmp_path / "script.json"
    if not script_path.exists():
        world.write_script(script_path)
    qa_input = tmp_path / "qa_input.jsonl"
    if not qa_input.exists():
        write_jsonl(qa_input, (qa.to_record() for qa in world.all_items()))
    raw = {
        "backends": {world.backend_name: {"kind": "scripted",
                                          "script_path": str(script_path)}},
        "generation": {
            "input": str(qa_input),
            "dataset": "OTHER",
            "k": world.k,
            "per_answer": world.m,
            "length_modes": [m.value for m in world.modes],
            "backend": world.backend_name,
        },
        "qc": {"nli_backend": world.backend_name, "llm_backend": world.backend_name},
        "detection": {"detectors": ["nli-max"], "backend": world.backend_name},
        "resolution": {"backend": world.backend_name, "sample": 6},
        "seed": seed,
        "out_dir": str(out_dir),
        "cache_dir": str(tmp_path / "cache" / out_name),
    }
    for section, values in extra.items():
        raw.setdefault(section, {}).update(values)
    return RunConfig.from_mapping(raw)


@pytest.fixture(scope="module")
def answer_run(tmp_path_factory):
    """One full answer-side pipeline run shared by the read-only assertions."""
    tmp_path = tmp_path_factory.mktemp("answer_run")
    world = build_mock_world(n_items=4, n_factoid_items=0)
    config = make_config(tmp_path, world)
    assert pipeline_run(config, ANSWER_STAGES + ["pollution", "detect", "resolve"]) == 0
    return world, config


def _pairs(config, name="pairs.jsonl"):
    return [EvidencePair.from_record(r) for r in read_jsonl(Path(config.out_dir) / name)]


def _evidence_map(config):
    evidence = {}
    for name in ("evidence.checked.jsonl", "evidence.polluted.jsonl",
                 "evidence.factoid.jsonl"):
        path = Path(config.out_dir) / name
        if path.exists():
            for rec in read_jsonl(path):
                ev = Evidence.from_record(rec)
                evidence[ev.id] = ev
    return evidence


class TestAnswerPipeline:
    def test_combinatorial_pair_counts(self, answer_run):
        world, config = answer_run
        pairs = _pairs(config)
        k, m = world.k, world.m
        per_question_conflicting = m * m * (k + 1) * k // 2
        per_question_non_conflicting = (k + 1) * m * (m - 1) // 2
        n = len(world.qa_items)
        conflicting = [p for p in pairs if p.gold_label is PairLabel.CONFLICTING]
        non_conflicting = [p for p in pairs if p.gold_label is PairLabel.NON_CONFLICTING]
        assert len(conflicting) == n * per_question_conflicting
        assert len(non_conflicting) == n * per_question_non_conflicting

    def test_label_law_no_violations(self, answer_run):
        _, config = answer_run
        evidence = _evidence_map(config)
        for pair in _pairs(config):
            left = evidence[pair.left].supported_answer_index
            right = evidence[pair.right].supported_answer_index
            if pair.gold_label is PairLabel.CONFLICTING:
                assert left != right
            else:
                assert left == right

    def test_no_pair_references_unpassed_evidence(self, answer_run):
        _, config = answer_run
        evidence = _evidence_map(config)
        all_pairs = _pairs(config) + _pairs(config, "pairs.pollution.jsonl")
        assert verify_pair_references(all_pairs, evidence) == []

    def test_pollution_emits_five_roles_per_question(self, answer_run):
        world, config = answer_run
        pollution_pairs = _pairs(config, "pairs.pollution.jsonl")
        assert len(pollution_pairs) == 5 * len(world.qa_items)
        by_type = {}
        for pair in pollution_pairs:
            by_type.setdefault(pair.pair_type, []).append(pair)
        n = len(world.qa_items)
        assert len(by_type[PairType.POLLUTED_CLOSE]) == n
        assert len(by_type[PairType.POLLUTED_FAR]) == n
        assert len(by_type[PairType.POLLUTED_NONCONFLICT]) == n
        assert len(by_type[PairType.ANSWER_DIRECT]) == 2 * n

    def test_polluted_close_lineage(self, answer_run):
        _, config = answer_run
        evidence = _evidence_map(config)
        close = [p for p in _pairs(config, "pairs.pollution.jsonl")
                 if p.pair_type is PairType.POLLUTED_CLOSE]
        assert close
        for pair in close:
            assert evidence[pair.left].pollution_source == pair.right
        far = [p for p in _pairs(config, "pairs.pollution.jsonl")
               if p.pair_type is PairType.POLLUTED_FAR]
        for pair in far:
            assert evidence[pair.left].pollution_source != pair.right

    def test_detections_cover_both_orders(self, answer_run):
        _, config = answer_run
        records = read_jsonl(Path(config.out_dir) / "detections.jsonl")
        pairs = _pairs(config) + _pairs(config, "pairs.pollution.jsonl")
        assert len(records) == 2 * len(pairs)
        assert {r["order"] for r in records} == {"AB", "BA"}

    def test_transcripts_sampled_and_parsed(self, answer_run):
        _, config = answer_run
        transcripts = read_jsonl(Path(config.out_dir) / "transcripts.jsonl")
        assert len(transcripts) == 2 * 6  # sample=6, both modes
        assert {t["mode"] for t in transcripts} == {"WITH_EVIDENCE", "CLOSED_BOOK"}
        assert all(t["final_answer"] for t in transcripts)

    def test_manifests_written_per_stage(self, answer_run):
        _, config = answer_run
        manifests = read_manifests(config.out_dir)
        stages = {m["stage"] for m in manifests}
        assert {"answers", "evidence", "qc-answer", "answer-pairs",
                "pollution", "detect", "resolve"} <= stages

    def test_no_orphan_outputs(self, answer_run):
        from conflictlab.storage import audit_outputs

        _, config = answer_run
        assert audit_outputs(config.out_dir) == []


class TestQcRemoval:
    def test_failing_evidence_removed_with_reason(self, tmp_path):
        world = build_mock_world(
            n_items=3, n_factoid_items=0,
            failing_evidence=[(0, 0, "SHORT", 1)],
        )
        config = make_config(tmp_path, world)
        assert pipeline_run(config, ANSWER_STAGES) == 0
        checked = [Evidence.from_record(r)
                   for r in read_jsonl(Path(config.out_dir) / "evidence.checked.jsonl")]
        failed = [e for e in checked if e.qc_status is QcStatus.FAILED]
        assert [e.id for e in failed] == world.failing_evidence_ids
        assert failed[0].qc_failure_reason is QcFailureReason.NLI_NOT_ENTAILED

    def test_counts_adjust_combinatorially(self, tmp_path):
        world = build_mock_world(
            n_items=3, n_factoid_items=0,
            failing_evidence=[(0, 0, "SHORT", 1)],
        )
        config = make_config(tmp_path, world)
        assert pipeline_run(config, ANSWER_STAGES) == 0
        pairs = _pairs(config)
        # Full questions: 12 conflicting + 3 non-conflicting each; the hit
        # question drops to groups 1/2/2: 8 conflicting + 2 non-conflicting.
        conflicting = [p for p in pairs if p.gold_label is PairLabel.CONFLICTING]
        non_conflicting = [p for p in pairs if p.gold_label is PairLabel.NON_CONFLICTING]
        assert len(conflicting) == 2 * 12 + 8
        assert len(non_conflicting) == 2 * 3 + 2


class TestFactoidPipeline:
    def test_ladder_intensities_and_gate(self, tmp_path):
        world = build_mock_world(n_items=0, n_factoid_items=2)
        config = make_config(tmp_path, world)
        assert pipeline_run(config, ["answers", "factoid"]) == 0
        pairs = _pairs(config, "pairs.factoid.jsonl")
        by_level = {}
        for pair in pairs:
            level = pair.facets.get("conflict_level")
            by_level.setdefault(level, []).append(pair)
        assert set(by_level) == {"0", "1", "2", "3"}
        for level, expected in (("1", Fraction(1, 4)), ("2", Fraction(1, 2)),
                                ("3", Fraction(3, 4))):
            for pair in by_level[level]:
                assert pair.intensity == expected
                assert pair.gold_label is PairLabel.CONFLICTING
        for pair in by_level["0"]:
            assert pair.intensity == 0
            assert pair.gold_label is PairLabel.NON_CONFLICTING

    def test_corroboration_ladders(self, tmp_path):
        world = build_mock_world(n_items=0, n_factoid_items=2)
        config = make_config(
            tmp_path, world,
            generation={"factoid_ladders": [
                {"mode": "CORROBORATION", "level": 1},
                {"mode": "CORROBORATION", "level": 2},
                {"mode": "CORROBORATION", "level": 3},
            ], "factoid_controls": False},
        )
        assert pipeline_run(config, ["answers", "factoid"]) == 0
        pairs = _pairs(config, "pairs.factoid.jsonl")
        expected = {"1": Fraction(1, 2), "2": Fraction(1, 3), "3": Fraction(1, 4)}
        assert len(pairs) == 2 * 3
        for pair in pairs:
            level = pair.facets["corroboration_level"]
            assert pair.intensity == expected[level]

    def test_factoid_evidence_all_passed_in_pairs(self, tmp_path):
        world = build_mock_world(n_items=0, n_factoid_items=1)
        config = make_config(tmp_path, world)
        assert pipeline_run(config, ["answers", "factoid"]) == 0
        evidence = _evidence_map(config)
        pairs = _pairs(config, "pairs.factoid.jsonl")
        assert verify_pair_references(pairs, evidence) == []


class TestDeterministicReplay:
    def test_two_runs_byte_identical(self, tmp_path):
        world = build_mock_world(n_items=3, n_factoid_items=1)
        stages = ANSWER_STAGES + ["pollution", "factoid", "detect", "resolve"]
        config_a = make_config(tmp_path, world, out_name="run_a")
        config_b = make_config(tmp_path, world, out_name="run_b")
        assert pipeline_run(config_a, stages) == 0
        assert pipeline_run(config_b, stages) == 0
        names = sorted(p.name for p in Path(config_a.out_dir).glob("*.jsonl"))
        assert names == sorted(p.name for p in Path(config_b.out_dir).glob("*.jsonl"))
        for name in names:
            a = (Path(config_a.out_dir) / name).read_bytes()
            b = (Path(config_b.out_dir) / name).read_bytes()
            assert a == b, f"{name} differs between replays"
        digests_a = {m["stage"]: {k: v["sha256"] for k, v in m["outputs"].items()}
                     for m in read_manifests(config_a.out_dir)}
        digests_b = {m["stage"]: {k: v["sha256"] for k, v in m["outputs"].items()}
                     for m in read_manifests(config_b.out_dir)}
        assert digests_a == digests_b

    def test_shared_cache_replay_serves_from_cache(self, tmp_path):
        world = build_mock_world(n_items=2, n_factoid_items=0)
        config_a = make_config(tmp_path, world, out_name="c1")
        config_a.cache_dir = str(tmp_path / "shared_cache")
        assert pipeline_run(config_a, ANSWER_STAGES) == 0
        config_b = make_config(tmp_path, world, out_name="c2")
        config_b.cache_dir = str(tmp_path / "shared_cache")
        gateway = build_gateway(config_b)
        for stage in ANSWER_STAGES:
            run_stage(config_b, gateway, stage)
        assert gateway.upstream_requests == 0  # warm cache answered everything
        assert (Path(config_a.out_dir) / "pairs.jsonl").read_bytes() == (
            Path(config_b.out_dir) / "pairs.jsonl"
        ).read_bytes()


class TestPipelineErrors:
    def test_missing_dependency_names_artifact(self, tmp_path):
        world = build_mock_world(n_items=1, n_factoid_items=0)
        config = make_config(tmp_path, world)
        assert pipeline_run(config, ["detect"]) == 3
        log = (Path(config.out_dir) / "errors.log").read_text()
        assert "qa_items.jsonl" in log

    def test_unknown_backend_is_config_error(self, tmp_path):
        world = build_mock_world(n_items=1, n_factoid_items=0)
        config = make_config(tmp_path, world)
        config.generation["backend"] = "ghost"
        assert pipeline_run(config, ["answers"]) == 2

    def test_unknown_stage_is_config_error(self, tmp_path):
        world = build_mock_world(n_items=1, n_factoid_items=0)
        config = make_config(tmp_path, world)
        assert pipeline_run(config, ["bogus-stage"]) == 2

    def test_stage_order_respected(self, tmp_path):
        world = build_mock_world(n_items=1, n_factoid_items=0)
        config = make_config(tmp_path, world)
        # Requesting stages out of order still runs them in dependency order.
        assert pipeline_run(config, ["answer-pairs", "qc-answer", "evidence",
                                     "answers"]) == 0
        assert (Path(config.out_dir) / "pairs.jsonl").exists()
