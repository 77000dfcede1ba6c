import json

import pytest

from conflictlab.answergen import (
    build_answer_pairs,
    generate_alternative_answers,
    generate_supporting_evidence,
    gold_candidate,
)
from conflictlab.core import LengthMode, PairLabel, QAItem, QcStatus
from conflictlab.errors import (
    DuplicateAnswers,
    GenerationParseFailure,
    InsufficientEvidence,
)
from conflictlab.prompts import TEMPLATES
from tests.conftest import candidate, passed_evidence


def _answer_prompt(qa):
    return TEMPLATES["answer_gen"].render({"q": qa.question})


class TestGenerateAlternativeAnswers:
    def test_three_candidates(self, make_gateway, qa_item):
        gateway = make_gateway({"generate": {"by_prompt": {
            _answer_prompt(qa_item): json.dumps(
                {"1": "John Williams", "2": "Hans Zimmer", "3": "James Horner"}
            )
        }}})
        candidates = generate_alternative_answers(gateway, "mock", qa_item, k=3)
        assert [c.index for c in candidates] == [1, 2, 3]
        assert [c.text for c in candidates] == ["John Williams", "Hans Zimmer", "James Horner"]
        assert all(c.origin.value == "GENERATED" for c in candidates)

    def test_duplicate_of_gold_rejected(self, make_gateway, qa_item):
        gateway = make_gateway({"generate": {"default": json.dumps(
            {"1": "John Barry", "2": "X", "3": "Y"}
        )}})
        with pytest.raises(DuplicateAnswers):
            generate_alternative_answers(gateway, "mock", qa_item, k=3)
        assert gateway.upstream_requests == 3  # retried R times first

    def test_alias_collision_rejected(self, make_gateway):
        qa = QAItem(id="q", question="q", gold_answer="Barack Obama",
                    extra_answers=("Obama",))
        gateway = make_gateway({"generate": {"default": json.dumps(
            {"1": "obama", "2": "X", "3": "Y"}
        )}})
        with pytest.raises(DuplicateAnswers):
            generate_alternative_answers(gateway, "mock", qa, k=3)

    def test_retry_recovers_from_bad_first_response(self, make_gateway, qa_item):
        gateway = make_gateway({"generate": {"sequence": [
            "not json",
            json.dumps({"1": "A", "2": "B", "3": "C"}),
        ]}})
        candidates = generate_alternative_answers(gateway, "mock", qa_item, k=3)
        assert [c.text for c in candidates] == ["A", "B", "C"]

    def test_k_one_boundary(self, make_gateway, qa_item):
        gateway = make_gateway({"generate": {"by_prompt": {
            _answer_prompt(qa_item): '{"1": "Only answer"}'
        }}})
        candidates = generate_alternative_answers(gateway, "mock", qa_item, k=1)
        assert len(candidates) == 1 and candidates[0].index == 1

    def test_parse_failure_after_retries(self, make_gateway, qa_item):
        gateway = make_gateway({"generate": {"default": "no structure"}})
        with pytest.raises(GenerationParseFailure):
            generate_alternative_answers(gateway, "mock", qa_item)


class TestGenerateSupportingEvidence:
    def _gateway(self, make_gateway, qa, answer_text, mode, texts):
        name = "evidence_gen_short" if mode is LengthMode.SHORT else "evidence_gen_long"
        prompt = TEMPLATES[name].render({"q": qa.question, "a": answer_text})
        return make_gateway({"generate": {"by_prompt": {
            prompt: json.dumps({str(i + 1): t for i, t in enumerate(texts)})
        }}})

    def test_two_unchecked_evidence(self, make_gateway, qa_item):
        answer = candidate(qa_item.id, 1, "Samantha Fox")
        texts = [
            "Samantha Fox was crowned the winner of Britain's Next Top Model 2016.",
            "In 2016, Samantha Fox took home the top prize on Britain's Next Top Model.",
        ]
        gateway = self._gateway(make_gateway, qa_item, answer.text, LengthMode.SHORT, texts)
        evidence = generate_supporting_evidence(
            gateway, "mock", qa_item, answer, LengthMode.SHORT, m=2
        )
        assert len(evidence) == 2
        assert all(e.supported_answer_index == 1 for e in evidence)
        assert all(e.qc_status is QcStatus.UNCHECKED for e in evidence)
        assert all(e.length_mode is LengthMode.SHORT for e in evidence)
        assert [e.text for e in evidence] == texts

    def test_single_evidence_boundary(self, make_gateway, qa_item):
        answer = candidate(qa_item.id, 0, qa_item.gold_answer)
        gateway = self._gateway(make_gateway, qa_item, answer.text, LengthMode.LONG, ["one"])
        evidence = generate_supporting_evidence(
            gateway, "mock", qa_item, answer, LengthMode.LONG, m=1
        )
        assert len(evidence) == 1

    def test_non_json_fails_after_retries(self, make_gateway, qa_item):
        answer = candidate(qa_item.id, 0, qa_item.gold_answer)
        gateway = make_gateway({"generate": {"default": "plain text"}})
        with pytest.raises(GenerationParseFailure):
            generate_supporting_evidence(gateway, "mock", qa_item, answer, LengthMode.SHORT)
        assert gateway.upstream_requests == 3

    def test_word_count_recorded(self, make_gateway, qa_item):
        answer = candidate(qa_item.id, 0, qa_item.gold_answer)
        gateway = self._gateway(
            make_gateway, qa_item, answer.text, LengthMode.SHORT, ["five words in this text"]
        )
        evidence = generate_supporting_evidence(
            gateway, "mock", qa_item, answer, LengthMode.SHORT, m=1
        )
        assert evidence[0].word_count == 5
        assert evidence[0].to_record()["word_count"] == 5


class TestBuildAnswerPairs:
    def _groups(self, sizes):
        return {
            idx: [
                passed_evidence("qa", f"e{idx}-{j}", idx, f"text {idx}-{j}")
                for j in range(size)
            ]
            for idx, size in sizes.items()
        }

    def test_two_answers_two_each(self):
        pairs = build_answer_pairs("qa", self._groups({0: 2, 1: 2}))
        conflicting = [p for p in pairs if p.gold_label is PairLabel.CONFLICTING]
        non_conflicting = [p for p in pairs if p.gold_label is PairLabel.NON_CONFLICTING]
        assert len(conflicting) == 4
        assert len(non_conflicting) == 2

    def test_single_answer(self):
        pairs = build_answer_pairs("qa", self._groups({0: 2}))
        assert [p.gold_label for p in pairs] == [PairLabel.NON_CONFLICTING]

    def test_within_answer_needs_two(self):
        with pytest.raises(InsufficientEvidence):
            build_answer_pairs("qa", self._groups({0: 1}))

    def test_lenient_mode_skips_small_groups(self):
        pairs = build_answer_pairs("qa", self._groups({0: 1, 1: 2}), strict=False)
        conflicting = [p for p in pairs if p.gold_label is PairLabel.CONFLICTING]
        non_conflicting = [p for p in pairs if p.gold_label is PairLabel.NON_CONFLICTING]
        assert len(conflicting) == 2  # 1 x 2
        assert len(non_conflicting) == 1  # only the size-2 group

    def test_label_law(self):
        groups = self._groups({0: 2, 1: 2, 2: 2})
        evidence_by_id = {e.id: e for evs in groups.values() for e in evs}
        for pair in build_answer_pairs("qa", groups):
            left = evidence_by_id[pair.left].supported_answer_index
            right = evidence_by_id[pair.right].supported_answer_index
            if pair.gold_label is PairLabel.CONFLICTING:
                assert left != right
            else:
                assert left == right

    def test_caps_are_seeded_and_stable(self):
        groups = self._groups({0: 3, 1: 3})
        first = build_answer_pairs("qa", groups, max_conflicting=4, seed=5)
        second = build_answer_pairs("qa", groups, max_conflicting=4, seed=5)
        third = build_answer_pairs("qa", groups, max_conflicting=4, seed=6)
        assert [p.id for p in first] == [p.id for p in second]
        conflicting = [p for p in first if p.gold_label is PairLabel.CONFLICTING]
        assert len(conflicting) == 4
        assert [p.id for p in first] != [p.id for p in third]

    def test_rejects_unchecked(self, qa_item):
        from conflictlab.core import Evidence

        bad = Evidence(id="u", qa_id="qa", text="t", supported_answer_index=0)
        with pytest.raises(ValueError):
            build_answer_pairs("qa", {0: [bad, bad]})

    def test_reproducible_ids(self):
        groups = self._groups({0: 2, 1: 2})
        assert (
            [p.id for p in build_answer_pairs("qa", groups)]
            == [p.id for p in build_answer_pairs("qa", groups)]
        )


def test_gold_candidate(qa_item):
    gold = gold_candidate(qa_item)
    assert gold.index == 0 and gold.text == "John Barry"
