"""Deterministic mock data: QA items plus a scripted-backend script that
covers every call an offline pipeline run will make.

The builder enumerates the exact prompts and NLI text pairs each stage
issues (including every indicator subset a seeded factoid ladder could
choose), so runs are fully offline and byte-reproducible.  Designated
evidence can be scripted to fail the NLI quality gate.
"""

from __future__ import annotations

import itertools
import json
from dataclasses import dataclass, field
from typing import Optional, Sequence

from .core import Dataset, LengthMode, QAItem, stable_id
from .gateway import script_key
from .prompts import TEMPLATES

__all__ = ["MockWorld", "build_mock_world", "ENTAIL", "NEUTRAL", "CONTRADICT"]

ENTAIL = [0.8, 0.1, 0.1]
NEUTRAL = [0.15, 0.7, 0.15]
CONTRADICT = [0.1, 0.2, 0.7]

_EVIDENCE_TEMPLATES = {
    LengthMode.SHORT: "evidence_gen_short",
    LengthMode.LONG: "evidence_gen_long",
}


@dataclass
class MockWorld:
    qa_items: list[QAItem]
    factoid_items: list[QAItem]
    script: dict
    backend_name: str
    k: int
    m: int
    modes: tuple[LengthMode, ...]
    answers: dict[str, list[str]] = field(default_factory=dict)  # qa_id -> texts, index order
    evidence_ids: dict[tuple[str, int, str, int], str] = field(default_factory=dict)
    failing_evidence_ids: list[str] = field(default_factory=list)

    def all_items(self) -> list[QAItem]:
        return self.qa_items + self.factoid_items

    def write_script(self, path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(self.script, fh, ensure_ascii=False)


def _answer_hypothesis(question: str, answer: str) -> str:
    return TEMPLATES["qc_answer_hypothesis"].render({"q": question, "a": answer})


def build_mock_world(
    n_items: int = 10,
    k: int = 2,
    m: int = 2,
    modes: Sequence[str] = ("SHORT",),
    n_factoid_items: int = 2,
    factoid_count: int = 4,
    failing_evidence: Optional[Sequence[tuple[int, int, str, int]]] = None,
    backend_name: str = "mock",
) -> MockWorld:
    """Fabricate ``n_items`` answer-split items and ``n_factoid_items``
    factoid-split items plus the scripted responses for them.

    ``failing_evidence`` lists (item index, answer index, mode name, ordinal)
    tuples whose NLI quality gate is scripted to contradict.
    """
    mode_values = tuple(LengthMode(m_) for m_ in modes)
    generate: dict = {"by_prompt": {}, "default":
                      "Weighing both evidences step by step. Final answer: undetermined"}
    nli: dict = {"by_pair": {}}
    world = MockWorld(
        qa_items=[],
        factoid_items=[],
        script={"generate": generate, "nli": nli},
        backend_name=backend_name,
        k=k,
        m=m,
        modes=mode_values,
    )
    failing = set(tuple(f) for f in (failing_evidence or ()))

    for i in range(n_items):
        question = f"mock question {i:02d} about topic {i:02d}"
        gold = f"Gold Answer {i:02d}"
        alternatives = [f"Alt Answer {i:02d}-{j}" for j in range(1, k + 1)]
        qa = QAItem(
            id=stable_id("qa", "OTHER", question),
            question=question,
            gold_answer=gold,
            dataset=Dataset.OTHER,
        )
        world.qa_items.append(qa)
        all_answers = [gold] + alternatives
        world.answers[qa.id] = all_answers

        prompt = TEMPLATES["answer_gen"].render({"q": question})
        generate["by_prompt"][prompt] = json.dumps(
            {str(j + 1): alt for j, alt in enumerate(alternatives)}
        )

        texts_by_answer: dict[int, list[tuple[str, LengthMode]]] = {}
        for answer_index, answer in enumerate(all_answers):
            for mode in mode_values:
                label = "sentence" if mode is LengthMode.SHORT else "paragraph"
                texts = [
                    f"{answer} is documented as the answer to {question} "
                    f"({label} source {ordinal + 1})."
                    for ordinal in range(m)
                ]
                prompt = TEMPLATES[_EVIDENCE_TEMPLATES[mode]].render(
                    {"q": question, "a": answer}
                )
                generate["by_prompt"][prompt] = json.dumps(
                    {str(j + 1): t for j, t in enumerate(texts)}
                )
                for ordinal, text in enumerate(texts):
                    evidence_id = stable_id(
                        "evidence", qa.id, f"a{answer_index}", mode.value, ordinal
                    )
                    world.evidence_ids[(qa.id, answer_index, mode.value, ordinal)] = evidence_id
                    texts_by_answer.setdefault(answer_index, []).append((text, mode))
                    fails = (i, answer_index, mode.value, ordinal) in failing
                    if fails:
                        world.failing_evidence_ids.append(evidence_id)
                    _script_answer_qc(
                        generate, nli, question, answer, text, fails=fails
                    )

        # Pollution: gold evidence 0 (first mode) rewritten towards alternative 1.
        target = alternatives[0]
        source_text = texts_by_answer[0][0][0]
        polluted_text = source_text.replace(gold, target)
        prompt = TEMPLATES["pollute"].render(
            {"q": question, "e": source_text, "a": target}
        )
        generate["by_prompt"][prompt] = json.dumps({"Modified_passage": polluted_text})
        _script_answer_qc(generate, nli, question, target, polluted_text, fails=False)

        # Detection NLI entries: same-answer text pairs entail, cross-answer
        # contradict; the polluted text belongs to the target answer.
        pool: list[tuple[str, int]] = []
        for answer_index, entries in texts_by_answer.items():
            pool.extend((text, answer_index) for text, _ in entries)
        pool.append((polluted_text, 1))
        for (text_a, idx_a), (text_b, idx_b) in itertools.permutations(pool, 2):
            verdict = ENTAIL if idx_a == idx_b else CONTRADICT
            nli["by_pair"][script_key(text_a, text_b)] = verdict

    for i in range(n_factoid_items):
        question = f"mock factoid question {i:02d}"
        originals = [f"Careful records show detail {i}-{p} holds." for p in range(factoid_count)]
        perturbed = [
            f"Careful records show detail {i}-{p} does not hold." for p in range(factoid_count)
        ]
        qa = QAItem(
            id=stable_id("qa", "STRATEGYQA", question),
            question=question,
            gold_answer="yes",
            dataset=Dataset.STRATEGYQA,
            factoids=tuple(originals),
        )
        world.factoid_items.append(qa)
        for original, modified in zip(originals, perturbed):
            prompt = TEMPLATES["perturb_factoid"].render({"s": original})
            generate["by_prompt"][prompt] = json.dumps({"modified statement": modified})

        # Every position subset of size >= 2 and every indicator over it, so
        # any seeded ladder choice is covered.
        for size in range(2, factoid_count + 1):
            for positions in itertools.combinations(range(factoid_count), size):
                paragraphs: dict[tuple[int, ...], str] = {}
                for indicator in itertools.product((0, 1), repeat=size):
                    used = [
                        perturbed[p] if bit else originals[p]
                        for p, bit in zip(positions, indicator)
                    ]
                    unused = [
                        originals[p] if bit else perturbed[p]
                        for p, bit in zip(positions, indicator)
                    ]
                    keypoints = "\n".join(f"{j + 1}. {t}" for j, t in enumerate(used))
                    paragraph = f"Overview for {question}: " + " ".join(used)
                    paragraphs[indicator] = paragraph
                    prompt = TEMPLATES["evidence_gen_factoid"].render({"s": keypoints})
                    generate["by_prompt"][prompt] = json.dumps({"Paragraph": paragraph})
                    for text in used:
                        nli["by_pair"][script_key(paragraph, text)] = ENTAIL
                    for text in unused:
                        nli["by_pair"][script_key(paragraph, text)] = CONTRADICT
                # Detection entries: paragraphs within one subset pair up;
                # identical indicators entail (control pairs reuse one
                # paragraph), differing indicators contradict.
                for text in paragraphs.values():
                    nli["by_pair"][script_key(text, text)] = ENTAIL
                for ind_a, ind_b in itertools.permutations(paragraphs, 2):
                    nli["by_pair"][script_key(paragraphs[ind_a], paragraphs[ind_b])] = CONTRADICT

    return world


def _script_answer_qc(
    generate: dict, nli: dict, question: str, answer: str, text: str, fails: bool
) -> None:
    premise = f"{question} {text}"
    hypothesis = _answer_hypothesis(question, answer)
    nli["by_pair"][script_key(premise, hypothesis)] = CONTRADICT if fails else ENTAIL
    qc_prompt = TEMPLATES["qc_answer"].render({"e": text, "q": question})
    generate["by_prompt"][qc_prompt] = answer
    nli["by_pair"][script_key(answer, answer)] = ENTAIL
