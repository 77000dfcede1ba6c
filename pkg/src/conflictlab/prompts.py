"""Prompt templates and JSON response parsing.

Template bodies use ``{slot}`` placeholders; literal braces are written
``{{``/``}}``.  The generation prompts instruct models to answer with a JSON
object, so the extraction helpers tolerate leading/trailing chatter and take
the first balanced object found in the response.
"""

from __future__ import annotations

import json
import string
from dataclasses import dataclass
from typing import Mapping

from .errors import KeyAbsent, MissingSlot, NoJsonFound, NonStringValue

__all__ = [
    "PromptTemplate",
    "TEMPLATES",
    "render",
    "extract_json_object",
    "extract_json_field",
    "template_digest",
]


@dataclass(frozen=True)
class PromptTemplate:
    name: str
    body: str
    required_slots: tuple[str, ...]

    def render(self, slots: Mapping[str, str]) -> str:
        missing = [s for s in self.required_slots if s not in slots]
        if missing:
            raise MissingSlot(f"template {self.name!r} missing slots", slots=missing)
        try:
            return self.body.format(**slots)
        except (KeyError, IndexError) as exc:
            raise MissingSlot(f"template {self.name!r} missing slot", slots=[str(exc)])


def render(template: PromptTemplate, slots: Mapping[str, str]) -> str:
    return template.render(slots)


def _slots_of(body: str) -> tuple[str, ...]:
    names = []
    for _, field_name, _, _ in string.Formatter().parse(body):
        if field_name and field_name not in names:
            names.append(field_name)
    return tuple(names)


def _template(name: str, body: str) -> PromptTemplate:
    return PromptTemplate(name=name, body=body, required_slots=_slots_of(body))


_ANSWER_JSON_LINE = 'Answer (should be formatted as {{"Answer": "Yes or No"}}):'

_DETECT_ANSWER_HEAD = (
    "Question: {q}?\n"
    "Evidence 1: {e1}\n"
    "Evidence 2: {e2}\n"
    "Do the two pieces of evidence contain conflicting information on answering the question? (Yes/No)\n"
)

TEMPLATES: dict[str, PromptTemplate] = {
    t.name: t
    for t in [
        _template(
            "answer_gen",
            "List THREE different short answers to the question. The answers do not have to be true.\n"
            "Question: {q}?\n"
            'Answer (should be formatted as {{"1": "TEXT-1", "2": "TEXT-2", "3": "TEXT-3"}}):',
        ),
        _template(
            "evidence_gen_short",
            "Give me TWO different short sentences that independently support the given answer "
            "(try to simulate the format of web search results).\n"
            "Question: {q}?\n"
            "Answer: {a}\n"
            'Paragraphs (should be formatted as {{"1": "TEXT-1", "2": "TEXT-2"}}):',
        ),
        _template(
            "evidence_gen_long",
            "Give me TWO different short paragraphs that independently support the given answer "
            "(try to simulate the format of web search results).\n"
            "Question: {q}?\n"
            "Answer: {a}\n"
            'Sentences (should be formatted as {{"1": "TEXT-1", "2": "TEXT-2"}}):',
        ),
        _template(
            "pollute",
            "Given the following passage, modify as few details as possible to make it support "
            "the given answer to the question.\n"
            "Question: {q}?\n"
            "Passage: {e}\n"
            "Answer: {a}\n"
            'Modified passage (should be formatted as {{"Modified_passage": "TEXT"}}):',
        ),
        _template(
            "qc_answer",
            "Paragraph: {e}\n"
            "Answer the following question with the information from the above paragraph.\n"
            "Question: {q}?\n"
            "Answer:",
        ),
        _template(
            "qc_answer_hypothesis",
            "The answer to '{q}' is {a}.",
        ),
        _template("detect_answer", _DETECT_ANSWER_HEAD + _ANSWER_JSON_LINE),
        _template(
            "detect_factoid",
            "Question: {q}?\n"
            "Paragraph 1: {e1}\n"
            "Paragraph 2: {e2}\n"
            "Do the two pieces of evidence contain conflicting information? (Yes/No)\n"
            + _ANSWER_JSON_LINE,
        ),
        _template(
            "detect_score",
            "Question: {q}?\n"
            "Evidence 1: {e1}\n"
            "Evidence 2: {e2}\n"
            "Identify any contradictions between the two evidences. If a conflict exists, "
            "provide a conflict level rating from 1 to 5, where 1 represents a minor conflict "
            "and 5 represents a major conflict. If there is no conflict, simply state 0.",
        ),
        _template(
            "detect_ensemble_nli",
            _DETECT_ANSWER_HEAD
            + "For your reference, the Natural Language Inference model's prediction is {aux}.\n"
            + _ANSWER_JSON_LINE,
        ),
        _template(
            "detect_ensemble_fc_pred",
            _DETECT_ANSWER_HEAD
            + "For your reference, an external factual consistency evaluator's prediction is {aux}.\n"
            + _ANSWER_JSON_LINE,
        ),
        _template(
            "detect_ensemble_fc_score",
            _DETECT_ANSWER_HEAD
            + "For your reference, an external factual consistency evaluator's predicted "
            "consistency score is {aux}.\n" + _ANSWER_JSON_LINE,
        ),
        _template(
            "perturb_factoid",
            "Modify the statement to suggest otherwise that contradicts the original:\n"
            "\n"
            "Statement: A pound sterling is fiat money.\n"
            'Modified statement (in JSON format): {{"modified statement": "A pound sterling is a kind of cryptocurrency."}}\n'
            "\n"
            "Statement: Dogs have sensitive ears that can hear as far as a quarter of a mile away.\n"
            'Modified statement (in JSON format): {{"modified statement": "Dogs have average hearing abilities and cannot hear beyond a few yards."}}\n'
            "\n"
            "Statement: Relay races are athletic track and field events.\n"
            'Modified statement (in JSON format): {{"modified statement": "Relay races are intellectual board games."}}\n'
            "\n"
            "Statement: {s}\n"
            "Modified statement (in JSON format):",
        ),
        _template(
            "evidence_gen_factoid",
            "Keypoints: {s}\n"
            "\n"
            "Give me a paragraph of around 100 words using the keypoints "
            "(try to simulate the format of web search results):\n"
            "\n"
            'Paragraph (should be in JSON format and formatted as {{"Paragraph": "TEXT"}}):',
        ),
        _template(
            "resolve_with_evidence",
            "Question: {q}?\n"
            "Evidence 1: {e1}\n"
            "Evidence 2: {e2}\n"
            "Let's think step by step, then give your final answer on a new line starting with "
            "'Final answer:'.",
        ),
        _template(
            "resolve_closed_book",
            "Question: {q}?\n"
            "Let's think step by step, then give your final answer on a new line starting with "
            "'Final answer:'.",
        ),
    ]
}


def template_digest(template: PromptTemplate) -> str:
    import hashlib

    return hashlib.sha256(template.body.encode("utf-8")).hexdigest()[:16]


def _first_json_object(raw: str) -> dict:
    decoder = json.JSONDecoder()
    idx = raw.find("{")
    while idx != -1:
        try:
            obj, _ = decoder.raw_decode(raw[idx:])
        except json.JSONDecodeError:
            idx = raw.find("{", idx + 1)
            continue
        if isinstance(obj, dict):
            return obj
        idx = raw.find("{", idx + 1)
    raise NoJsonFound("no balanced JSON object in response", snippet=raw[:80])


def extract_json_object(raw: str) -> dict[str, str]:
    """First balanced JSON object in ``raw`` with all-string values."""
    obj = _first_json_object(raw)
    for key, value in obj.items():
        if not isinstance(value, str):
            raise NonStringValue("JSON object value is not a string", key=key, value=value)
    return dict(obj)


def extract_json_field(raw: str, key: str) -> str:
    """String value at ``key`` in the first balanced JSON object of ``raw``."""
    obj = _first_json_object(raw)
    if key not in obj:
        raise KeyAbsent("key absent from extracted JSON object", key=key, present=list(obj))
    value = obj[key]
    if not isinstance(value, str):
        raise NonStringValue("JSON value at key is not a string", key=key, value=value)
    return value
