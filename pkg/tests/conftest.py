import pytest

from conflictlab.core import (
    AnswerCandidate,
    AnswerOrigin,
    Dataset,
    Evidence,
    LengthMode,
    QAItem,
    QcStatus,
)
from conflictlab.gateway import ModelGateway, ScriptedBackend


@pytest.fixture
def qa_item():
    return QAItem(
        id="qa-somewhere",
        question="who wrote the music for somewhere in time",
        gold_answer="John Barry",
        dataset=Dataset.NQ_OPEN,
    )


@pytest.fixture
def make_gateway():
    def _make(script: dict, name: str = "mock", **kwargs) -> ModelGateway:
        gateway = ModelGateway(max_attempts=kwargs.pop("max_attempts", 3), **kwargs)
        gateway.register(ScriptedBackend(name, script))
        return gateway

    return _make


def passed_evidence(
    qa_id: str,
    evidence_id: str,
    answer_index: int,
    text: str,
    length_mode: LengthMode = LengthMode.SHORT,
    pollution_source=None,
) -> Evidence:
    return Evidence(
        id=evidence_id,
        qa_id=qa_id,
        text=text,
        supported_answer_index=answer_index,
        length_mode=length_mode,
        pollution_source=pollution_source,
        qc_status=QcStatus.PASSED,
    )


def candidate(qa_id: str, index: int, text: str) -> AnswerCandidate:
    return AnswerCandidate(
        qa_id=qa_id,
        index=index,
        text=text,
        origin=AnswerOrigin.GOLD if index == 0 else AnswerOrigin.GENERATED,
    )
