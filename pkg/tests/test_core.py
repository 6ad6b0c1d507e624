import pytest

from selfdocs.core import (
    ALL_SFL_TYPES,
    GENREAD,
    WIKI,
    DocType,
    Document,
    GoldAnswer,
    Metric,
    Query,
    Source,
    Task,
    Verdict,
    parse_sfl_code,
    self_doc_id,
)
from selfdocs.errors import PreconditionError, UnknownCode


def test_eight_distinct_codes():
    codes = [t.code for t in ALL_SFL_TYPES]
    assert codes == ["AFS", "AFU", "ACS", "ACU", "CFS", "CFU", "CCS", "CCU"]
    assert all(parse_sfl_code(c) == t for c, t in zip(codes, ALL_SFL_TYPES))


def test_parse_code_is_case_insensitive_and_strict():
    assert parse_sfl_code("afu").code == "AFU"
    for bad in ("AFX", "", "AF", None):
        with pytest.raises(UnknownCode):
            parse_sfl_code(bad)


def test_doc_type_codes():
    assert DocType.parse("wiki") is WIKI and DocType.parse("GENREAD") is GENREAD
    assert DocType.parse("ccs") == DocType.of(parse_sfl_code("CCS"))
    with pytest.raises(PreconditionError):
        DocType(WIKI.kind, parse_sfl_code("AFS"))


def test_task_metrics_and_labels():
    assert [(t.label, t.metric) for t in Task] == [
        ("TQA", Metric.EM), ("HotpotQA", Metric.F1), ("FEVER", Metric.EM), ("ELI5", Metric.F1),
    ]
    assert Task.parse("TriviaQA") is Task.OPEN_DOMAIN_QA
    assert Task.parse("fact-verification") is Task.FACT_VERIFICATION
    with pytest.raises(ValueError):
        Task.parse("squad")


def test_gold_answer_shapes():
    GoldAnswer(label=Verdict.SUPPORTS).check_task(Task.FACT_VERIFICATION)
    with pytest.raises(PreconditionError):
        GoldAnswer()
    with pytest.raises(PreconditionError):
        GoldAnswer(answers=("x",)).check_task(Task.FACT_VERIFICATION)


def test_document_invariants_and_round_trip():
    d = Document("id", "text", DocType.of(parse_sfl_code("AFU")), Source.SELF_GENERATED, "q", 2)
    assert Document.from_dict(d.to_dict()) == d
    with pytest.raises(PreconditionError):
        Document("w", "t", WIKI, Source.RETRIEVED)
    with pytest.raises(PreconditionError):
        Document("s", "t", GENREAD, Source.SELF_GENERATED, "q")
    with pytest.raises(PreconditionError):
        Document("e", "", WIKI, Source.RETRIEVED, rank=1)
    with pytest.raises(PreconditionError):
        Query("q", "", Task.OPEN_DOMAIN_QA)


def test_self_doc_id_is_stable_and_keyed():
    t = DocType.of(parse_sfl_code("CCU"))
    a = self_doc_id("q1", t, 0, "m")
    assert a == self_doc_id("q1", t, 0, "m") and len(a) == 24
    assert len({a, self_doc_id("q1", t, 1, "m"), self_doc_id("q1", GENREAD, 0, "m"), self_doc_id("q1", t, 0, "n")}) == 4
