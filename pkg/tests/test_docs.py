import json

import pytest

from kgdee.docs import Argument, Document, EventRecord, Mention, dumps_jsonl, read_jsonl, write_jsonl
from kgdee.errors import DataError

LINE = {
    "doc_id": "d1",
    "source_url": "http://example.invalid/1",
    "sentences": ["甲公司质押股份", "质权人为乙银行"],
    "mentions": [{"sent": 0, "start": 0, "end": 3, "text": "甲公司", "label": "company"}],
    "events": [{"type": "EP", "arguments": {"Pledger": {"text": "甲公司", "span": [0, 0, 3]},
                                            "Pledgee": {"text": "乙银行", "span": [1, 4, 7], "entity": 1},
                                            "Date": None}, "source": "ds"}],
    "event_count": 1,
    "zz_note": [1, 2],
}


def test_round_trip_keeps_unknown_keys_in_place(tmp_path):
    path = tmp_path / "docs.jsonl"
    path.write_text(json.dumps(LINE, ensure_ascii=False) + "\n\n", encoding="utf-8")
    docs = read_jsonl(path)
    assert len(docs) == 1
    assert list(docs[0].to_dict()) == list(LINE)
    assert docs[0].to_dict() == LINE
    write_jsonl(tmp_path / "again.jsonl", docs)
    assert read_jsonl(tmp_path / "again.jsonl")[0].to_dict() == LINE


def test_document_accessors():
    doc = Document.from_dict(LINE)
    doc.validate()
    assert doc.text == "甲公司质押股份质权人为乙银行"
    assert doc.event_count == 1
    ev = doc.events[0]
    assert ev.filled() == 2 and ev.texts() == {"Pledger": "甲公司", "Pledgee": "乙银行", "Date": None}
    assert ev.arguments["Pledgee"].entity == 1
    assert Document("x", ["a"], declared_event_count=3).event_count == 3
    assert Document("x", ["a"]).event_count == 0


def test_plain_string_argument():
    ev = EventRecord.from_dict({"type": "LA", "arguments": {"Plaintiff": "甲"}})
    assert ev.arguments["Plaintiff"] == Argument("甲")
    assert ev.to_dict() == {"type": "LA", "arguments": {"Plaintiff": {"text": "甲"}}}


def test_mention_validation():
    sentences = ["甲公司质押"]
    Mention(0, 0, 3, "甲公司", "company").validate(sentences)
    with pytest.raises(DataError, match="missing sentence"):
        Mention(1, 0, 1, "x", "company").validate(sentences)
    with pytest.raises(DataError, match="out of range"):
        Mention(0, 3, 9, "质押", "company").validate(sentences)
    with pytest.raises(DataError, match="does not match"):
        Mention(0, 0, 2, "乙公", "company").validate(sentences)


def test_argument_span_validation():
    doc = Document.from_dict(LINE)
    doc.events[0].arguments["Pledger"] = Argument("丙公司", (0, 0, 3))
    with pytest.raises(DataError, match="Pledger"):
        doc.validate()


def test_malformed_input(tmp_path):
    with pytest.raises(DataError, match="malformed"):
        Document.from_dict({"sentences": []})
    bad = tmp_path / "bad.jsonl"
    bad.write_text('{"doc_id": "a", "sentences": []}\n{oops\n', encoding="utf-8")
    with pytest.raises(DataError, match=":2:"):
        read_jsonl(bad)


def test_dumps_is_utf8_not_escaped():
    assert "甲公司" in dumps_jsonl([Document.from_dict(LINE)])
