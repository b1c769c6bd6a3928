"""Document, mention and event-record types and the Document JSONL format.

One JSON object per line::

    {"doc_id": "d1",
     "sentences": ["...", "..."],
     "mentions": [{"sent": 0, "start": 3, "end": 7, "text": "...", "label": "company"}],
     "events": [{"type": "EP", "arguments": {"Pledger": {"text": "...", "span": [0, 3, 7]},
                                             "Pledgee": null}, "source": "ds"}],
     "event_count": 1}

``mentions``, ``events`` and ``event_count`` are optional.  Offsets count
Unicode code points within a sentence, end exclusive.  Unknown keys are
kept and written back in their original position.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

from .errors import DataError

LABEL_TYPES = ("company", "person", "institution", "date", "shares", "ratio", "amount")


@dataclass(frozen=True)
class Mention:
    sent: int
    start: int
    end: int
    text: str
    label: str

    def validate(self, sentences):
        if not 0 <= self.sent < len(sentences):
            raise DataError(f"mention {self.text!r} points at missing sentence {self.sent}")
        sentence = sentences[self.sent]
        if not 0 <= self.start < self.end <= len(sentence):
            raise DataError(
                f"mention offsets [{self.start}, {self.end}) out of range for sentence {self.sent} "
                f"of length {len(sentence)}"
            )
        if sentence[self.start:self.end] != self.text:
            raise DataError(
                f"mention text {self.text!r} does not match sentence slice "
                f"{sentence[self.start:self.end]!r}"
            )

    def to_dict(self):
        return {"sent": self.sent, "start": self.start, "end": self.end, "text": self.text, "label": self.label}

    @classmethod
    def from_dict(cls, d):
        return cls(int(d["sent"]), int(d["start"]), int(d["end"]), d["text"], d["label"])


@dataclass(frozen=True)
class Argument:
    text: str
    span: tuple[int, int, int] | None = None  # (sentence, start, end)
    entity: int | None = None  # index into the document's merged entity list

    def to_dict(self):
        d = {"text": self.text}
        if self.span is not None:
            d["span"] = list(self.span)
        if self.entity is not None:
            d["entity"] = self.entity
        return d

    @classmethod
    def from_dict(cls, d):
        if isinstance(d, str):
            return cls(d)
        span = tuple(d["span"]) if d.get("span") is not None else None
        return cls(d["text"], span, d.get("entity"))


@dataclass
class EventRecord:
    event_type: str
    arguments: dict[str, Argument | None]
    source: str | None = None

    def texts(self) -> dict[str, str | None]:
        return {role: (arg.text if arg is not None else None) for role, arg in self.arguments.items()}

    def filled(self) -> int:
        return sum(arg is not None for arg in self.arguments.values())

    def to_dict(self):
        d = {
            "type": self.event_type,
            "arguments": {r: (a.to_dict() if a is not None else None) for r, a in self.arguments.items()},
        }
        if self.source is not None:
            d["source"] = self.source
        return d

    @classmethod
    def from_dict(cls, d):
        args = {r: (Argument.from_dict(a) if a is not None else None) for r, a in d["arguments"].items()}
        return cls(d["type"], args, d.get("source"))


_KNOWN = ("doc_id", "sentences", "mentions", "events", "event_count")


@dataclass
class Document:
    doc_id: str
    sentences: list[str]
    mentions: list[Mention] | None = None
    events: list[EventRecord] | None = None
    declared_event_count: int | None = None
    extra: dict = field(default_factory=dict)
    key_order: list[str] = field(default_factory=list)

    @property
    def event_count(self) -> int:
        if self.events is not None:
            return len(self.events)
        return self.declared_event_count or 0

    @property
    def text(self) -> str:
        return "".join(self.sentences)

    def validate(self):
        for m in self.mentions or ():
            m.validate(self.sentences)
        for ev in self.events or ():
            for role, arg in ev.arguments.items():
                if arg is None or arg.span is None:
                    continue
                sent, start, end = arg.span
                if not (0 <= sent < len(self.sentences)) or self.sentences[sent][start:end] != arg.text:
                    raise DataError(f"{self.doc_id}: {ev.event_type}.{role} argument {arg.text!r} not at {arg.span}")

    def to_dict(self) -> dict:
        known = {"doc_id": self.doc_id, "sentences": list(self.sentences)}
        if self.mentions is not None:
            known["mentions"] = [m.to_dict() for m in self.mentions]
        if self.events is not None:
            known["events"] = [e.to_dict() for e in self.events]
        if self.events is not None or self.declared_event_count is not None:
            known["event_count"] = self.event_count
        out = {}
        for key in self.key_order:
            if key in known:
                out[key] = known.pop(key)
            elif key in self.extra:
                out[key] = self.extra[key]
        out.update(known)
        for key, value in self.extra.items():
            out.setdefault(key, value)
        return out

    @classmethod
    def from_dict(cls, d: dict) -> "Document":
        try:
            doc = cls(
                doc_id=str(d["doc_id"]),
                sentences=list(d["sentences"]),
                mentions=[Mention.from_dict(m) for m in d["mentions"]] if d.get("mentions") is not None else None,
                events=[EventRecord.from_dict(e) for e in d["events"]] if d.get("events") is not None else None,
                declared_event_count=d.get("event_count"),
                extra={k: v for k, v in d.items() if k not in _KNOWN},
                key_order=list(d),
            )
        except (KeyError, TypeError) as exc:
            raise DataError(f"malformed document {d.get('doc_id', '?')!r}: {exc}") from None
        return doc


def read_jsonl(path) -> list[Document]:
    docs = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            if not line.strip():
                continue
            try:
                payload = json.loads(line)
            except json.JSONDecodeError as exc:
                raise DataError(f"{path}:{lineno}: invalid JSON ({exc.msg})") from None
            docs.append(Document.from_dict(payload))
    return docs


def dumps_jsonl(docs) -> str:
    return "".join(json.dumps(d.to_dict(), ensure_ascii=False) + "\n" for d in docs)


def write_jsonl(path, docs):
    Path(path).write_text(dumps_jsonl(docs), encoding="utf-8")
