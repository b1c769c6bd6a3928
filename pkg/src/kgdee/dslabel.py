"""Distant-supervision labelling: templates, a DS knowledge graph, constrained labelling.

Template file (UTF-8), one template per line::

    TYPE<TAB>pattern

``pattern`` is literal text with slots ``{Role:class}``; ``class`` is one of
``name``, ``date``, ``number``.  Lines starting with ``#`` and blank lines
are ignored.  Example::

    LA	{Plaintiff:name}起诉{Defendant:name}，由{LegalInstitution:name}受理。

A ``name`` slot matches a run of characters without whitespace or
punctuation, as short as possible unless it ends the pattern.
"""

from __future__ import annotations

import re
from dataclasses import dataclass, field
from pathlib import Path

from .docs import Argument, Document, EventRecord
from .errors import DataError
from .kg import MAIN_RELATIONS
from .names import default_rules, normalize_name
from .schema import DEFAULT_SCHEMAS, schema_map

SLOT_CLASSES = ("name", "date", "number")
_SLOT = re.compile(r"\{([^{}:]+):([^{}:]+)\}")
_NAME_CHARS = r"[^\s，。；、,;:：！？!?（）()]"
_CLASS_RE = {
    "date": r"\d{4}年\d{1,2}月\d{1,2}日|\d{4}-\d{1,2}-\d{1,2}",
    "number": r"\d[\d,]*(?:\.\d+)?",
}


@dataclass(frozen=True)
class Slot:
    role: str
    cls: str


@dataclass
class Template:
    event_type: str
    parts: tuple  # str literals and Slot objects, in order
    source: str = ""
    _regex: re.Pattern | None = field(default=None, repr=False, compare=False)

    @property
    def slots(self) -> list[Slot]:
        return [p for p in self.parts if isinstance(p, Slot)]

    @property
    def pattern(self) -> str:
        return "".join(p if isinstance(p, str) else f"{{{p.role}:{p.cls}}}" for p in self.parts)

    def regex(self) -> re.Pattern:
        if self._regex is None:
            out = []
            for k, part in enumerate(self.parts):
                if isinstance(part, str):
                    out.append(re.escape(part))
                elif part.cls == "name":
                    last = k == len(self.parts) - 1
                    out.append(f"({_NAME_CHARS}+{'' if last else '?'})")
                else:
                    out.append(f"({_CLASS_RE[part.cls]})")
            self._regex = re.compile("".join(out))
        return self._regex


def parse_template(event_type: str, pattern: str, schemas=DEFAULT_SCHEMAS, source="") -> Template:
    by_type = schema_map(schemas)
    if event_type not in by_type:
        raise DataError(f"{source}: unknown event type {event_type!r}")
    roles = set(by_type[event_type].roles)
    parts, pos = [], 0
    for m in _SLOT.finditer(pattern):
        if m.start() > pos:
            parts.append(pattern[pos:m.start()])
        role, cls = m.group(1).strip(), m.group(2).strip()
        if cls not in SLOT_CLASSES:
            raise DataError(f"{source}: slot class {cls!r} is not one of {SLOT_CLASSES}")
        if role not in roles:
            raise DataError(f"{source}: role {role!r} is not a role of {event_type}")
        if any(isinstance(p, Slot) and p.role == role for p in parts):
            raise DataError(f"{source}: role {role!r} appears twice")
        parts.append(Slot(role, cls))
        pos = m.end()
    if pos < len(pattern):
        parts.append(pattern[pos:])
    if "{" in "".join(p for p in parts if isinstance(p, str)) or "}" in "".join(
        p for p in parts if isinstance(p, str)
    ):
        raise DataError(f"{source}: malformed slot in {pattern!r}")
    if not any(isinstance(p, Slot) for p in parts):
        raise DataError(f"{source}: template has no slots")
    for a, b in zip(parts, parts[1:]):
        if isinstance(a, Slot) and isinstance(b, Slot):
            raise DataError(f"{source}: adjacent slots {a.role} and {b.role} need a literal between them")
    return Template(event_type, tuple(parts), source)


def parse_templates(text: str, schemas=DEFAULT_SCHEMAS, source="<templates>") -> list[Template]:
    out = []
    for lineno, line in enumerate(text.splitlines(), 1):
        if not line.strip() or line.startswith("#"):
            continue
        event_type, sep, pattern = line.partition("\t")
        if not sep or not pattern:
            raise DataError(f"{source}:{lineno}: expected TYPE<TAB>pattern")
        out.append(parse_template(event_type.strip(), pattern, schemas, f"{source}:{lineno}"))
    return out


def read_templates(path, schemas=DEFAULT_SCHEMAS) -> list[Template]:
    return parse_templates(Path(path).read_text(encoding="utf-8"), schemas, str(path))


def write_templates(path, templates):
    Path(path).write_text("".join(f"{t.event_type}\t{t.pattern}\n" for t in templates), encoding="utf-8")


# ---------------------------------------------------------------------------
# step 1: template matching
# ---------------------------------------------------------------------------


def match_templates(doc: Document, templates, schemas=DEFAULT_SCHEMAS) -> list[EventRecord]:
    """Leftmost non-overlapping matches of each template, sentence by sentence."""
    by_type = schema_map(schemas)
    records = []
    for tpl in templates:
        slots = tpl.slots
        roles = by_type[tpl.event_type].roles
        for s_idx, sentence in enumerate(doc.sentences):
            for m in tpl.regex().finditer(sentence):
                args = dict.fromkeys(roles)
                for g, slot in enumerate(slots, 1):
                    args[slot.role] = Argument(m.group(g), (s_idx, m.start(g), m.end(g)))
                records.append(EventRecord(tpl.event_type, args, "template"))
    return records


# ---------------------------------------------------------------------------
# step 2: DS knowledge graph
# ---------------------------------------------------------------------------


@dataclass
class DsEvent:
    event_type: str
    values: dict  # role -> raw text or None
    entities: dict  # role -> entity node index, for name-valued roles


@dataclass
class DsKnowledgeGraph:
    entity_keys: list[str] = field(default_factory=list)
    surfaces: list[list[str]] = field(default_factory=list)
    events: list[DsEvent] = field(default_factory=list)
    triples: list[tuple[int, str, int]] = field(default_factory=list)  # entity, relation, event

    @property
    def relations(self) -> list[str]:
        return sorted({r for _, r, _ in self.triples})

    def node_count(self) -> int:
        return len(self.entity_keys) + len(self.events)


def _is_name_value(text: str) -> bool:
    return not re.fullmatch(rf"{_CLASS_RE['date']}|{_CLASS_RE['number']}", text)


def build_ds_graph(records, rules=None) -> DsKnowledgeGraph:
    """One event node per record; name-valued arguments become shared entity nodes."""
    rules = rules if rules is not None else default_rules()
    graph = DsKnowledgeGraph()
    index: dict[str, int] = {}
    for rec in records:
        values, ents = {}, {}
        for role, arg in rec.arguments.items():
            values[role] = arg.text if arg is not None else None
            if arg is None or not _is_name_value(arg.text):
                continue
            key = normalize_name(arg.text, rules)
            if key not in index:
                index[key] = len(graph.entity_keys)
                graph.entity_keys.append(key)
                graph.surfaces.append([])
            node = index[key]
            if arg.text not in graph.surfaces[node]:
                graph.surfaces[node].append(arg.text)
            ents[role] = node
            graph.triples.append((node, f"{rec.event_type}.{role}", len(graph.events)))
        graph.events.append(DsEvent(rec.event_type, values, ents))
    clash = set(graph.relations) & set(MAIN_RELATIONS)
    assert not clash, f"DS relation names overlap the main graph: {clash}"
    return graph


# ---------------------------------------------------------------------------
# step 3: constrained labelling
# ---------------------------------------------------------------------------


@dataclass
class LabelingConfig:
    theta: float = 0.5
    key_roles: dict | None = None  # event type -> roles; overrides schema key roles

    def __post_init__(self):
        if not 0.0 < self.theta <= 1.0:
            raise ValueError(f"theta must lie in (0, 1], got {self.theta}")

    def keys_for(self, schema) -> frozenset:
        if self.key_roles and schema.event_type in self.key_roles:
            return frozenset(self.key_roles[schema.event_type])
        return schema.key_roles


def _find(doc: Document, needle: str, numeric: bool):
    """Earliest (sent, start, end) of ``needle``; numbers must not touch other digits."""
    for s_idx, sentence in enumerate(doc.sentences):
        start = sentence.find(needle)
        while start >= 0:
            end = start + len(needle)
            if not numeric or (
                (start == 0 or not sentence[start - 1].isdigit())
                and (end == len(sentence) or not sentence[end].isdigit())
            ):
                return s_idx, start, end
            start = sentence.find(needle, start + 1)
    return None


def _locate(doc: Document, graph: DsKnowledgeGraph, event: DsEvent, role: str):
    value = event.values.get(role)
    if value is None:
        return None
    if role not in event.entities:
        span = _find(doc, value, numeric=True)
        return (value, span) if span else None
    node = event.entities[role]
    variants = list(graph.surfaces[node])
    key = graph.entity_keys[node]
    if len(key) >= 2 and key not in variants:
        variants.append(key)
    best = None
    for v in variants:
        span = _find(doc, v, numeric=False)
        if span and (best is None or (span[0], span[1], -len(v)) < (best[1][0], best[1][1], -len(best[0]))):
            best = (v, span)
    return best


def ds_label(doc: Document, graph: DsKnowledgeGraph, cfg: LabelingConfig | None = None,
             schemas=DEFAULT_SCHEMAS) -> list[EventRecord]:
    """Events of ``graph`` whose arguments co-occur in ``doc`` and pass the key-role and coverage tests."""
    cfg = cfg or LabelingConfig()
    by_type = schema_map(schemas)
    out = []
    for event in graph.events:
        schema = by_type[event.event_type]
        found = {role: _locate(doc, graph, event, role) for role in schema.roles}
        if not any(found[r] for r in event.entities):
            continue
        if not all(found[r] for r in cfg.keys_for(schema)):
            continue
        hits = sum(1 for v in found.values() if v)
        if hits / len(schema.roles) < cfg.theta:
            continue
        args = {r: (Argument(v[0], v[1]) if v else None) for r, v in found.items()}
        out.append(EventRecord(event.event_type, args, "ds"))
    return out


def label_documents(docs, mode: str, templates=None, graph: DsKnowledgeGraph | None = None,
                    cfg: LabelingConfig | None = None, schemas=DEFAULT_SCHEMAS) -> list[Document]:
    """Copies of ``docs`` with ``events`` replaced by template or DS labels."""
    out = []
    for doc in docs:
        if mode == "template":
            events = match_templates(doc, templates or [], schemas)
        elif mode == "ds":
            events = ds_label(doc, graph, cfg, schemas)
        else:
            raise ValueError(f"unknown labelling mode {mode!r}")
        out.append(Document(doc.doc_id, list(doc.sentences), doc.mentions, events, None,
                            dict(doc.extra), list(doc.key_order)))
    return out
