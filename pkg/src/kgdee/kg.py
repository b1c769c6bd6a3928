"""Main knowledge graph: TSV ingestion, name index, neighbourhoods and
k-shortest simple paths over the undirected view."""

from __future__ import annotations

import json
import logging
from collections import Counter, deque
from dataclasses import dataclass, field
from pathlib import Path
from typing import NamedTuple

from .errors import DataError, IngestError
from .names import AliasLookup, default_rules, normalize_name

log = logging.getLogger(__name__)

MAIN_RELATIONS = (
    "Branch",
    "Creditor",
    "ShareHolder",
    "Invest",
    "LegalPerson",
    "Pledge",
    "ManagingMember",
)

# relation histogram of a full-size financial graph
REFERENCE_COUNTS = {
    "Branch": 98428,
    "Creditor": 1014,
    "ShareHolder": 138853,
    "Invest": 4873,
    "LegalPerson": 95745,
    "Pledge": 61242,
    "ManagingMember": 33735,
}

ENTITY_KINDS = ("company", "person", "institution")


@dataclass(frozen=True)
class EntityRecord:
    id: int
    canonical_name: str
    kind: str = "company"
    aliases: tuple[str, ...] = ()


@dataclass(frozen=True)
class RelationKind:
    id: int
    name: str


class Triple(NamedTuple):
    head: int
    relation: int
    tail: int


class Neighbor(NamedTuple):
    node: int
    relation: int
    outgoing: bool


class Path(NamedTuple):
    """A simple path: visited node ids and the stored triples traversed between them."""

    nodes: tuple[int, ...]
    triples: tuple[Triple, ...]

    def __len__(self):
        return len(self.triples)


@dataclass
class IngestReport:
    entity_count: int
    triple_count: int
    relation_counts: dict[str, int]
    duplicates: int = 0

    def histogram(self) -> str:
        total = sum(self.relation_counts.values()) or 1
        rows = [f"{'relation':<16}{'quantity':>10}{'ratio':>9}"]
        for name, count in self.relation_counts.items():
            rows.append(f"{name:<16}{count:>10,}{100.0 * count / total:>8.2f}%")
        rows.append(f"{'entities':<16}{self.entity_count:>10,}")
        rows.append(f"{'triples':<16}{self.triple_count:>10,}")
        return "\n".join(rows)


class KnowledgeGraph:
    """Immutable after construction; every query is read-only."""

    def __init__(
        self,
        entities,
        triples,
        relations=MAIN_RELATIONS,
        rules=None,
        alias_table: dict | None = None,
        allow_self_relations=False,
    ):
        self.entities: list[EntityRecord] = list(entities)
        for i, e in enumerate(self.entities):
            if e.id != i:
                raise DataError(f"entity ids must be dense 0..N-1; found {e.id} at position {i}")
            if not e.canonical_name:
                raise DataError(f"entity {e.id} has an empty canonical name")
        self.relations = [RelationKind(i, name) for i, name in enumerate(relations)]
        if len({r.name for r in self.relations}) != len(self.relations):
            raise DataError("relation names must be unique")
        self.relation_ids = {r.name: r.id for r in self.relations}
        self.allow_self_relations = allow_self_relations

        alias_map = dict(alias_table or {})
        for e in self.entities:
            for alias in e.aliases:
                alias_map.setdefault(alias, e.canonical_name)
        self.alias_table = alias_map
        self.rules = list(rules) if rules is not None else default_rules()
        if alias_map:
            self.rules = [AliasLookup(alias_map), *self.rules]

        seen = set()
        self.triples: list[Triple] = []
        self.duplicates = 0
        for t in triples:
            t = Triple(*t)
            self._check_triple(t)
            if t in seen:
                self.duplicates += 1
                continue
            seen.add(t)
            self.triples.append(t)
        self._triple_set = seen

        n = len(self.entities)
        self.outgoing: list[list[tuple[int, int]]] = [[] for _ in range(n)]
        self.incoming: list[list[tuple[int, int]]] = [[] for _ in range(n)]
        for h, r, t in self.triples:
            self.outgoing[h].append((t, r))
            self.incoming[t].append((h, r))
        for adj in (*self.outgoing, *self.incoming):
            adj.sort()

        self.name_index: dict[str, int] = {}
        for e in self.entities:
            for raw in (e.canonical_name, *e.aliases):
                key = normalize_name(raw, self.rules)
                owner = self.name_index.setdefault(key, e.id)
                if owner != e.id:
                    log.warning("name %r of entity %d collides with entity %d", raw, e.id, owner)

    def _check_triple(self, t: Triple):
        n = len(self.entities)
        if not (0 <= t.head < n and 0 <= t.tail < n):
            raise DataError(f"triple {tuple(t)} references an unknown entity id")
        if not 0 <= t.relation < len(self.relations):
            raise DataError(f"triple {tuple(t)} references an unknown relation id")
        if t.head == t.tail and not self.allow_self_relations:
            raise DataError(f"self-relation on entity {t.head} is not allowed")

    # -- basic accessors ------------------------------------------------------

    @property
    def num_entities(self) -> int:
        return len(self.entities)

    @property
    def num_relations(self) -> int:
        return len(self.relations)

    def has_triple(self, head: int, relation: int, tail: int) -> bool:
        return Triple(head, relation, tail) in self._triple_set

    def relations_between(self, head: int, tail: int) -> list[int]:
        return sorted(r for t, r in self.outgoing[head] if t == tail)

    def relation_counts(self) -> dict[str, int]:
        counts = Counter(t.relation for t in self.triples)
        return {r.name: counts.get(r.id, 0) for r in self.relations}

    def report(self) -> IngestReport:
        return IngestReport(len(self.entities), len(self.triples), self.relation_counts(), self.duplicates)

    # -- queries --------------------------------------------------------------

    def normalize(self, name: str) -> str:
        return normalize_name(name, self.rules)

    def resolve(self, name: str) -> int | None:
        return self.name_index.get(self.normalize(name))

    def neighbors(self, i: int) -> list[Neighbor]:
        """Outgoing and incoming edges of ``i`` sorted by (neighbour, relation, out before in)."""
        if not 0 <= i < len(self.entities):
            raise DataError(f"unknown entity id {i}")
        out = [Neighbor(t, r, True) for t, r in self.outgoing[i]]
        inc = [Neighbor(h, r, False) for h, r in self.incoming[i]]
        return sorted(out + inc, key=lambda nb: (nb.node, nb.relation, not nb.outgoing))

    def _undirected_steps(self, i: int):
        for nb in self.neighbors(i):
            triple = Triple(i, nb.relation, nb.node) if nb.outgoing else Triple(nb.node, nb.relation, i)
            yield nb.node, triple

    def _distances_to(self, target: int, limit: int) -> dict[int, int]:
        dist = {target: 0}
        queue = deque([target])
        while queue:
            node = queue.popleft()
            if dist[node] >= limit:
                continue
            for nxt, _ in self._undirected_steps(node):
                if nxt not in dist:
                    dist[nxt] = dist[node] + 1
                    queue.append(nxt)
        return dist

    def k_shortest_paths(self, a: int, b: int, k: int = 3, max_len: int = 4) -> list[Path]:
        """Up to ``k`` simple paths between ``a`` and ``b`` on the undirected view.

        Paths are produced length layer by length layer; within a layer they
        are ordered by node-id sequence and then by the traversed triples.
        """
        for node in (a, b):
            if not 0 <= node < len(self.entities):
                raise DataError(f"unknown entity id {node}")
        if k < 1 or max_len < 1:
            raise ValueError("k and max_len must be at least 1")
        if a == b:
            return []
        dist = self._distances_to(b, max_len)
        if a not in dist:
            return []
        found: list[Path] = []
        for length in range(dist[a], max_len + 1):
            layer: list[Path] = []
            self._paths_of_length(a, b, length, dist, [a], [], {a}, layer)
            layer.sort(key=lambda p: (p.nodes, p.triples))
            found.extend(layer)
            if len(found) >= k:
                break
        return found[:k]

    def _paths_of_length(self, node, target, remaining, dist, nodes, triples, visited, out):
        if remaining == 0:
            if node == target:
                out.append(Path(tuple(nodes), tuple(triples)))
            return
        for nxt, triple in self._undirected_steps(node):
            if nxt in visited or dist.get(nxt, remaining + 1) > remaining - 1:
                continue
            if nxt == target and remaining != 1:
                continue
            visited.add(nxt)
            nodes.append(nxt)
            triples.append(triple)
            self._paths_of_length(nxt, target, remaining - 1, dist, nodes, triples, visited, out)
            triples.pop()
            nodes.pop()
            visited.discard(nxt)

    # -- persistence ----------------------------------------------------------

    def export(self, entity_path, triple_path):
        write_entities(entity_path, self.entities)
        with open(triple_path, "w", encoding="utf-8") as fh:
            for h, r, t in self.triples:
                fh.write(f"{h}\t{self.relations[r].name}\t{t}\n")

    def to_json(self) -> str:
        """Deterministic serialisation used as the build cache."""
        payload = {
            "relations": [r.name for r in self.relations],
            "entities": [[e.id, e.canonical_name, e.kind, list(e.aliases)] for e in self.entities],
            "triples": [list(t) for t in self.triples],
            "aliases": self.alias_table,
            "allow_self_relations": self.allow_self_relations,
        }
        return json.dumps(payload, ensure_ascii=False, sort_keys=True, separators=(",", ":"))

    @classmethod
    def from_json(cls, text: str, rules=None) -> "KnowledgeGraph":
        payload = json.loads(text)
        entities = [EntityRecord(i, name, kind, tuple(al)) for i, name, kind, al in payload["entities"]]
        return cls(
            entities,
            [Triple(*t) for t in payload["triples"]],
            relations=payload["relations"],
            rules=rules,
            alias_table=payload.get("aliases"),
            allow_self_relations=payload.get("allow_self_relations", False),
        )


def resolve(name: str, graph: KnowledgeGraph) -> int | None:
    return graph.resolve(name)


# -- TSV formats ---------------------------------------------------------------


def read_entities(path) -> list[EntityRecord]:
    """``id<TAB>canonical_name<TAB>kind<TAB>alias1|alias2|...``; the alias column may be empty."""
    entities = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.rstrip("\n")
            if not line.strip():
                continue
            parts = line.split("\t")
            if len(parts) == 3:
                parts.append("")
            if len(parts) != 4:
                raise IngestError("expected 4 tab-separated fields", path, lineno)
            raw_id, name, kind, aliases = parts
            try:
                eid = int(raw_id)
            except ValueError:
                raise IngestError(f"entity id {raw_id!r} is not an integer", path, lineno) from None
            if eid != len(entities):
                raise IngestError(f"entity ids must be dense and ordered; expected {len(entities)}", path, lineno)
            if not name:
                raise IngestError("empty canonical name", path, lineno)
            if kind not in ENTITY_KINDS:
                raise IngestError(f"unknown entity kind {kind!r}", path, lineno)
            entities.append(EntityRecord(eid, name, kind, tuple(a for a in aliases.split("|") if a)))
    return entities


def write_entities(path, entities):
    with open(path, "w", encoding="utf-8") as fh:
        for e in entities:
            fh.write(f"{e.id}\t{e.canonical_name}\t{e.kind}\t{'|'.join(e.aliases)}\n")


def read_triples(path, n_entities: int, relation_ids: dict[str, int], register_unknown=True):
    """``head_id<TAB>relation_name<TAB>tail_id``.  Unknown relation names are
    appended to ``relation_ids`` in order of first appearance."""
    triples = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.rstrip("\n")
            if not line.strip():
                continue
            parts = line.split("\t")
            if len(parts) != 3:
                raise IngestError("expected head<TAB>relation<TAB>tail", path, lineno)
            try:
                head, tail = int(parts[0]), int(parts[2])
            except ValueError:
                raise IngestError("entity ids must be integers", path, lineno) from None
            for eid in (head, tail):
                if not 0 <= eid < n_entities:
                    raise IngestError(f"dangling entity id {eid}", path, lineno)
            rel = parts[1]
            if rel not in relation_ids:
                if not register_unknown:
                    raise IngestError(f"unknown relation {rel!r}", path, lineno)
                relation_ids[rel] = len(relation_ids)
            triples.append((lineno, Triple(head, relation_ids[rel], tail)))
    return triples


def ingest(
    entity_file,
    triple_file,
    relations=MAIN_RELATIONS,
    alias_file=None,
    rules=None,
    allow_self_relations=False,
) -> KnowledgeGraph:
    from .names import read_alias_table

    entities = read_entities(entity_file)
    relation_ids = {name: i for i, name in enumerate(relations)}
    numbered = read_triples(triple_file, len(entities), relation_ids)
    seen = set()
    triples = []
    for lineno, t in numbered:
        if t.head == t.tail and not allow_self_relations:
            raise IngestError(f"self-relation on entity {t.head}", triple_file, lineno)
        if t in seen:
            log.warning("%s:%d: duplicate triple %s dropped", triple_file, lineno, tuple(t))
            continue
        seen.add(t)
        triples.append(t)
    alias_table = read_alias_table(alias_file) if alias_file else None
    graph = KnowledgeGraph(
        entities,
        triples,
        relations=list(relation_ids),
        rules=rules,
        alias_table=alias_table,
        allow_self_relations=allow_self_relations,
    )
    graph.duplicates = len(numbered) - len(triples)
    return graph
