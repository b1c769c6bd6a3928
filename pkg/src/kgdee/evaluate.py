"""Role-level micro precision/recall/F1 with max-overlap event pairing.

Conventions: a wrong non-null prediction counts once as FP and once as FN;
null-vs-null roles count nothing; precision with no predictions is 0.
"""

from __future__ import annotations

import itertools
import json
from dataclasses import dataclass, field

from .docs import Document, EventRecord


@dataclass
class Counts:
    tp: int = 0
    fp: int = 0
    fn: int = 0

    def __iadd__(self, other: "Counts"):
        self.tp += other.tp
        self.fp += other.fp
        self.fn += other.fn
        return self

    @property
    def precision(self) -> float:
        return self.tp / (self.tp + self.fp) if self.tp + self.fp else 0.0

    @property
    def recall(self) -> float:
        return self.tp / (self.tp + self.fn) if self.tp + self.fn else 0.0

    @property
    def f1(self) -> float:
        p, r = self.precision, self.recall
        return 2 * p * r / (p + r) if p + r > 0 else 0.0

    def to_dict(self):
        return {"tp": self.tp, "fp": self.fp, "fn": self.fn,
                "precision": self.precision, "recall": self.recall, "f1": self.f1}


def _texts(record: EventRecord) -> dict:
    return record.texts() if isinstance(record, EventRecord) else dict(record)


def overlap(pred, gold) -> int:
    """Number of roles whose non-null argument strings agree."""
    p, g = _texts(pred), _texts(gold)
    return sum(1 for role, text in p.items() if text is not None and g.get(role) == text)


def match_events(predicted, gold) -> list[tuple[int, int]]:
    """Greedy max-overlap pairing; ties go to the smallest (pred, gold) index pair."""
    candidates = sorted(
        ((-overlap(p, g), i, j) for i, p in enumerate(predicted) for j, g in enumerate(gold)),
    )
    used_p, used_g, pairs = set(), set(), []
    for _neg, i, j in candidates:
        if i in used_p or j in used_g:
            continue
        pairs.append((i, j))
        used_p.add(i)
        used_g.add(j)
    return sorted(pairs)


def exhaustive_match(predicted, gold) -> tuple[int, list[tuple[int, int]]]:
    """Best total overlap over all maximal one-to-one pairings (brute force)."""
    n, m = len(predicted), len(gold)
    if n == 0 or m == 0:
        return 0, []
    ov = [[overlap(p, g) for g in gold] for p in predicted]
    best = (-1, [])
    if n <= m:
        for perm in itertools.permutations(range(m), n):
            score = sum(ov[i][perm[i]] for i in range(n))
            if score > best[0]:
                best = (score, [(i, perm[i]) for i in range(n)])
    else:
        for perm in itertools.permutations(range(n), m):
            score = sum(ov[perm[j]][j] for j in range(m))
            if score > best[0]:
                best = (score, sorted((perm[j], j) for j in range(m)))
    return best


def role_counts(predicted, gold, pairs) -> Counts:
    c = Counts()
    paired_p = {i for i, _ in pairs}
    paired_g = {j for _, j in pairs}
    for i, j in pairs:
        p, g = _texts(predicted[i]), _texts(gold[j])
        for role in set(p) | set(g):
            pt, gt = p.get(role), g.get(role)
            if pt is not None and pt == gt:
                c.tp += 1
                continue
            if pt is not None:
                c.fp += 1
            if gt is not None:
                c.fn += 1
    for i, rec in enumerate(predicted):
        if i not in paired_p:
            c.fp += sum(t is not None for t in _texts(rec).values())
    for j, rec in enumerate(gold):
        if j not in paired_g:
            c.fn += sum(t is not None for t in _texts(rec).values())
    return c


@dataclass
class MatchReport:
    per_type: dict[str, Counts] = field(default_factory=dict)
    documents: int = 0

    @property
    def total(self) -> Counts:
        t = Counts()
        for c in self.per_type.values():
            t += c
        return t

    def add(self, event_type: str, counts: Counts):
        self.per_type.setdefault(event_type, Counts())
        self.per_type[event_type] += counts

    def to_dict(self):
        return {
            "documents": self.documents,
            "per_type": {t: self.per_type[t].to_dict() for t in sorted(self.per_type)},
            "total": self.total.to_dict(),
        }


def role_prf(predicted, gold, types=None) -> MatchReport:
    """Score one document's predicted records against its gold records."""
    report = MatchReport(documents=1)
    types = types or sorted({r.event_type for r in list(predicted) + list(gold)})
    for t in types:
        p = [r for r in predicted if r.event_type == t]
        g = [r for r in gold if r.event_type == t]
        report.add(t, role_counts(p, g, match_events(p, g)))
    return report


def _merge(into: MatchReport, other: MatchReport):
    for t, c in other.per_type.items():
        into.add(t, c)
    into.documents += other.documents


@dataclass
class CorpusReport:
    total: MatchReport
    single: MatchReport | None
    multi: MatchReport | None

    def to_dict(self):
        return {
            "total": self.total.to_dict(),
            "single": self.single.to_dict() if self.single else None,
            "multi": self.multi.to_dict() if self.multi else None,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n"

    def to_text(self) -> str:
        types = sorted(self.total.per_type)
        lines = []
        for title, rep in (("all", self.total), ("single-event", self.single), ("multi-event", self.multi)):
            lines.append(f"[{title}]")
            if rep is None:
                lines.append("  N/A")
                continue
            lines.append(f"  {'type':<6} {'P':>7} {'R':>7} {'F1':>7} {'TP':>6} {'FP':>6} {'FN':>6}")
            rows = [(t, rep.per_type.get(t, Counts())) for t in types] + [("total", rep.total)]
            for name, c in rows:
                lines.append(
                    f"  {name:<6} {c.precision:7.4f} {c.recall:7.4f} {c.f1:7.4f} {c.tp:6d} {c.fp:6d} {c.fn:6d}"
                )
        return "\n".join(lines) + "\n"


def split_report(results) -> CorpusReport:
    """``results``: iterable of ``(gold_event_count, MatchReport)`` per document."""
    total, single, multi = MatchReport(), MatchReport(), MatchReport()
    for count, rep in results:
        _merge(total, rep)
        _merge(single if count <= 1 else multi, rep)
    return CorpusReport(total, single if single.documents else None, multi if multi.documents else None)


def evaluate_documents(predicted: list[Document], gold: list[Document]) -> CorpusReport:
    """Pair documents by ``doc_id``; a missing prediction counts as no events."""
    pred_by_id = {d.doc_id: d for d in predicted}
    results = []
    for g in gold:
        p = pred_by_id.get(g.doc_id)
        p_events = (p.events or []) if p is not None else []
        results.append((g.event_count, role_prf(p_events, g.events or [])))
    return split_report(results)
