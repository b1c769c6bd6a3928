"""Rule-based entity name normalisation used for disambiguation.

A rule list is applied repeatedly until the name stops changing, which makes
:func:`normalize_name` idempotent regardless of how the rules interact.
"""

from __future__ import annotations

import re
from dataclasses import dataclass, field
from pathlib import Path

from .errors import IngestError

_WS = re.compile(r"\s+")


@dataclass(frozen=True)
class WhitespaceFold:
    def apply(self, name: str) -> str:
        return _WS.sub(" ", name).strip()


@dataclass(frozen=True)
class StripPrefixes:
    prefixes: tuple[str, ...]

    def apply(self, name: str) -> str:
        for prefix in sorted(self.prefixes, key=lambda s: (-len(s), s)):
            if name.startswith(prefix) and len(name) > len(prefix):
                return name[len(prefix):]
        return name


@dataclass(frozen=True)
class StripSuffixes:
    suffixes: tuple[str, ...]

    def apply(self, name: str) -> str:
        for suffix in sorted(self.suffixes, key=lambda s: (-len(s), s)):
            if name.endswith(suffix) and len(name) > len(suffix):
                return name[: -len(suffix)]
        return name


@dataclass(frozen=True)
class AliasLookup:
    table: dict = field(default_factory=dict, hash=False)

    def apply(self, name: str) -> str:
        return self.table.get(name, name)


LOCATIONS = (
    "Shanghai", "Beijing", "Shenzhen", "Guangzhou", "Hangzhou", "Nanjing",
    "上海市", "上海", "北京市", "北京", "深圳市", "深圳", "广州市", "广州",
    "杭州市", "杭州", "南京市", "南京", "天津市", "天津", "重庆市", "重庆",
)

COMPANY_SUFFIXES = (
    "Co., Ltd.", "Co.,Ltd.", "Co. Ltd.", "Company Limited", "Ltd.", "Inc.", "Corp.",
    "股份有限公司", "有限责任公司", "有限公司", "集团公司", "公司",
    "中级人民法院", "高级人民法院", "人民法院", "法院",
)


def default_rules(aliases: dict | None = None) -> list:
    rules = [WhitespaceFold()]
    if aliases:
        rules.append(AliasLookup(dict(aliases)))
    rules += [StripPrefixes(LOCATIONS), WhitespaceFold(), StripSuffixes(COMPANY_SUFFIXES), WhitespaceFold()]
    return rules


def normalize_name(raw: str, rules) -> str:
    """Apply ``rules`` in order, repeatedly, until a fixed point.

    Should the rules cycle (e.g. an alias mapping back to a longer form that a
    suffix rule strips), the lexicographically smallest member of the cycle is
    returned, which is itself a fixed point of this function.
    """
    seen = []
    name = raw
    while name not in seen:
        seen.append(name)
        nxt = name
        for rule in rules:
            nxt = rule.apply(nxt)
        if nxt == name:
            return name
        name = nxt
    cycle = seen[seen.index(name):]
    return min(cycle)


def read_alias_table(path) -> dict[str, str]:
    """``alias<TAB>canonical_name`` per line."""
    table = {}
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.rstrip("\n")
            if not line.strip() or line.startswith("#"):
                continue
            parts = line.split("\t")
            if len(parts) != 2 or not parts[0] or not parts[1]:
                raise IngestError("expected alias<TAB>canonical_name", path, lineno)
            table[parts[0]] = parts[1]
    return table


def write_alias_table(path, table: dict[str, str]):
    Path(path).write_text("".join(f"{a}\t{c}\n" for a, c in table.items()), encoding="utf-8")
