"""Event schemas and the schema file format.

Schema file grammar (UTF-8, one event type per line)::

    line     := type-code ":" role ("," role)*
    role     := name ["*"]            # "*" marks a key role
    comments := lines starting with "#"; blank lines are ignored

Whitespace around names is ignored.  Example::

    EP: Pledger*, PledgedShares*, Pledgee*, TotalHoldingShares, TotalHoldingRatio, TotalPledgedShares, Date
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

from .errors import DataError


@dataclass(frozen=True)
class EventSchema:
    event_type: str
    roles: tuple[str, ...]
    key_roles: frozenset

    def __post_init__(self):
        if len(set(self.roles)) != len(self.roles):
            raise DataError(f"{self.event_type}: duplicate role names")
        if not self.key_roles:
            raise DataError(f"{self.event_type}: at least one key role is required")
        unknown = set(self.key_roles) - set(self.roles)
        if unknown:
            raise DataError(f"{self.event_type}: key roles {sorted(unknown)} not in role list")

    @property
    def non_key_roles(self) -> tuple[str, ...]:
        return tuple(r for r in self.roles if r not in self.key_roles)

    def is_key(self, role: str) -> bool:
        return role in self.key_roles

    def to_line(self) -> str:
        return f"{self.event_type}: " + ", ".join(r + ("*" if r in self.key_roles else "") for r in self.roles)


def _schema(code, roles, keys=None):
    return EventSchema(code, tuple(roles), frozenset(keys if keys is not None else roles[:2]))


# Key roles: the three pledge roles for EP, the first two roles elsewhere.
DEFAULT_SCHEMAS = (
    _schema("EF", ["EquityHolder", "FrozeShares", "LegalInstitution", "TotalHoldingShares",
                   "TotalHoldingRatio", "Date", "UnfrozeDate"]),
    _schema("ER", ["CompanyName", "HighestTradingPrice", "LowestTradingPrice", "RepurchasedShares",
                   "ClosingDate", "RepurchaseAmount"]),
    _schema("EO", ["EquityHolder", "TradingShares", "Date", "LaterHoldingShares", "AveragePrice"]),
    _schema("EU", ["EquityHolder", "TradingShares", "Date", "LaterHoldingShares", "AveragePrice"]),
    _schema("EP", ["Pledger", "PledgedShares", "Pledgee", "TotalHoldingShares", "TotalHoldingRatio",
                   "TotalPledgedShares", "Date"], keys=["Pledger", "PledgedShares", "Pledgee"]),
    _schema("LA", ["Plaintiff", "Defendant", "LegalInstitution", "Date"]),
)


def schema_map(schemas=DEFAULT_SCHEMAS) -> dict[str, EventSchema]:
    return {s.event_type: s for s in schemas}


def parse_schemas(text: str, source="<schema>") -> list[EventSchema]:
    schemas = []
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        code, sep, rest = line.partition(":")
        code = code.strip()
        if not sep or not code or not rest.strip():
            raise DataError(f"{source}:{lineno}: expected 'TYPE: role, role*, ...'")
        roles, keys = [], []
        for token in rest.split(","):
            token = token.strip()
            if not token:
                raise DataError(f"{source}:{lineno}: empty role name")
            if token.endswith("*"):
                token = token[:-1].strip()
                keys.append(token)
            roles.append(token)
        try:
            schemas.append(EventSchema(code, tuple(roles), frozenset(keys)))
        except DataError as exc:
            raise DataError(f"{source}:{lineno}: {exc}") from None
    if len({s.event_type for s in schemas}) != len(schemas):
        raise DataError(f"{source}: duplicate event type")
    return schemas


def read_schemas(path) -> list[EventSchema]:
    return parse_schemas(Path(path).read_text(encoding="utf-8"), str(path))


def format_schemas(schemas) -> str:
    return "".join(s.to_line() + "\n" for s in schemas)


def write_schemas(path, schemas):
    Path(path).write_text(format_schemas(schemas), encoding="utf-8")
