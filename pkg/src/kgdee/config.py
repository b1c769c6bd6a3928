"""Pipeline configuration: one JSON file with per-section defaults and ``--set`` overrides.

Example::

    {"embed": {"F": 16, "epochs": 200},
     "decode": {"fusion": "linear_maxpool"},
     "ds": {"theta": 0.75, "templates": "templates.txt"}}

Unknown sections or keys are rejected so typos fail loudly.
"""

from __future__ import annotations

import copy
import json
from pathlib import Path

from .errors import DataError

DEFAULTS = {
    "kg": {"entities": None, "triples": None, "aliases": None, "cache": None, "k": 3, "max_len": 4,
           "allow_self_relations": False},
    "embed": {"F": 16, "lam": 2.0, "lr": 0.2, "epochs": 200, "seed": 0, "negatives": 1, "init_scale": 0.1},
    "ner": {"strategy": "gold", "D": 65536, "epochs": 300, "lr": 0.05, "seed": 0, "gazetteer": None},
    "encode": {"d_w": 32, "N_s": 64, "N_w": 128, "depth": 1, "token_depth": 1, "seed": 0},
    "decode": {"type_threshold": 0.5, "select_threshold": 0.5, "branch_cap": 64, "fusion": "attention_maxpool",
               "epochs": 500, "lr": 0.003, "lr_decay": True, "clip": 1.0, "expand_depth": 2, "seed": 0,
               "schemas": None, "key_roles": {}},
    "ds": {"theta": 0.5, "templates": None},
    "eval": {"report": None, "text": None},
}

# keys naming input files that must exist when set
INPUT_FILES = {("kg", "entities"), ("kg", "triples"), ("kg", "aliases"), ("ner", "gazetteer"),
               ("decode", "schemas"), ("ds", "templates")}

_POSITIVE_INT = {("kg", "k"), ("kg", "max_len"), ("embed", "F"), ("embed", "negatives"), ("ner", "D"),
                 ("encode", "d_w"), ("encode", "N_s"), ("encode", "N_w"), ("encode", "depth"),
                 ("decode", "branch_cap"), ("decode", "expand_depth")}
_NON_NEGATIVE_INT = {("embed", "epochs"), ("ner", "epochs"), ("decode", "epochs"), ("encode", "token_depth")}
_PROBABILITY = {("decode", "type_threshold"), ("decode", "select_threshold")}


def _merge(base: dict, update: dict, where: str):
    for key, value in update.items():
        if key not in base:
            raise DataError(f"unknown configuration key {where}{key}")
        if isinstance(base[key], dict) and isinstance(value, dict) and key != "key_roles":
            _merge(base[key], value, f"{where}{key}.")
        else:
            base[key] = value


def parse_override(text: str) -> tuple[list[str], object]:
    """``section.key=value``; the value is parsed as JSON when possible."""
    path, sep, raw = text.partition("=")
    if not sep or "." not in path:
        raise DataError(f"override {text!r} is not of the form section.key=value")
    try:
        value = json.loads(raw)
    except json.JSONDecodeError:
        value = raw
    return path.split("."), value


def validate(cfg: dict, check_files=True):
    for section, key in _POSITIVE_INT:
        v = cfg[section][key]
        if not isinstance(v, int) or isinstance(v, bool) or v < 1:
            raise DataError(f"{section}.{key} must be a positive integer, got {v!r}")
    for section, key in _NON_NEGATIVE_INT:
        v = cfg[section][key]
        if not isinstance(v, int) or isinstance(v, bool) or v < 0:
            raise DataError(f"{section}.{key} must be a non-negative integer, got {v!r}")
    for section, key in _PROBABILITY:
        if not 0.0 < cfg[section][key] < 1.0:
            raise DataError(f"{section}.{key} must lie in (0, 1)")
    if not 0.0 < cfg["ds"]["theta"] <= 1.0:
        raise DataError("ds.theta must lie in (0, 1]")
    if cfg["embed"]["lam"] < 0:
        raise DataError("embed.lam must be non-negative")
    for section, key in (("embed", "lr"), ("ner", "lr"), ("decode", "lr")):
        if not cfg[section][key] > 0:
            raise DataError(f"{section}.{key} must be positive")
    if cfg["ner"]["strategy"] not in ("crf", "gazetteer", "gold"):
        raise DataError("ner.strategy must be one of crf, gazetteer, gold")
    if cfg["decode"]["fusion"] not in ("attention_maxpool", "linear_maxpool"):
        raise DataError("decode.fusion must be attention_maxpool or linear_maxpool")
    if check_files:
        for section, key in sorted(INPUT_FILES):
            path = cfg[section][key]
            if path is not None and not Path(path).is_file():
                raise DataError(f"{section}.{key}: file {path} does not exist")


def load_config(path=None, overrides=(), check_files=True) -> dict:
    cfg = copy.deepcopy(DEFAULTS)
    if path is not None:
        try:
            data = json.loads(Path(path).read_text(encoding="utf-8"))
        except FileNotFoundError:
            raise DataError(f"config file {path} does not exist") from None
        except json.JSONDecodeError as exc:
            raise DataError(f"{path}:{exc.lineno}: invalid JSON ({exc.msg})") from None
        if not isinstance(data, dict):
            raise DataError(f"{path}: top level must be an object")
        _merge(cfg, data, "")
    for text in overrides:
        keys, value = parse_override(text)
        nested = {}
        cur = nested
        for k in keys[:-1]:
            cur = cur.setdefault(k, {})
        cur[keys[-1]] = value
        _merge(cfg, nested, "")
    validate(cfg, check_files)
    return cfg
