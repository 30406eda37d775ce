"""Flat ``key = value`` scenario files.

Full-line comments start with ``#`` or ``;``, trailing comments with ``#``.
Keys mirror :class:`SimConfig` fields (``lambda`` for the block rate). A
delay matrix is written row by row, rows separated by ``;`` and entries by
``,``::

    num_nodes = 3
    delay_model = matrix
    d = 2
    delay_matrix = 0,1,2; 1,0,1; 2,1,0
"""

from __future__ import annotations

import configparser
from pathlib import Path
from typing import Any

from .adversary import AttackPlan
from .errors import ConfigInvalid
from .simnet import SimConfig

_SECTION = "scenario"


class ConfigParseError(ConfigInvalid):
    """The file itself is malformed (as opposed to holding invalid values)."""


def read_pairs(text: str, source: str = "<config>") -> dict[str, str]:
    parser = configparser.ConfigParser(interpolation=None, inline_comment_prefixes=("#",), delimiters=("=",))
    parser.optionxform = str  # keep key case
    try:
        parser.read_string(f"[{_SECTION}]\n{text}", source=source)
    except configparser.ParsingError as exc:
        # line numbers shift by one for the injected section header
        where = ", ".join(f"line {n - 1}: {text}" for n, text in exc.errors)
        raise ConfigParseError(f"{source}: cannot parse {where}") from None
    except configparser.DuplicateOptionError as exc:
        raise ConfigParseError(f"{source}: line {exc.lineno - 1}: duplicate key {exc.option!r}") from None
    except configparser.Error as exc:
        raise ConfigParseError(f"{source}: {exc}") from None
    if parser.sections() != [_SECTION]:
        raise ConfigParseError(f"{source}: section headers are not allowed")
    return dict(parser[_SECTION])


def _convert(name: str, raw: str, kind: Any) -> Any:
    try:
        if name == "delay_matrix":
            rows = [r for r in raw.split(";") if r.strip()]
            return tuple(tuple(float(x) for x in r.split(",")) for r in rows)
        if name in ("target",):
            return None if raw.strip().lower() in ("", "none", "first_honest") else int(raw)
        if kind is int or kind == "int":
            return int(raw)
        if kind is float or kind == "float":
            return float(raw)
        return raw.strip()
    except ValueError:
        raise ConfigInvalid(f"{name}: cannot parse {raw!r}") from None


_SIM_TYPES = {
    "num_nodes": int,
    "lambda_": float,
    "attacker_q": float,
    "delay_model": str,
    "d": float,
    "delay_matrix": tuple,
    "block_size_txs": int,
    "duration": float,
    "seed": int,
    "rule": str,
    "stale_window": int,
    "stale_future": float,
    "confirm_q": float,
    "confirm_tolerance": float,
    "confirm_interval": float,
    "observer": int,
}

_PLAN_TYPES = {
    "strategy": str,
    "target": int,
    "withhold_horizon": float,
    "release_trigger": str,
}


def parse_sim_config(text: str, source: str = "<config>") -> SimConfig:
    values: dict[str, Any] = {}
    for key, raw in read_pairs(text, source).items():
        name = "lambda_" if key == "lambda" else key
        if name not in _SIM_TYPES or key == "lambda_":
            raise ConfigInvalid(f"{source}: unknown key {key!r}")
        values[name] = _convert(key, raw, _SIM_TYPES[name])
    return SimConfig(**values).validate()


def parse_attack_plan(text: str, source: str = "<plan>") -> AttackPlan:
    values: dict[str, Any] = {}
    for key, raw in read_pairs(text, source).items():
        if key not in _PLAN_TYPES:
            raise ConfigInvalid(f"{source}: unknown key {key!r}")
        values[key] = _convert(key, raw, _PLAN_TYPES[key])
    return AttackPlan(**values)


def load_sim_config(path: str | Path) -> SimConfig:
    return parse_sim_config(Path(path).read_text(encoding="utf-8"), str(path))


def load_attack_plan(path: str | Path) -> AttackPlan:
    return parse_attack_plan(Path(path).read_text(encoding="utf-8"), str(path))


def format_sim_config(config: SimConfig) -> str:
    lines = []
    for key, value in config.to_dict().items():
        if value is None:
            continue
        if key == "delay_matrix":
            value = "; ".join(",".join(repr(float(x)) for x in row) for row in value)
        lines.append(f"{key} = {value}")
    return "\n".join(lines) + "\n"
