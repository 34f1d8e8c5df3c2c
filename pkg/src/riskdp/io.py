"""JSON documents for MDPs and reports."""
from __future__ import annotations

import json
import math
from importlib import resources
from pathlib import Path
from typing import Any, List, Union

import numpy as np

from .mdpmodel import Mdp, Violation, validate

TOP_KEYS = {"states", "actions", "available", "transitions", "rewards", "initial", "horizon"}
REQUIRED = ("states", "actions", "transitions", "rewards", "initial")


class ParseError(ValueError):
    pass


class ValidationError(ValueError):
    def __init__(self, violations: List[Violation]):
        super().__init__("invalid MDP: " + "; ".join(str(v) for v in violations))
        self.violations = violations


def _no_duplicate_keys(pairs):
    out = {}
    for k, v in pairs:
        if k in out:
            raise ParseError(f"duplicate key {k!r}")
        out[k] = v
    return out


def _number(value, where: str) -> float:
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        raise ParseError(f"{where}: expected a number, got {value!r}")
    return float(value)


def _names(doc, key) -> List[str]:
    vals = doc[key]
    if not isinstance(vals, list) or not vals or not all(isinstance(v, str) for v in vals):
        raise ParseError(f"{key}: expected a non-empty array of strings")
    if len(set(vals)) != len(vals):
        raise ParseError(f"{key}: duplicate ids")
    return sorted(vals)


def parse_mdp(text: str, check: bool = True) -> Mdp:
    """Parse an MDP document; ids are mapped to indices in lexicographic order."""
    try:
        doc = json.loads(text, object_pairs_hook=_no_duplicate_keys)
    except json.JSONDecodeError as e:
        raise ParseError(f"line {e.lineno}, column {e.colno}: {e.msg}") from None
    if not isinstance(doc, dict):
        raise ParseError("top level must be an object")
    unknown = set(doc) - TOP_KEYS
    if unknown:
        raise ParseError(f"unknown keys {sorted(unknown)}")
    for key in REQUIRED:
        if key not in doc:
            raise ParseError(f"missing key {key!r}")
    states = _names(doc, "states")
    actions = _names(doc, "actions")
    si = {s: i for i, s in enumerate(states)}
    ai = {a: i for i, a in enumerate(actions)}
    S, A = len(states), len(actions)

    def lookup(table, name, where):
        if name not in table:
            raise ParseError(f"{where}: unknown id {name!r}")
        return table[name]

    avail = np.zeros((S, A), dtype=bool)
    if "available" in doc:
        if not isinstance(doc["available"], dict):
            raise ParseError("available: expected an object")
        for s, acts in doc["available"].items():
            i = lookup(si, s, "available")
            if not isinstance(acts, list):
                raise ParseError(f"available.{s}: expected an array")
            for a in acts:
                avail[i, lookup(ai, a, f"available.{s}")] = True
    else:
        avail[:] = True

    def entries(key, field):
        rows = doc[key]
        if not isinstance(rows, list):
            raise ParseError(f"{key}: expected an array")
        seen = set()
        for n, e in enumerate(rows):
            where = f"{key}[{n}]"
            if not isinstance(e, dict) or set(e) != {"s", "a", "sp", field}:
                raise ParseError(f"{where}: expected keys s, a, sp, {field}")
            idx = (lookup(si, e["s"], where + ".s"), lookup(ai, e["a"], where + ".a"),
                   lookup(si, e["sp"], where + ".sp"))
            if idx in seen:
                raise ParseError(f"{where}: duplicate entry ({e['s']}, {e['a']}, {e['sp']})")
            seen.add(idx)
            yield idx, _number(e[field], f"{where}.{field}")

    P = np.zeros((S, A, S))
    for idx, p in entries("transitions", "p"):
        P[idx] = p
    R = np.full((S, A, S), np.nan)
    for idx, r in entries("rewards", "r"):
        R[idx] = r

    if not isinstance(doc["initial"], dict):
        raise ParseError("initial: expected an object")
    p0 = np.zeros(S)
    for s, p in doc["initial"].items():
        p0[lookup(si, s, "initial")] = _number(p, f"initial.{s}")
    horizon = doc.get("horizon", 1)
    if isinstance(horizon, bool) or not isinstance(horizon, int):
        raise ParseError("horizon: expected an integer")

    m = Mdp(tuple(states), tuple(actions), P, R, p0, avail, horizon)
    if check:
        problems = validate(m)
        if problems:
            raise ValidationError(problems)
    return m


def mdp_to_dict(m: Mdp) -> dict:
    S, A = m.n_states, m.n_actions
    trans, rew = [], []
    for s in range(S):
        for a in range(A):
            for sp in range(S):
                ids = {"s": m.states[s], "a": m.actions[a], "sp": m.states[sp]}
                if m.P[s, a, sp] != 0:
                    trans.append({**ids, "p": float(m.P[s, a, sp])})
                if not np.isnan(m.R[s, a, sp]):
                    rew.append({**ids, "r": float(m.R[s, a, sp])})
    return {
        "states": list(m.states),
        "actions": list(m.actions),
        "available": {m.states[s]: [m.actions[a] for a in m.actions_at(s)] for s in range(S)},
        "transitions": trans,
        "rewards": rew,
        "initial": {m.states[s]: float(m.initial[s]) for s in range(S)},
        "horizon": m.horizon,
    }


def dump_mdp(m: Mdp) -> str:
    return dumps(mdp_to_dict(m))


def load_mdp(path: Union[str, Path]) -> Mdp:
    return parse_mdp(Path(path).read_text(encoding="utf-8"))


def bundled(name: str) -> Path:
    """Path of a bundled MDP document such as ``mc.json``."""
    return Path(str(resources.files("riskdp") / "data" / name))


def resolve_mdp_path(name: str) -> Path:
    p = Path(name)
    if p.exists():
        return p
    b = bundled(p.name if p.suffix else p.name + ".json")
    if b.exists():
        return b
    raise FileNotFoundError(name)


# --------------------------------------------------------------- writing

def _num(x: float) -> str:
    if math.isnan(x):
        return "null"
    if math.isinf(x):
        return '"inf"' if x > 0 else '"-inf"'
    if x == int(x) and abs(x) < 1e16:
        return f"{x:.1f}"
    return format(x, ".17g")


def _scalar(v) -> bool:
    return v is None or isinstance(v, (str, bool, int, float, np.integer, np.floating, np.bool_))


def _encode(obj: Any, indent: int, level: int) -> str:
    pad = " " * (indent * (level + 1))
    end = " " * (indent * level)
    if isinstance(obj, dict):
        if not obj:
            return "{}"
        if len(obj) <= 6 and all(_scalar(v) for v in obj.values()):
            return "{" + ", ".join(f"{json.dumps(str(k))}: {_encode(v, indent, level + 1)}"
                                   for k, v in obj.items()) + "}"
        items = [f"{pad}{json.dumps(str(k))}: {_encode(v, indent, level + 1)}" for k, v in obj.items()]
        return "{\n" + ",\n".join(items) + "\n" + end + "}"
    if isinstance(obj, (list, tuple)):
        if not obj:
            return "[]"
        if all(_scalar(v) for v in obj):
            return "[" + ", ".join(_encode(v, indent, level + 1) for v in obj) + "]"
        items = [pad + _encode(v, indent, level + 1) for v in obj]
        return "[\n" + ",\n".join(items) + "\n" + end + "]"
    if isinstance(obj, np.ndarray):
        return _encode(obj.tolist(), indent, level)
    if isinstance(obj, (bool, np.bool_)):
        return "true" if obj else "false"
    if isinstance(obj, (int, np.integer)):
        return str(int(obj))
    if isinstance(obj, (float, np.floating)):
        return _num(float(obj))
    if obj is None:
        return "null"
    if isinstance(obj, str):
        return json.dumps(obj)
    raise TypeError(f"cannot encode {type(obj).__name__}")


def dumps(obj: Any, indent: int = 2) -> str:
    """JSON text with floats at 17 significant digits and infinities as strings."""
    return _encode(obj, indent, 0) + "\n"
