"""Structured pass/warn/fail results and their deterministic JSON encoding."""
from __future__ import annotations

import enum
import json
import math
from dataclasses import dataclass, field

import numpy as np


class Status(str, enum.Enum):
    PASS = "PASS"
    WARN = "WARN"
    FAIL = "FAIL"


@dataclass
class VerificationReport:
    check: str
    status: Status
    tolerances: dict = field(default_factory=dict)
    counterexamples: list = field(default_factory=list)
    statistics: dict = field(default_factory=dict)
    notes: list = field(default_factory=list)

    @property
    def passed(self) -> bool:
        return self.status is Status.PASS

    def __bool__(self):
        return self.status is not Status.FAIL

    def as_dict(self) -> dict:
        return {
            "check": self.check,
            "status": self.status.value,
            "tolerances": self.tolerances,
            "counterexamples": self.counterexamples,
            "statistics": self.statistics,
            "notes": self.notes,
        }

    def to_json(self) -> str:
        return dumps(self.as_dict())


def worst(*statuses: Status) -> Status:
    order = [Status.PASS, Status.WARN, Status.FAIL]
    return max(statuses, key=order.index, default=Status.PASS)


def _fmt_float(x: float) -> str:
    if math.isnan(x):
        return '"NaN"'
    if math.isinf(x):
        return '"Infinity"' if x > 0 else '"-Infinity"'
    s = f"{x:.17g}"
    if all(c not in s for c in ".eE"):
        s += ".0"
    return s


def _encode(obj, indent, level) -> str:
    pad = "" if indent is None else "\n" + " " * (indent * (level + 1))
    end = "" if indent is None else "\n" + " " * (indent * level)
    sep = ", " if indent is None else ","
    if isinstance(obj, enum.Enum):
        obj = obj.value
    if obj is None or isinstance(obj, (bool, np.bool_)):
        return json.dumps(None if obj is None else bool(obj))
    if isinstance(obj, (int, np.integer)):
        return str(int(obj))
    if isinstance(obj, (float, np.floating)):
        return _fmt_float(float(obj))
    if isinstance(obj, str):
        return json.dumps(obj, ensure_ascii=False)
    if isinstance(obj, np.ndarray):
        obj = obj.tolist()
    if isinstance(obj, dict):
        if not obj:
            return "{}"
        items = [f"{pad}{json.dumps(str(k), ensure_ascii=False)}: "
                 f"{_encode(obj[k], indent, level + 1)}"
                 for k in sorted(obj, key=str)]
        return "{" + sep.join(items) + end + "}"
    if isinstance(obj, (list, tuple)):
        if not obj:
            return "[]"
        items = [pad + _encode(v, indent, level + 1) for v in obj]
        return "[" + sep.join(items) + end + "]"
    raise TypeError(f"cannot encode {type(obj).__name__}")


def dumps(obj, indent: int | None = 2) -> str:
    """JSON with sorted keys and floats printed at 17 significant digits."""
    return _encode(obj, indent, 0) + "\n"
