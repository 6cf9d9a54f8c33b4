"""CPLEX-LP text export for debugging.

Ordering is fixed: objective terms, rows and bounds follow creation order of
variables and constraints, and numbers are written with ``repr`` so two
identical models always produce identical text.
"""

from __future__ import annotations

import math
import re

from .model import Model

_BAD = re.compile(r"[^A-Za-z0-9_.\[\]]")


def _name(s: str) -> str:
    s = _BAD.sub("_", s)
    if not s or s[0].isdigit() or s[0] in ".e":
        s = "v_" + s
    return s


def _num(x: float) -> str:
    return repr(float(x))


def _terms(expr, names) -> str:
    items = sorted(expr.terms.items(), key=lambda kv: kv[0].index)
    if not items:
        return "0 " + names[0] if names else "0"
    parts = []
    for i, (v, c) in enumerate(items):
        sign = "-" if c < 0 else "+"
        if i == 0:
            parts.append(f"{'-' if c < 0 else ''}{_num(abs(c))} {names[v.index]}")
        else:
            parts.append(f"{sign} {_num(abs(c))} {names[v.index]}")
    return " ".join(parts)


def to_lp(model: Model) -> str:
    names = []
    seen: dict[str, int] = {}
    for v in model.variables:
        base = _name(v.name)
        k = seen.get(base, 0)
        seen[base] = k + 1
        names.append(base if k == 0 else f"{base}#{k}")
    out = [f"\\ {model.name}", "Minimize" if model.sense == "min" else "Maximize"]
    out.append(f" obj: {_terms(model.objective, names)}")
    if model.objective.constant:
        out[-1] += f" + {_num(model.objective.constant)} constant"
    out.append("Subject To")
    for i, con in enumerate(model.constraints):
        op = {"<=": "<=", ">=": ">=", "==": "="}[con.sense]
        label = _name(con.name) if con.name else f"c{i}"
        out.append(f" {label}: {_terms(con.expr, names)} {op} {_num(-con.expr.constant)}")
    out.append("Bounds")
    for v in model.variables:
        n = names[v.index]
        lo, hi = v.lower, v.upper
        if math.isinf(lo) and math.isinf(hi):
            out.append(f" {n} free")
        elif math.isinf(hi):
            out.append(f" {n} >= {_num(lo)}")
        elif math.isinf(lo):
            out.append(f" -inf <= {n} <= {_num(hi)}")
        else:
            out.append(f" {_num(lo)} <= {n} <= {_num(hi)}")
    bins = [names[v.index] for v in model.variables if v.kind == "binary"]
    if bins:
        out.append("Binaries")
        out.extend(f" {b}" for b in bins)
    out.append("End")
    return "\n".join(out) + "\n"
