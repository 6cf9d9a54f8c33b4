"""Solver-agnostic MILP model construction.

Variables and linear expressions support the usual arithmetic operators, and
comparisons between them produce :class:`Constraint` objects that can be
handed to :meth:`Model.add_constraint`::

    m = Model()
    x = m.add_var("x", lower=0)
    y = m.add_var("y", kind="binary")
    m.add_constraint(x + 2 * y <= 4)
    m.set_objective(x + y, sense="max")
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field
from typing import Iterable, Mapping

import numpy as np

INF = math.inf

_model_ids = itertools.count()


class ModelError(Exception):
    """Raised for malformed models (foreign variables, bad bounds, ...)."""


class Var:
    """Handle to a model variable. Hashable; identity is (model, index)."""

    __slots__ = ("model_id", "index", "name", "kind", "lower", "upper")
    __array_ufunc__ = None  # make numpy scalars defer to our operators

    def __init__(self, model_id: int, index: int, name: str, kind: str,
                 lower: float, upper: float):
        self.model_id = model_id
        self.index = index
        self.name = name
        self.kind = kind
        self.lower = lower
        self.upper = upper

    def __hash__(self):
        return hash((self.model_id, self.index))

    def __repr__(self):
        return f"Var({self.name!r})"

    def _expr(self) -> LinExpr:
        return LinExpr({self: 1.0})

    def __add__(self, other):
        return self._expr() + other

    __radd__ = __add__

    def __sub__(self, other):
        return self._expr() - other

    def __rsub__(self, other):
        return (-self._expr()) + other

    def __mul__(self, c):
        return self._expr() * c

    __rmul__ = __mul__

    def __truediv__(self, c):
        return self._expr() * (1.0 / c)

    def __neg__(self):
        return self._expr() * -1.0

    def __le__(self, other):
        return self._expr() <= other

    def __ge__(self, other):
        return self._expr() >= other

    def __eq__(self, other):  # type: ignore[override]
        if isinstance(other, Var) and other is self:
            return True
        return self._expr() == other


class LinExpr:
    """Affine expression ``sum(coef * var) + constant``."""

    __slots__ = ("terms", "constant")
    __array_ufunc__ = None

    def __init__(self, terms: Mapping[Var, float] | None = None, constant: float = 0.0):
        self.terms: dict[Var, float] = dict(terms) if terms else {}
        self.constant = float(constant)

    @classmethod
    def sum(cls, items: Iterable) -> LinExpr:
        out = cls()
        for it in items:
            out._iadd(it, 1.0)
        return out

    def copy(self) -> LinExpr:
        return LinExpr(self.terms, self.constant)

    def _iadd(self, other, sign: float) -> LinExpr:
        if isinstance(other, LinExpr):
            for v, c in other.terms.items():
                self.terms[v] = self.terms.get(v, 0.0) + sign * c
            self.constant += sign * other.constant
        elif isinstance(other, Var):
            self.terms[other] = self.terms.get(other, 0.0) + sign
        elif isinstance(other, (int, float, np.floating, np.integer)):
            self.constant += sign * float(other)
        else:
            return NotImplemented
        return self

    def __add__(self, other):
        return self.copy()._iadd(other, 1.0)

    __radd__ = __add__

    def __sub__(self, other):
        return self.copy()._iadd(other, -1.0)

    def __rsub__(self, other):
        return (self * -1.0)._iadd(other, 1.0)

    def __mul__(self, c):
        if not isinstance(c, (int, float, np.floating, np.integer)):
            return NotImplemented
        c = float(c)
        return LinExpr({v: c * a for v, a in self.terms.items()}, c * self.constant)

    __rmul__ = __mul__

    def __truediv__(self, c):
        return self * (1.0 / c)

    def __neg__(self):
        return self * -1.0

    def __le__(self, other):
        return Constraint(self - other, "<=")

    def __ge__(self, other):
        return Constraint(self - other, ">=")

    def __eq__(self, other):  # type: ignore[override]
        return Constraint(self - other, "==")

    __hash__ = None  # type: ignore[assignment]

    def normalized(self) -> LinExpr:
        """Copy with zero coefficients removed."""
        return LinExpr({v: c for v, c in self.terms.items() if c != 0.0}, self.constant)

    def value(self, values: Mapping[Var, float] | np.ndarray) -> float:
        if isinstance(values, np.ndarray):
            return self.constant + sum(c * values[v.index] for v, c in self.terms.items())
        return self.constant + sum(c * values[v] for v, c in self.terms.items())

    def __repr__(self):
        parts = [f"{c:+g}*{v.name}" for v, c in self.terms.items()]
        if self.constant or not parts:
            parts.append(f"{self.constant:+g}")
        return " ".join(parts)


def as_expr(x) -> LinExpr:
    if isinstance(x, LinExpr):
        return x
    if isinstance(x, Var):
        return x._expr()
    return LinExpr(constant=float(x))


@dataclass
class Constraint:
    """``expr <sense> 0``; built by comparing expressions."""

    expr: LinExpr
    sense: str
    name: str = ""

    def __bool__(self):
        raise TypeError("constraints have no truth value; pass them to Model.add_constraint")


@dataclass
class Model:
    """A mixed-integer linear model: variables, rows and one objective."""

    name: str = "model"
    variables: list[Var] = field(default_factory=list)
    constraints: list[Constraint] = field(default_factory=list)
    objective: LinExpr = field(default_factory=LinExpr)
    sense: str = "min"

    def __post_init__(self):
        self._id = next(_model_ids)

    def add_var(self, name: str = "", *, kind: str = "continuous",
                lower: float = 0.0, upper: float = INF) -> Var:
        if kind not in ("continuous", "binary"):
            raise ModelError(f"unknown variable kind {kind!r}")
        lower = -INF if lower is None else float(lower)
        upper = INF if upper is None else float(upper)
        if kind == "binary":
            lower, upper = max(lower, 0.0), min(upper, 1.0)
            if lower > upper:
                raise ModelError(f"binary {name!r} has empty domain")
        if lower > upper:
            raise ModelError(f"variable {name!r}: lower {lower} > upper {upper}")
        v = Var(self._id, len(self.variables), name or f"x{len(self.variables)}",
                kind, lower, upper)
        self.variables.append(v)
        return v

    def add_binary(self, name: str = "") -> Var:
        return self.add_var(name, kind="binary", lower=0.0, upper=1.0)

    def _check_owned(self, expr: LinExpr):
        for v in expr.terms:
            if v.model_id != self._id or v.index >= len(self.variables) \
                    or self.variables[v.index] is not v:
                raise ModelError(f"variable {v.name!r} does not belong to model {self.name!r}")

    def add_constraint(self, con: Constraint, name: str = "") -> int:
        if not isinstance(con, Constraint):
            raise ModelError(f"expected a Constraint, got {type(con).__name__}")
        if con.sense not in ("<=", ">=", "=="):
            raise ModelError(f"bad sense {con.sense!r}")
        expr = con.expr.normalized()
        self._check_owned(expr)
        self.constraints.append(Constraint(expr, con.sense, name or con.name))
        return len(self.constraints) - 1

    def set_objective(self, expr, sense: str = "min"):
        if sense not in ("min", "max"):
            raise ModelError(f"bad objective sense {sense!r}")
        expr = as_expr(expr).normalized()
        self._check_owned(expr)
        self.objective = expr
        self.sense = sense

    @property
    def num_vars(self) -> int:
        return len(self.variables)

    @property
    def num_binaries(self) -> int:
        return sum(v.kind == "binary" for v in self.variables)

    def to_arrays(self):
        """Dense-free matrix form used by the backends.

        Returns ``(c, c0, A, row_lo, row_hi, lb, ub, integrality)`` for the
        *minimization* form; a max objective is negated. ``A`` is a
        ``scipy.sparse.csr_array``.
        """
        from scipy import sparse

        n = len(self.variables)
        sign = 1.0 if self.sense == "min" else -1.0
        c = np.zeros(n)
        for v, a in self.objective.terms.items():
            c[v.index] += sign * a
        c0 = sign * self.objective.constant
        rows, cols, vals = [], [], []
        lo = np.empty(len(self.constraints))
        hi = np.empty(len(self.constraints))
        for i, con in enumerate(self.constraints):
            for v, a in con.expr.terms.items():
                rows.append(i)
                cols.append(v.index)
                vals.append(a)
            rhs = -con.expr.constant
            if con.sense == "<=":
                lo[i], hi[i] = -INF, rhs
            elif con.sense == ">=":
                lo[i], hi[i] = rhs, INF
            else:
                lo[i] = hi[i] = rhs
        A = sparse.csr_array((vals, (rows, cols)), shape=(len(self.constraints), n))
        lb = np.array([v.lower for v in self.variables], dtype=float)
        ub = np.array([v.upper for v in self.variables], dtype=float)
        integrality = np.array([v.kind == "binary" for v in self.variables], dtype=np.uint8)
        return c, c0, A, lo, hi, lb, ub, integrality

    def max_violation(self, x: np.ndarray) -> float:
        """Largest constraint or bound violation at point ``x``."""
        worst = 0.0
        for v in self.variables:
            worst = max(worst, v.lower - x[v.index], x[v.index] - v.upper)
        for con in self.constraints:
            val = con.expr.value(x)
            if con.sense == "<=":
                worst = max(worst, val)
            elif con.sense == ">=":
                worst = max(worst, -val)
            else:
                worst = max(worst, abs(val))
        return worst
