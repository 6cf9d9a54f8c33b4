"""Backends: build -> solve -> extract.

``HighsBackend`` drives the HiGHS engine through its own Python bindings
(``highspy``) and is the default. ``ScipyHighsBackend`` reaches the copy of
HiGHS bundled with :func:`scipy.optimize.milp`; that copy's MIP presolve
returns wrong optima on some mixed models, so this backend disables presolve
unless asked otherwise. ``BranchAndBoundBackend`` is a pure numpy fallback
(dense simplex + depth-first branch and bound) intended for toy-sized models
only.
"""

from __future__ import annotations

import logging
import math
import time
from dataclasses import dataclass, field

import numpy as np

from .model import LinExpr, Model, Var, as_expr
from .simplex import solve_lp

log = logging.getLogger(__name__)

OPTIMAL, INFEASIBLE, UNBOUNDED, LIMIT = "optimal", "infeasible", "unbounded", "limit"


class BackendError(RuntimeError):
    """The optimization engine failed; never mapped onto a solve status."""


@dataclass
class SolverParams:
    mip_gap: float = 1e-6
    feasibility_tol: float = 1e-7
    time_limit: float | None = None
    node_limit: int | None = None
    presolve: bool = True
    verbose: bool = False
    keep_improving: bool = False  # collect incumbents found along the way (HiGHS only)


@dataclass
class SolveResult:
    status: str
    objective_value: float
    x: np.ndarray | None
    mip_gap: float = 0.0
    runtime: float = 0.0
    backend: str = ""
    message: str = ""
    _model: Model | None = field(default=None, repr=False)
    improving: list[np.ndarray] = field(default_factory=list, repr=False)

    @property
    def ok(self) -> bool:
        return self.status == OPTIMAL

    def value(self, item) -> float:
        if self.x is None:
            raise ValueError(f"no primal values (status={self.status})")
        if isinstance(item, Var):
            return float(self.x[item.index])
        return float(as_expr(item).value(self.x))

    def values(self, items) -> np.ndarray:
        return np.array([self.value(it) for it in items])

    @property
    def primal_values(self) -> dict[Var, float]:
        if self.x is None or self._model is None:
            return {}
        return {v: float(self.x[v.index]) for v in self._model.variables}


def _trivial(model: Model) -> SolveResult | None:
    if model.variables:
        return None
    for con in model.constraints:
        k = con.expr.constant
        bad = (con.sense == "<=" and k > 1e-9) or (con.sense == ">=" and k < -1e-9) \
            or (con.sense == "==" and abs(k) > 1e-9)
        if bad:
            return SolveResult(INFEASIBLE, math.nan, None, _model=model)
    return SolveResult(OPTIMAL, model.objective.constant, np.zeros(0), _model=model)


class HighsBackend:
    """HiGHS via ``highspy``; single-threaded and deterministic for fixed options."""

    name = "highs"
    concurrent_safe = True

    def solve(self, model: Model, params: SolverParams | None = None) -> SolveResult:
        import highspy

        params = params or SolverParams()
        triv = _trivial(model)
        if triv is not None:
            return triv
        c, c0, A, lo, hi, lb, ub, integrality = model.to_arrays()
        t0 = time.perf_counter()
        try:
            h = highspy.Highs()
            h.setOptionValue("output_flag", bool(params.verbose))
            h.setOptionValue("threads", 1)
            h.setOptionValue("random_seed", 0)
            h.setOptionValue("mip_rel_gap", params.mip_gap)
            h.setOptionValue("primal_feasibility_tolerance", params.feasibility_tol)
            h.setOptionValue("mip_feasibility_tolerance", params.feasibility_tol)
            h.setOptionValue("presolve", "on" if params.presolve else "off")
            if params.time_limit is not None:
                h.setOptionValue("time_limit", float(params.time_limit))
            if params.node_limit is not None:
                h.setOptionValue("mip_max_nodes", int(params.node_limit))
            if params.keep_improving:
                h.setOptionValue("mip_improving_solution_save", True)
            status = self._run(h, highspy, c, A, lo, hi, lb, ub, integrality)
            if status == highspy.HighsModelStatus.kUnboundedOrInfeasible:
                h.setOptionValue("presolve", "off")
                status = self._run(h, highspy, c, A, lo, hi, lb, ub, integrality)
        except Exception as exc:  # engine-level crash
            raise BackendError(f"HiGHS failed on {model.name!r}: {exc}") from exc
        dt = time.perf_counter() - t0
        sign = 1.0 if model.sense == "min" else -1.0
        info = h.getInfo()
        gap = float(info.mip_gap) if integrality.any() and math.isfinite(info.mip_gap) else 0.0
        S = highspy.HighsModelStatus
        has_x = info.primal_solution_status == 2  # feasible point available
        x = np.asarray(h.getSolution().col_value, dtype=float) if has_x else None
        msg = h.modelStatusToString(status)
        if status == S.kOptimal:
            improving = []
            if params.keep_improving and integrality.any():
                improving = [np.asarray(sol.col_value, dtype=float)
                             for sol in h.getSavedMipSolutions()]
            return SolveResult(OPTIMAL, sign * (info.objective_function_value + c0), x, gap, dt,
                               self.name, msg, model, improving)
        if status in (S.kTimeLimit, S.kIterationLimit, S.kSolutionLimit, S.kInterrupt):
            fun = math.nan if x is None else sign * (info.objective_function_value + c0)
            return SolveResult(LIMIT, fun, x, gap, dt, self.name, msg, model)
        if status == S.kInfeasible:
            return SolveResult(INFEASIBLE, math.nan, None, 0.0, dt, self.name, msg, model)
        if status in (S.kUnbounded, S.kUnboundedOrInfeasible):
            return SolveResult(UNBOUNDED, -sign * math.inf, None, 0.0, dt, self.name, msg, model)
        raise BackendError(f"HiGHS ended with status {msg!r} on {model.name!r}")

    @staticmethod
    def _run(h, highspy, c, A, lo, hi, lb, ub, integrality):
        csc = A.tocsc()
        lp = highspy.HighsLp()
        lp.num_col_ = len(c)
        lp.num_row_ = A.shape[0]
        lp.col_cost_ = np.asarray(c, dtype=float)
        lp.col_lower_ = np.asarray(lb, dtype=float)
        lp.col_upper_ = np.asarray(ub, dtype=float)
        lp.row_lower_ = np.asarray(lo, dtype=float)
        lp.row_upper_ = np.asarray(hi, dtype=float)
        lp.a_matrix_.format_ = highspy.MatrixFormat.kColwise
        lp.a_matrix_.start_ = np.asarray(csc.indptr, dtype=np.int32)
        lp.a_matrix_.index_ = np.asarray(csc.indices, dtype=np.int32)
        lp.a_matrix_.value_ = np.asarray(csc.data, dtype=float)
        if integrality.any():
            kinds = highspy.HighsVarType
            lp.integrality_ = [kinds.kInteger if k else kinds.kContinuous for k in integrality]
        h.passModel(lp)
        h.run()
        return h.getModelStatus()


class ScipyHighsBackend:
    """HiGHS as bundled with SciPy; MIP presolve stays off unless ``presolve=True``."""

    name = "scipy"
    concurrent_safe = True

    def __init__(self, presolve: bool = False):
        self.presolve = presolve

    def solve(self, model: Model, params: SolverParams | None = None) -> SolveResult:
        from scipy.optimize import Bounds, LinearConstraint, milp

        params = params or SolverParams()
        triv = _trivial(model)
        if triv is not None:
            return triv
        c, c0, A, lo, hi, lb, ub, integrality = model.to_arrays()
        options = {"disp": params.verbose, "presolve": params.presolve and self.presolve,
                   "mip_rel_gap": params.mip_gap}
        if params.time_limit is not None:
            options["time_limit"] = params.time_limit
        if params.node_limit is not None:
            options["node_limit"] = params.node_limit
        constraints = [LinearConstraint(A, lo, hi)] if A.shape[0] else None
        t0 = time.perf_counter()
        try:
            res = milp(c, integrality=integrality, bounds=Bounds(lb, ub),
                       constraints=constraints, options=options)
        except Exception as exc:  # engine-level crash
            raise BackendError(f"HiGHS failed on {model.name!r}: {exc}") from exc
        dt = time.perf_counter() - t0
        sign = 1.0 if model.sense == "min" else -1.0
        gap = float(getattr(res, "mip_gap", 0.0) or 0.0)
        if res.status == 0:
            return SolveResult(OPTIMAL, sign * (res.fun + c0), np.asarray(res.x), gap, dt,
                               self.name, res.message, model)
        if res.status == 1:
            x = None if res.x is None else np.asarray(res.x)
            fun = math.nan if res.x is None else sign * (res.fun + c0)
            return SolveResult(LIMIT, fun, x, gap, dt, self.name, res.message, model)
        if res.status == 2:
            return SolveResult(INFEASIBLE, math.nan, None, 0.0, dt, self.name, res.message, model)
        if res.status == 3:
            return SolveResult(UNBOUNDED, -sign * math.inf, None, 0.0, dt, self.name,
                               res.message, model)
        raise BackendError(f"HiGHS returned status {res.status} on {model.name!r}: {res.message}")


class BranchAndBoundBackend:
    """Depth-first branch and bound over binaries with a dense simplex core."""

    name = "bnb"
    concurrent_safe = True

    def __init__(self, int_tol: float = 1e-6, max_nodes: int = 100_000):
        self.int_tol = int_tol
        self.max_nodes = max_nodes

    def solve(self, model: Model, params: SolverParams | None = None) -> SolveResult:
        params = params or SolverParams()
        triv = _trivial(model)
        if triv is not None:
            return triv
        c, c0, A, lo, hi, lb, ub, integrality = model.to_arrays()
        A = A.toarray()
        eq = np.isfinite(lo) & np.isfinite(hi) & (lo == hi)
        up = np.isfinite(hi) & ~eq
        dn = np.isfinite(lo) & ~eq
        A_ub = np.vstack([A[up], -A[dn]])
        b_ub = np.concatenate([hi[up], -lo[dn]])
        A_eq, b_eq = A[eq], lo[eq]
        ints = np.flatnonzero(integrality)
        sign = 1.0 if model.sense == "min" else -1.0
        t0 = time.perf_counter()

        best_x, best_f = None, math.inf
        stack = [(lb.copy(), ub.copy())]
        nodes = 0
        hit_limit = False
        root_unbounded = False
        while stack:
            if nodes >= (params.node_limit or self.max_nodes):
                hit_limit = True
                break
            if params.time_limit is not None and time.perf_counter() - t0 > params.time_limit:
                hit_limit = True
                break
            nlb, nub = stack.pop()
            nodes += 1
            res = solve_lp(c, A_ub, b_ub, A_eq, b_eq, nlb, nub)
            if res.status == "unbounded":
                if nodes == 1:
                    root_unbounded = True
                    break
                continue
            if res.status != "optimal":
                if res.status == "limit":
                    raise BackendError("simplex iteration limit reached")
                continue
            f = res.fun
            if best_x is not None and f >= best_f - params.mip_gap * max(1.0, abs(best_f)):
                continue
            frac = np.abs(res.x[ints] - np.round(res.x[ints]))
            if ints.size == 0 or frac.max() <= self.int_tol:
                x = res.x.copy()
                x[ints] = np.round(x[ints])
                best_x, best_f = x, f
                continue
            j = int(ints[np.argmax(frac)])
            val = res.x[j]
            down_ub = nub.copy()
            down_ub[j] = math.floor(val)
            up_lb = nlb.copy()
            up_lb[j] = math.ceil(val)
            # explore the nearer side first
            first, second = ((nlb, down_ub), (up_lb, nub)) if val - math.floor(val) < 0.5 \
                else ((up_lb, nub), (nlb, down_ub))
            stack.append(second)
            stack.append(first)
        dt = time.perf_counter() - t0
        if root_unbounded:
            return SolveResult(UNBOUNDED, -sign * math.inf, None, 0.0, dt, self.name, "", model)
        if best_x is None:
            status = LIMIT if hit_limit else INFEASIBLE
            return SolveResult(status, math.nan, None, 0.0, dt, self.name, "", model)
        return SolveResult(LIMIT if hit_limit else OPTIMAL, sign * (best_f + c0), best_x,
                           0.0, dt, self.name, f"{nodes} nodes", model)


_BACKENDS = {"highs": HighsBackend, "scipy": ScipyHighsBackend, "bnb": BranchAndBoundBackend}


def get_backend(name: str = "highs"):
    try:
        return _BACKENDS[name]()
    except KeyError:
        raise ValueError(f"unknown backend {name!r}; choose from {sorted(_BACKENDS)}") from None


def solve(model: Model, params: SolverParams | None = None, backend=None) -> SolveResult:
    """Solve ``model`` with ``backend`` (default HiGHS)."""
    if backend is None or isinstance(backend, str):
        backend = get_backend(backend or "highs")
    result = backend.solve(model, params)
    log.debug("%s: %s obj=%s in %.3fs", model.name, result.status, result.objective_value,
              result.runtime)
    return result


def expr_value(result: SolveResult, expr: LinExpr | Var | float) -> float:
    return result.value(expr)
