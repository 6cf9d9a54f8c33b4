import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from gridshield.linmodel import (INFEASIBLE, OPTIMAL, UNBOUNDED, BackendError,
                                 BranchAndBoundBackend, HighsBackend, LinExpr,
                                 ScipyHighsBackend, Model, ModelError,
                                 SolverParams, get_backend, solve, to_lp)

BACKENDS = ["highs", "scipy", "bnb"]


@pytest.mark.parametrize("backend", BACKENDS)
def test_one_variable_lp(backend):
    m = Model()
    x = m.add_var("x", lower=-10)
    m.add_constraint(x >= 3)
    m.set_objective(x, "min")
    res = solve(m, backend=backend)
    assert res.status == OPTIMAL
    assert res.objective_value == pytest.approx(3.0)
    assert res.value(x) == pytest.approx(3.0)


@pytest.mark.parametrize("backend", BACKENDS)
def test_tiny_milp(backend):
    m = Model()
    x, y = m.add_binary("x"), m.add_binary("y")
    m.add_constraint(x + y <= 1)
    m.set_objective(x + y, "max")
    assert solve(m, backend=backend).objective_value == pytest.approx(1.0)


@pytest.mark.parametrize("backend", BACKENDS)
def test_infeasible_status(backend):
    m = Model()
    x = m.add_var("x", lower=None)
    m.add_constraint(x <= 0)
    m.add_constraint(x >= 1)
    m.set_objective(x)
    res = solve(m, backend=backend)
    assert res.status == INFEASIBLE
    assert not res.ok


@pytest.mark.parametrize("backend", BACKENDS)
def test_unbounded_status(backend):
    m = Model()
    x = m.add_var("x")
    m.set_objective(x, "max")
    assert solve(m, backend=backend).status == UNBOUNDED


@pytest.mark.parametrize("backend", BACKENDS)
def test_empty_model(backend):
    res = solve(Model(), backend=backend)
    assert res.status == OPTIMAL and res.objective_value == 0.0


def test_foreign_variable_rejected():
    a, b = Model("a"), Model("b")
    x = a.add_var("x")
    with pytest.raises(ModelError, match="does not belong"):
        b.add_constraint(x >= 1)
    with pytest.raises(ModelError):
        b.set_objective(x)


def test_expression_normalization_drops_zeros():
    m = Model()
    x, y = m.add_var("x"), m.add_var("y")
    e = (x + 2 * y - x).normalized()
    assert list(e.terms.values()) == [2.0]
    assert LinExpr.sum([x, y, 3.0]).constant == 3.0


def test_numpy_scalars_multiply_variables():
    m = Model()
    x = m.add_var("x")
    e = np.float64(2.5) * x
    assert isinstance(e, LinExpr)
    assert e.terms[x] == 2.5


def test_binary_bounds_clamped():
    m = Model()
    b = m.add_var("b", kind="binary", lower=-3, upper=7)
    assert (b.lower, b.upper) == (0.0, 1.0)
    with pytest.raises(ModelError):
        m.add_var("c", kind="integer")


def test_unknown_backend():
    with pytest.raises(ValueError, match="unknown backend"):
        get_backend("cplex")


def test_backend_failure_is_an_error(monkeypatch):
    import highspy
    import scipy.optimize

    def boom(*a, **k):
        raise RuntimeError("engine crashed")

    m = Model()
    x = m.add_var("x")
    m.set_objective(x)
    monkeypatch.setattr(scipy.optimize, "milp", boom)
    monkeypatch.setattr(highspy.Highs, "run", boom)
    for backend in (HighsBackend(), ScipyHighsBackend()):
        with pytest.raises(BackendError, match="engine crashed"):
            backend.solve(m)


def test_mixed_model_that_trips_bundled_presolve():
    # max x  s.t. 2x + 2y <= 3, x in [0, 5], y binary: the optimum is x = 1.5
    m = Model()
    x, y = m.add_var("x", upper=5.0), m.add_binary("y")
    m.add_constraint(2 * x + 2 * y <= 3)
    m.set_objective(x, "max")
    for backend in ("highs", "scipy", "bnb"):
        assert solve(m, backend=backend).objective_value == pytest.approx(1.5)


def test_lp_export_is_stable():
    def build():
        m = Model("demo")
        x = m.add_var("x", upper=4)
        y = m.add_binary("y")
        z = m.add_var("z", lower=None)
        m.add_constraint(x + 2 * y - z <= 5, "cap")
        m.add_constraint(x - z == 1.5)
        m.set_objective(3 * x - y + 1.0, "max")
        return m

    text = to_lp(build())
    assert text == to_lp(build())
    assert text.splitlines()[:3] == ["\\ demo", "Maximize", " obj: 3.0 x - 1.0 y + 1.0 constant"]
    assert " cap: 1.0 x + 2.0 y - 1.0 z <= 5.0" in text
    assert " z free" in text
    assert "Binaries\n y\nEnd\n" in text


def test_node_limit_reports_limit():
    m = Model()
    xs = [m.add_binary() for _ in range(12)]
    w = np.arange(1, 13) * 1.37
    m.add_constraint(LinExpr.sum(float(a) * x for a, x in zip(w, xs)) <= 31.3)
    m.set_objective(LinExpr.sum(float(a) * x for a, x in zip(w[::-1], xs)), "max")
    res = BranchAndBoundBackend(max_nodes=3).solve(m)
    assert res.status in ("limit", OPTIMAL)


@st.composite
def small_milps(draw):
    n = draw(st.integers(1, 5))
    kinds = draw(st.lists(st.booleans(), min_size=n, max_size=n))
    coef = st.integers(-6, 6)
    rows = draw(st.lists(st.tuples(st.lists(coef, min_size=n, max_size=n), st.integers(-4, 12)),
                         min_size=1, max_size=4))
    obj = draw(st.lists(coef, min_size=n, max_size=n))
    return kinds, rows, obj


def _build(spec):
    kinds, rows, obj = spec
    m = Model()
    xs = [m.add_binary() if b else m.add_var(upper=5.0) for b in kinds]
    for a, rhs in rows:
        m.add_constraint(LinExpr.sum(float(c) * x for c, x in zip(a, xs)) <= rhs)
    m.set_objective(LinExpr.sum(float(c) * x for c, x in zip(obj, xs)), "max")
    return m


@settings(max_examples=60, deadline=None)
@given(small_milps())
def test_backends_agree(spec):
    ref = solve(_build(spec), backend="bnb")
    for name in ("highs", "scipy"):
        res = solve(_build(spec), backend=name)
        assert res.status == ref.status
        if ref.ok:
            assert res.objective_value == pytest.approx(ref.objective_value, rel=1e-7, abs=1e-7)
            assert _build(spec).max_violation(res.x) <= 1e-7


@settings(max_examples=30, deadline=None)
@given(small_milps())
def test_resolve_is_deterministic_and_redundant_rows_are_harmless(spec):
    m = _build(spec)
    first = solve(m)
    assert solve(m).objective_value == first.objective_value or not first.ok
    if first.ok:
        kinds, rows, obj = spec
        a, rhs = rows[0]
        xs = m.variables
        m.add_constraint(LinExpr.sum(float(c) * x for c, x in zip(a, xs)) <= rhs + 1)
        assert solve(m).objective_value == pytest.approx(first.objective_value, abs=1e-7)


def test_solver_params_are_passed():
    m = Model()
    x = m.add_binary()
    m.set_objective(x, "max")
    res = solve(m, SolverParams(mip_gap=1e-3, time_limit=5.0))
    assert res.objective_value == 1.0
