"""End-to-end reproduction targets.

Each test records one line in the session summary (see ``conftest``) before
asserting, so a run prints a pass/fail line per target even when some fail.
Published percentages are copied from the source tables; base costs are in
monetary units. Shared case runs are solved once per session.
"""

import time

import numpy as np
import pytest

import gridshield.ccg as ccg_mod
from gridshield.cli import _shipped_case, resolve_grid
from gridshield.master import effective_status
from gridshield.network import load_benchmark
from gridshield.oracle import enumerate_optimal_plan, enumerate_worst_attack
from gridshield.powerflow import solve_base_opf
from gridshield.threat import ThreatModel, apply_default_costs, load_case_config, prepare

from conftest import SUBPROBLEMS, record_criterion, subproblem_mismatches, threat, toy
from test_properties import removal_violations, reserve_violations

# published base costs and (total, reserve & dispatch, expected) in % of base
BASE = {"case24": 41904.11, "case118": 109826.08}
PUBLISHED = {
    "A": (100.29, 100.00, 0.00), "B": (200.54, 117.17, 83.37), "C": (157.35, 107.20, 49.88),
    "D": (172.47, 117.54, 54.89), "E": (200.54, 117.17, 83.37), "F": (186.91, 117.73, 69.13),
    "G": (129.05, 108.20, 20.83), "H": (136.78, 106.00, 30.78), "I": (133.99, 107.52, 26.45),
}
PCT_TOL = 0.5
CASE_SECONDS = 120.0


def _incumbent_problems(net, threat_, ms) -> list[str]:
    """Independent re-check of one master incumbent and its scenario responses."""
    plan = ms.plan
    out = list(plan.violations(net, threat_))
    by_id = {a.id: a for a in threat_.attackers}
    scale = max(1.0, net.total_demand)
    tol = 1e-5 * scale
    x = np.array([t.reactance for t in net.branches])
    for resp in ms.responses:
        att = by_id[resp.attacker_id]
        vec = resp.vector
        if len(vec.buses) > att.budget:
            out.append(f"{att.id}: budget exceeded by {sorted(vec.buses)}")
        down = {b for b in vec.buses
                if not (att.is_basic and plan.firewall[net.bus_index[b]] > 0.5)}
        # firewall blocking and generator linkage
        alive = np.array([g.bus not in down for g in net.generators], dtype=float)
        if np.any(resp.up > plan.reserve * threat_.delta_t * alive + tol):
            out.append(f"{att.id}: reserve used at a cut-off generator")
        inj = plan.dispatch * alive + resp.up - resp.dp
        if abs(inj.sum() + resp.shed.sum() - net.total_demand) > tol:
            out.append(f"{att.id}: system balance off")
        for shift in (0.0, 1.234):
            theta = resp.angle + shift
            for k, t in enumerate(net.branches):
                opened = t.id in vec.branches and (t.from_bus in down or t.to_bus in down)
                want = 0.0 if opened else \
                    (theta[net.branch_from[k]] - theta[net.branch_to[k]]) / x[k]
                if abs(resp.flow[k] - want) > tol:
                    out.append(f"{att.id}: branch {t.id} linkage broken (shift {shift})")
        status = effective_status(net, att, vec, plan.firewall)
        expect = [0.0 if b in down else 1.0 for b in net.bus_ids]
        if [round(float(s)) for s in status] != expect:
            out.append(f"{att.id}: effective status disagrees with firewall rule")
    return out


class CaseRuns:
    """Solves shipped cases on demand, checking every master incumbent."""

    def __init__(self):
        self.results, self.nets, self.incumbents, self.problems = {}, {}, {}, {}

    def get(self, name):
        if name not in self.results:
            cfg = load_case_config(_shipped_case(name))
            net = prepare(resolve_grid(cfg.grid_source, cfg.grid_format), cfg)
            real = ccg_mod.solve_master
            seen, problems = [], []

            def checked(mm, net_, threat_, options=None, backend=None):
                ms = real(mm, net_, threat_, options, backend)
                seen.append(ms)
                problems.extend(_incumbent_problems(net_, threat_, ms))
                return ms

            ccg_mod.solve_master = checked
            try:
                self.results[name] = ccg_mod.run_ccg(net, cfg.threat, cfg.algorithm)
            finally:
                ccg_mod.solve_master = real
            self.nets[name], self.incumbents[name], self.problems[name] = net, seen, problems
        return self.results[name]


@pytest.fixture(scope="session")
def runs():
    return CaseRuns()


def _columns(res):
    return (res.pct(res.total_cost), res.pct(res.reserve_dispatch_cost),
            res.pct(res.expected_cost))


def _table_check(runs, names):
    ok, parts = True, []
    for name in names:
        res = runs.get(name)
        got = _columns(res)
        close = all(abs(g - p) <= PCT_TOL for g, p in zip(got, PUBLISHED[name]))
        fast = res.runtime < CASE_SECONDS
        ok &= close and fast and res.status == ccg_mod.CONVERGED
        parts.append(f"{name} {got[0]:.2f}/{got[1]:.2f}/{got[2]:.2f} vs "
                     f"{'/'.join(f'{p:.2f}' for p in PUBLISHED[name])} in {res.runtime:.0f}s"
                     f"{'' if fast else ' (slow)'}")
    return ok, "; ".join(parts)


def test_criterion_1_base_case_costs():
    ok, parts = True, []
    for key, target in BASE.items():
        net = apply_default_costs(load_benchmark(key))
        t0 = time.perf_counter()
        _, cost = solve_base_opf(net, ThreatModel())
        elapsed = time.perf_counter() - t0
        good = abs(cost - target) <= 1e-3 * target and elapsed < 5.0
        ok &= good
        parts.append(f"{key} {cost:.2f} vs {target:.2f} ({elapsed:.2f}s)")
    record_criterion(1, ok, "; ".join(parts))
    assert ok, parts


def test_criterion_2_cases_a_to_c(runs):
    ok, detail = _table_check(runs, "ABC")
    record_criterion(2, ok, detail)
    assert ok, detail


def test_criterion_3_cases_d_to_f(runs):
    ok, detail = _table_check(runs, "DEF")
    # only the objective columns and runtime gate this target; an equal-cost
    # alternative secured set is reported, not failed
    secured = runs.get("D").plan.secured_buses(runs.nets["D"])
    detail += f"; D secured {secured}"
    record_criterion(3, ok, detail)
    assert ok, detail


@pytest.mark.long
def test_criterion_4_cases_g_to_i(runs):
    ok, detail = _table_check(runs, "GHI")
    record_criterion(4, ok, detail)
    assert ok, detail


def test_criterion_5_cases_b_and_e_coincide(runs):
    b, e = runs.get("B"), runs.get("E")
    pairs = [(b.total_cost, e.total_cost), (b.reserve_dispatch_cost, e.reserve_dispatch_cost),
             (b.firewall_cost, e.firewall_cost), (b.expected_cost, e.expected_cost)]
    ok = all(abs(x - y) <= 1e-9 * max(1.0, abs(x)) for x, y in pairs)
    record_criterion(5, ok, f"B total {b.total_cost:.6f}, E total {e.total_cost:.6f}")
    assert ok, pairs


def test_criterion_6_bound_discipline(runs):
    names = [n for n in "ABCDEF"]
    ok, notes = True, []
    for name in names:
        res = runs.get(name)
        lbs = [t.lower_bound for t in res.trace]
        ubs = [t.upper_bound for t in res.trace]
        good = (all(y >= x - 1e-9 * abs(x) for x, y in zip(lbs, lbs[1:]))
                and all(y <= x + 1e-9 * abs(x) for x, y in zip(ubs, ubs[1:]))
                and res.gap <= 1e-4)
        ok &= good
        notes.append(f"{name} {res.iterations} it gap {res.gap:.1e}{'' if good else ' BAD'}")
    b_iters = runs.get("B").iterations
    ok &= b_iters <= 5
    record_criterion(6, ok, "; ".join(notes))
    assert ok, notes


TOY_THREATS = {
    "basic": (("b", "basic", 1, 0.1),),
    "advanced": (("a", "advanced", 1, 0.05),),
    "mixed": (("b", "basic", 2, 0.05), ("a", "advanced", 1, 0.02)),
}


def test_criterion_7_oracle_equivalence():
    t0 = time.perf_counter()
    bad = []
    count = 0
    real = ccg_mod.solve_subproblem
    for name in ("two_bus", "three_bus", "five_bus"):
        net = toy(name)
        for label, spec in TOY_THREATS.items():
            th = threat(*spec, budget=2)

            def compared(net_, threat_, attacker, plan, *a, **k):
                res = real(net_, threat_, attacker, plan, *a, **k)
                _, best = enumerate_worst_attack(net_, threat_, attacker, plan)
                if abs(res.impact - best) > 1e-6 * max(1.0, abs(best)):
                    bad.append(f"{name}/{label}/{attacker.id}: {res.impact} vs {best}")
                return res

            ccg_mod.solve_subproblem = compared
            try:
                got = ccg_mod.run_ccg(net, th).total_cost
            finally:
                ccg_mod.solve_subproblem = real
            want = enumerate_optimal_plan(net, th).total
            count += 1
            if abs(got - want) > 1e-6 * max(1.0, abs(want)):
                bad.append(f"{name}/{label}: total {got} vs {want}")
    elapsed = time.perf_counter() - t0
    ok = not bad and elapsed < 60.0
    record_criterion(7, ok, f"{count} toy plans, {len(bad)} mismatches, {elapsed:.1f}s")
    assert ok, bad


def test_criterion_8_strong_duality(runs):
    for name in "ABCDEF":
        runs.get(name)
    bad = subproblem_mismatches()
    worst = max((r["dual_norm"] for r in SUBPROBLEMS), default=0.0)
    ok = bool(SUBPROBLEMS) and not bad and worst < 1.0
    record_criterion(8, ok, f"{len(SUBPROBLEMS)} subproblems so far, {len(bad)} mismatches, "
                            f"largest dual-box use {worst:.3g}")
    assert ok, bad


def test_criterion_9_incumbent_invariants(runs):
    problems, count = [], 0
    for name in "ABCDEF":
        runs.get(name)
        count += len(runs.incumbents[name])
        problems += [f"{name}: {p}" for p in runs.problems[name]]
        res = runs.results[name]
        problems += [f"{name} final: {p}"
                     for p in res.plan.violations(runs.nets[name], load_case_config(
                         _shipped_case(name)).threat)]
    ok = not problems and count > 0
    record_criterion(9, ok, f"{count} incumbents checked, {len(problems)} violations")
    assert ok, problems[:10]


def test_criterion_10_monotonicity():
    reserve = reserve_violations()
    removal = removal_violations()
    ok = reserve == 0 and removal == 0
    record_criterion(10, ok, f"reserve {reserve}/20 violations, attacker removal "
                             f"{removal}/20 violations")
    assert ok
