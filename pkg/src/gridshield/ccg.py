"""Column-and-constraint generation between the master and the attackers.

Each iteration solves the master over the pooled intrusions (a lower bound),
then asks every attacker for its worst intrusion against the master's plan.
The plan's first-stage cost plus the probability-weighted worst impacts is a
valid upper bound. New intrusions are pooled and the loop repeats until the
relative gap ``(UB - LB) / max(1, |UB|)`` drops below the tolerance.
Attack results are memoized on the plan data each attacker actually sees.
"""

from __future__ import annotations

import json
import logging
import math
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path

import numpy as np

from .attack import AttackVector, SubproblemResult, response_cost, solve_subproblem
from .master import MasterSolution, ScenarioPool, build_master, effective_status, solve_master
from .network import Network
from .powerflow import PlanDecision, solve_base_opf
from .threat import AlgorithmOptions, ThreatModel

log = logging.getLogger(__name__)

CONVERGED = "converged"
GAP_NOT_CLOSED = "gap not closed"


class StallError(RuntimeError):
    """Every attacker returned an already-pooled intrusion while the gap is open."""


class InvariantError(AssertionError):
    pass


def normalize_costs(raw: float, base: float) -> float:
    """Cost as a percentage of the base-case operating cost."""
    if base <= 0:
        raise ValueError("base cost must be positive")
    return 100.0 * raw / base


@dataclass
class TraceRow:
    iteration: int
    lower_bound: float
    upper_bound: float
    gap: float
    master_objective: float
    secured: list[int]
    attacks: dict[str, list[int]]
    impacts: dict[str, float]
    reserve_dispatch_pct: float
    total_pct: float  # master objective, i.e. the planner's cost on the pooled surface
    master_time: float
    subproblem_time: dict[str, float]
    new_scenarios: int


@dataclass
class CCGResult:
    status: str
    plan: PlanDecision
    iterations: int
    lower_bound: float
    upper_bound: float
    gap: float
    base_cost: float
    reserve_dispatch_cost: float
    firewall_cost: float
    expected_cost: float
    worst_attacks: dict[str, AttackVector]
    impacts: dict[str, float]
    trace: list[TraceRow] = field(default_factory=list)
    runtime: float = 0.0
    pool_sizes: dict[str, int] = field(default_factory=dict)

    @property
    def total_cost(self) -> float:
        return self.reserve_dispatch_cost + self.firewall_cost + self.expected_cost

    def pct(self, value: float) -> float:
        return normalize_costs(value, self.base_cost)


def audit_plan(net: Network, threat: ThreatModel, plan: PlanDecision, tol: float = 1e-6):
    problems = plan.violations(net, threat, tol)
    if problems:
        raise InvariantError("plan violates first-stage constraints: " + "; ".join(problems))


def audit_attack(net: Network, threat: ThreatModel, plan: PlanDecision, res: SubproblemResult):
    attacker = next(a for a in threat.attackers if a.id == res.attacker_id)
    try:
        res.vector.check(net, attacker, plan)
    except ValueError as exc:
        raise InvariantError(f"attacker {attacker.id}: {exc}") from None
    if res.impact < -1e-6:
        raise InvariantError(f"attacker {attacker.id}: negative impact {res.impact}")


def audit_master(net: Network, threat: ThreatModel, ms: MasterSolution, tol: float = 1e-5,
                 tighten_dp: bool = False, printed_variant: bool = False) -> int:
    """Balance, generator linkage and flow physics in every scenario response.

    Each attacker's epigraph value is also compared with the exact operator
    LP over its pooled intrusions (same plan, effective statuses). An epigraph
    above the largest exact cost means big-M rows of opened branches are
    binding, i.e. the angle span they were sized for is too small; this is
    logged as a warning. Returns the number of attackers affected.

    The printed big-M variant does not pin the flow of an intact conditional
    branch, so with ``printed_variant`` those branches are exempt from the
    flow check.
    """
    plan = ms.plan
    audit_plan(net, threat, plan)
    by_id = {a.id: a for a in threat.attackers}
    scale = max(1.0, net.total_demand)
    shift = 0.7311
    exact_max: dict[str, float] = {}
    for resp in ms.responses:
        att = by_id[resp.attacker_id]
        status = np.array(effective_status(net, att, resp.vector, plan.firewall), dtype=float)
        gen_status = status[net.gen_bus]
        if np.any(resp.up > plan.reserve * threat.delta_t * gen_status + tol * scale):
            raise InvariantError(f"{att.id}: reserve deployed at a disconnected generator")
        inj = plan.dispatch * gen_status + resp.up - resp.dp
        bus = np.zeros(net.n_bus)
        np.add.at(bus, net.gen_bus, inj)
        np.subtract.at(bus, net.branch_from, resp.flow)
        np.add.at(bus, net.branch_to, resp.flow)
        mismatch = bus + resp.shed - net.demand
        if np.max(np.abs(mismatch), initial=0.0) > tol * scale:
            raise InvariantError(f"{att.id}: post-attack balance off by {np.abs(mismatch).max()}")
        opened = set(resp.vector.branches)
        is_open = np.array([t.id in opened and min(status[net.branch_from[k]],
                                                   status[net.branch_to[k]]) < 0.5
                            for k, t in enumerate(net.branches)])
        for theta in (resp.angle, resp.angle + shift):
            for k, t in enumerate(net.branches):
                s, r = net.branch_from[k], net.branch_to[k]
                if is_open[k]:
                    ok = abs(resp.flow[k]) <= tol * scale
                elif printed_variant and att.is_basic and t.id in opened:
                    ok = True
                else:
                    ok = abs(resp.flow[k] - (theta[s] - theta[r]) / t.reactance) <= tol * scale
                if not ok:
                    raise InvariantError(f"{att.id}: branch {t.id} flow inconsistent with angles")
        exact = response_cost(net, threat, plan, status, (~is_open).astype(float),
                              tighten_dp=tighten_dp).cost
        exact_max[att.id] = max(exact_max.get(att.id, 0.0), exact)
    distorted = 0
    for aid, exact in exact_max.items():
        if ms.eta[aid] > exact + 1e-6 * max(1.0, abs(exact)):
            distorted += 1
            log.warning("%s: master epigraph %.6g exceeds the exact worst pooled response %.6g; "
                        "the big-M angle span is binding, consider a larger theta_span",
                        aid, ms.eta[aid], exact)
    return distorted


def _plan_key(plan: PlanDecision, attacker) -> bytes:
    """The part of a plan an attacker's problem depends on, rounded for hashing.

    An advanced attacker ignores firewalls, so plans that differ only in
    ``z`` pose it the same problem.
    """
    parts = [np.round(plan.dispatch, 9), np.round(plan.reserve, 9)]
    if attacker.is_basic:
        parts.append(np.round(plan.firewall))
    return b"".join(np.ascontiguousarray(x, dtype=float).tobytes() for x in parts)


def _solve_attackers(net, threat, plan, options, backend, dump_dir, iteration, cache):
    def one(attacker):
        key = (attacker.id, _plan_key(plan, attacker))
        if key in cache:
            return replace(cache[key], runtime=0.0)
        dump = None
        if dump_dir is not None:
            dump = Path(dump_dir) / f"sub_{iteration:03d}_{attacker.id}.lp"
        res = solve_subproblem(net, threat, attacker, plan, options, backend=backend,
                               dump_lp=dump)
        cache[key] = res
        return res

    if options.workers > 1 and len(threat.attackers) > 1:
        with ThreadPoolExecutor(max_workers=options.workers) as ex:
            return list(ex.map(one, threat.attackers))
    return [one(a) for a in threat.attackers]


def run_ccg(net: Network, threat: ThreatModel, options: AlgorithmOptions | None = None, *,
            base_cost: float | None = None, backend=None, run_log: str | Path | None = None,
            dump_dir: str | Path | None = None, audit: bool = True) -> CCGResult:
    """Solve the planner's problem; see the module docstring."""
    options = options or AlgorithmOptions()
    threat.check_against(net)
    t_start = time.perf_counter()
    if base_cost is None:
        _, base_cost = solve_base_opf(net, threat, backend=backend)
    pool = ScenarioPool(threat.attackers)
    cache: dict = {}
    lb, ub = -math.inf, math.inf
    best = None
    trace: list[TraceRow] = []
    log_fh = open(run_log, "a") if run_log is not None else None
    status = GAP_NOT_CLOSED
    try:
        for k in range(1, options.max_iterations + 1):
            mm = build_master(net, threat, pool, options)
            ms = solve_master(mm, net, threat, options, backend)
            if audit:
                audit_master(net, threat, ms, tighten_dp=options.tighten_dp,
                             printed_variant=options.printed_bigm_variant)
            lb = max(lb, ms.objective)
            results = _solve_attackers(net, threat, ms.plan, options, backend, dump_dir, k, cache)
            if audit:
                for r in results:
                    audit_attack(net, threat, ms.plan, r)
            expected = sum(a.probability * r.impact for a, r in zip(threat.attackers, results))
            first = ms.reserve_dispatch_cost + ms.firewall_cost
            if first + expected < ub:
                ub = first + expected
                best = (ms, results, expected)
            gap = max(0.0, (ub - lb) / max(1.0, abs(ub)))
            new = 0
            if gap > options.tolerance:
                new = sum(pool.add(r.vector) for r in results)
                for r in results:
                    for vec in r.alternatives:
                        pool.add(vec)
            sub_time: dict[str, float] = {}
            for a, r in zip(threat.attackers, results):
                sub_time[a.capability] = sub_time.get(a.capability, 0.0) + r.runtime
            row = TraceRow(
                k, lb, ub, gap, ms.objective, ms.plan.secured_buses(net),
                {r.attacker_id: sorted(r.vector.buses) for r in results},
                {r.attacker_id: r.impact for r in results},
                normalize_costs(ms.reserve_dispatch_cost, base_cost),
                normalize_costs(ms.objective, base_cost), ms.runtime, sub_time, new)
            trace.append(row)
            log.info("iter %d  LB %.4f  UB %.4f  gap %.2e  secured %s  master %.1fs  sub %s",
                     k, lb, ub, gap, row.secured, ms.runtime,
                     {c: round(t, 1) for c, t in sub_time.items()})
            if log_fh is not None:
                log_fh.write(json.dumps({"event": "iteration", **asdict(row)}) + "\n")
                log_fh.flush()
            if gap <= options.tolerance:
                status = CONVERGED
                break
            if new == 0:
                raise StallError(f"iteration {k}: no new intrusions but gap {gap:.3g} "
                                 f"exceeds tolerance {options.tolerance:g}")
    finally:
        if log_fh is not None:
            log_fh.close()
    ms, results, expected = best
    return CCGResult(
        status, ms.plan, len(trace), lb, ub, trace[-1].gap, base_cost,
        ms.reserve_dispatch_cost, ms.firewall_cost, expected,
        {r.attacker_id: r.vector for r in results}, {r.attacker_id: r.impact for r in results},
        trace, time.perf_counter() - t_start, pool.sizes())
