"""Brute-force ground truth for toy networks.

:func:`enumerate_worst_attack` tries every admissible intrusion (bus subsets
up to the budget, then every subset of branches touching them) and solves
the operator LP for each one. :func:`enumerate_optimal_plan` tries every
firewall pattern within the planner budget. For each pattern the dispatch and
reserve are optimized by one LP that covers the attacker's whole enumerated
intrusion surface. Neither routine shares code with the master or the attack
MILP beyond the operator block, so they serve as independent checks.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass

import numpy as np

from .attack import AttackVector, verify_attack
from .linmodel import LinExpr, Model, solve
from .network import Network
from .powerflow import OFF, ON, PlanDecision, add_first_stage, add_operator_block
from .threat import Attacker, ThreatModel

DEFAULT_CAP = 1_000_000


class EnumerationLimitError(RuntimeError):
    """The requested sweep is larger than the configured cap."""


def _bus_sets(net: Network, attacker: Attacker, firewall=None):
    allowed = list(net.bus_ids)
    if attacker.is_basic and firewall is not None:
        allowed = [b for b, z in zip(net.bus_ids, firewall) if round(z) == 0]
    for size in range(min(attacker.budget, len(allowed)) + 1):
        yield from itertools.combinations(allowed, size)


def _incident(net: Network, buses) -> list[int]:
    chosen = set(buses)
    return [t.id for t in net.branches if t.from_bus in chosen or t.to_bus in chosen]


def attack_surface(net: Network, attacker: Attacker, firewall=None):
    """All admissible intrusions in lexicographic (bus set, branch set) order."""
    for buses in _bus_sets(net, attacker, firewall):
        inc = _incident(net, buses)
        for r in range(len(inc) + 1):
            for opened in itertools.combinations(inc, r):
                yield AttackVector(attacker.id, frozenset(buses), frozenset(opened))


def surface_size(net: Network, attacker: Attacker, firewall=None) -> int:
    return sum(2 ** len(_incident(net, b)) for b in _bus_sets(net, attacker, firewall))


def enumerate_worst_attack(net: Network, threat: ThreatModel, attacker: Attacker,
                           plan: PlanDecision, *, cap: int = DEFAULT_CAP,
                           tighten_dp: bool = False) -> tuple[AttackVector, float]:
    """Exhaustive maximum of the operator cost over the attack surface.

    Ties (within 1e-9 relative) keep the lexicographically smallest bus set,
    then branch set.
    """
    size = surface_size(net, attacker, plan.firewall)
    if size > cap:
        raise EnumerationLimitError(
            f"attacker {attacker.id}: {size} intrusions exceed the enumeration cap {cap}")
    best, best_val = None, -math.inf
    for vec in sorted(attack_surface(net, attacker, plan.firewall), key=lambda v: v.key):
        val = verify_attack(net, threat, attacker, plan, vec, tighten_dp=tighten_dp).cost
        if val > best_val + 1e-9 * (1.0 + abs(best_val if best_val > -math.inf else 0.0)):
            best, best_val = vec, val
    return best, best_val


@dataclass
class OraclePlan:
    plan: PlanDecision
    total: float
    reserve_dispatch_cost: float
    firewall_cost: float
    expected_cost: float
    surface: dict[tuple[int, ...], float]
    secured: tuple[int, ...] = ()


def _effective(net: Network, attacker: Attacker, vec: AttackVector, z) -> tuple:
    """Buses and branches an intrusion actually takes down under firewalls ``z``."""
    if attacker.is_basic:
        down = frozenset(b for b in vec.buses if z[net.bus_index[b]] < 0.5)
    else:
        down = vec.buses
    opened = frozenset(t.id for t in net.branches if t.id in vec.branches
                       and (t.from_bus in down or t.to_bus in down))
    return down, opened


def _plan_for_pattern(net: Network, threat: ThreatModel, z: np.ndarray, tighten_dp: bool):
    m = Model("oracle_plan")
    fs = add_first_stage(m, net, threat, fixed_firewall=z)
    dt = threat.delta_t
    expected = LinExpr()
    for i, att in enumerate(threat.attackers):
        eta = m.add_var(f"eta[{att.id}]", lower=0.0)
        expected = expected + att.probability * eta
        seen = set()
        for vec in attack_surface(net, att):
            down, opened = _effective(net, att, vec, z)
            if (down, opened) in seen:
                continue
            seen.add((down, opened))
            injection, up_caps, dp_cap = [], [], []
            for g, gen in enumerate(net.generators):
                alive = gen.bus not in down
                inj = fs.p[g] if alive else 0.0
                injection.append(inj)
                up_caps.append([dt * fs.r[g]] if alive else [0.0])
                dp_cap.append(inj if tighten_dp else fs.p[g])
            status = [OFF if t.id in opened else ON for t in net.branches]
            op = add_operator_block(m, net, threat, injection=injection, up_caps=up_caps,
                                    dp_cap=dp_cap, status=status, prefix=f"{i}_{len(seen)}")
            m.add_constraint(eta >= op.cost)
    m.set_objective(fs.cost + expected, "min")
    res = solve(m)
    if not res.ok:
        raise RuntimeError(f"oracle plan LP ended with status {res.status}")
    return res, fs


def enumerate_optimal_plan(net: Network, threat: ThreatModel, *, cap: int = DEFAULT_CAP,
                           tighten_dp: bool = False) -> OraclePlan:
    """Best plan over every firewall pattern with at most ``planner_budget`` buses."""
    patterns = [c for k in range(min(threat.planner_budget, net.n_bus) + 1)
                for c in itertools.combinations(range(net.n_bus), k)]
    work = len(patterns) * sum(surface_size(net, a) for a in threat.attackers)
    if work > cap:
        raise EnumerationLimitError(f"{work} scenario blocks exceed the enumeration cap {cap}")
    best = None
    surface = {}
    for pattern in patterns:
        z = np.zeros(net.n_bus)
        z[list(pattern)] = 1.0
        res, fs = _plan_for_pattern(net, threat, z, tighten_dp)
        key = tuple(net.bus_ids[n] for n in pattern)
        surface[key] = res.objective_value
        if best is None or res.objective_value < best[0] - 1e-9 * (1.0 + abs(best[0])):
            best = (res.objective_value, res, fs)
    total, res, fs = best
    plan = fs.extract(res)
    rd = res.value(fs.dispatch_cost + fs.reserve_cost)
    fw = res.value(fs.firewall_cost)
    return OraclePlan(plan, total, rd, fw, total - rd - fw, surface,
                      tuple(plan.secured_buses(net)))
