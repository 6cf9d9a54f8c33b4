"""Worst-case intrusion for one attacker against a fixed plan.

The operator's response to an intrusion is an LP; the attacker maximizes its
optimal value. For fixed attack decisions the LP value equals the maximum of
its dual, so the max-min collapses into one MILP over the attack binaries and
the dual variables. Products of a binary with a bounded dual are linearized
exactly with McCormick envelopes. Two formulations are available:

``hull`` (default)
    The dual of the exact on/off operator LP. Every branch carries two sets
    of multipliers (closed: flow limits and angle coupling; opened: the
    ``f = 0`` row) and the branch binary switches between them. No angle
    big-M is involved.
``bigm``
    Primal operator block with big-M relaxed angle rows, its dual and an
    explicit strong-duality equality.

Everything inside the MILP is scaled: power in per-unit of the network base
and cost in units of the value of lost load. Shedding therefore costs 1 per
unit, which fixes the natural scale of the duals. Nodal prices are boxed by
the value of lost load and all other multipliers by ``dual_bound_factor``
(default 10). Every solution is checked after the fact: the MILP value must
match an exact re-evaluation of the returned intrusion, and the smallest
optimal dual at that intrusion must lie strictly inside the box, otherwise
:class:`DualBoundError` is raised.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .linmodel import INFEASIBLE, LinExpr, Model, SolverParams, as_expr, solve, to_lp
from .network import Network
from .powerflow import OFF, ON, BigMPolicy, PlanDecision, add_operator_block
from .threat import AlgorithmOptions, Attacker, ThreatModel


class SubproblemError(RuntimeError):
    pass


class DualBoundError(SubproblemError):
    pass


@dataclass(frozen=True)
class AttackVector:
    """An intrusion: buses taken over and branches opened (by id)."""

    attacker_id: str
    buses: frozenset[int]
    branches: frozenset[int] = frozenset()

    @property
    def key(self) -> tuple[tuple[int, ...], tuple[int, ...]]:
        return tuple(sorted(self.buses)), tuple(sorted(self.branches))

    def bus_status(self, net: Network) -> np.ndarray:
        """``w``: 1 for untouched buses, 0 for intruded ones."""
        w = np.ones(net.n_bus)
        for b in self.buses:
            w[net.bus_index[b]] = 0.0
        return w

    def branch_status(self, net: Network) -> np.ndarray:
        """``v``: 1 for closed branches, 0 for opened ones."""
        opened = set(self.branches)
        return np.array([0.0 if t.id in opened else 1.0 for t in net.branches])

    def check(self, net: Network, attacker: Attacker, plan: PlanDecision | None = None):
        if len(self.buses) > attacker.budget:
            raise ValueError(f"{len(self.buses)} intruded buses exceed budget {attacker.budget}")
        unknown = set(self.buses) - set(net.bus_index)
        if unknown:
            raise ValueError(f"unknown bus id(s) {sorted(unknown)}")
        if attacker.is_basic and plan is not None:
            secured = set(plan.secured_buses(net)) & set(self.buses)
            if secured:
                raise ValueError(f"basic attacker cannot intrude secured bus(es) {sorted(secured)}")
        ids = {t.id: k for k, t in enumerate(net.branches)}
        for t in self.branches:
            if t not in ids:
                raise ValueError(f"unknown branch id {t}")
            br = net.branches[ids[t]]
            if br.from_bus not in self.buses and br.to_bus not in self.buses:
                raise ValueError(f"branch {t} opened without intruding either endpoint")

    @classmethod
    def from_status(cls, net: Network, attacker_id: str, w, v) -> AttackVector:
        buses = frozenset(net.bus_ids[n] for n in np.flatnonzero(np.round(w) < 0.5))
        branches = frozenset(net.branches[k].id for k in np.flatnonzero(np.round(v) < 0.5))
        return cls(attacker_id, buses, branches)


@dataclass
class AttackImpact:
    """Operator response to a fixed intrusion (original units)."""

    cost: float
    shed: float
    redispatch_cost: float


@dataclass
class SubproblemResult:
    attacker_id: str
    vector: AttackVector
    impact: float
    shed: float
    mip_gap: float
    runtime: float
    num_vars: int
    num_binaries: int
    dual_norm: float
    duality_gap: float
    alternatives: tuple[AttackVector, ...] = ()


def scale_network(net: Network, voll: float) -> Network:
    """Per-unit powers and VOLL-relative costs; flows stay ``dtheta / X``."""
    base = net.base_mva
    buses = tuple(replace(b, demand=b.demand / base) for b in net.buses)
    branches = tuple(replace(t, capacity=t.capacity / base, reactance=t.reactance * base)
                     for t in net.branches)
    gens = tuple(replace(g, capacity=g.capacity / base, dispatch_cost=g.dispatch_cost / voll,
                         reserve_cost=g.reserve_cost / voll,
                         redispatch_cost=g.redispatch_cost / voll) for g in net.generators)
    return Network(buses, branches, gens, base_mva=1.0, name=net.name)


def _unit_threat(threat: ThreatModel) -> ThreatModel:
    return ThreatModel((), 0, 0.0, 1.0, threat.delta_t)


def _product(m: Model, x, b, lo: float, hi: float, name: str):
    """Exact linearization of ``x * b`` for binary ``b`` and ``x`` in [lo, hi]."""
    if isinstance(b, (int, float)):
        return as_expr(x) * float(b)
    q = m.add_var(name, lower=min(lo, 0.0), upper=max(hi, 0.0))
    x = as_expr(x)
    m.add_constraint(q <= hi * b)
    m.add_constraint(q >= lo * b)
    m.add_constraint(q <= x - lo * (1.0 - b))
    m.add_constraint(q >= x - hi * (1.0 - b))
    return q


@dataclass
class _Duals:
    """Dual variables of the operator LP.

    ``lam`` prices nodal balance, ``u_up``/``u_dn``/``u_sh`` the redispatch and
    shedding caps. The branch duals depend on the formulation: ``cap_hi`` and
    ``cap_lo`` price the flow limits, ``kvl`` the angle coupling (for the big-M
    rows as a pair of one-sided multipliers) and ``off`` the ``f = 0`` row of
    an opened branch (hull formulation only).
    """

    lam: list
    u_up: list
    u_dn: list
    u_sh: list
    cap_hi: list
    cap_lo: list
    kvl: list
    off: list

    def groups(self):
        """(variables, is_free) pairs for the flow and redispatch duals."""
        yield self.u_up, False
        yield self.u_dn, False
        yield self.u_sh, False
        yield [x for x in self.cap_hi if x is not None], False
        yield [x for x in self.cap_lo if x is not None], False
        for item in self.kvl:
            if isinstance(item, tuple):
                yield list(item), False
            elif item is not None:
                yield [item], True
        yield [x for x in self.off if x is not None], True


def _bus_gen_duals(m: Model, sn: Network, lam_bound: float, bound: float):
    lam = [m.add_var(f"lam[{b}]", lower=-lam_bound, upper=lam_bound) for b in sn.bus_ids]
    u_up = [m.add_var(f"u_up[{g.id}]", upper=bound) for g in sn.generators]
    u_dn = [m.add_var(f"u_dn[{g.id}]", upper=bound) for g in sn.generators]
    u_sh = [m.add_var(f"u_sh[{b}]", upper=bound) for b in sn.bus_ids]
    for g, gen in enumerate(sn.generators):
        n = sn.gen_bus[g]
        m.add_constraint(gen.redispatch_cost + u_up[g] - lam[n] >= 0.0, f"dup[{gen.id}]")
        m.add_constraint(u_dn[g] + lam[n] >= 0.0, f"ddp[{gen.id}]")
    for n, b in enumerate(sn.buses):
        m.add_constraint(1.0 + u_sh[n] - lam[n] >= 0.0, f"dl[{b.id}]")
    return lam, u_up, u_dn, u_sh


def _angle_rows(m: Model, sn: Network, kvl_terms):
    for n, b in enumerate(sn.buses):
        expr = LinExpr()
        for k in sn.branches_at[n]:
            if kvl_terms[k] is not None:
                sign = 1.0 if sn.branch_from[k] == n else -1.0
                expr = expr + (sign / sn.branches[k].reactance) * kvl_terms[k]
        m.add_constraint(expr == 0.0, f"dth[{b.id}]")


def _add_bigm_duals(m: Model, sn: Network, lam_bound: float, bound: float) -> _Duals:
    """Dual rows of the operator LP whose KVL rows are relaxed by big-M."""
    lam, u_up, u_dn, u_sh = _bus_gen_duals(m, sn, lam_bound, bound)
    tids = [t.id for t in sn.branches]
    fu = [m.add_var(f"u_fu[{i}]", upper=bound) for i in tids]
    fl = [m.add_var(f"u_fl[{i}]", upper=bound) for i in tids]
    du = [m.add_var(f"u_du[{i}]", upper=bound) for i in tids]
    dl = [m.add_var(f"u_dl[{i}]", upper=bound) for i in tids]
    for k, t in enumerate(sn.branches):
        s, r = sn.branch_from[k], sn.branch_to[k]
        m.add_constraint(fu[k] - fl[k] + du[k] - dl[k] + lam[s] - lam[r] == 0.0, f"df[{t.id}]")
    _angle_rows(m, sn, [dl[k] - du[k] for k in range(sn.n_branch)])
    return _Duals(lam, u_up, u_dn, u_sh, fu, fl, list(zip(du, dl)), [None] * sn.n_branch)


def _add_hull_duals(m: Model, sn: Network, v, lam_bound: float, bound: float) -> _Duals:
    """Dual rows of the exact on/off operator LP, disjunctive in the branch status.

    A closed branch has a flow limit and an angle coupling; an opened one only
    ``f = 0``. With binary ``v`` both sets of multipliers exist and are switched
    by ``v``; with constant ``v`` only the active set is created.
    """
    lam, u_up, u_dn, u_sh = _bus_gen_duals(m, sn, lam_bound, bound)
    fu, fl, kap, off = [], [], [], []
    for k, t in enumerate(sn.branches):
        s, r = sn.branch_from[k], sn.branch_to[k]
        vk = v[k]
        closed = not isinstance(vk, (int, float)) or vk > 0.5
        opened = not isinstance(vk, (int, float)) or vk < 0.5
        a = m.add_var(f"u_fu[{t.id}]", upper=bound) if closed else None
        b = m.add_var(f"u_fl[{t.id}]", upper=bound) if closed else None
        c = m.add_var(f"kap[{t.id}]", lower=-bound, upper=bound) if closed else None
        o = m.add_var(f"phi[{t.id}]", lower=-bound, upper=bound) if opened else None
        if closed and opened:
            m.add_constraint(a <= bound * vk)
            m.add_constraint(b <= bound * vk)
            m.add_constraint(c <= bound * vk)
            m.add_constraint(c >= -bound * vk)
            m.add_constraint(o <= bound * (1.0 - vk))
            m.add_constraint(o >= -bound * (1.0 - vk))
        row = lam[s] - lam[r]
        for x, sign in ((a, 1.0), (b, -1.0), (c, 1.0), (o, 1.0)):
            if x is not None:
                row = row + sign * x
        m.add_constraint(row == 0.0, f"df[{t.id}]")
        fu.append(a)
        fl.append(b)
        kap.append(c)
        off.append(o)
    _angle_rows(m, sn, kap)
    return _Duals(lam, u_up, u_dn, u_sh, fu, fl, kap, off)


def _dual_objective(m: Model, sn: Network, d: _Duals, plan_pu, w, v, bigm, lam_bound: float,
                    bound: float, delta_t: float, tighten_dp: bool) -> LinExpr:
    """Dual objective; ``w``/``v`` may be binaries (products linearized) or constants."""
    p, r = plan_pu
    hat = np.zeros(sn.n_bus)
    np.add.at(hat, sn.gen_bus, p)
    obj = LinExpr()
    for n, b in enumerate(sn.buses):
        obj = obj + b.demand * d.lam[n] - b.demand * d.u_sh[n]
        if hat[n] > 0:
            obj = obj - hat[n] * _product(m, d.lam[n], w[n], -lam_bound, lam_bound, f"lw[{b.id}]")
    for g, gen in enumerate(sn.generators):
        n = sn.gen_bus[g]
        if r[g] > 0:
            obj = obj - r[g] * delta_t * _product(m, d.u_up[g], w[n], 0.0, bound, f"uw[{gen.id}]")
        if p[g] > 0:
            if tighten_dp:
                obj = obj - p[g] * _product(m, d.u_dn[g], w[n], 0.0, bound, f"dw[{gen.id}]")
            else:
                obj = obj - p[g] * d.u_dn[g]
    for k, t in enumerate(sn.branches):
        if isinstance(d.kvl[k], tuple):
            fv = _product(m, d.cap_hi[k] + d.cap_lo[k], v[k], 0.0, 2 * bound, f"fv[{t.id}]")
            s = d.kvl[k][0] + d.kvl[k][1]
            sv = _product(m, s, v[k], 0.0, 2 * bound, f"sv[{t.id}]")
            obj = obj - t.capacity * fv - bigm[k] * (s - sv)
        elif d.cap_hi[k] is not None:
            obj = obj - t.capacity * (d.cap_hi[k] + d.cap_lo[k])
    return obj


@dataclass
class SubproblemModel:
    model: Model
    w: list
    v: list
    primal_cost: LinExpr | None
    dual_cost: LinExpr
    shed: list | None
    scale: float
    scaled_net: Network = field(repr=False)


def _plan_pu(net: Network, plan: PlanDecision):
    return np.asarray(plan.dispatch) / net.base_mva, np.asarray(plan.reserve) / net.base_mva


def build_subproblem(net: Network, threat: ThreatModel, attacker: Attacker, plan: PlanDecision,
                     options: AlgorithmOptions | None = None) -> SubproblemModel:
    """Attacker's max-min MILP against ``plan`` (see module docstring)."""
    options = options or AlgorithmOptions()
    sn = scale_network(net, threat.voll)
    bigm = BigMPolicy(options.theta_span).values(sn)
    bound = options.dual_bound_factor
    p, r = _plan_pu(net, plan)
    dt = threat.delta_t
    m = Model(f"attack_{attacker.id}")
    z = np.round(plan.firewall)
    w = []
    for n, b in enumerate(net.bus_ids):
        lo = 1.0 if attacker.is_basic and z[n] > 0.5 else 0.0
        w.append(m.add_var(f"w[{b}]", kind="binary", lower=lo, upper=1.0))
    v = [m.add_binary(f"v[{t.id}]") for t in net.branches]
    m.add_constraint(LinExpr.sum(1.0 - wn for wn in w) <= attacker.budget, "attack_budget")
    for k, t in enumerate(net.branches):
        s, rr = net.branch_from[k], net.branch_to[k]
        m.add_constraint(v[k] >= w[s] + w[rr] - 1.0, f"open[{t.id}]")

    lam_bound = 1.0
    if options.subproblem_formulation == "hull":
        duals = _add_hull_duals(m, sn, v, lam_bound, bound)
    else:
        duals = _add_bigm_duals(m, sn, lam_bound, bound)
    dual_cost = _dual_objective(m, sn, duals, (p, r), w, v, bigm, lam_bound, bound, dt,
                                options.tighten_dp)
    primal_cost, shed = None, None
    if options.subproblem_formulation == "bigm":
        wg = [w[n] for n in sn.gen_bus]
        op = add_operator_block(
            m, sn, _unit_threat(threat),
            injection=[p[g] * wg[g] for g in range(sn.n_gen)],
            up_caps=[[r[g] * dt * wg[g]] for g in range(sn.n_gen)],
            dp_cap=[p[g] * wg[g] if options.tighten_dp else float(p[g]) for g in range(sn.n_gen)],
            status=[("cond", v[k], 1.0) for k in range(sn.n_branch)],
            bigm=bigm, prefix="a")
        m.add_constraint(op.cost - dual_cost == 0.0, "strong_duality")
        primal_cost, shed = op.cost, op.shed
    m.set_objective(dual_cost, "max")
    return SubproblemModel(m, w, v, primal_cost, dual_cost, shed,
                           threat.voll * net.base_mva, sn)


def _operator_lp(net: Network, threat: ThreatModel, plan: PlanDecision, w, v,
                 tighten_dp: bool):
    sn = scale_network(net, threat.voll)
    p, r = _plan_pu(net, plan)
    wg = np.asarray(w)[sn.gen_bus]
    m = Model("operator")
    op = add_operator_block(
        m, sn, _unit_threat(threat),
        injection=list(p * wg), up_caps=[[float(x)] for x in r * threat.delta_t * wg],
        dp_cap=list(p * wg if tighten_dp else p),
        status=[ON if vk > 0.5 else OFF for vk in v], prefix="o")
    m.set_objective(op.cost, "min")
    return m, op, sn


def verify_attack(net: Network, threat: ThreatModel, attacker: Attacker, plan: PlanDecision,
                  vector: AttackVector, *, tighten_dp: bool = False) -> AttackImpact:
    """Exact operator response to ``vector`` (opened branches carry no flow)."""
    vector.check(net, attacker, plan)
    return response_cost(net, threat, plan, vector.bus_status(net), vector.branch_status(net),
                         tighten_dp=tighten_dp)


def response_cost(net: Network, threat: ThreatModel, plan: PlanDecision, w, v, *,
                  tighten_dp: bool = False) -> AttackImpact:
    """Operator response for explicit bus (``w``) and branch (``v``) statuses."""
    m, op, sn = _operator_lp(net, threat, plan, w, v, tighten_dp)
    res = solve(m)
    if not res.ok:
        raise SubproblemError(f"operator response LP ended with status {res.status}")
    scale = threat.voll * net.base_mva
    red = sum(g.redispatch_cost * res.value(u) for g, u in zip(sn.generators, op.up))
    return AttackImpact(res.objective_value * scale, float(res.values(op.shed).sum()) * net.base_mva,
                        red * scale)


def min_dual_norm(net: Network, threat: ThreatModel, plan: PlanDecision, vector: AttackVector,
                  options: AlgorithmOptions | None = None, value: float | None = None) -> float:
    """How much of the dual box an optimal dual at a fixed intrusion needs.

    Nodal prices are held to their natural range (plus or minus the value of
    lost load, which a shedding bus attains exactly). Returns the smallest
    ``t`` such that some optimal dual keeps every other multiplier within
    ``t * dual_bound_factor`` (scaled units), or ``inf`` when no optimal dual
    has prices in range. Values at or above 1 mean the box could have cut
    off the optimum.
    """
    options = options or AlgorithmOptions()
    sn = scale_network(net, threat.voll)
    bigm = BigMPolicy(options.theta_span).values(sn)
    w, v = vector.bus_status(net), vector.branch_status(net)
    if value is None:
        m, _, _ = _operator_lp(net, threat, plan, w, v, options.tighten_dp)
        res = solve(m)
        value = res.objective_value
    m = Model("dual_norm")
    inf = np.inf
    if options.subproblem_formulation == "hull":
        d = _add_hull_duals(m, sn, list(v), 1.0, inf)
    else:
        d = _add_bigm_duals(m, sn, 1.0, inf)
    obj = _dual_objective(m, sn, d, _plan_pu(net, plan), w, v, bigm, 0.0, 0.0, threat.delta_t,
                          options.tighten_dp)
    m.add_constraint(obj >= value - 1e-7 * (1.0 + abs(value)), "optimal")
    t = m.add_var("norm", lower=0.0)
    factor = options.dual_bound_factor
    for group, free in d.groups():
        for u in group:
            m.add_constraint(u <= factor * t)
            if free:
                m.add_constraint(-u <= factor * t)
    m.set_objective(t, "min")
    res = solve(m)
    if res.status == INFEASIBLE:
        return np.inf
    if not res.ok:
        raise SubproblemError(f"dual-norm LP ended with status {res.status}")
    return res.objective_value


def solve_subproblem(net: Network, threat: ThreatModel, attacker: Attacker, plan: PlanDecision,
                     options: AlgorithmOptions | None = None, *, backend=None,
                     dump_lp: str | Path | None = None) -> SubproblemResult:
    """Solve the attacker MILP and certify the answer.

    Raises :class:`DualBoundError` if the dual box could have cut off the
    optimum, and :class:`SubproblemError` when the MILP value disagrees with
    an exact re-evaluation of the returned intrusion.
    """
    options = options or AlgorithmOptions()
    t0 = time.perf_counter()
    sp = build_subproblem(net, threat, attacker, plan, options)
    if dump_lp is not None:
        Path(dump_lp).write_text(to_lp(sp.model))
    params = SolverParams(mip_gap=options.mip_gap, feasibility_tol=options.feasibility_tol,
                          time_limit=options.time_limit, presolve=options.subproblem_presolve,
                          keep_improving=options.extra_scenarios > 0)
    res = solve(sp.model, params, backend)
    if not res.ok:
        raise SubproblemError(f"attacker {attacker.id}: MILP ended with status {res.status}")
    vector = AttackVector.from_status(net, attacker.id, res.values(sp.w), res.values(sp.v))
    milp_value = res.objective_value
    duality_gap = 0.0
    if sp.primal_cost is not None:
        duality_gap = abs(res.value(sp.primal_cost) - res.value(sp.dual_cost))
        if duality_gap > 1e-6 * (1.0 + abs(milp_value)):
            raise SubproblemError(f"attacker {attacker.id}: duality gap {duality_gap:.3g} "
                                  "at the returned solution")
    exact = verify_attack(net, threat, attacker, plan, vector, tighten_dp=options.tighten_dp)
    exact_scaled = exact.cost / sp.scale
    norm = min_dual_norm(net, threat, plan, vector, options, exact_scaled)
    if abs(exact_scaled - milp_value) > 1e-5 * (1.0 + abs(exact_scaled)):
        # An undervalued attack with a saturated box is the box's fault.
        if exact_scaled > milp_value and norm >= 1.0 - 1e-6:
            raise DualBoundError(f"attacker {attacker.id}: dual bound active (MILP value "
                                 f"{milp_value * sp.scale:.6g} below exact response "
                                 f"{exact.cost:.6g}); increase dual_bound_factor")
        hint = " (theta_span too small?)" if exact_scaled < milp_value else ""
        raise SubproblemError(f"attacker {attacker.id}: MILP value {milp_value * sp.scale:.6g} "
                              f"differs from exact response {exact.cost:.6g}{hint}")
    if norm >= 1.0 - 1e-6:
        raise DualBoundError(f"attacker {attacker.id}: dual bound active (needs {norm:.4g} "
                             "of the box); increase dual_bound_factor")
    return SubproblemResult(attacker.id, vector, exact.cost, exact.shed, res.mip_gap,
                            time.perf_counter() - t0, sp.model.num_vars, sp.model.num_binaries,
                            norm, duality_gap * sp.scale,
                            _alternatives(sp, net, attacker, res, vector, options.extra_scenarios))


def _alternatives(sp: SubproblemModel, net: Network, attacker: Attacker, res, best: AttackVector,
                  limit: int) -> tuple[AttackVector, ...]:
    """Distinct earlier incumbents of the MILP, most damaging first.

    They are feasible intrusions but not certified worst cases; pooling them
    early only adds scenarios the master would meet anyway.
    """
    if limit <= 0:
        return ()
    wi = [x.index for x in sp.w]
    vi = [x.index for x in sp.v]
    out, seen = [], {best.key}
    for x in reversed(res.improving):
        vec = AttackVector.from_status(net, attacker.id, x[wi], x[vi])
        if vec.key not in seen:
            seen.add(vec.key)
            out.append(vec)
        if len(out) == limit:
            break
    return tuple(out)
