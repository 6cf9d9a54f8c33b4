"""DC power-flow and dispatch fragments shared by every optimization model.

The pieces here are builders over :class:`~gridshield.linmodel.Model`:

* :func:`add_first_stage` - planner dispatch, reserve, firewall binaries and
  the pre-attack network (no shedding, reference angle at the lowest bus).
* :func:`add_dc_flow_block` - flows and angles for a post-attack state where
  each branch is on, off, or conditional on endpoint-status expressions.
* :func:`add_operator_block` - the operator's redispatch/shedding response.

Post-attack angles carry no reference: attacked topologies may island, and
flows only depend on angle differences.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .linmodel import LinExpr, Model, SolverParams, Var, as_expr, solve
from .network import Network
from .threat import ThreatModel

ON, OFF, COND = "on", "off", "cond"


class InsufficientCapacity(RuntimeError):
    """Base case cannot be served without shedding."""


class ConfigurationError(ValueError):
    pass


@dataclass(frozen=True)
class BigMPolicy:
    """Flow-definition big-M: ``M_t = F_t + theta_span / X_t``."""

    theta_span: float = 2 * math.pi

    def values(self, net: Network) -> np.ndarray:
        return np.array([t.capacity + self.theta_span / t.reactance for t in net.branches])


def check_bigm(net: Network, bigm: np.ndarray):
    for t, m in zip(net.branches, bigm):
        if m < t.capacity:
            raise ConfigurationError(f"branch {t.id}: big-M {m} is below its capacity {t.capacity}")


@dataclass
class PlanDecision:
    """First-stage decisions, indexed in network order."""

    dispatch: np.ndarray
    reserve: np.ndarray
    firewall: np.ndarray
    base_flow: np.ndarray
    base_angle: np.ndarray

    def secured_buses(self, net: Network) -> list[int]:
        return [net.bus_ids[n] for n in np.flatnonzero(np.round(self.firewall) > 0.5)]

    def dispatch_cost(self, net: Network) -> float:
        return float(sum(g.dispatch_cost * p for g, p in zip(net.generators, self.dispatch)))

    def reserve_cost(self, net: Network) -> float:
        return float(sum(g.reserve_cost * r for g, r in zip(net.generators, self.reserve)))

    def firewall_cost(self, threat: ThreatModel) -> float:
        return float(threat.firewall_cost * np.round(self.firewall).sum())

    def first_stage_cost(self, net: Network, threat: ThreatModel) -> float:
        return self.dispatch_cost(net) + self.reserve_cost(net) + self.firewall_cost(threat)

    def violations(self, net: Network, threat: ThreatModel, tol: float = 1e-6) -> list[str]:
        """Human-readable list of violated first-stage constraints."""
        out = []
        dt = threat.delta_t
        scale = max(1.0, net.total_demand)
        for g, p, r in zip(net.generators, self.dispatch, self.reserve):
            if p < -tol or r < -tol:
                out.append(f"generator {g.id}: negative dispatch or reserve")
            if p + r * dt > g.capacity * dt + tol * scale:
                out.append(f"generator {g.id}: dispatch + reserve {p + r * dt:.6g} exceeds "
                           f"capacity {g.capacity * dt:.6g}")
        z = np.asarray(self.firewall, dtype=float)
        if np.any(np.abs(z - np.round(z)) > tol) or np.any((z < -tol) | (z > 1 + tol)):
            out.append("firewall decisions must be binary")
        if np.round(z).sum() > threat.planner_budget:
            out.append(f"{int(np.round(z).sum())} firewalls exceed planner budget "
                       f"{threat.planner_budget}")
        inj = np.zeros(net.n_bus)
        np.add.at(inj, net.gen_bus, self.dispatch)
        out_flow = np.zeros(net.n_bus)
        np.add.at(out_flow, net.branch_from, self.base_flow)
        np.subtract.at(out_flow, net.branch_to, self.base_flow)
        bal = inj - out_flow - net.demand
        for n in np.flatnonzero(np.abs(bal) > tol * scale):
            out.append(f"bus {net.bus_ids[n]}: power balance off by {bal[n]:.6g}")
        for k, t in enumerate(net.branches):
            f = self.base_flow[k]
            dtheta = self.base_angle[net.branch_from[k]] - self.base_angle[net.branch_to[k]]
            if abs(f - dtheta / t.reactance) > tol * scale:
                out.append(f"branch {t.id}: flow does not match angle difference")
            if abs(f) > t.capacity + tol * scale:
                out.append(f"branch {t.id}: flow {f:.6g} exceeds capacity {t.capacity}")
        return out

    def to_dict(self, net: Network) -> dict:
        return {
            "dispatch": {str(g.id): float(v) for g, v in zip(net.generators, self.dispatch)},
            "reserve": {str(g.id): float(v) for g, v in zip(net.generators, self.reserve)},
            "firewall": self.secured_buses(net),
            "base_flow": {str(t.id): float(v) for t, v in zip(net.branches, self.base_flow)},
            "base_angle": {str(b): float(v) for b, v in zip(net.bus_ids, self.base_angle)},
        }

    @classmethod
    def from_dict(cls, net: Network, doc: dict) -> PlanDecision:
        """Build a plan from ids; base flows are recomputed when absent."""
        gen_ids = [str(g.id) for g in net.generators]
        for key in ("dispatch", "reserve"):
            unknown = set(doc.get(key, {})) - set(gen_ids)
            if unknown:
                raise ValueError(f"plan {key}: unknown generator id(s) {sorted(unknown)}")
        p = np.array([float(doc.get("dispatch", {}).get(i, 0.0)) for i in gen_ids])
        r = np.array([float(doc.get("reserve", {}).get(i, 0.0)) for i in gen_ids])
        z = np.zeros(net.n_bus)
        for b in doc.get("firewall", []):
            if b not in net.bus_index:
                raise ValueError(f"plan firewall: unknown bus {b}")
            z[net.bus_index[b]] = 1.0
        if "base_flow" in doc and "base_angle" in doc:
            f = np.array([float(doc["base_flow"][str(t.id)]) for t in net.branches])
            th = np.array([float(doc["base_angle"][str(b)]) for b in net.bus_ids])
        else:
            f, th = dc_power_flow(net, p)
        return cls(p, r, z, f, th)


@dataclass
class FirstStage:
    p: list[Var]
    r: list[Var]
    z: list[Var]
    f0: list[Var]
    theta0: list[Var]
    dispatch_cost: LinExpr
    reserve_cost: LinExpr
    firewall_cost: LinExpr

    @property
    def cost(self) -> LinExpr:
        return self.dispatch_cost + self.reserve_cost + self.firewall_cost

    def extract(self, res) -> PlanDecision:
        return PlanDecision(res.values(self.p), res.values(self.r),
                            np.round(res.values(self.z)), res.values(self.f0),
                            res.values(self.theta0))


def add_first_stage(m: Model, net: Network, threat: ThreatModel, *,
                    fixed_firewall: np.ndarray | None = None) -> FirstStage:
    """Planner variables and the no-shedding pre-attack network."""
    dt = threat.delta_t
    p = [m.add_var(f"p[{g.id}]", lower=0.0, upper=g.capacity * dt) for g in net.generators]
    r = [m.add_var(f"r[{g.id}]", lower=0.0, upper=g.capacity) for g in net.generators]
    for g, pg, rg in zip(net.generators, p, r):
        m.add_constraint(pg + dt * rg <= g.capacity * dt, f"cap[{g.id}]")
    if fixed_firewall is None:
        z = [m.add_binary(f"z[{b}]") for b in net.bus_ids]
    else:
        z = [m.add_var(f"z[{b}]", kind="binary", lower=v, upper=v)
             for b, v in zip(net.bus_ids, np.round(fixed_firewall))]
    m.add_constraint(LinExpr.sum(z) <= threat.planner_budget, "firewall_budget")
    status = [ON] * net.n_branch
    f0, th0 = add_dc_flow_block(m, net, status, None, prefix="0", reference=True)
    injection = [LinExpr() for _ in net.buses]
    for g, n in enumerate(net.gen_bus):
        injection[n] = injection[n] + p[g]
    _add_balance(m, net, injection, f0, None, prefix="0")
    return FirstStage(
        p, r, z, f0, th0,
        LinExpr.sum(g.dispatch_cost * pg for g, pg in zip(net.generators, p)),
        LinExpr.sum(g.reserve_cost * rg for g, rg in zip(net.generators, r)),
        LinExpr.sum(threat.firewall_cost * zn for zn in z),
    )


def _add_balance(m: Model, net: Network, injection, f, shed, prefix: str):
    """``injection_n - sum_t tau_tn f_t = D_n - l_n`` at every bus."""
    for n, bus in enumerate(net.buses):
        expr = as_expr(injection[n]).copy()
        for t in net.branches_at[n]:
            if net.branch_from[t] == n:
                expr = expr - f[t]
            else:
                expr = expr + f[t]
        if shed is not None:
            expr = expr + shed[n]
        m.add_constraint(expr == bus.demand, f"bal{prefix}[{bus.id}]")


def add_dc_flow_block(m: Model, net: Network, status, bigm, *, prefix: str = "",
                      reference: bool = False, printed: bool = False):
    """Flows ``f`` and angles ``theta`` for one network state.

    ``status[t]`` is ``"on"`` (DC flow definition), ``"off"`` (zero flow) or
    ``("cond", e_from, e_to)`` where the ``e`` are endpoint-status expressions
    (1 = not intruded): the flow is forced to zero when either endpoint is
    intruded and follows the DC definition when both are intact. ``bigm`` is
    required when any branch is conditional.
    """
    theta = [m.add_var(f"th{prefix}[{b}]", lower=-math.inf, upper=math.inf)
             for b in net.bus_ids]
    if reference:
        ref = theta[net.reference_bus()]
        ref.lower = ref.upper = 0.0
    f = []
    for k, t in enumerate(net.branches):
        st = status[k]
        cap = 0.0 if st == OFF else t.capacity
        fk = m.add_var(f"f{prefix}[{t.id}]", lower=-cap, upper=cap)
        f.append(fk)
        if st == OFF:
            continue
        flow_def = fk - (1.0 / t.reactance) * (theta[net.branch_from[k]] - theta[net.branch_to[k]])
        if st == ON:
            m.add_constraint(flow_def == 0.0, f"fdef{prefix}[{t.id}]")
            continue
        _, e_s, e_r = st
        if bigm is None:
            raise ConfigurationError("conditional branches need a big-M vector")
        if bigm[k] < t.capacity:
            raise ConfigurationError(
                f"branch {t.id}: big-M {bigm[k]} is below its capacity {t.capacity}")
        for e in (e_s, e_r):
            if isinstance(e, (int, float)):
                if e < 0.5:
                    fk.lower = fk.upper = 0.0
                continue
            m.add_constraint(fk <= t.capacity * e)
            m.add_constraint(fk >= -t.capacity * e)
        M = float(bigm[k])
        if printed:
            m.add_constraint(flow_def <= M * (2.0 - as_expr(e_s) + e_r))
            m.add_constraint(flow_def >= M * (as_expr(e_s) + e_r - 2.0))
        else:
            slack = 2.0 - as_expr(e_s) - e_r
            m.add_constraint(flow_def <= M * slack)
            m.add_constraint(flow_def >= -M * slack)
    return f, theta


@dataclass
class OperatorBlock:
    up: list[Var]
    dp: list[Var]
    shed: list[Var]
    f: list[Var]
    theta: list[Var]
    cost: LinExpr
    injection: list = field(default_factory=list)


def add_operator_block(m: Model, net: Network, threat: ThreatModel, *, injection, up_caps,
                       dp_cap, status, bigm=None, prefix: str = "",
                       printed: bool = False) -> OperatorBlock:
    """Post-attack redispatch ``up``/``dp``, shedding ``l`` and flows.

    ``injection[g]`` is the surviving pre-attack output of generator ``g``
    (a constant, variable or expression); ``up_caps[g]`` is a list of upper
    bounds on ``up_g``; ``dp_cap[g]`` bounds ``dp_g``. Upward redispatch and
    shedding carry cost; downward redispatch is free.
    """
    up, dp = [], []
    for g, gen in enumerate(net.generators):
        ug = m.add_var(f"up{prefix}[{gen.id}]", lower=0.0)
        for cap in up_caps[g]:
            if isinstance(cap, (int, float)):
                ug.upper = min(ug.upper, float(cap))
            else:
                m.add_constraint(ug <= cap)
        dg = m.add_var(f"dp{prefix}[{gen.id}]", lower=0.0)
        cap = dp_cap[g]
        if isinstance(cap, (int, float)):
            dg.upper = max(0.0, float(cap))
        else:
            m.add_constraint(dg <= cap)
        up.append(ug)
        dp.append(dg)
    shed = [m.add_var(f"l{prefix}[{b.id}]", lower=0.0, upper=b.demand) for b in net.buses]
    f, theta = add_dc_flow_block(m, net, status, bigm, prefix=prefix, printed=printed)
    bus_inj = [LinExpr() for _ in net.buses]
    for g, n in enumerate(net.gen_bus):
        bus_inj[n] = bus_inj[n] + injection[g] + up[g] - dp[g]
    _add_balance(m, net, bus_inj, f, shed, prefix=prefix)
    cost = LinExpr.sum(gen.redispatch_cost * ug for gen, ug in zip(net.generators, up)) \
        + threat.voll * LinExpr.sum(shed)
    return OperatorBlock(up, dp, shed, f, theta, cost, list(injection))


def build_base_opf(net: Network, threat: ThreatModel) -> tuple[Model, FirstStage]:
    """First-stage model with no attackers (dispatch, reserve, firewalls)."""
    m = Model("base_opf")
    fs = add_first_stage(m, net, threat)
    m.set_objective(fs.cost, "min")
    return m, fs


def solve_base_opf(net: Network, threat: ThreatModel, params: SolverParams | None = None,
                   backend=None) -> tuple[PlanDecision, float]:
    m, fs = build_base_opf(net, threat)
    res = solve(m, params, backend)
    if res.status == "infeasible":
        raise InsufficientCapacity(
            f"{net.name}: insufficient generation capacity (or transfer capability) "
            "to serve demand without shedding")
    if not res.ok:
        raise RuntimeError(f"base OPF solve ended with status {res.status}")
    return fs.extract(res), res.objective_value


def dc_power_flow(net: Network, dispatch) -> tuple[np.ndarray, np.ndarray]:
    """Base-case flows and angles for a given dispatch (reference at lowest bus).

    Any feasible flow pattern is returned; raises ``ValueError`` when the
    dispatch cannot be delivered within thermal limits.
    """
    m = Model("dc_pf")
    f, th = add_dc_flow_block(m, net, [ON] * net.n_branch, None, prefix="0", reference=True)
    inj = [0.0] * net.n_bus
    for g, n in enumerate(net.gen_bus):
        inj[n] += float(dispatch[g])
    _add_balance(m, net, inj, f, None, prefix="0")
    res = solve(m)
    if not res.ok:
        raise ValueError("dispatch does not balance demand within branch limits "
                         f"(power-flow status {res.status})")
    return res.values(f), res.values(th)
