"""Planner's master problem over finite pools of known intrusions.

Every pooled intrusion gets its own copy of the operator response, priced
into an epigraph variable per attacker. How an intrusion plays out depends
on the attacker class:

* advanced: intruded buses lose their generators and opened branches carry
  no flow, whatever the firewalls say;
* basic: the intrusion at bus ``n`` succeeds only if ``z_n = 0``, so the
  post-attack status of that bus *is* the firewall variable ``z_n`` and all
  products with it are written as exact McCormick envelopes.

The master works in original units (MW, cost units).
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np

from .attack import AttackVector
from .linmodel import LinExpr, Model, SolverParams, solve
from .network import Network
from .powerflow import OFF, ON, BigMPolicy, FirstStage, PlanDecision, add_first_stage, \
    add_operator_block
from .threat import AlgorithmOptions, Attacker, ThreatModel


class PoolIntegrityError(ValueError):
    pass


class MasterError(RuntimeError):
    pass


class ScenarioPool:
    """Known intrusions per attacker, deduplicated on (buses, branches)."""

    def __init__(self, attackers):
        self._vectors: dict[str, list[AttackVector]] = {a.id: [] for a in attackers}
        self._keys: dict[str, set] = {a.id: set() for a in attackers}

    def add(self, vector: AttackVector) -> bool:
        """Insert ``vector``; returns False if it was already pooled."""
        if vector.attacker_id not in self._vectors:
            raise PoolIntegrityError(f"unknown attacker {vector.attacker_id!r}")
        if vector.key in self._keys[vector.attacker_id]:
            return False
        self._keys[vector.attacker_id].add(vector.key)
        self._vectors[vector.attacker_id].append(vector)
        return True

    def __contains__(self, vector: AttackVector) -> bool:
        return vector.key in self._keys.get(vector.attacker_id, ())

    def __getitem__(self, attacker_id: str) -> list[AttackVector]:
        return list(self._vectors[attacker_id])

    def __len__(self) -> int:
        return sum(len(v) for v in self._vectors.values())

    def sizes(self) -> dict[str, int]:
        return {k: len(v) for k, v in self._vectors.items()}

    def validate(self, net: Network, threat: ThreatModel):
        by_id = {a.id: a for a in threat.attackers}
        for aid, vecs in self._vectors.items():
            if aid not in by_id:
                raise PoolIntegrityError(f"pool holds unknown attacker {aid!r}")
            for vec in vecs:
                try:
                    vec.check(net, by_id[aid])
                except ValueError as exc:
                    raise PoolIntegrityError(f"attacker {aid!r}: {exc}") from None


@dataclass
class ScenarioResponse:
    attacker_id: str
    vector: AttackVector
    cost: float
    up: np.ndarray
    dp: np.ndarray
    shed: np.ndarray
    flow: np.ndarray
    angle: np.ndarray


@dataclass
class MasterSolution:
    plan: PlanDecision
    eta: dict[str, float]
    objective: float
    reserve_dispatch_cost: float
    firewall_cost: float
    mip_gap: float
    runtime: float
    responses: list[ScenarioResponse] = field(default_factory=list)

    @property
    def expected_cost(self) -> float:
        return self.objective - self.reserve_dispatch_cost - self.firewall_cost


@dataclass
class _Block:
    attacker: Attacker
    vector: AttackVector
    op: object


@dataclass
class MasterModel:
    model: Model
    first_stage: FirstStage
    eta: dict[str, object]
    blocks: list[_Block]


def effective_status(net: Network, attacker: Attacker, vector: AttackVector, z):
    """Post-attack bus statuses: 1 untouched, 0 intruded, or ``z_n`` for basic attacks."""
    out = [1.0] * net.n_bus
    for b in vector.buses:
        n = net.bus_index[b]
        out[n] = z[n] if attacker.is_basic else 0.0
    return out


def add_scenario(m: Model, net: Network, threat: ThreatModel, fs: FirstStage,
                 attacker: Attacker, vector: AttackVector, bigm, options: AlgorithmOptions,
                 tag: str):
    """Operator block for one pooled intrusion, wired to the first stage."""
    dt = threat.delta_t
    status = effective_status(net, attacker, vector, fs.z)
    injection, up_caps, dp_cap = [], [], []
    for g, gen in enumerate(net.generators):
        e = status[net.gen_bus[g]]
        p, r = fs.p[g], fs.r[g]
        cap = gen.capacity * dt
        if isinstance(e, float) and e == 1.0:
            inj = p
            caps = [dt * r]
        elif isinstance(e, float):
            inj = 0.0
            caps = [0.0]
        else:
            inj = m.add_var(f"pw{tag}[{gen.id}]", lower=0.0, upper=cap)
            m.add_constraint(inj <= p)
            m.add_constraint(inj <= cap * e)
            m.add_constraint(inj >= p - cap * (1.0 - e))
            caps = [dt * r, cap * e]
        injection.append(inj)
        up_caps.append(caps)
        dp_cap.append(inj if options.tighten_dp else p)
    opened = set(vector.branches)
    branch_status = []
    for k, t in enumerate(net.branches):
        if t.id not in opened:
            branch_status.append(ON)
        elif not attacker.is_basic:
            branch_status.append(OFF)
        else:
            branch_status.append(("cond", status[net.branch_from[k]], status[net.branch_to[k]]))
    return add_operator_block(m, net, threat, injection=injection, up_caps=up_caps,
                              dp_cap=dp_cap, status=branch_status, bigm=bigm, prefix=tag,
                              printed=options.printed_bigm_variant)


def build_master(net: Network, threat: ThreatModel, pool: ScenarioPool,
                 options: AlgorithmOptions | None = None) -> MasterModel:
    options = options or AlgorithmOptions()
    pool.validate(net, threat)
    m = Model("master")
    fs = add_first_stage(m, net, threat)
    bigm = BigMPolicy(options.theta_span).values(net)
    eta, blocks = {}, []
    expected = LinExpr()
    for i, attacker in enumerate(threat.attackers):
        eta[attacker.id] = m.add_var(f"eta[{attacker.id}]", lower=0.0)
        expected = expected + attacker.probability * eta[attacker.id]
        for s, vec in enumerate(pool[attacker.id]):
            op = add_scenario(m, net, threat, fs, attacker, vec, bigm, options, f"{i}_{s}")
            m.add_constraint(eta[attacker.id] >= op.cost, f"epi[{attacker.id},{s}]")
            blocks.append(_Block(attacker, vec, op))
    m.set_objective(fs.cost + expected, "min")
    return MasterModel(m, fs, eta, blocks)


def solve_master(mm: MasterModel, net: Network, threat: ThreatModel,
                 options: AlgorithmOptions | None = None, backend=None) -> MasterSolution:
    options = options or AlgorithmOptions()
    params = SolverParams(mip_gap=options.mip_gap, feasibility_tol=options.feasibility_tol,
                          time_limit=options.time_limit)
    t0 = time.perf_counter()
    res = solve(mm.model, params, backend)
    if not res.ok:
        raise MasterError(f"master MILP ended with status {res.status}")
    fs = mm.first_stage
    plan = fs.extract(res)
    responses = [
        ScenarioResponse(b.attacker.id, b.vector, res.value(b.op.cost), res.values(b.op.up),
                         res.values(b.op.dp), res.values(b.op.shed), res.values(b.op.f),
                         res.values(b.op.theta))
        for b in mm.blocks
    ]
    return MasterSolution(
        plan, {k: res.value(v) for k, v in mm.eta.items()}, res.objective_value,
        res.value(fs.dispatch_cost + fs.reserve_cost), res.value(fs.firewall_cost),
        res.mip_gap, time.perf_counter() - t0, responses)
