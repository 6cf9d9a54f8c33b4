"""Attacker population, planner resources and cost environment.

Configs are TOML with the sections ``attackers`` (array of tables),
``planner``, ``costs`` and ``algorithm``; a case file may also carry a
``grid`` table pointing at the network. Example::

    [grid]
    source = "case24"          # bundled benchmark key or a path
    format = "matpower"

    [planner]
    budget = 24

    [costs]
    voll = 5000.0
    firewall_cost = 5.55
    reserve_fraction = 0.25

    [[attackers]]
    id = "basic"
    capability = "basic"
    budget = 2
    probability = 0.01
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path

import tomli
import tomli_w

from .network import Network

BASIC, ADVANCED = "basic", "advanced"


class ThreatConfigError(ValueError):
    pass


@dataclass(frozen=True)
class Attacker:
    id: str
    capability: str
    budget: int
    probability: float

    def __post_init__(self):
        if self.capability not in (BASIC, ADVANCED):
            raise ThreatConfigError(
                f"attacker {self.id!r}: capability must be 'basic' or 'advanced'")
        if isinstance(self.budget, bool) or not isinstance(self.budget, int) or self.budget < 0:
            raise ThreatConfigError(f"attacker {self.id!r}: budget must be an integer >= 0")
        if not 0.0 <= self.probability <= 1.0:
            raise ThreatConfigError(f"attacker {self.id!r}: probability must lie in [0, 1]")

    @property
    def is_basic(self) -> bool:
        return self.capability == BASIC


@dataclass(frozen=True)
class ThreatModel:
    attackers: tuple[Attacker, ...] = ()
    planner_budget: int = 0
    firewall_cost: float = 5.55
    voll: float = 5000.0
    delta_t: float = 1.0

    def __post_init__(self):
        object.__setattr__(self, "attackers", tuple(self.attackers))
        ids = [a.id for a in self.attackers]
        if len(set(ids)) != len(ids):
            raise ThreatConfigError("attacker ids must be unique")
        total = math.fsum(a.probability for a in self.attackers)
        if total > 1.0 + 1e-12:
            raise ThreatConfigError(f"attacker probabilities sum to {total} > 1")
        if isinstance(self.planner_budget, bool) or not isinstance(self.planner_budget, int) \
                or self.planner_budget < 0:
            raise ThreatConfigError("planner budget must be an integer >= 0")
        if self.firewall_cost < 0 or self.voll <= 0 or self.delta_t <= 0:
            raise ThreatConfigError("firewall_cost must be >= 0; voll and delta_t must be > 0")

    @property
    def basic(self) -> tuple[Attacker, ...]:
        return tuple(a for a in self.attackers if a.is_basic)

    @property
    def advanced(self) -> tuple[Attacker, ...]:
        return tuple(a for a in self.attackers if not a.is_basic)

    def check_against(self, net: Network):
        """Cross-check costs with a network (shedding must be the last resort)."""
        worst = max((g.redispatch_cost for g in net.generators), default=0.0)
        if not self.voll > worst:
            raise ThreatConfigError(
                f"voll {self.voll} must exceed the largest redispatch cost {worst}")

    def without(self, attacker_id: str) -> ThreatModel:
        return replace(self, attackers=tuple(a for a in self.attackers if a.id != attacker_id))

    def scaled(self, factor: float) -> ThreatModel:
        return replace(self, attackers=tuple(replace(a, probability=a.probability * factor)
                                             for a in self.attackers))


@dataclass
class AlgorithmOptions:
    tolerance: float = 1e-4
    max_iterations: int = 100
    seed: int = 0
    theta_span: float = 2 * math.pi
    dual_bound_factor: float = 10.0
    tighten_dp: bool = False
    printed_bigm_variant: bool = False
    mip_gap: float = 1e-6
    feasibility_tol: float = 1e-7
    time_limit: float | None = None
    workers: int = 1
    enumeration_cap: int = 1_000_000
    subproblem_formulation: str = "hull"
    subproblem_presolve: bool = False
    extra_scenarios: int = 3

    def __post_init__(self):
        if not self.tolerance > 0:
            raise ThreatConfigError("tolerance must be > 0")
        if self.max_iterations < 1:
            raise ThreatConfigError("max_iterations must be >= 1")
        if not self.theta_span > 0 or not self.dual_bound_factor > 0:
            raise ThreatConfigError("theta_span and dual_bound_factor must be > 0")
        if (not isinstance(self.extra_scenarios, int) or isinstance(self.extra_scenarios, bool)
                or self.extra_scenarios < 0):
            raise ThreatConfigError("extra_scenarios must be an integer >= 0")
        if self.subproblem_formulation not in ("hull", "bigm"):
            raise ThreatConfigError("subproblem_formulation must be 'hull' or 'bigm'")


@dataclass
class CostSettings:
    voll: float = 5000.0
    firewall_cost: float = 5.55
    reserve_fraction: float = 0.25
    delta_t: float = 1.0
    overrides: dict[int, dict[str, float]] = field(default_factory=dict)


@dataclass
class CaseConfig:
    name: str
    threat: ThreatModel
    costs: CostSettings
    algorithm: AlgorithmOptions
    grid_source: str | None = None
    grid_format: str | None = None
    base_dir: Path | None = None


def _attackers_from(doc) -> tuple[Attacker, ...]:
    out = []
    for i, row in enumerate(doc.get("attackers", [])):
        try:
            out.append(Attacker(str(row.get("id", f"attacker{i}")), row["capability"],
                                row["budget"], float(row["probability"])))
        except KeyError as exc:
            raise ThreatConfigError(f"attackers[{i}]: missing field {exc.args[0]!r}") from None
    return tuple(out)


def _costs_from(doc) -> CostSettings:
    c = doc.get("costs", {})
    overrides = {}
    for i, row in enumerate(c.get("generator", [])):
        if "id" not in row:
            raise ThreatConfigError(f"costs.generator[{i}]: missing id")
        overrides[int(row["id"])] = {k: float(v) for k, v in row.items() if k != "id"}
    cs = CostSettings(float(c.get("voll", 5000.0)), float(c.get("firewall_cost", 5.55)),
                      float(c.get("reserve_fraction", 0.25)), float(c.get("delta_t", 1.0)),
                      overrides)
    if cs.reserve_fraction < 0:
        raise ThreatConfigError("reserve_fraction must be >= 0")
    return cs


def _threat_from(doc) -> ThreatModel:
    costs = _costs_from(doc)
    budget = doc.get("planner", {}).get("budget", 0)
    return ThreatModel(_attackers_from(doc), budget, costs.firewall_cost, costs.voll,
                       costs.delta_t)


def load_threat_config(source: str) -> ThreatModel:
    """Parse config text into a validated :class:`ThreatModel`."""
    try:
        doc = tomli.loads(source)
    except tomli.TOMLDecodeError as exc:
        raise ThreatConfigError(f"not valid TOML: {exc}") from None
    return _threat_from(doc)


def emit_threat_config(threat: ThreatModel) -> str:
    doc = {
        "planner": {"budget": threat.planner_budget},
        "costs": {"voll": threat.voll, "firewall_cost": threat.firewall_cost,
                  "delta_t": threat.delta_t},
        "attackers": [asdict(a) for a in threat.attackers],
    }
    return tomli_w.dumps(doc)


def load_case_config(path) -> CaseConfig:
    """Read a full run config (grid reference, threat, costs, algorithm)."""
    path = Path(path)
    try:
        doc = tomli.loads(path.read_text())
    except tomli.TOMLDecodeError as exc:
        raise ThreatConfigError(f"{path}: not valid TOML: {exc}") from None
    algo = doc.get("algorithm", {})
    known = {f.name for f in fields(AlgorithmOptions)}
    unknown = set(algo) - known
    if unknown:
        raise ThreatConfigError(f"algorithm: unknown option(s) {sorted(unknown)}")
    grid = doc.get("grid", {})
    return CaseConfig(doc.get("name", path.stem), _threat_from(doc), _costs_from(doc),
                      AlgorithmOptions(**algo), grid.get("source"), grid.get("format"),
                      path.parent)


def apply_default_costs(net: Network, voll: float = 5000.0, firewall_cost: float = 5.55,
                        reserve_fraction: float = 0.25,
                        overrides: dict[int, dict[str, float]] | None = None) -> Network:
    """Set reserve costs to ``reserve_fraction`` x dispatch cost.

    Redispatch costs keep whatever the network carries (the parsers default
    them to the dispatch cost). ``overrides`` maps generator id to explicit
    ``dispatch_cost`` / ``reserve_cost`` / ``redispatch_cost`` values.
    ``voll`` and ``firewall_cost`` live on the :class:`ThreatModel`; they are
    accepted here so one call can be checked against both.
    """
    if reserve_fraction < 0:
        raise ThreatConfigError("reserve_fraction must be >= 0")
    overrides = overrides or {}
    known = {g.id for g in net.generators}
    missing = set(overrides) - known
    if missing:
        raise ThreatConfigError(f"cost overrides for unknown generator(s) {sorted(missing)}")
    gens = []
    for g in net.generators:
        g = replace(g, reserve_cost=reserve_fraction * g.dispatch_cost)
        if g.id in overrides:
            g = replace(g, **overrides[g.id])
        gens.append(g)
    return replace(net, generators=tuple(gens))


def prepare(net: Network, cfg: CaseConfig) -> Network:
    """Apply a case's cost settings to ``net`` and validate the pair."""
    c = cfg.costs
    out = apply_default_costs(net, c.voll, c.firewall_cost, c.reserve_fraction, c.overrides)
    cfg.threat.check_against(out)
    return out
