"""Grid model: buses, branches, generators and their incidence structure.

Two text formats are understood:

* Matpower-style case files (``mpc.bus``, ``mpc.gen``, ``mpc.branch``,
  ``mpc.gencost`` tables), read by :func:`parse_case`.
* A native TOML schema mirroring :class:`Network` field for field, read by
  :func:`parse_network_native` and written by :func:`emit_network_native`.
  See ``docs/native_format.md``.

Units: demands, capacities and flows in MW; ``Branch.reactance`` is the
per-unit reactance divided by ``base_mva`` so that ``flow = angle_diff /
reactance`` comes out in MW.
"""

from __future__ import annotations

import logging
import re
from dataclasses import asdict, dataclass, field, replace
from functools import cached_property
from importlib import resources

import numpy as np
import tomli
import tomli_w

log = logging.getLogger(__name__)


class NetworkError(ValueError):
    """Invalid network data (broken references, violated invariants)."""


class CaseParseError(ValueError):
    """Malformed Matpower case text."""


class NativeFormatError(ValueError):
    """Schema violation in a native network file."""


@dataclass(frozen=True)
class Bus:
    id: int
    demand: float = 0.0


@dataclass(frozen=True)
class Branch:
    id: int
    from_bus: int
    to_bus: int
    reactance: float
    capacity: float


@dataclass(frozen=True)
class Generator:
    id: int
    bus: int
    capacity: float
    dispatch_cost: float
    reserve_cost: float = 0.0
    redispatch_cost: float = 0.0


@dataclass(frozen=True)
class Network:
    buses: tuple[Bus, ...]
    branches: tuple[Branch, ...]
    generators: tuple[Generator, ...]
    base_mva: float = 100.0
    name: str = field(default="network", compare=False)

    def __post_init__(self):
        object.__setattr__(self, "buses", tuple(self.buses))
        object.__setattr__(self, "branches", tuple(self.branches))
        object.__setattr__(self, "generators", tuple(self.generators))
        self._validate()

    def _validate(self):
        if not self.buses:
            raise NetworkError("network needs at least one bus")
        if not self.base_mva > 0:
            raise NetworkError(f"base_mva must be positive, got {self.base_mva}")
        ids = [b.id for b in self.buses]
        if len(set(ids)) != len(ids):
            raise NetworkError("duplicate bus ids")
        known = set(ids)
        for b in self.buses:
            if not b.demand >= 0:
                raise NetworkError(f"bus {b.id}: demand must be >= 0, got {b.demand}")
        if len({t.id for t in self.branches}) != len(self.branches):
            raise NetworkError("duplicate branch ids")
        for t in self.branches:
            if t.from_bus not in known or t.to_bus not in known:
                raise NetworkError(
                    f"branch {t.id}: references unknown bus "
                    f"{t.from_bus if t.from_bus not in known else t.to_bus}")
            if t.from_bus == t.to_bus:
                raise NetworkError(f"branch {t.id}: from_bus equals to_bus ({t.from_bus})")
            if not t.reactance > 0:
                raise NetworkError(f"branch {t.id}: reactance must be > 0, got {t.reactance}")
            if not t.capacity >= 0:
                raise NetworkError(f"branch {t.id}: capacity must be >= 0, got {t.capacity}")
        if len({g.id for g in self.generators}) != len(self.generators):
            raise NetworkError("duplicate generator ids")
        for g in self.generators:
            if g.bus not in known:
                raise NetworkError(f"generator {g.id}: references unknown bus {g.bus}")
            for attr in ("capacity", "dispatch_cost", "reserve_cost", "redispatch_cost"):
                if not getattr(g, attr) >= 0:
                    raise NetworkError(f"generator {g.id}: {attr} must be >= 0")

    # -- index helpers -----------------------------------------------------

    @property
    def n_bus(self) -> int:
        return len(self.buses)

    @property
    def n_branch(self) -> int:
        return len(self.branches)

    @property
    def n_gen(self) -> int:
        return len(self.generators)

    @cached_property
    def bus_index(self) -> dict[int, int]:
        return {b.id: i for i, b in enumerate(self.buses)}

    @cached_property
    def bus_ids(self) -> list[int]:
        return [b.id for b in self.buses]

    @cached_property
    def demand(self) -> np.ndarray:
        return np.array([b.demand for b in self.buses], dtype=float)

    @cached_property
    def gen_bus(self) -> np.ndarray:
        """Internal bus index of every generator."""
        return np.array([self.bus_index[g.bus] for g in self.generators], dtype=int)

    @cached_property
    def branch_from(self) -> np.ndarray:
        return np.array([self.bus_index[t.from_bus] for t in self.branches], dtype=int)

    @cached_property
    def branch_to(self) -> np.ndarray:
        return np.array([self.bus_index[t.to_bus] for t in self.branches], dtype=int)

    @cached_property
    def gens_at(self) -> list[list[int]]:
        out: list[list[int]] = [[] for _ in self.buses]
        for g, n in enumerate(self.gen_bus):
            out[n].append(g)
        return out

    @cached_property
    def branches_at(self) -> list[list[int]]:
        out: list[list[int]] = [[] for _ in self.buses]
        for t in range(self.n_branch):
            out[self.branch_from[t]].append(t)
            out[self.branch_to[t]].append(t)
        return out

    @property
    def total_demand(self) -> float:
        return float(self.demand.sum())

    @property
    def total_capacity(self) -> float:
        return float(sum(g.capacity for g in self.generators))

    def reference_bus(self) -> int:
        """Internal index of the lowest-numbered bus."""
        return int(np.argmin(self.bus_ids))


def incidence(net: Network) -> tuple[np.ndarray, np.ndarray]:
    """Return ``(tau, gamma)``.

    ``tau[t, n]`` is +1 at the sending bus and -1 at the receiving bus of
    branch ``t``; ``gamma[g, n]`` is 1 at the bus hosting generator ``g``.
    """
    tau = np.zeros((net.n_branch, net.n_bus))
    tau[np.arange(net.n_branch), net.branch_from] = 1.0
    tau[np.arange(net.n_branch), net.branch_to] = -1.0
    gamma = np.zeros((net.n_gen, net.n_bus))
    gamma[np.arange(net.n_gen), net.gen_bus] = 1.0
    return tau, gamma


# -- Matpower case files ---------------------------------------------------

_TABLE = re.compile(r"mpc\.(\w+)\s*=\s*\[", re.M)
_SCALAR = re.compile(r"mpc\.baseMVA\s*=\s*([-+0-9.eE]+)\s*;")


def _read_tables(text: str) -> dict[str, list[tuple[int, list[float]]]]:
    tables = {}
    for m in _TABLE.finditer(text):
        name = m.group(1)
        start = m.end()
        end = text.find("]", start)
        if end < 0:
            raise CaseParseError(f"table mpc.{name}: missing closing ']'")
        body = text[start:end]
        line0 = text.count("\n", 0, start) + 1
        rows = []
        for k, raw in enumerate(body.split("\n")):
            line = raw.split("%", 1)[0]
            for chunk in line.split(";"):
                chunk = chunk.strip()
                if not chunk:
                    continue
                try:
                    vals = [float(tok) for tok in chunk.replace(",", " ").split()]
                except ValueError:
                    raise CaseParseError(
                        f"table mpc.{name}, line {line0 + k}: non-numeric entry in {chunk!r}"
                    ) from None
                rows.append((line0 + k, vals))
        tables[name] = rows
    return tables


def _need(tables, name, min_cols):
    if name not in tables:
        raise CaseParseError(f"missing table mpc.{name}")
    for line, row in tables[name]:
        if len(row) < min_cols:
            raise CaseParseError(
                f"table mpc.{name}, line {line}: expected >= {min_cols} columns, got {len(row)}")
    return tables[name]


def parse_case(text: str, *, quadratic: str = "ignore", name: str = "case") -> Network:
    """Parse a Matpower-style case into a :class:`Network`.

    Generator costs come from the linear coefficient of the ``gencost``
    polynomial. ``quadratic`` controls what happens to nonzero quadratic
    coefficients: ``"ignore"`` drops them (with a log message), ``"error"``
    rejects the file. Cubic and higher terms and piecewise-linear rows are
    always rejected. Out-of-service branches and generators are dropped;
    parallel branches are kept. Ids are the original bus numbers and the
    1-based row numbers of branches and generators.
    """
    if quadratic not in ("ignore", "error"):
        raise ValueError("quadratic must be 'ignore' or 'error'")
    m = _SCALAR.search(text)
    base = float(m.group(1)) if m else 100.0
    tables = _read_tables(text)
    bus_rows = _need(tables, "bus", 3)
    gen_rows = _need(tables, "gen", 10)
    br_rows = _need(tables, "branch", 11)
    if "gencost" not in tables:
        raise CaseParseError("costs required: missing table mpc.gencost")
    cost_rows = tables["gencost"]
    if len(cost_rows) < len(gen_rows):
        raise CaseParseError(
            f"costs required: mpc.gencost has {len(cost_rows)} rows for {len(gen_rows)} generators")

    buses = [Bus(int(r[0]), float(r[2])) for _, r in bus_rows]

    gens = []
    dropped_quad = 0
    for k, ((line, g), (cline, c)) in enumerate(zip(gen_rows, cost_rows), start=1):
        if len(c) < 4:
            raise CaseParseError(f"table mpc.gencost, line {cline}: too few columns")
        model, ncoef = int(c[0]), int(c[3])
        if model != 2:
            raise CaseParseError(
                f"table mpc.gencost, line {cline}: only polynomial (model 2) costs are supported")
        coefs = c[4:4 + ncoef]
        if len(coefs) != ncoef:
            raise CaseParseError(f"table mpc.gencost, line {cline}: expected {ncoef} coefficients")
        if any(coefs[:-3]):
            raise CaseParseError(
                f"table mpc.gencost, line {cline}: cubic or higher cost terms are not supported")
        if ncoef >= 3 and coefs[-3] != 0.0:
            if quadratic == "error":
                raise CaseParseError(
                    f"table mpc.gencost, line {cline}: quadratic cost term {coefs[-3]} rejected")
            dropped_quad += 1
        linear = coefs[-2] if ncoef >= 2 else 0.0
        if g[7] <= 0:
            continue
        gens.append(Generator(k, int(g[0]), float(g[8]), float(linear), 0.0, float(linear)))
    if dropped_quad:
        log.info("%s: ignored quadratic cost terms of %d generators", name, dropped_quad)

    total = sum(b.demand for b in buses) + sum(g.capacity for g in gens)
    branches = []
    for k, (line, r) in enumerate(br_rows, start=1):
        if r[10] <= 0:
            continue
        rate = float(r[5])
        if rate <= 0:
            # Matpower convention: 0 means unlimited; no DC flow can exceed this
            rate = total
        x = float(r[3])
        if not x > 0:
            raise NetworkError(f"branch {k} (line {line}): reactance must be > 0, got {x}")
        branches.append(Branch(k, int(r[0]), int(r[1]), x / base, rate))
    return Network(tuple(buses), tuple(branches), tuple(gens), base, name)


def load_case_file(path, **kw) -> Network:
    from pathlib import Path

    p = Path(path)
    kw.setdefault("name", p.stem)
    return parse_case(p.read_text(), **kw)


BENCHMARKS = {
    "case24": "pglib_opf_case24_ieee_rts.m",
    "case118": "pglib_opf_case118_ieee.m",
}


def load_benchmark(key: str) -> Network:
    """Load a bundled PGLib-OPF benchmark (``"case24"`` or ``"case118"``)."""
    fname = BENCHMARKS.get(key, key)
    text = resources.files("gridshield").joinpath("data", fname).read_text()
    return parse_case(text, name=fname.removesuffix(".m"))


# -- native TOML format ----------------------------------------------------

_NATIVE_FIELDS = {
    "buses": (Bus, {"id": int, "demand": float}),
    "branches": (Branch, {"id": int, "from_bus": int, "to_bus": int,
                          "reactance": float, "capacity": float}),
    "generators": (Generator, {"id": int, "bus": int, "capacity": float,
                               "dispatch_cost": float, "reserve_cost": float,
                               "redispatch_cost": float}),
}


def _coerce(value, typ, where):
    if typ is int:
        if isinstance(value, bool) or not isinstance(value, int):
            raise NativeFormatError(f"{where}: expected integer, got {value!r}")
        return value
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        raise NativeFormatError(f"{where}: expected number, got {value!r}")
    return float(value)


def network_from_dict(doc: dict, name: str | None = None) -> Network:
    parts = {}
    for section, (cls, fields) in _NATIVE_FIELDS.items():
        rows = doc.get(section, [])
        if not isinstance(rows, list):
            raise NativeFormatError(f"{section}: expected an array of tables")
        items = []
        for i, row in enumerate(rows):
            if not isinstance(row, dict):
                raise NativeFormatError(f"{section}[{i}]: expected a table")
            unknown = set(row) - set(fields)
            if unknown:
                raise NativeFormatError(f"{section}[{i}]: unknown field(s) {sorted(unknown)}")
            kw = {}
            for f, typ in fields.items():
                if f not in row:
                    if cls is Generator and f in ("reserve_cost", "redispatch_cost"):
                        continue
                    if cls is Bus and f == "demand":
                        continue
                    raise NativeFormatError(f"{section}[{i}].{f}: missing")
                kw[f] = _coerce(row[f], typ, f"{section}[{i}].{f}")
            if cls is Generator and "redispatch_cost" not in kw:
                kw["redispatch_cost"] = kw["dispatch_cost"]
            items.append(cls(**kw))
        parts[section] = tuple(items)
    base = _coerce(doc.get("base_mva", 100.0), float, "base_mva")
    try:
        return Network(parts["buses"], parts["branches"], parts["generators"], base,
                       name or doc.get("name", "network"))
    except NetworkError as exc:
        raise NetworkError(f"invalid network: {exc}") from None


def parse_network_native(text: str) -> Network:
    try:
        doc = tomli.loads(text)
    except tomli.TOMLDecodeError as exc:
        raise NativeFormatError(f"not valid TOML: {exc}") from None
    return network_from_dict(doc)


def network_to_dict(net: Network) -> dict:
    return {
        "name": net.name,
        "base_mva": net.base_mva,
        "buses": [asdict(b) for b in net.buses],
        "branches": [asdict(t) for t in net.branches],
        "generators": [asdict(g) for g in net.generators],
    }


def emit_network_native(net: Network) -> str:
    return tomli_w.dumps(network_to_dict(net))


def load_network(path, fmt: str | None = None) -> Network:
    """Read a grid file; ``fmt`` is ``"matpower"`` or ``"native"`` (guessed by suffix)."""
    from pathlib import Path

    p = Path(path)
    if fmt is None:
        fmt = "matpower" if p.suffix == ".m" else "native"
    if fmt == "matpower":
        return load_case_file(p)
    if fmt == "native":
        net = parse_network_native(p.read_text())
        return replace(net, name=p.stem) if net.name == "network" else net
    raise ValueError(f"unknown grid format {fmt!r}")
