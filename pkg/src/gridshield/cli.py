"""Command-line front end.

Subcommands::

    gridshield opf     --grid case24
    gridshield assess  --case B --plan out/plan.toml
    gridshield solve   --case A --out runs/A
    gridshield oracle  --grid fixture:five_bus --threat toy.toml
    gridshield report  --out runs/A

Grids are a bundled benchmark key (``case24``, ``case118``), ``fixture:NAME``
for a bundled toy, or a file path. ``--case`` names a shipped configuration
(``A`` ... ``I``) or a case file; ``--threat`` is an equivalent spelling for
a file. Human-readable tables go to stdout; machine records (one JSON object
per line) go to ``--out``.

Exit codes: 0 success, 1 oracle check failed, 2 gap not closed, 3 input
error, 4 solver or backend error.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from decimal import ROUND_HALF_EVEN, Decimal
from importlib import resources
from pathlib import Path

import tomli
import tomli_w

from .attack import SubproblemError, solve_subproblem
from .ccg import CONVERGED, StallError, normalize_costs, run_ccg
from .linmodel import BackendError
from .master import MasterError, PoolIntegrityError
from .network import (BENCHMARKS, CaseParseError, NativeFormatError, Network, NetworkError,
                      load_benchmark, load_network)
from .oracle import EnumerationLimitError, enumerate_optimal_plan, enumerate_worst_attack
from .powerflow import ConfigurationError, InsufficientCapacity, PlanDecision, solve_base_opf
from .threat import (AlgorithmOptions, CaseConfig, CostSettings, ThreatConfigError,
                     ThreatModel, load_case_config, prepare)

EXIT_OK, EXIT_CHECK, EXIT_GAP, EXIT_INPUT, EXIT_BACKEND = 0, 1, 2, 3, 4

INPUT_ERRORS = (NetworkError, CaseParseError, NativeFormatError, ThreatConfigError,
                PoolIntegrityError, ConfigurationError, InsufficientCapacity,
                EnumerationLimitError, FileNotFoundError, tomli.TOMLDecodeError)
BACKEND_ERRORS = (BackendError, SubproblemError, MasterError, StallError)


class InputError(ValueError):
    pass


def pct(value: float) -> str:
    """Half-even rounding to two decimals, from the shortest repr of ``value``."""
    return str(Decimal(repr(float(value))).quantize(Decimal("0.01"), rounding=ROUND_HALF_EVEN))


def bus_ranges(ids) -> str:
    ids = sorted(ids)
    if not ids:
        return "none"
    parts, start, prev = [], ids[0], ids[0]
    for b in ids[1:] + [None]:
        if b is not None and b == prev + 1:
            prev = b
            continue
        parts.append(str(start) if start == prev else f"{start}-{prev}")
        if b is not None:
            start = prev = b
    return ",".join(parts)


def _shipped_case(name: str) -> Path | None:
    ref = resources.files("gridshield") / "cases" / f"{name}.toml"
    return Path(str(ref)) if ref.is_file() else None


def resolve_grid(source: str, fmt: str | None = None, base_dir: Path | None = None) -> Network:
    if source in BENCHMARKS:
        return load_benchmark(source)
    if source.startswith("fixture:"):
        ref = resources.files("gridshield") / "fixtures" / f"{source.split(':', 1)[1]}.toml"
        if not ref.is_file():
            raise InputError(f"no bundled fixture named {source!r}")
        return load_network(Path(str(ref)), "native")
    path = Path(source)
    if not path.is_absolute() and base_dir is not None and not path.exists():
        path = base_dir / path
    if not path.exists():
        raise InputError(f"grid file not found: {source}")
    return load_network(path, fmt)


def _load_config(args) -> CaseConfig:
    ref = args.case or args.threat
    if ref is None:
        return CaseConfig("adhoc", ThreatModel(), CostSettings(), AlgorithmOptions())
    path = Path(ref)
    if not path.exists():
        shipped = _shipped_case(ref)
        if shipped is None:
            raise InputError(f"config not found: {ref}")
        path = shipped
    return load_case_config(path)


def _count(text: str) -> int:
    value = int(text)
    if value < 0:
        raise argparse.ArgumentTypeError("must be >= 0")
    return value


def _options(args, cfg: CaseConfig) -> AlgorithmOptions:
    o = cfg.algorithm
    for flag, attr in (("tolerance", "tolerance"), ("max_iter", "max_iterations"),
                       ("seed", "seed"), ("theta_span", "theta_span"),
                       ("dual_bound_factor", "dual_bound_factor"),
                       ("subproblem_formulation", "subproblem_formulation"),
                       ("extra_scenarios", "extra_scenarios")):
        val = getattr(args, flag, None)
        if val is not None:
            setattr(o, attr, val)
    if getattr(args, "tighten_dp", False):
        o.tighten_dp = True
    if getattr(args, "printed_bigm_variant", False):
        o.printed_bigm_variant = True
    o.__post_init__()
    return o


def _setup(args):
    cfg = _load_config(args)
    source = args.grid or cfg.grid_source
    if source is None:
        raise InputError("no grid given (use --grid or a config with a [grid] table)")
    net = resolve_grid(source, args.format or cfg.grid_format, cfg.base_dir)
    net = prepare(net, cfg)
    return cfg, net, _options(args, cfg)


def _out_dir(args) -> Path | None:
    if not args.out:
        return None
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _write_records(path: Path, records):
    with open(path, "w") as fh:
        for rec in records:
            fh.write(json.dumps(rec, sort_keys=True) + "\n")


def _plan_doc(net: Network, plan: PlanDecision) -> str:
    return tomli_w.dumps({"network": net.name, **plan.to_dict(net)})


def cmd_opf(args) -> int:
    cfg, net, _ = _setup(args)
    plan, obj = solve_base_opf(net, cfg.threat)
    print(f"{net.name}: base-case cost {obj:.2f}")
    print(f"{'gen':>5} {'bus':>5} {'dispatch MW':>12} {'capacity MW':>12} {'cost/MWh':>9}")
    for g, p in zip(net.generators, plan.dispatch):
        print(f"{g.id:>5} {g.bus:>5} {p:>12.2f} {g.capacity:>12.2f} {g.dispatch_cost:>9.3f}")
    out = _out_dir(args)
    if out is not None:
        recs = [{"record": "opf", "network": net.name, "objective": obj}]
        recs += [{"record": "dispatch", "generator": g.id, "bus": g.bus, "dispatch": float(p)}
                 for g, p in zip(net.generators, plan.dispatch)]
        _write_records(out / "opf.jsonl", recs)
        (out / "plan.toml").write_text(_plan_doc(net, plan))
    return EXIT_OK


def _read_plan(net: Network, threat: ThreatModel, path: str) -> PlanDecision:
    doc = tomli.loads(Path(path).read_text())
    plan = PlanDecision.from_dict(net, doc)
    problems = plan.violations(net, threat)
    if problems:
        raise InputError("plan violates first-stage constraints:\n  " + "\n  ".join(problems))
    return plan


def cmd_assess(args) -> int:
    cfg, net, opts = _setup(args)
    _, base = solve_base_opf(net, cfg.threat)
    if args.plan:
        plan = _read_plan(net, cfg.threat, args.plan)
    else:
        plan, _ = solve_base_opf(net, cfg.threat)
    recs = []
    print(f"{net.name}: worst-case intrusions against plan "
          f"(secured {bus_ranges(plan.secured_buses(net))})")
    for a in cfg.threat.attackers:
        res = solve_subproblem(net, cfg.threat, a, plan, opts)
        gens = [g.id for g in net.generators if g.bus in res.vector.buses]
        print(f"  {a.id} ({a.capability}, W={a.budget}): buses {bus_ranges(res.vector.buses)}; "
              f"branches {sorted(res.vector.branches) or 'none'}; generators {gens or 'none'}; "
              f"impact {res.impact:.2f} ({pct(normalize_costs(res.impact, base))}% of base)")
        recs.append({"record": "attack", "attacker": a.id, "capability": a.capability,
                     "buses": sorted(res.vector.buses), "branches": sorted(res.vector.branches),
                     "generators": gens, "impact": res.impact,
                     "impact_pct": normalize_costs(res.impact, base)})
    out = _out_dir(args)
    if out is not None:
        _write_records(out / "assess.jsonl", recs)
    return EXIT_OK


def summary_records(net: Network, cfg: CaseConfig, opts: AlgorithmOptions, result) -> list[dict]:
    """Deterministic machine records for a solve: one summary plus the trace."""
    r = result
    summary = {
        "record": "summary", "case": cfg.name, "network": net.name, "status": r.status,
        "iterations": r.iterations, "gap": r.gap, "base_cost": r.base_cost,
        "secured": r.plan.secured_buses(net),
        "total": r.total_cost, "reserve_dispatch": r.reserve_dispatch_cost,
        "firewall": r.firewall_cost, "expected": r.expected_cost,
        "total_pct": r.pct(r.total_cost), "reserve_dispatch_pct": r.pct(r.reserve_dispatch_cost),
        "firewall_pct": r.pct(r.firewall_cost), "expected_pct": r.pct(r.expected_cost),
        "worst_attacks": {k: {"buses": sorted(v.buses), "branches": sorted(v.branches)}
                          for k, v in r.worst_attacks.items()},
        "impacts": r.impacts, "seed": opts.seed, "tolerance": opts.tolerance,
    }
    trace = [{"record": "trace", "iteration": t.iteration, "secured": t.secured,
              "attacks": t.attacks, "reserve_dispatch_pct": t.reserve_dispatch_pct,
              "total_pct": t.total_pct, "lower_bound": t.lower_bound,
              "upper_bound": t.upper_bound, "gap": t.gap} for t in r.trace]
    return [summary] + trace


def timing_record(result, threat: ThreatModel) -> dict:
    master = sum(t.master_time for t in result.trace)
    sub = {"basic": 0.0, "advanced": 0.0}
    for t in result.trace:
        for cls, sec in t.subproblem_time.items():
            sub[cls] += sec
    return {"record": "timing", "total": result.runtime, "master": master,
            "basic": sub["basic"], "advanced": sub["advanced"], "iterations": result.iterations}


def render_summary(summary: dict, trace: list[dict], timing: dict | None = None) -> str:
    lines = [f"case {summary['case']} on {summary['network']}: {summary['status']} after "
             f"{summary['iterations']} iteration(s), gap {summary['gap']:.2e}",
             f"secured {bus_ranges(summary['secured'])}",
             f"{'total %':>10} {'reserve&dispatch %':>19} {'firewalls %':>12} {'expected %':>11}",
             f"{pct(summary['total_pct']):>10} {pct(summary['reserve_dispatch_pct']):>19} "
             f"{pct(summary['firewall_pct']):>12} {pct(summary['expected_pct']):>11}"]
    for aid, att in sorted(summary["worst_attacks"].items()):
        lines.append(f"worst intrusion by {aid}: buses {bus_ranges(att['buses'])}")
    lines.append("")
    lines.append(f"{'iter':>4}  {'secured':<28} {'attacked':<34} {'R&D %':>8} {'total %':>8}")
    for t in trace:
        att = "; ".join(f"{k} {','.join(map(str, v)) or '-'}" for k, v in sorted(t["attacks"].items()))
        lines.append(f"{t['iteration']:>4}  {','.join(map(str, t['secured'])) or '-':<28} "
                     f"{att:<34} {pct(t['reserve_dispatch_pct']):>8} {pct(t['total_pct']):>8}")
    if timing is not None:
        lines.append("")
        lines.append(f"time: total {timing['total']:.2f}s, master {timing['master']:.2f}s, "
                     f"basic {timing['basic']:.2f}s, advanced {timing['advanced']:.2f}s, "
                     f"{timing['iterations']} iterations")
    return "\n".join(lines)


def cmd_solve(args) -> int:
    cfg, net, opts = _setup(args)
    out = _out_dir(args)
    result = run_ccg(net, cfg.threat, opts,
                     run_log=None if out is None else out / "run.jsonl")
    records = summary_records(net, cfg, opts, result)
    timing = timing_record(result, cfg.threat)
    print(render_summary(records[0], records[1:], timing))
    if out is not None:
        _write_records(out / "summary.jsonl", records)
        _write_records(out / "timing.jsonl", [timing])
        (out / "plan.toml").write_text(_plan_doc(net, result.plan))
        with open(out / "run.jsonl", "a") as fh:
            fh.write(json.dumps({"event": "summary", **records[0]}, sort_keys=True) + "\n")
    return EXIT_OK if result.status == CONVERGED else EXIT_GAP


def cmd_oracle(args) -> int:
    cfg, net, opts = _setup(args)
    threat = cfg.threat
    checks = []
    plan = _read_plan(net, threat, args.plan) if args.plan else solve_base_opf(net, threat)[0]
    for a in threat.attackers:
        vec, val = enumerate_worst_attack(net, threat, a, plan, cap=opts.enumeration_cap,
                                          tighten_dp=opts.tighten_dp)
        res = solve_subproblem(net, threat, a, plan, opts)
        delta = abs(val - res.impact)
        checks.append((f"worst attack ({a.id})", delta <= 1e-6 * max(1.0, abs(val)), delta,
                       val, res.impact))
    orc = enumerate_optimal_plan(net, threat, cap=opts.enumeration_cap,
                                 tighten_dp=opts.tighten_dp)
    ccg = run_ccg(net, threat, opts)
    delta = abs(orc.total - ccg.total_cost)
    checks.append(("optimal plan total", delta <= 1e-6 * max(1.0, abs(orc.total)), delta,
                   orc.total, ccg.total_cost))
    recs = []
    for name, ok, d, ref, got in checks:
        print(f"{'PASS' if ok else 'FAIL'}  {name}: oracle {ref:.6f}  solver {got:.6f}  "
              f"delta {d:.3g}")
        recs.append({"record": "check", "name": name, "pass": ok, "oracle": ref,
                     "solver": got, "delta": d})
    out = _out_dir(args)
    if out is not None:
        _write_records(out / "oracle.jsonl", recs)
    return EXIT_OK if all(c[1] for c in checks) else EXIT_CHECK


def cmd_report(args) -> int:
    if not args.out:
        raise InputError("report needs --out pointing at a solve output directory")
    path = Path(args.out) / "summary.jsonl"
    if not path.exists():
        raise InputError(f"no summary records at {path}")
    records = [json.loads(line) for line in path.read_text().splitlines() if line.strip()]
    summary = next(r for r in records if r["record"] == "summary")
    trace = [r for r in records if r["record"] == "trace"]
    timing = None
    tpath = Path(args.out) / "timing.jsonl"
    if tpath.exists():
        timing = json.loads(tpath.read_text().splitlines()[0])
    print(render_summary(summary, trace, timing))
    return EXIT_OK


class _Parser(argparse.ArgumentParser):
    """Argument errors are input errors, so they share exit code 3."""

    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_INPUT, f"{self.prog}: error: {message}\n")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="gridshield",
                                     description="Cyber-physical security planning for "
                                                 "DC power networks.")
    parser.add_argument("-v", "--verbose", action="store_true", help="log each iteration")
    sub = parser.add_subparsers(dest="command", required=True)
    for name, fn, helptext in (("opf", cmd_opf, "base-case dispatch"),
                               ("assess", cmd_assess, "worst intrusions against a plan"),
                               ("solve", cmd_solve, "optimal security plan"),
                               ("oracle", cmd_oracle, "brute-force certification (toys)"),
                               ("report", cmd_report, "re-render a solve output directory")):
        p = sub.add_parser(name, help=helptext)
        p.set_defaults(func=fn)
        p.add_argument("--out", help="output directory for machine records")
        if name == "report":
            continue
        p.add_argument("--grid", help="benchmark key, fixture:NAME, or grid file")
        p.add_argument("--format", choices=("matpower", "native"))
        p.add_argument("--threat", help="threat/case config file")
        p.add_argument("--case", help="shipped case name (A-I) or case file")
        p.add_argument("--tolerance", type=float)
        p.add_argument("--max-iter", dest="max_iter", type=int)
        p.add_argument("--seed", type=int)
        p.add_argument("--theta-span", dest="theta_span", type=float)
        p.add_argument("--dual-bound-factor", dest="dual_bound_factor", type=float)
        p.add_argument("--tighten-dp", dest="tighten_dp", action="store_true")
        p.add_argument("--printed-bigm-variant", dest="printed_bigm_variant",
                       action="store_true")
        p.add_argument("--formulation", dest="subproblem_formulation", choices=("hull", "bigm"),
                       help="attack subproblem formulation (default hull)")
        p.add_argument("--extra-scenarios", dest="extra_scenarios", type=_count,
                       help="earlier attack incumbents pooled per attacker and iteration")
        if name in ("assess", "oracle"):
            p.add_argument("--plan", help="plan file (TOML) written by opf or solve")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(message)s")
    try:
        return args.func(args)
    except (InputError, ValueError, *INPUT_ERRORS) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except BACKEND_ERRORS as exc:
        print(f"solver error: {exc}", file=sys.stderr)
        return EXIT_BACKEND


if __name__ == "__main__":
    sys.exit(main())
