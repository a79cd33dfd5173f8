"""Command-line interface: ``scmarket {solve,simulate,stability-map,welfare,validate}``.

Exit codes: 0 success, 1 input error, 2 non-convergence or divergence.
Every command writes ``<command>_manifest.json`` next to its CSV output.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
from dataclasses import asdict, dataclass, field
from importlib import metadata
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from . import dynamics, equilibrium, stability, sweep, welfare
from .model import CHANNEL_SHORT, MarketError, MarketScenario, ScenarioError, validate_scenario
from .scenario_io import ScenarioFileError, load_scenario, loads_scenario

log = logging.getLogger("scmarket")

EXIT_OK, EXIT_INPUT, EXIT_DIVERGED = 0, 1, 2


def tool_version() -> str:
    try:
        return metadata.version("artifact")
    except metadata.PackageNotFoundError:
        return "unknown"


@dataclass
class RunManifest:
    scenario_path: str
    command: str
    argv: list[str]
    seed: int
    grid: Optional[dict] = None
    outputs: list[str] = field(default_factory=list)
    status: str = "ok"
    details: dict = field(default_factory=dict)
    tool_version: str = field(default_factory=tool_version)

    def write(self, out_dir: Path) -> Path:
        path = out_dir / f"{self.command.replace('-', '_')}_manifest.json"
        path.write_text(json.dumps(asdict(self), indent=2, sort_keys=True) + "\n", encoding="utf-8", newline="\n")
        return path


class _Parser(argparse.ArgumentParser):
    # usage errors are input errors, not divergence
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_INPUT, f"{self.prog}: error: {message}\n")


def fmt(v) -> str:
    """Locale-independent float text that round-trips exactly."""
    if isinstance(v, (bool, np.bool_)):
        return "true" if v else "false"
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    return repr(float(v))


def _write_csv(path: Path, header: Sequence[str], rows) -> None:
    with path.open("w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow(row)


def _range(spec: Sequence[str], name: str) -> tuple[float, ...]:
    lo, hi, n = float(spec[0]), float(spec[1]), int(spec[2])
    if n < 1:
        raise ValueError(f"{name}: point count must be >= 1")
    return tuple(float(v) for v in np.linspace(lo, hi, n))


def _kappas(text: str) -> tuple[tuple[float, float], ...]:
    pairs = []
    for chunk in text.split(";"):
        a, b = chunk.split(",")
        pairs.append((float(a), float(b)))
    return tuple(pairs)


# -- commands -------------------------------------------------------------

def cmd_solve(args, scenario: MarketScenario, manifest: RunManifest) -> int:
    method = args.method.replace("-", "_")
    opts = equilibrium.SolverOptions(
        tolerance=args.tolerance,
        max_iterations=args.max_iterations,
        step_scale=args.step_scale,
        enforce_bounds=args.enforce_bounds,
    )
    res = equilibrium.solve(scenario, method, opts)
    rows = []
    for (sc, ch), v in res.state.vm_supply.items():
        rows.append((f"vm_{CHANNEL_SHORT[ch]}", sc, fmt(v)))
    for c, v in res.state.vm_demand.items():
        rows.append(("vm_ag", c, fmt(v)))
    for sc, v in res.state.rho.items():
        rows.append(("rho", sc, fmt(v)))
    rows.append(("kkt_residual", "", fmt(res.kkt_residual)))
    rows.append(("iterations", "", fmt(res.iterations)))
    rows.append(("converged", "", fmt(res.converged)))
    for w in res.warnings:
        rows.append(("warning", "", w))
    out = args.out / "equilibrium.csv"
    _write_csv(out, ("component", "id", "value"), rows)
    manifest.outputs.append(out.name)
    manifest.status = res.status
    manifest.details = {"method": method, "iterations": res.iterations, "kkt_residual": res.kkt_residual}
    return EXIT_OK if res.converged else EXIT_DIVERGED


def cmd_simulate(args, scenario: MarketScenario, manifest: RunManifest) -> int:
    layout = scenario.layout
    eq = equilibrium.solve_kkt_closed_form(scenario).state
    start = dynamics.DynamicState.at(eq, layout, capacity=args.capacity)
    start = dynamics.perturb_state(start, args.perturb, args.seed, layout)
    traj = dynamics.integrate(
        scenario, start, args.t_end, args.dt, args.integrator,
        record_every=args.record_every, stop_on_convergence=not args.full_horizon,
    )
    out = args.out / "trajectory.csv"
    data = np.hstack([traj.times[:, None], traj.x1, traj.x2])
    _write_csv(out, ("t",) + traj.labels, ([fmt(v) for v in row] for row in data))
    final_err = float(np.abs(traj.x1[-1] - eq.to_vector(layout)).max())
    manifest.outputs.append(out.name)
    manifest.status = traj.terminal_status
    manifest.details = {"final_max_error": final_err, "samples": int(len(traj.times)), "perturb": args.perturb}
    return EXIT_DIVERGED if traj.terminal_status == "diverged" else EXIT_OK


def cmd_stability_map(args, scenario: MarketScenario, manifest: RunManifest) -> int:
    grid = sweep.SweepGrid(
        tau_rho_values=_range(args.tau_rho, "--tau-rho") if args.tau_rho else sweep._default_tau_rho(),
        tau_ag_values=_range(args.tau_ag, "--tau-ag") if args.tau_ag else sweep._default_tau_ag(),
        kappa_values=_kappas(args.kappa) if args.kappa else sweep.SweepGrid().kappa_values,
    )
    rows = sweep.stability_map(scenario, grid, jobs=args.jobs)
    out = args.out / "stability_map.csv"
    _write_csv(out, sweep.MAP_COLUMNS, ([fmt(r[c]) for c in sweep.MAP_COLUMNS] for r in rows))
    manifest.outputs.append(out.name)
    manifest.grid = grid.to_dict()
    manifest.details = {"cells": len(rows), "hurwitz_cells": sum(r["is_hurwitz"] for r in rows)}
    return EXIT_OK


def cmd_welfare(args, scenario: MarketScenario, manifest: RunManifest) -> int:
    opts = welfare.WelfareOptions(tolerance=args.tolerance or 1e-10, grid_points=args.grid_points, seed=args.seed)
    rep = welfare.compare(scenario, opts)
    sc_ids = [sc.id for sc in scenario.scs]
    cust_ids = [c.id for c in scenario.customers]
    rows = []
    for t in welfare.WELFARE_TYPES:
        rows.append((t, "utilitarian_sw", "", fmt(rep.utilitarian_sw[t])))
        rows.append((t, "sw_ratio", "", fmt(rep.sw_ratio[t])))
        rows += [(t, "sc_cost", i, fmt(v)) for i, v in zip(sc_ids, rep.sc_costs[t])]
        rows += [(t, "sc_cost_ratio", i, fmt(v)) for i, v in zip(sc_ids, rep.sc_cost_ratios[t])]
        rows += [(t, "customer_utility", i, fmt(v)) for i, v in zip(cust_ids, rep.customer_utilities[t])]
        rows += [(t, "customer_utility_ratio", i, fmt(v)) for i, v in zip(cust_ids, rep.customer_utility_ratios[t])]
    out = args.out / "welfare.csv"
    _write_csv(out, ("welfare_type", "metric", "id", "value"), rows)
    alloc = args.out / "welfare_allocations.csv"
    layout = scenario.layout
    arows = []
    for t in welfare.WELFARE_TYPES:
        x = rep.allocations[t].to_vector(layout)
        arows += [(t, label, fmt(v)) for label, v in zip(layout.labels, x)]
    _write_csv(alloc, ("welfare_type", "component", "value"), arows)
    manifest.outputs += [out.name, alloc.name]
    manifest.details = {"sw_ratio": rep.sw_ratio}
    return EXIT_OK


def cmd_validate(args, scenario: MarketScenario, manifest: RunManifest) -> int:
    problems = validate_scenario(scenario)
    manifest.details = {"violations": problems}
    if problems:
        manifest.status = "invalid"
        for p in problems:
            print(p, file=sys.stderr)
        return EXIT_INPUT
    print(f"ok: {len(scenario.scs)} SCs, {len(scenario.customers)} customers")
    return EXIT_OK


COMMANDS = {
    "solve": cmd_solve,
    "simulate": cmd_simulate,
    "stability-map": cmd_stability_map,
    "welfare": cmd_welfare,
    "validate": cmd_validate,
}


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="scmarket", description="Small-cloud VM market equilibrium, dynamics, stability and welfare tool.")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def common(sp):
        sp.add_argument("scenario", help="scenario JSON file")
        sp.add_argument("--out", type=Path, default=Path("scmarket-out"), help="output directory")
        sp.add_argument("--seed", type=int, default=0)
        sp.add_argument("--jobs", type=int, default=1, help="worker processes for grid evaluation")
        return sp

    s = common(sub.add_parser("solve", help="static equilibrium"))
    s.add_argument("--method", choices=["closed-form", "tatonnement", "interior-point"], default="closed-form")
    s.add_argument("--tolerance", type=float, default=None)
    s.add_argument("--max-iterations", type=int, default=1_000_000)
    s.add_argument("--step-scale", type=float, default=0.01)
    s.add_argument("--enforce-bounds", action="store_true")

    s = common(sub.add_parser("simulate", help="integrate the gradient-play flow from a perturbed equilibrium"))
    s.add_argument("--t-end", type=float, default=10.0)
    s.add_argument("--dt", type=float, default=1e-3)
    s.add_argument("--method", dest="integrator", choices=["euler", "rk4"], default="rk4")
    s.add_argument("--perturb", type=float, default=0.01, help="relative magnitude of the initial perturbation")
    s.add_argument("--record-every", type=int, default=1)
    s.add_argument("--capacity", action="store_true", help="enable capacity multiplier dynamics")
    s.add_argument("--full-horizon", action="store_true", help="do not stop early on convergence")

    s = common(sub.add_parser(
        "stability-map",
        help="max real eigenvalue over a (tau_rho, tau_ag, kappa) grid; tau_rho starts at 0.05 because 0 divides by zero",
    ))
    s.add_argument("--tau-rho", nargs=3, metavar=("LO", "HI", "N"), help="default 0.05 5 25")
    s.add_argument("--tau-ag", nargs=3, metavar=("LO", "HI", "N"), help="default 0.05 0.2 16")
    s.add_argument("--kappa", help='pairs "k1,k2;k1,k2"; default "0,0;0.02,0.02;0.05,0.05"')

    s = common(sub.add_parser("welfare", help="utilitarian, egalitarian and Rawlsian allocations"))
    s.add_argument("--tolerance", type=float, default=None)
    s.add_argument("--grid-points", type=int, default=65)

    common(sub.add_parser("validate", help="check a scenario file"))
    return p


def main(argv: Optional[Sequence[str]] = None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        if args.command == "validate":
            scenario = loads_scenario(Path(args.scenario).read_text(encoding="utf-8"), validate=False)
        else:
            scenario = load_scenario(args.scenario)
        if args.jobs < 1:
            raise ValueError("--jobs must be >= 1")
        args.out.mkdir(parents=True, exist_ok=True)
        manifest = RunManifest(scenario_path=str(args.scenario), command=args.command, argv=argv, seed=args.seed)
        code = COMMANDS[args.command](args, scenario, manifest)
    except ScenarioError as exc:
        for v in exc.violations:
            print(f"invalid scenario: {v}", file=sys.stderr)
        return EXIT_INPUT
    except (ScenarioFileError, MarketError, ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    manifest.write(args.out)
    log.info("wrote %s", ", ".join(manifest.outputs))
    return code


if __name__ == "__main__":
    sys.exit(main())
