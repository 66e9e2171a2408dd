"""Command-line entry point.

Subcommands cover the full pipeline on one scenario config:

  teb       solve the error-bound game, export radii / lookup table
  plan      run the (iterative) MPC planning, export trajectories + figures
  simulate  closed-loop rollouts under sampled disturbances + verification
  verify    re-check recorded traces against the plan
  plot      re-render figures from recorded CSV artifacts

Exit codes: 0 pass, 1 verification failure, 2 infeasible problem,
3 configuration error.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

import numpy as np

from . import artifacts as art
from . import plots
from .models import TvsdWave
from .nlp import SolverOptions
from .planner import (
    Scenario,
    Solution,
    assemble_nlp,
    audit_solution,
    plan_tvsd,
    plan_tvsi,
    reach_time,
)
from .reachability import ValueFunction, min_level, solve_value_function, teb_radii_si
from .scenario import ConfigError, RunConfig, load_config
from .simulator import TrackTrace, simulate, verify
from .tebmap import InfeasibleScenarioError, TebTable, build_table

log = logging.getLogger("tubeplan")

EXIT_OK = 0
EXIT_VERIFY_FAIL = 1
EXIT_INFEASIBLE = 2
EXIT_CONFIG = 3


def _out_dir(args) -> Path:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    return out


def compute_teb(config: RunConfig, progress: bool = True):
    """Offline phase: value function, minimum level and radii source.

    Returns (vf, vbar, radii_or_None, table_or_None).
    """
    grid = config.grid()
    vf = solve_value_function(grid, config.wave, config.params, config.teb_bounds,
                              cfl=config.hj.cfl, progress=progress)
    sc = config.scenario
    if config.is_state_dependent:
        # one level covering every vehicle's initial auxiliary state
        vbar = max(min_level(vf, (*config.eta0, *veh.start)) for veh in sc.vehicles)
        table = build_table(vf, vbar, sc.region[0], sc.region[1],
                            config.table_cells[0], config.table_cells[1], sc.times)
        return vf, vbar, None, table
    vbar = min_level(vf, config.eta0)
    radii = teb_radii_si(vf, vbar, sc.times)
    return vf, vbar, radii, None


def cmd_teb(args) -> int:
    config = load_config(args.config)
    out = _out_dir(args)
    manifest = art.RunManifest("teb", config.path, config.raw_bytes)
    with manifest.time("solve"):
        vf, vbar, radii, table = compute_teb(config)
    j, b = vf.save(out / "value_function")
    manifest.add("value_function_meta", j)
    manifest.add("value_function_data", b)
    sc = config.scenario
    if table is not None:
        path = table.to_csv(out / "teb_table.csv")
        manifest.add("teb_table", path)
        manifest.add("teb_table_meta", path.with_suffix(".meta.json"))
        profile = {"table max": [table.max_at_time(k) for k in range(len(table.times))],
                   "table min": list(np.min(table.radii, axis=(0, 1)))}
        fig = plots.plot_radius_profiles(table.times, profile, out / "teb_radii.svg")
    else:
        path = art.write_radii_csv(out / "teb_radii.csv", sc.times, radii)
        manifest.add("teb_radii", path)
        fig = plots.plot_radius_profiles(sc.times, {config.name: radii},
                                         out / "teb_radii.svg")
    manifest.add("teb_radii_figure", fig)
    summary = {"vbar": vbar, "grid_shape": list(vf.grid.shape),
               "substeps": vf.meta.get("substeps")}
    spath = out / "teb_summary.json"
    spath.write_text(json.dumps(summary, indent=2, sort_keys=True))
    manifest.add("teb_summary", spath)
    manifest.write(out / "manifest_teb.json")
    print(f"teb: vbar={vbar:.6g}, artifacts in {out}")
    return EXIT_OK


def _load_teb(config: RunConfig, out: Path):
    """Radii/table artifacts from a previous teb run, or compute them."""
    sc = config.scenario
    if config.is_state_dependent:
        table_path = out / "teb_table.csv"
        if table_path.exists():
            return None, TebTable.from_csv(table_path)
        vf, _, _, table = compute_teb(config)
        return None, table
    radii_path = out / "teb_radii.csv"
    if radii_path.exists():
        _, radii = art.read_radii_csv(radii_path)
        if len(radii) != sc.N + 1:
            raise ConfigError("stored radii do not match the planning horizon")
        return radii, None
    _, _, radii, _ = compute_teb(config)
    return radii, None


def _solver_options() -> SolverOptions:
    return SolverOptions()


def cmd_plan(args) -> int:
    config = load_config(args.config)
    out = _out_dir(args)
    manifest = art.RunManifest("plan", config.path, config.raw_bytes)
    sc = config.scenario
    radii, table = _load_teb(config, out)
    with manifest.time("solve"):
        if table is not None:
            l_max = args.lmax if args.lmax else None
            solutions = plan_tvsd(sc, table, options=_solver_options(), l_max=l_max)
        else:
            solutions = [plan_tvsi(sc, radii, options=_solver_options())]
    for l, sol in enumerate(solutions, start=1):
        path = art.write_trajectory_csv(out / f"plan_iter{l}.csv", sc, sol)
        manifest.add(f"plan_iter{l}", path)
        fig = plots.plot_plan(sc, sol, out / f"plan_iter{l}.svg")
        manifest.add(f"plan_iter{l}_figure", fig)
    final = solutions[-1]
    path = art.write_trajectory_csv(out / "plan_final.csv", sc, final)
    manifest.add("plan_final", path)
    audit = audit_solution(sc, final, stride=max(1, sc.N // 50))
    summary = {
        "iterations": len(solutions),
        "status": [s.status for s in solutions],
        "objective": [s.objective for s in solutions],
        "max_violation": [s.max_violation for s in solutions],
        "reach_time_s": reach_time(final, sc),
        "audit": audit,
    }
    spath = out / "plan_summary.json"
    spath.write_text(json.dumps(summary, indent=2, sort_keys=True))
    manifest.add("plan_summary", spath)
    manifest.write(out / "manifest_plan.json")
    print(f"plan: {len(solutions)} iteration(s), final status {final.status}, "
          f"reach times {summary['reach_time_s']}")
    if not final.feasible:
        return EXIT_INFEASIBLE
    return EXIT_OK


def _solution_from_csv(scenario: Scenario, path) -> Solution:
    pos, inputs, radii = art.read_trajectory_csv(path)
    nlp = assemble_nlp(scenario, radii)
    x = np.zeros(nlp.n)
    for i in range(scenario.M):
        o = nlp.layout.inp[i]
        x[o:o + 2 * scenario.N] = inputs[i].ravel()
    return Solution(x=x, layout=nlp.layout, radii=radii, objective=float("nan"),
                    max_violation=0.0, status="loaded", iterations=0,
                    goal_boxes=nlp.goal_boxes)


def run_simulation(config: RunConfig, vf: ValueFunction, solution: Solution,
                   seeds, threads: int = 1, table: TebTable | None = None,
                   radii=None):
    """Batched rollouts for every (seed, vehicle); returns {seed: [traces]}."""
    sc = config.scenario
    dt = sc.T_s / config.sim.dt_divisor
    seeds = list(seeds)

    def run_vehicle(i):
        lane_seeds = [s * 1000 + i for s in seeds]
        eta0 = config.eta0
        return simulate(solution, vf, config.wave_truth, config.params, None,
                        dt=dt, vehicle=i, table=table,
                        teb_radii=radii, eta0=eta0, seeds=lane_seeds,
                        scenario_T_s=sc.T_s)

    if threads > 1 and sc.M > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            per_vehicle = list(pool.map(run_vehicle, range(sc.M)))
    else:
        per_vehicle = [run_vehicle(i) for i in range(sc.M)]
    out = {}
    for s_idx, seed in enumerate(seeds):
        out[seed] = [per_vehicle[i][s_idx] for i in range(sc.M)]
    return out


def cmd_simulate(args) -> int:
    config = load_config(args.config)
    out = _out_dir(args)
    n_seeds = args.seeds if args.seeds else config.sim.seeds
    seeds = list(range(n_seeds))
    manifest = art.RunManifest("simulate", config.path, config.raw_bytes, seeds)
    sc = config.scenario
    plan_path = Path(args.plan) if args.plan else out / "plan_final.csv"
    if not plan_path.exists():
        print(f"no plan at {plan_path}; run the plan command first",
              file=sys.stderr)
        return EXIT_CONFIG
    solution = _solution_from_csv(sc, plan_path)
    vf_prefix = out / "value_function"
    if not vf_prefix.with_suffix(".json").exists():
        print(f"no value function at {vf_prefix}; run the teb command first",
              file=sys.stderr)
        return EXIT_CONFIG
    vf = ValueFunction.load(vf_prefix)
    radii, table = _load_teb(config, out)

    with manifest.time("simulate"):
        by_seed = run_simulation(config, vf, solution, seeds,
                                 threads=args.threads, table=table, radii=radii)
    trace_dir = out / "traces"
    trace_dir.mkdir(exist_ok=True)
    reports = {}
    n_fail = 0
    with manifest.time("verify"):
        for seed, traces in by_seed.items():
            for tr in traces:
                p = tr.to_csv(trace_dir / f"trace_s{seed:04d}_v{tr.vehicle}.csv")
                manifest.add(f"trace_s{seed:04d}_v{tr.vehicle}", p)
            rep = verify(traces, sc, vf, slack_cells=config.sim.slack_cells)
            reports[str(seed)] = {
                "passed": rep.passed,
                "invariance_margin": rep.invariance_margin,
                "max_error": rep.max_error,
                "min_obstacle_distance": rep.min_obstacle_distance,
                "min_pairwise_distance": rep.min_pairwise_distance,
                "exited_grid": rep.exited_grid,
            }
            n_fail += 0 if rep.passed else 1
    rpath = out / "verify_reports.json"
    rpath.write_text(json.dumps(reports, indent=2, sort_keys=True))
    manifest.add("verify_reports", rpath)
    fig = plots.plot_traces(sc, [t for trs in by_seed.values() for t in trs],
                            out / "traces.svg")
    manifest.add("traces_figure", fig)
    manifest.write(out / "manifest_simulate.json")
    print(f"simulate: {len(seeds)} seed(s), {n_fail} failure(s)")
    return EXIT_OK if n_fail == 0 else EXIT_VERIFY_FAIL


def cmd_verify(args) -> int:
    config = load_config(args.config)
    out = _out_dir(args)
    sc = config.scenario
    vf = ValueFunction.load(out / "value_function")
    trace_dir = out / "traces"
    if not trace_dir.exists():
        print("no traces recorded; run the simulate command first", file=sys.stderr)
        return EXIT_CONFIG
    by_seed: dict[int, list] = {}
    for path in sorted(trace_dir.glob("trace_s*_v*.csv")):
        stem = path.stem
        seed = int(stem.split("_")[1][1:])
        vehicle = int(stem.split("_")[2][1:])
        tr = TrackTrace.from_csv(path)
        tr.vehicle = vehicle
        by_seed.setdefault(seed, []).append(tr)
    n_fail = 0
    for seed in sorted(by_seed):
        rep = verify(by_seed[seed], sc, vf, slack_cells=config.sim.slack_cells)
        status = "pass" if rep.passed else "FAIL"
        print(f"seed {seed:4d}: {status} margin={rep.invariance_margin:+.5f} "
              f"max_err={rep.max_error:.5f}")
        n_fail += 0 if rep.passed else 1
    print(f"verify: {len(by_seed)} seed(s), {n_fail} failure(s)")
    return EXIT_OK if n_fail == 0 else EXIT_VERIFY_FAIL


def cmd_plot(args) -> int:
    config = load_config(args.config)
    out = _out_dir(args)
    sc = config.scenario
    made = []
    for path in sorted(out.glob("plan_iter*.csv")) + [out / "plan_final.csv"]:
        if not path.exists():
            continue
        sol = _solution_from_csv(sc, path)
        made.append(plots.plot_plan(sc, sol, path.with_suffix(".svg")))
    trace_dir = out / "traces"
    if trace_dir.exists():
        traces = [TrackTrace.from_csv(p) for p in sorted(trace_dir.glob("*.csv"))]
        if traces:
            made.append(plots.plot_traces(sc, traces, out / "traces.svg"))
    if not made:
        print("nothing to plot; run plan/simulate first", file=sys.stderr)
        return EXIT_CONFIG
    print(f"plot: rendered {len(made)} figure(s)")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="tubeplan",
        description="Safety-guaranteed AUV trajectory planning under waves")
    parser.add_argument("--verbose", action="store_true", help="debug logging")
    sub = parser.add_subparsers(dest="command", required=True)
    for name, fn, desc in (
            ("teb", cmd_teb, "solve the error-bound game offline"),
            ("plan", cmd_plan, "run the MPC planning phase"),
            ("simulate", cmd_simulate, "closed-loop rollouts + verification"),
            ("verify", cmd_verify, "re-check recorded traces"),
            ("plot", cmd_plot, "re-render figures from artifacts")):
        p = sub.add_parser(name, help=desc)
        p.add_argument("--config", required=True, help="scenario YAML")
        p.add_argument("--out", required=True, help="artifact directory")
        p.add_argument("--seeds", type=int, default=None,
                       help="number of disturbance seeds (simulate)")
        p.add_argument("--lmax", type=int, default=None,
                       help="cap on replanning iterations (plan)")
        p.add_argument("--threads", type=int, default=1,
                       help="worker threads for per-vehicle simulation")
        p.add_argument("--plan", default=None,
                       help="trajectory CSV to simulate (defaults to out dir)")
        p.set_defaults(fn=fn)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.INFO,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.fn(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except InfeasibleScenarioError as exc:
        print(f"infeasible scenario: {exc}", file=sys.stderr)
        return EXIT_INFEASIBLE


if __name__ == "__main__":
    sys.exit(main())
