"""Command-line front end: ``chemotax <subcommand> [flags]``."""
from __future__ import annotations

import argparse
import csv
import json
import logging
import math
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from .asymptotics import state_at_chi, sweep_chi
from .config import ConfigError, ExperimentConfig, parse_config
from .grid import Grid, StateField
from .kinetics import ModelParams
from .linear import analyze_modes, bifurcation_value, instability_threshold
from .pitchfork import (
    PitchforkError,
    classify_region,
    cross_validate,
    k3_fourier,
    pitchfork_record,
    predicted_branch_eigenvalue,
)
from .steady import (
    BifurcationError,
    ContinuationOptions,
    NewtonFailure,
    TerminatedBy,
    branch_switch,
    continue_branch,
    detect_bifurcation,
    discrete_bifurcation_value,
    fit_pitchfork,
    jacobian,
    residual,
)
from .timestep import EvolutionConfig, Scheme, TimeStepError, evolve, probe_stability, random_perturbation

__all__ = ["main", "run", "build_parser"]

log = logging.getLogger("chemotax")

SUBCOMMANDS = ("analyze", "pitchfork", "continue", "simulate", "sweep", "selftest")

# flag name -> config key
_FLAGS = {
    "--D1": "D1",
    "--D2": "D2",
    "--chi": "chi",
    "--ubar": "ubar",
    "--beta": "beta",
    "--L": "L",
    "--N": "N",
    "--k": "k",
    "--kmax": "kmax",
    "--chi-max": "chi_max",
    "--dt": "dt",
    "--t-final": "t_final",
    "--eps": "eps",
    "--seed": "seed",
    "--out": "out",
    "--scheme": "scheme",
    "--s0": "s0",
    "--ds-max": "ds_max",
    "--snapshots": "snapshots",
    "--sweep-points": "sweep_points",
    "--chi-start": "chi_start",
    "--chart-points": "chart_points",
}


# --------------------------------------------------------------------------
# serialization


def fmt(value) -> str:
    if isinstance(value, (bool, np.bool_)):
        return "true" if value else "false"
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    if isinstance(value, (float, np.floating)):
        return format(float(value), ".17g")
    if value is None:
        return ""
    return str(value)


def write_csv(path: Path, cfg: ExperimentConfig, columns, rows, notes=()) -> Path:
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="") as fh:
        for line in cfg.header_lines():
            fh.write(f"# {line}\n")
        for line in notes:
            fh.write(f"# {line}\n")
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(columns)
        for row in rows:
            w.writerow([fmt(x) for x in row])
    return path


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return [_jsonable(v) for v in obj.tolist()]
    if isinstance(obj, (bool, np.bool_)):
        return bool(obj)
    if isinstance(obj, (int, np.integer)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        x = float(obj)
        return x if math.isfinite(x) else None
    if hasattr(obj, "value"):  # enums
        return obj.value
    return obj


def write_json(path: Path, cfg: ExperimentConfig, payload: dict) -> Path:
    path.parent.mkdir(parents=True, exist_ok=True)
    doc = {"config": _jsonable({**cfg.values, "source": cfg.source}), **_jsonable(payload)}
    path.write_text(json.dumps(doc, indent=2, sort_keys=False) + "\n")
    return path


# --------------------------------------------------------------------------
# subcommands


def cmd_analyze(cfg: ExperimentConfig) -> int:
    params = cfg.params
    rows = analyze_modes(params, cfg["kmax"])
    chi0, kstar = instability_threshold(params)
    cols = ["k", "lambda_k", "chi_k", "Q_k", "simple", "trace", "max_growth_at_chi"]
    data = [(r.k, r.lambda_k, r.chi_k, r.q_k, r.simple, r.trace_k, r.max_growth) for r in rows]
    out = write_csv(cfg.output_dir / "analyze.csv", cfg, cols, data,
                    notes=[f"chi0 = {fmt(chi0)}", f"k_star = {kstar}"])
    print(f"chi0 = {chi0:.12g} at k* = {kstar}; wrote {out}")
    return 0


def _chart_rows(params: ModelParams, k: int, n: int):
    d1s = np.geomspace(params.d1 / 10, params.d1 * 10, n)
    d2s = np.geomspace(params.d2 / 10, params.d2 * 10, n)
    rows = []
    for d2 in d2s:
        region = classify_region(replace(params, d2=float(d2)), k).case.value
        for d1 in d1s:
            p = replace(params, d1=float(d1), d2=float(d2))
            try:
                rec = k3_fourier(p, k)
                k3, stab = rec.k3_fourier, ("stable" if rec.k3_fourier > 0 else "unstable")
                if rec.k3_fourier == 0:
                    stab = "degenerate"
            except PitchforkError:
                k3, stab = math.nan, "singular"
            rows.append((d1, d2, k3, region, stab))
    return rows


def cmd_pitchfork(cfg: ExperimentConfig) -> int:
    params, k = cfg.params, cfg["k"]
    rec = pitchfork_record(params, k)
    region = classify_region(params, k)
    payload = {
        "record": rec.as_dict(),
        "k3_scale": rec.k3_scale,
        "region": {
            "case": region.case,
            "boundary": region.boundary,
            "x": region.x,
            "thresholds": region.thresholds,
            "reference_thresholds": region.reference_thresholds,
            "chart": [list(c) for c in region.chart],
            "discrepancies": list(region.discrepancies),
        },
    }
    write_json(cfg.output_dir / "pitchfork.json", cfg, payload)
    rows = _chart_rows(params, k, cfg["chart_points"])
    out = write_csv(cfg.output_dir / "pitchfork_chart.csv", cfg, ["D1", "D2", "k3", "region_case", "stability"], rows)
    print(f"K3 = {rec.k3:.12g} ({rec.stability.value}), region {region.case.value}; wrote {out}")
    return 0


def _branch_options(cfg: ExperimentConfig) -> ContinuationOptions:
    return ContinuationOptions(
        chi_max=cfg["chi_max"],
        ds_max=cfg["ds_max"],
        ds_init=min(0.05, cfg["ds_max"]),
        s0=cfg["s0"] or None,
    )


def _write_state(path: Path, cfg: ExperimentConfig, grid: Grid, state: StateField, notes=()):
    rows = zip(grid.nodes, state.u, state.v)
    return write_csv(path, cfg, ["x", "u", "v"], rows, notes)


def cmd_continue(cfg: ExperimentConfig) -> int:
    params, k = cfg.params, cfg["k"]
    grid = Grid(cfg.grid_n, params.length)
    branch = continue_branch(params, grid, k, _branch_options(cfg))
    cols = ["s", "chi", "amplitude", "u0", "uL", "min_u", "max_u", "mass"]
    rows = [
        (p.s, p.chi, p.diagnostics.amplitude, p.state.u[0], p.state.u[-1],
         p.diagnostics.min_u, p.diagnostics.max_u, p.diagnostics.l1_mass)
        for p in branch.points
    ]
    out_dir = cfg.output_dir
    write_csv(out_dir / "branch.csv", cfg, cols, rows,
              notes=[f"terminated_by = {branch.terminated_by.value}", f"chi_k_h = {fmt(branch.chi_k_h)}"])
    payload = {
        "mode": branch.mode,
        "chi_k_h": branch.chi_k_h,
        "terminated_by": branch.terminated_by,
        "orientation": branch.orientation,
        "folds": branch.folds,
        "closed_loop": branch.closed_loop,
        "violations": branch.violations,
        "points": [
            {"arclength": p.arclength, "chi": p.chi, "s": p.s, "newton_iterations": p.newton_iterations,
             "diagnostics": p.diagnostics.as_dict()}
            for p in branch.points
        ],
    }
    write_json(out_dir / "branch.json", cfg, payload)
    status = 0
    for chi in cfg["snapshots"]:
        try:
            st = state_at_chi(branch, chi, params, grid, ContinuationOptions(chi_max=chi).newton)
        except NewtonFailure:
            st = None
        if st is None:
            log.warning("branch does not pass through chi=%g; no snapshot written", chi)
            status = 1
            continue
        _write_state(out_dir / f"state_chi_{chi:.6g}.csv", cfg, grid, st, [f"snapshot chi = {fmt(chi)}"])
    print(f"{len(branch.points)} points, chi in [{branch.chis.min():.6g}, {branch.chis.max():.6g}], "
          f"terminated by {branch.terminated_by.value}; wrote {out_dir / 'branch.csv'}")
    if branch.terminated_by is TerminatedBy.STEP_FAILURE or len(branch.points) < 2:
        log.error("continuation failed to converge")
        return 1
    return status


def cmd_simulate(cfg: ExperimentConfig) -> int:
    params, k = cfg.params, cfg["k"]
    grid = Grid(cfg.grid_n, params.length)
    econf = EvolutionConfig(dt=cfg["dt"], t_final=cfg["t_final"], scheme=Scheme(cfg["scheme"]),
                            perturb_eps=cfg["eps"], seed=cfg.seed)
    summary: dict = {}
    s0 = cfg["s0"]
    if s0:
        pt = branch_switch(params, grid, k, s0)
        params = params.with_chi(pt.chi)
        base = pt.state
        lam = predicted_branch_eigenvalue(cfg.params, k, s0)
        summary.update(branch_chi=pt.chi, predicted_eigenvalue=lam)
        if abs(lam) < econf.rate_tol:
            log.warning("predicted branch eigenvalue %.3g is below rate_tol %.1g; the verdict will be "
                        "Inconclusive unless s0 is increased", lam, econf.rate_tol)
        probe = probe_stability(pt, cfg.params, grid, econf, k=k)
        summary.update(growth_rate=probe.growth_rate, verdict=probe.verdict)
        pert = random_perturbation(grid, cfg.seed, exclude_k=k)
    else:
        base = StateField.constant(grid, params.ubar, params.vbar)
        pert = random_perturbation(grid, cfg.seed)
    start = StateField(base.u + cfg["eps"] * pert.u, base.v + cfg["eps"] * pert.v)
    traj = evolve(start, params, grid, econf)
    rows = zip(traj.times, traj.norm_u, traj.norm_v, traj.min_u, traj.u0)
    out = write_csv(cfg.output_dir / "timeseries.csv", cfg, ["t", "norm_u", "norm_v", "min_u", "u0"], rows)
    summary.update(t_final=traj.times[-1], final_norm_u=traj.norm_u[-1], dt_reductions=traj.dt_reductions)
    write_json(cfg.output_dir / "simulate.json", cfg, summary)
    _write_state(cfg.output_dir / "final_state.csv", cfg, grid, traj.final)
    print(f"t = {traj.times[-1]:.6g}, |u - ubar| = {traj.norm_u[-1]:.6g}; wrote {out}")
    if "verdict" in summary:
        print(f"probe: rate {summary['growth_rate']:.6g} -> {summary['verdict'].value}")
    return 0


def cmd_sweep(cfg: ExperimentConfig) -> int:
    params, k = cfg.params, cfg["k"]
    grid = Grid(cfg.grid_n, params.length)
    lo = cfg["chi_start"] or bifurcation_value(params, k)
    hi = cfg["chi_max"]
    if hi <= lo:
        raise ConfigError(f"chi_max: must exceed the sweep start {lo:.6g}")
    schedule = np.geomspace(lo, hi, cfg["sweep_points"]) if cfg["sweep_points"] > 1 else np.array([hi])
    res = sweep_chi(params, grid, k, schedule, opts=_branch_options(cfg))
    rows = [
        (r.chi, params.d1, r.metrics.peak_ratio, r.metrics.half_width, r.metrics.mass,
         r.metrics.tail_sup, r.step_flag)
        for r in res.rows
    ]
    notes = [
        "peak_ratio = u(0)/ubar after reflecting increasing profiles",
        "half_width = first x where u falls to (u(0)+u(L))/2, linear interpolation",
        "tail_sup = max of u over [L/2, L]",
        f"completed = {fmt(res.completed)}",
    ]
    if res.reason:
        notes.append(f"reason = {res.reason}")
    cols = ["chi", "D1", "peak_ratio", "half_width", "mass", "tail_sup", "step_flag"]
    out = write_csv(cfg.output_dir / "sweep.csv", cfg, cols, rows, notes)
    print(f"{len(res.rows)}/{len(schedule)} chi values; wrote {out}")
    if not res.completed:
        log.error("sweep aborted: %s", res.reason)
        return 1
    return 0


# --------------------------------------------------------------------------
# selftest


def _selftest_checks(cfg: ExperimentConfig):
    params, k = cfg.params, cfg["k"]
    grid = Grid(min(cfg.grid_n, 200), params.length)

    eq = StateField.constant(grid, params.ubar, params.vbar)

    def equilibrium():
        r = np.max(np.abs(residual(eq, params, grid)))
        return r, 1e-12 * max(params.ubar, 1.0) ** 2

    def jacobian_fd():
        rng = np.random.default_rng(cfg.seed)
        z = eq.to_vector() * (1 + 0.1 * rng.standard_normal(2 * grid.n_nodes))
        dz = rng.standard_normal(z.size)
        step = 1e-6

        def res(x):
            return residual(StateField.from_vector(x), params, grid)

        fd = (res(z + step * dz) - res(z - step * dz)) / (2 * step)
        an = jacobian(StateField.from_vector(z), params, grid) @ dz
        return np.max(np.abs(fd - an)) / max(np.max(np.abs(an)), 1e-300), 1e-6

    def chi_match():
        found = detect_bifurcation(params, grid, k, check=False)
        exact = discrete_bifurcation_value(params, grid, k)
        return abs(found - exact) / exact, 1e-10

    def k3_numeric():
        kf = k3_fourier(params, k).k3_fourier
        fine = Grid(200, params.length)
        opts = ContinuationOptions(chi_max=100 * bifurcation_value(params, k), ds_init=1.5e-4,
                                   ds_max=1.5e-4, max_points=11, s0=1e-4)
        fit = fit_pitchfork(continue_branch(params, fine, k, opts), 10)
        return abs(fit.c2 - kf) / abs(kf), 1e-2

    def k3_closed():
        d1s = params.d1 * np.array([0.3, 0.7, 1.3, 3.0])
        d2s = params.d2 * np.array([0.5, 1.0, 2.0])
        cmp = cross_validate(params, k, d1s, d2s)
        bad = sum(not c.sign_agree for c in cmp)
        return float(bad), 0.0

    return [
        ("equilibrium residual", equilibrium),
        ("Jacobian vs finite differences", jacobian_fd),
        ("chi_k^h detection vs closed form", chi_match),
        ("K3 Fourier vs branch fit", k3_numeric),
        ("K3 closed-form sign mismatches", k3_closed),
    ]


def cmd_selftest(cfg: ExperimentConfig) -> int:
    results = []
    for name, check in _selftest_checks(cfg):
        try:
            value, tol = check()
            ok = bool(value <= tol)
            results.append((name, f"{value:.3e}", f"{tol:.1e}", "PASS" if ok else "FAIL"))
        except (NewtonFailure, BifurcationError, PitchforkError, ValueError, ArithmeticError) as exc:
            results.append((name, f"error: {exc}", "", "FAIL"))
    width = max(len(r[0]) for r in results)
    print(f"{'check':<{width}}  {'value':>12}  {'tol':>8}  result")
    for name, value, tol, verdict in results:
        print(f"{name:<{width}}  {value:>12}  {tol:>8}  {verdict}")
    failed = sum(r[3] == "FAIL" for r in results)
    print(f"{len(results) - failed}/{len(results)} checks passed")
    return 0 if failed == 0 else 1


_COMMANDS = {
    "analyze": cmd_analyze,
    "pitchfork": cmd_pitchfork,
    "continue": cmd_continue,
    "simulate": cmd_simulate,
    "sweep": cmd_sweep,
    "selftest": cmd_selftest,
}


# --------------------------------------------------------------------------
# entry points


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", metavar="PATH", help="key = value file; flags override it")
    for flag, key in _FLAGS.items():
        common.add_argument(flag, dest=key, metavar=key.upper() if flag != "--out" else "DIR", default=None)
    common.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    parser = argparse.ArgumentParser(prog="chemotax", description="Steady-state bifurcation toolkit for 1-D chemotaxis.")
    sub = parser.add_subparsers(dest="command", metavar="{" + ",".join(SUBCOMMANDS) + "}")
    sub.required = True
    helps = {
        "analyze": "linear stability table over k = 1..kmax",
        "pitchfork": "K3 coefficient, region case and (D1, D2) sign chart",
        "continue": "trace the k-th bifurcating branch up to chi_max",
        "simulate": "time integration from a perturbed equilibrium or branch point",
        "sweep": "spike metrics along the k-th branch over a geometric chi schedule",
        "selftest": "invariant checks with a pass/fail table",
    }
    for name in SUBCOMMANDS:
        sub.add_parser(name, parents=[common], help=helps[name])
    return parser


def run(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)
    overrides = {key: getattr(args, key) for key in _FLAGS.values()}
    try:
        cfg = parse_config(args.config, overrides)
        return _COMMANDS[args.command](cfg)
    except ConfigError as exc:
        print(f"chemotax: config error: {exc}", file=sys.stderr)
        return 2
    except (NewtonFailure, BifurcationError, PitchforkError, TimeStepError) as exc:
        print(f"chemotax: numerical failure: {exc}", file=sys.stderr)
        return 1


def main() -> None:
    sys.exit(run())


if __name__ == "__main__":
    main()
