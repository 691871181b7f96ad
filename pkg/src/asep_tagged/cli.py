"""Command-line driver: runs configured experiments, writes CSV + JSON.

Subcommands: simulate | tail | hydro | variational | rates | validate.
Each accepts ``--config PATH`` plus ``--seed``, ``--out``, ``--N`` and
``--trajectories`` overrides.  The worker count is controlled by the
``ASEP_TAGGED_WORKERS`` environment variable.  Outputs are deterministic:
an identical config and seed produce byte-identical CSV files.
"""

from __future__ import annotations

import argparse
import csv
import json
import math
import sys
import time
from pathlib import Path

import numpy as np

from .config import ConfigError, ExperimentConfig, load_config
from .model import DomainError, StrategyRegime, classify_regime
from .profiles import Profile, build_strategy_profile
from .simulator import DynamicsSpec, default_radius, sample_initial, simulate

SCHEMA_VERSION = 1


def _fmt(x) -> str:
    if x is None:
        return ""
    if isinstance(x, float):
        if math.isinf(x):
            return "inf" if x > 0 else "-inf"
        return format(x, ".12g")
    return str(x)


def _write_csv(path: Path, header: list[str], rows: list[list]) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, quoting=csv.QUOTE_MINIMAL)
        writer.writerow(header)
        for row in rows:
            writer.writerow([_fmt(x) for x in row])


def _write_summary(out_dir: Path, cfg: ExperimentConfig, payload: dict,
                   runtime: float, csv_files: list[str]) -> None:
    out_dir.mkdir(parents=True, exist_ok=True)
    summary = {
        "schemaVersion": SCHEMA_VERSION,
        "config": cfg.echo(),
        "runtimeSeconds": round(runtime, 3),
        "csvFiles": csv_files,
        "results": payload,
    }
    with open(out_dir / "summary.json", "w") as fh:
        json.dump(summary, fh, indent=2, sort_keys=True)
        fh.write("\n")


def _radius(cfg: ExperimentConfig, A: float) -> float:
    if cfg.window_radius > 0:
        return cfg.window_radius
    return default_radius(A, cfg.params)


def _left_radius(cfg: ExperimentConfig):
    return cfg.window_left if cfg.window_left > 0 else None


def cmd_rates(cfg: ExperimentConfig, out_dir: Path) -> dict:
    from .experiments import rates_table

    grid = np.linspace(cfg.A_min, cfg.A_max, cfg.A_count)
    rows = rates_table(cfg.params, grid)
    header = ["A", "I_gamma", "I_Z", "K_profile", "J1", "J2", "poisson_rate_t1"]
    _write_csv(
        out_dir / "rates.csv", header,
        [[r[h] for h in header] for r in rows],
    )
    return {"n_rows": len(rows)}


def cmd_tail(cfg: ExperimentConfig, out_dir: Path) -> dict:
    from .experiments import (
        estimate_tail_direct,
        estimate_tail_importance,
        exact_poisson_log_tail,
        exact_poisson_tail,
    )

    params = cfg.params
    side = cfg.side if cfg.side != "auto" else None
    rows, payload = [], {}
    for N in cfg.N:
        t0 = time.time()
        if cfg.estimator == "direct":
            est = estimate_tail_direct(
                cfg.A, params, N, cfg.trajectories, cfg.seed,
                side=side or "upper", R=_radius(cfg, cfg.A),
                left_radius=_left_radius(cfg), horizon=cfg.horizon,
            )
        elif cfg.estimator == "importance":
            est = estimate_tail_importance(
                cfg.A, params, N, cfg.trajectories, cfg.seed,
                eps=cfg.eps, regime=cfg.regime_enum, side=side,
                R=_radius(cfg, cfg.A), horizon=cfg.horizon,
            )
        elif cfg.estimator == "exact":
            if not params.is_totally_asymmetric:
                raise DomainError("exact estimator requires p = 1 (TASEP)")
            p = exact_poisson_tail(cfg.A, params.rho, N, side or "upper")
            logp = exact_poisson_log_tail(cfg.A, params.rho, N, side or "upper")
            rows.append([N, p, 0.0, p, p, -logp / N, cfg.trajectories, "", "", ""])
            payload[str(N)] = {"p": p, "rate_hat": -logp / N}
            continue
        else:
            raise ConfigError(f"unknown estimator {cfg.estimator!r}")
        rows.append([
            N, est.p_hat, est.stderr, est.ci95[0], est.ci95[1], est.rate_hat,
            est.n_hits, est.effective_sample_size, est.q_frequency,
            est.boundary_fraction,
        ])
        payload[str(N)] = {
            "p_hat": est.p_hat, "stderr": est.stderr, "rate_hat": est.rate_hat,
            "ess": est.effective_sample_size, "q_frequency": est.q_frequency,
            "seconds": round(time.time() - t0, 3),
        }
    _write_csv(
        out_dir / "tail.csv",
        ["N", "p_hat", "stderr", "ci_lo", "ci_hi", "rate_hat", "hits",
         "ess", "q_frequency", "boundary_fraction"],
        rows,
    )
    return payload


def cmd_validate(cfg: ExperimentConfig, out_dir: Path) -> dict:
    from .experiments import (
        estimate_cumulant,
        flux_dominance_check,
        lln_check,
        poisson_law_test,
    )

    params = cfg.params
    if cfg.check == "lln":
        reports = lln_check(
            params, list(cfg.N), cfg.trajectories, cfg.seed, start=cfg.start,
            A=cfg.A, eps=cfg.eps, threshold=cfg.threshold,
        )
        _write_csv(
            out_dir / "lln.csv",
            ["N", "target", "mean", "std", "fraction_within", "threshold",
             "dev_p50", "dev_p90", "dev_p99", "boundary_fraction"],
            [[r.N, r.target, r.mean, r.std, r.fraction_within, r.threshold,
              r.quantiles["p50"], r.quantiles["p90"], r.quantiles["p99"],
              r.boundary_fraction] for r in reports],
        )
        return {str(r.N): {"mean": r.mean, "fraction_within": r.fraction_within}
                for r in reports}
    if cfg.check == "poisson-law":
        rep = poisson_law_test(params, cfg.t, cfg.trajectories, cfg.seed)
        _write_csv(
            out_dir / "poisson_law.csv",
            ["t", "M", "mean", "mean_over_target", "variance_over_mean",
             "chi2", "chi2_pvalue", "chi2_dof", "increment_corr",
             "increment_corr_stderr"],
            [[rep.t, rep.M, rep.mean, rep.mean_over_target,
              rep.variance_over_mean, rep.chi2_stat, rep.chi2_pvalue,
              rep.chi2_dof, rep.increment_correlation,
              rep.increment_corr_stderr]],
        )
        return {"mean_over_target": rep.mean_over_target,
                "variance_over_mean": rep.variance_over_mean,
                "chi2_pvalue": rep.chi2_pvalue}
    if cfg.check == "flux":
        if cfg.start == "profile":
            regime = cfg.regime_enum or classify_regime(cfg.A, params)
            profile = build_strategy_profile(regime, cfg.A, cfg.eps, params)
        else:
            profile = Profile.constant(params.rho)
        rep = flux_dominance_check(
            profile, params, cfg.N[0], cfg.trajectories, cfg.seed,
            ts=cfg.t_grid, ells=cfg.L_grid, eps_test=cfg.eps_test,
            R=_radius(cfg, max(abs(min(cfg.L_grid)), abs(max(cfg.L_grid)))),
        )
        _write_csv(
            out_dir / "flux.csv",
            ["N", "M", "n_checks", "n_violations", "worst_gap", "eps_test"],
            [[cfg.N[0], cfg.trajectories, rep.n_checks, rep.n_violations,
              rep.worst_gap, rep.eps_test]],
        )
        return {"n_violations": rep.n_violations, "worst_gap": rep.worst_gap}
    if cfg.check == "cumulant":
        from .simulator import simulate_batch

        N = cfg.N[0]
        res = simulate_batch(
            Profile.constant(params.rho), DynamicsSpec.plain(params),
            N, cfg.trajectories, cfg.horizon, cfg.seed, params,
            _radius(cfg, max(abs(l) for l in cfg.lambda_grid) + 1.0),
        )
        rep = estimate_cumulant(np.array(cfg.lambda_grid), res.displacement, N)
        _write_csv(
            out_dir / "cumulant.csv",
            ["lambda", "Lambda_hat"],
            [[l, v] for l, v in zip(rep.lambdas, rep.values)],
        )
        return {"convex_violation": rep.convex_violation}
    raise ConfigError(f"unknown check {cfg.check!r}")


def cmd_simulate(cfg: ExperimentConfig, out_dir: Path) -> dict:
    params = cfg.params
    N = cfg.N[0]
    if cfg.start == "profile":
        regime = cfg.regime_enum or classify_regime(cfg.A, params)
        profile = build_strategy_profile(regime, cfg.A, cfg.eps, params)
    else:
        profile = Profile.constant(params.rho)
    R = _radius(cfg, cfg.A)
    state, logw = sample_initial(profile, N, R, cfg.seed, params,
                                 left_radius=_left_radius(cfg))
    traj = simulate(
        state, DynamicsSpec.plain(params), cfg.horizon, cfg.seed,
        snapshot_times=tuple(cfg.times), log_initial_weight=logw,
    )
    _write_csv(
        out_dir / "tagged_path.csv",
        ["time", "position"],
        [[t, x] for t, x in traj.tagged_path],
    )
    rle_rows = []
    for t_snap, snap in traj.snapshots:
        runs, cur, cnt = [], int(snap.occupancy[0]), 0
        for v in snap.occupancy:
            if int(v) == cur:
                cnt += 1
            else:
                runs.append(f"{cur}x{cnt}")
                cur, cnt = int(v), 1
        runs.append(f"{cur}x{cnt}")
        rle_rows.append([t_snap, snap.lo_site, ";".join(runs)])
    _write_csv(out_dir / "snapshots.csv", ["time", "lo_site", "rle"], rle_rows)
    return {
        "displacement": traj.displacement,
        "velocity": traj.displacement / N,
        "n_jumps": traj.n_jumps_right + traj.n_jumps_left,
        "boundary_violation": traj.boundary_violation,
    }


def cmd_hydro(cfg: ExperimentConfig, out_dir: Path) -> dict:
    from .hydro import Evolution

    params = cfg.params
    regime = cfg.regime_enum or classify_regime(cfg.A, params)
    evo = Evolution.closed_form(regime, cfg.A, cfg.eps, params)
    rows = []
    for t in cfg.times:
        prof = evo.profile(t)
        lo = min(k[0] for k in prof.knots) - 0.5
        hi = max(k[0] for k in prof.knots) + 0.5
        for i in range(401):
            u = lo + (hi - lo) * i / 400
            rows.append([t, u, prof.value(u)])
    _write_csv(out_dir / "density.csv", ["t", "u", "density"], rows)
    return {"n_rows": len(rows)}


def cmd_variational(cfg: ExperimentConfig, out_dir: Path) -> dict:
    from .variational import (
        analytic_minimizer,
        cost_K,
        solve_lambda_regularized,
        upper_tail_obstacle,
    )

    params = cfg.params
    spec = upper_tail_obstacle(cfg.A, params, cfg.problem)
    sol = solve_lambda_regularized(
        spec, cfg.lambda_reg, cfg.delta, cfg.solver_eps, cfg.grid_step
    )
    ana = analytic_minimizer(cfg.problem, cfg.A, params)
    rows = [
        [u, v, spec.H(u), ana.value(u)]
        for u, v in zip(sol.grid, sol.values)
    ]
    _write_csv(out_dir / "minimizer.csv", ["u", "v_numeric", "H", "v_analytic"], rows)
    gap = max(abs(sol.value(u) - ana.value(u)) for u in sol.grid)
    return {
        "max_norm_gap": gap,
        "el_residual": sol.el_residual,
        "cost_numeric": sol.cost(params),
        "cost_analytic": cost_K(ana, params),
    }


_COMMANDS = {
    "rates": cmd_rates,
    "tail": cmd_tail,
    "validate": cmd_validate,
    "simulate": cmd_simulate,
    "hydro": cmd_hydro,
    "variational": cmd_variational,
}

# config kinds that map onto a different subcommand
_KIND_TO_COMMAND = {
    "lln": "validate",
    "poisson-law": "validate",
    "cumulant": "validate",
    "flux": "validate",
}


def run(config_path: str, out_dir: str = "out", overrides: dict | None = None) -> int:
    """Dispatch a config file; returns a process exit status."""
    try:
        cfg = load_config(config_path, overrides)
        kind = cfg.kind
        command = _KIND_TO_COMMAND.get(kind, kind)
        if command not in _COMMANDS:
            raise ConfigError(f"kind {kind!r} has no runnable command")
        if kind in _KIND_TO_COMMAND:
            cfg.values["check"] = kind
        t0 = time.time()
        payload = _COMMANDS[command](cfg, Path(out_dir))
        csv_files = sorted(p.name for p in Path(out_dir).glob("*.csv"))
        _write_summary(Path(out_dir), cfg, payload, time.time() - t0, csv_files)
        return 0
    except (ConfigError, DomainError, FileNotFoundError) as exc:
        print(json.dumps({"error": str(exc)}), file=sys.stderr)
        return 2


def main(argv: list[str] | None = None) -> int:
    parser = argparse.ArgumentParser(
        prog="asep-tagged",
        description="Tagged-particle ASEP simulator and rare-event toolkit",
    )
    sub = parser.add_subparsers(dest="command", required=True)
    for name in _COMMANDS:
        sp = sub.add_parser(name)
        sp.add_argument("--config", required=True, help="key = value config file")
        sp.add_argument("--seed", type=int, default=None)
        sp.add_argument("--out", default="out", help="output directory")
        sp.add_argument("--N", type=str, default=None,
                        help="override lattice scale list, e.g. 64,128")
        sp.add_argument("--trajectories", type=int, default=None)
    args = parser.parse_args(argv)

    overrides: dict = {}
    if args.seed is not None:
        overrides["seed"] = args.seed
    if args.N is not None:
        overrides["N"] = tuple(int(x) for x in args.N.replace(",", " ").split())
    if args.trajectories is not None:
        overrides["trajectories"] = args.trajectories

    try:
        cfg = load_config(args.config, overrides)
    except (ConfigError, FileNotFoundError) as exc:
        print(json.dumps({"error": str(exc)}), file=sys.stderr)
        return 2
    kind_cmd = _KIND_TO_COMMAND.get(cfg.kind, cfg.kind)
    if kind_cmd != args.command and cfg.kind != args.command:
        print(
            json.dumps({"error": f"config kind {cfg.kind!r} does not match "
                                 f"subcommand {args.command!r}"}),
            file=sys.stderr,
        )
        return 2
    overrides["kind"] = cfg.kind
    return run(args.config, args.out, overrides)


if __name__ == "__main__":
    sys.exit(main())
