"""Command-line front end: simulate, solve, bound, estimate, set-grid, coverage.

Every subcommand reads a JSON config (defaults apply when omitted), folds its
flag overrides into the resolved form, echoes that form into the output
directory, and writes plain CSV/JSON outputs.  All randomness derives from the
single seed through counter-based streams, so reruns are byte-identical for
any worker count.

Exit codes: 0 success, 2 config/validation failure, 3 numerical failure,
4 I/O failure.
"""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

import numpy as np

from . import jsonio
from .bounds import RefinementStalled, refine_bound
from .config import ConfigError, RunConfig
from .dp import DrawSet, NonConvergence, ValueTable, solve_value_function, uniform_knots
from .experiments import export_set_grid, run_coverage
from .inference import OptimizerFailed, Panel, envelope_at, loglik_envelope, mle, sup_lower_loglik
from .model import ContractViolation, FiniteSurrogate
from .sim import simulate_panel, truth_table

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_NUMERIC = 3
EXIT_IO = 4


def _load_config(args) -> RunConfig:
    cfg = RunConfig.from_file(args.config) if args.config else RunConfig.defaults()
    if args.seed is not None:
        cfg.override("seed", int(args.seed))
    return cfg


def _prepare_out(args) -> Path:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _echo_config(cfg: RunConfig, out: Path) -> None:
    jsonio.dump_atomic(cfg.resolved(), out / "resolved_config.json")


def _parse_grid_spec(spec: str):
    # t1_lo:t1_hi:n1,t2_lo:t2_hi:n2
    try:
        parts = spec.split(",")
        if len(parts) != 2:
            raise ValueError
        axes = []
        for part in parts:
            lo, hi, n = part.split(":")
            axes.append([float(lo), float(hi), int(n)])
        return {"theta1": axes[0], "theta2": axes[1]}
    except ValueError:
        raise ConfigError(f"bad --grid spec {spec!r}; expected t1_lo:t1_hi:n1,t2_lo:t2_hi:n2") from None


def cmd_simulate(args) -> int:
    cfg = _load_config(args)
    if args.horizon is not None:
        cfg.override("sim.horizon", int(args.horizon))
    out = _prepare_out(args)
    _echo_config(cfg, out)
    sim_cfg = cfg.sim_config()
    deltas: list = []
    panel = simulate_panel(sim_cfg, callback=deltas.append)
    panel.to_csv(out / "panel.csv")
    freq = [float(np.mean(panel.choices == d)) for d in range(sim_cfg.model.n_choices)]
    jsonio.dump_atomic(
        {
            "sim": sim_cfg.to_json_dict(),
            "model": sim_cfg.model.to_json_dict(),
            "truth_solve": {
                "iterations": len(deltas),
                "final_delta": deltas[-1] if deltas else None,
                "converged": True,
            },
            "horizon": sim_cfg.horizon,
            "choice_frequencies": freq,
        },
        out / "panel.meta.json",
    )
    print(f"T={sim_cfg.horizon} choice frequencies={freq}")
    return EXIT_OK


def cmd_solve(args) -> int:
    cfg = _load_config(args)
    if args.knots is not None:
        cfg.override("dp.knots", int(args.knots))
    if args.tol is not None:
        cfg.override("dp.tol", float(args.tol))
    out = _prepare_out(args)
    _echo_config(cfg, out)
    model = cfg.model()
    dp_block = cfg.data["dp"]
    knots = uniform_knots(model, int(dp_block["knots"]))
    deltas: list = []
    vtab = solve_value_function(
        model,
        model.theta,
        knots,
        n_draws=int(dp_block["n_draws"]),
        tol=float(dp_block["tol"]),
        max_iter=int(dp_block["max_iter"]),
        seed=cfg.seed,
        callback=deltas.append,
    )
    vtab.to_csv(out / "value_table.csv")
    jsonio.dump_atomic(
        {
            "knots": int(dp_block["knots"]),
            "n_draws": int(dp_block["n_draws"]),
            "tol": float(dp_block["tol"]),
            "iterations": len(deltas),
            "deltas": deltas,
            "converged": True,
        },
        out / "solve.meta.json",
    )
    print(f"converged in {len(deltas)} iterations (final delta {deltas[-1]:.3e})")
    return EXIT_OK


def cmd_bound(args) -> int:
    cfg = _load_config(args)
    if args.tau is not None:
        cfg.override("bounds.tau", float(args.tau))
    out = _prepare_out(args)
    _echo_config(cfg, out)
    vtab = ValueTable.from_csv(args.table)
    if args.surrogate:
        model = FiniteSurrogate.from_json_dict(jsonio.load(args.surrogate))
        theta = None
    else:
        model = cfg.model()
        theta = model.theta
    b_block = cfg.data["bounds"]
    candidate_grid = np.linspace(model.state_lo, model.state_hi, int(b_block["candidate_points"]))
    rounds: list = []
    cert = refine_bound(
        vtab,
        model,
        theta,
        float(b_block["tau"]),
        initial_anchor_count=int(b_block["initial_anchors"]),
        max_rounds=int(b_block["max_rounds"]),
        candidate_grid=candidate_grid,
        on_round=lambda r, up, lo: rounds.append({"round": r, "B_upper": up, "B_lower": lo}),
    )
    cert.to_json(out / "certificate.json")
    jsonio.dump_atomic({"rounds": rounds, "tau": float(b_block["tau"])}, out / "bound.meta.json")
    print(f"B_upper={cert.B_upper!r} B_lower={cert.B_lower!r} rounds={len(rounds)}")
    return EXIT_OK


def cmd_estimate(args) -> int:
    cfg = _load_config(args)
    if args.knots is not None:
        cfg.override("dp.knots", int(args.knots))
    out = _prepare_out(args)
    _echo_config(cfg, out)
    model = cfg.model()
    panel = Panel.from_csv(args.panel)
    panel.validate_against(model)
    settings = cfg.optimizer_settings()
    inner = cfg.inner_solve()
    knot_count = int(cfg.data["dp"]["knots"])
    bound_method = cfg.data["bounds"]["method"]
    eval_points = int(cfg.data["bounds"]["eval_points"])
    fit = mle(panel, model, knot_count, settings=settings, inner=inner)
    env, cert, _ = envelope_at(
        fit.theta_hat, panel, model, knot_count, inner=inner,
        bound_method=bound_method, eval_points=eval_points,
    )
    jsonio.dump_atomic(
        {
            "theta_hat": list(fit.theta_hat),
            "ll_hat": fit.ll,
            "converged": fit.converged,
            "boundary": fit.boundary,
            "n_fun_evals": fit.n_fun_evals,
            "knot_count": knot_count,
            "envelope_at_theta_hat": {
                "ll_lower": env.ll_lower,
                "ll_point": env.ll_point,
                "ll_upper": env.ll_upper,
            },
            "certificate": cert.to_json_dict(),
        },
        out / "estimate.json",
    )
    print(f"theta_hat={list(fit.theta_hat)} ll={fit.ll!r} boundary={fit.boundary}")
    return EXIT_OK


def cmd_set_grid(args) -> int:
    cfg = _load_config(args)
    if args.knots is not None:
        cfg.override("dp.knots", int(args.knots))
    if args.alpha is not None:
        cfg.override("inference.alpha", float(args.alpha))
    if args.grid is not None:
        cfg.override("inference.grid", _parse_grid_spec(args.grid))
    out = _prepare_out(args)
    _echo_config(cfg, out)
    model = cfg.model()
    panel = Panel.from_csv(args.panel)
    panel.validate_against(model)
    t1, t2 = cfg.theta_grids()
    rows, sidecar = export_set_grid(
        panel,
        model,
        int(cfg.data["dp"]["knots"]),
        t1,
        t2,
        float(cfg.data["inference"]["alpha"]),
        out / "set_grid.csv",
        sidecar_path=out / "set_grid.meta.json",
        settings=cfg.optimizer_settings(),
        inner=cfg.inner_solve(),
        threads=args.threads,
        bound_method=cfg.data["bounds"]["method"],
        eval_points=int(cfg.data["bounds"]["eval_points"]),
    )
    n_set = sum(r["in_set_estimate"] for r in rows)
    n_rob = sum(r["in_robust_ci"] for r in rows)
    n_std = sum(r["in_standard_ci"] for r in rows)
    print(f"grid rows={len(rows)} in_set={n_set} in_robust={n_rob} in_standard={n_std}")
    return EXIT_OK


def cmd_coverage(args) -> int:
    cfg = _load_config(args)
    if args.reps is not None:
        cfg.override("experiments.n_replications", int(args.reps))
    if args.knot_list is not None:
        try:
            counts = [int(k) for k in args.knot_list.split(",") if k]
        except ValueError:
            raise ConfigError(f"bad --knot-list {args.knot_list!r}") from None
        cfg.override("experiments.knot_counts", counts)
    if args.alpha is not None:
        cfg.override("experiments.alpha", float(args.alpha))
    out = _prepare_out(args)
    _echo_config(cfg, out)
    ex = cfg.data["experiments"]
    report = run_coverage(
        cfg.sim_config(horizon=int(ex["horizon"])),
        [int(k) for k in ex["knot_counts"]],
        int(ex["n_replications"]),
        alpha=float(ex["alpha"]),
        master_seed=cfg.seed,
        threads=args.threads,
        out_dir=out,
        settings=cfg.optimizer_settings(),
        bound_method=cfg.data["bounds"]["method"],
        eval_points=int(cfg.data["bounds"]["eval_points"]),
    )
    report.to_csv(out / "coverage.csv")
    jsonio.dump_atomic(report.to_json_dict(), out / "coverage.json")
    for row in report.rows:
        print(
            f"knots={row.knots} n_rep={row.n_rep} mse={row.mse:.4f} "
            f"set={row.set_cov:.3f} robust={row.robust_cov:.3f} standard={row.std_cov:.3f}"
        )
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="ddcbounds",
        description="Dynamic discrete choice estimation with certified approximation-error bounds.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--config", help="JSON config path (defaults apply when omitted)")
        p.add_argument("--seed", type=int, help="override the config seed")
        p.add_argument("--threads", type=int, default=1, help="worker process cap")
        p.add_argument("--out", required=True, help="output directory (created if missing)")

    p = sub.add_parser("simulate", help="simulate a panel from the configured model")
    common(p)
    p.add_argument("--horizon", type=int, help="override sim.horizon")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("solve", help="solve the value function on a knot grid")
    common(p)
    p.add_argument("--knots", type=int, help="override dp.knots")
    p.add_argument("--tol", type=float, help="override dp.tol")
    p.set_defaults(func=cmd_solve)

    p = sub.add_parser("bound", help="certify approximation-error bounds for a value table")
    common(p)
    p.add_argument("--table", required=True, help="value-table CSV path")
    p.add_argument("--tau", type=float, help="override bounds.tau")
    p.add_argument("--surrogate", help="finite-surrogate JSON; bounds the table under that model")
    p.set_defaults(func=cmd_bound)

    p = sub.add_parser("estimate", help="maximum likelihood with envelope diagnostics")
    common(p)
    p.add_argument("--panel", required=True, help="panel CSV path")
    p.add_argument("--knots", type=int, help="override dp.knots (estimation grid size)")
    p.set_defaults(func=cmd_estimate)

    p = sub.add_parser("set-grid", help="set-estimate / confidence-set membership grid")
    common(p)
    p.add_argument("--panel", required=True, help="panel CSV path")
    p.add_argument("--knots", type=int, help="override dp.knots (estimation grid size)")
    p.add_argument("--alpha", type=float, help="override inference.alpha")
    p.add_argument("--grid", help="t1_lo:t1_hi:n1,t2_lo:t2_hi:n2")
    p.set_defaults(func=cmd_set_grid)

    p = sub.add_parser("coverage", help="Monte Carlo coverage study")
    common(p)
    p.add_argument("--reps", type=int, help="override experiments.n_replications")
    p.add_argument("--knot-list", help="comma-separated estimation grid sizes")
    p.add_argument("--alpha", type=float, help="override experiments.alpha")
    p.set_defaults(func=cmd_coverage)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (ConfigError, ContractViolation) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (NonConvergence, RefinementStalled, OptimizerFailed) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except OSError as exc:
        print(f"i/o error: {exc}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
