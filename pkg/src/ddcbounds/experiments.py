"""Monte Carlo coverage study and set-membership grids.

Replications are embarrassingly parallel: each one derives its own seed from
the master seed by counter-based splitting and is written to its own JSON
file, so a study is resumable after interruption and its aggregate report is
identical for any worker count or schedule.
"""

from __future__ import annotations

import csv
import hashlib
from concurrent.futures import ProcessPoolExecutor, as_completed
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from . import jsonio, rng
from .inference import (
    InnerSolve,
    MLEResult,
    OptimizerFailed,
    OptimizerSettings,
    Panel,
    chi2_quantile,
    envelope_at,
    loglik,
    mle,
    sup_lower_loglik,
)
from .model import ContractViolation
from .sim import SimConfig, simulate_panel

__all__ = ["CoverageRow", "CoverageReport", "run_coverage", "run_replication", "export_set_grid", "membership_grid"]


@dataclass(frozen=True)
class CoverageRow:
    knots: int
    n_rep: int
    mse: float
    set_cov: float
    robust_cov: float
    std_cov: float

    def __post_init__(self):
        for f in (self.set_cov, self.robust_cov, self.std_cov):
            if not 0.0 <= f <= 1.0:
                raise ContractViolation("coverage frequencies must lie in [0, 1]")
        if self.n_rep < 1:
            raise ContractViolation("need at least one replication")


@dataclass(frozen=True)
class CoverageReport:
    rows: tuple
    n_failed: int
    master_seed: int

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as f:
            w = csv.writer(f)
            w.writerow(["knots", "n_rep", "mse", "set_cov", "robust_cov", "std_cov"])
            for r in self.rows:
                w.writerow([r.knots, r.n_rep, repr(r.mse), repr(r.set_cov), repr(r.robust_cov), repr(r.std_cov)])

    def to_json_dict(self) -> dict:
        return {
            "master_seed": self.master_seed,
            "n_failed": self.n_failed,
            "rows": [
                {
                    "knots": r.knots,
                    "n_rep": r.n_rep,
                    "mse": r.mse,
                    "set_cov": r.set_cov,
                    "robust_cov": r.robust_cov,
                    "std_cov": r.std_cov,
                }
                for r in self.rows
            ],
        }


def run_replication(
    master_seed: int,
    rep_index: int,
    sim_cfg: SimConfig,
    knot_counts: Sequence[int],
    alpha: float,
    settings: Optional[OptimizerSettings] = None,
    bound_method: str = "dense",
    eval_points: int = 1001,
) -> dict:
    """One replication: simulate, estimate at each grid size, test memberships at truth.

    Per-replication optimizer failures are recorded, not raised.
    """
    settings = settings or OptimizerSettings()
    seed = rng.replication_seed(master_seed, rep_index)
    cfg = replace(sim_cfg, seed=seed)
    panel = simulate_panel(cfg)
    theta_true = cfg.model.theta
    out = {"rep": rep_index, "seed": seed, "knots": {}}
    for k in knot_counts:
        inner = InnerSolve(seed=seed)
        entry: dict = {}
        try:
            fit = mle(panel, cfg.model, k, settings=settings, inner=inner)
            sup_lower = sup_lower_loglik(
                panel, cfg.model, k, settings=settings, inner=inner,
                bound_method=bound_method, eval_points=eval_points,
            )
            env, cert, _ = envelope_at(
                theta_true, panel, cfg.model, k, inner=inner,
                bound_method=bound_method, eval_points=eval_points,
            )
            half_crit = 0.5 * chi2_quantile(1.0 - alpha, df=len(theta_true))
            entry.update(
                theta_hat=list(fit.theta_hat),
                ll_hat=fit.ll,
                boundary=fit.boundary,
                sup_ll_lower=sup_lower,
                ll_upper_true=env.ll_upper,
                ll_lower_true=env.ll_lower,
                ll_point_true=env.ll_point,
                B_upper=cert.B_upper,
                sq_err=float(np.mean((np.asarray(fit.theta_hat) - np.asarray(theta_true)) ** 2)),
                in_set=bool(sup_lower - env.ll_upper <= 0.0),
                in_robust=bool(sup_lower - env.ll_upper <= half_crit),
                in_standard=bool(fit.ll - env.ll_point <= half_crit),
                failed=False,
            )
        except OptimizerFailed as exc:
            entry.update(failed=True, error=str(exc))
        out["knots"][str(k)] = entry
    return out


def _worker(args) -> dict:
    return run_replication(*args)


def _study_fingerprint(sim_cfg: SimConfig, knot_counts, alpha, master_seed, n_replications) -> str:
    payload = {
        "model": sim_cfg.model.to_json_dict(),
        "sim": sim_cfg.to_json_dict(),
        "knot_counts": list(knot_counts),
        "alpha": alpha,
        "master_seed": master_seed,
        "n_replications": n_replications,
    }
    return hashlib.sha256(jsonio.dumps_canonical(payload).encode()).hexdigest()


def run_coverage(
    sim_cfg: SimConfig,
    knot_counts: Sequence[int],
    n_replications: int,
    alpha: float = 0.05,
    master_seed: int = 0,
    threads: int = 1,
    out_dir=None,
    settings: Optional[OptimizerSettings] = None,
    bound_method: str = "dense",
    eval_points: int = 1001,
) -> CoverageReport:
    """Coverage study over replications and estimation grid sizes.

    With ``out_dir`` set, each finished replication lands in
    ``out_dir/reps/rep_NNNNN.json`` next to a manifest, and a rerun picks up
    exactly where an interrupted one stopped (matching configurations only).
    Results are merged by replication index, so the report does not depend on
    the worker count.
    """
    if n_replications < 1:
        raise ContractViolation("need at least one replication")
    knot_counts = [int(k) for k in knot_counts]
    fingerprint = _study_fingerprint(sim_cfg, knot_counts, alpha, master_seed, n_replications)

    rep_dir = None
    done: dict[int, dict] = {}
    if out_dir is not None:
        rep_dir = Path(out_dir) / "reps"
        rep_dir.mkdir(parents=True, exist_ok=True)
        manifest_path = Path(out_dir) / "manifest.json"
        if manifest_path.exists():
            manifest = jsonio.load(manifest_path)
            if manifest.get("fingerprint") == fingerprint:
                for p in sorted(rep_dir.glob("rep_*.json")):
                    rec = jsonio.load(p)
                    if 0 <= rec.get("rep", -1) < n_replications:
                        done[rec["rep"]] = rec
        jsonio.dump_atomic(
            {"fingerprint": fingerprint, "n_replications": n_replications, "knot_counts": knot_counts},
            manifest_path,
        )

    pending = [r for r in range(n_replications) if r not in done]
    tasks = [
        (master_seed, r, sim_cfg, knot_counts, alpha, settings, bound_method, eval_points)
        for r in pending
    ]

    def _record(rec: dict) -> None:
        done[rec["rep"]] = rec
        if rep_dir is not None:
            jsonio.dump_atomic(rec, rep_dir / f"rep_{rec['rep']:05d}.json")

    if tasks:
        if threads > 1:
            with ProcessPoolExecutor(max_workers=threads) as pool:
                futures = [pool.submit(_worker, t) for t in tasks]
                for fut in as_completed(futures):
                    _record(fut.result())
        else:
            for t in tasks:
                _record(_worker(t))

    rows = []
    n_failed = 0
    counted_failures = set()
    for k in knot_counts:
        ok = []
        for r in range(n_replications):
            entry = done[r]["knots"][str(k)]
            if entry.get("failed"):
                if r not in counted_failures:
                    n_failed += 1
                    counted_failures.add(r)
                continue
            ok.append(entry)
        if not ok:
            raise OptimizerFailed(f"every replication failed at {k} knots")
        rows.append(
            CoverageRow(
                knots=k,
                n_rep=len(ok),
                mse=float(np.mean([e["sq_err"] for e in ok])),
                set_cov=float(np.mean([e["in_set"] for e in ok])),
                robust_cov=float(np.mean([e["in_robust"] for e in ok])),
                std_cov=float(np.mean([e["in_standard"] for e in ok])),
            )
        )
    return CoverageReport(tuple(rows), n_failed, master_seed)


# ---------------------------------------------------------------------------
# set-membership grids
# ---------------------------------------------------------------------------


def _grid_worker(args) -> list:
    (thetas, panel_states, panel_choices, model, knot_count, alpha,
     sup_lower, sup_plugin, inner, bound_method, eval_points) = args
    panel = Panel(np.asarray(panel_states), np.asarray(panel_choices))
    half_crit = 0.5 * chi2_quantile(1.0 - alpha, df=2)
    rows = []
    for theta in thetas:
        env, _, _ = envelope_at(
            theta, panel, model, knot_count, inner=inner,
            bound_method=bound_method, eval_points=eval_points,
        )
        rows.append(
            {
                "theta1": theta[0],
                "theta2": theta[1],
                "in_set_estimate": int(sup_lower - env.ll_upper <= 0.0),
                "in_robust_ci": int(sup_lower - env.ll_upper <= half_crit),
                "in_standard_ci": int(sup_plugin - env.ll_point <= half_crit),
                "ll_upper": env.ll_upper,
                "ll_lower": env.ll_lower,
                "ll_point": env.ll_point,
            }
        )
    return rows


def membership_grid(
    panel: Panel,
    model,
    knot_count: int,
    theta1_grid,
    theta2_grid,
    alpha: float = 0.05,
    settings: Optional[OptimizerSettings] = None,
    inner: Optional[InnerSolve] = None,
    threads: int = 1,
    bound_method: str = "dense",
    eval_points: int = 1001,
):
    """Evaluate the three membership tests on a rectangular theta grid.

    Returns (rows, sidecar): membership rows in theta1-major order, and the
    scalars (theta_hat, suprema, critical value) the tests were run against.
    """
    theta1_grid = np.asarray(theta1_grid, dtype=float)
    theta2_grid = np.asarray(theta2_grid, dtype=float)
    if theta1_grid.size == 0 or theta2_grid.size == 0:
        raise ContractViolation("theta grid must contain at least one point per axis")
    settings = settings or OptimizerSettings()
    inner = inner or InnerSolve()
    fit = mle(panel, model, knot_count, settings=settings, inner=inner)
    sup_lower = sup_lower_loglik(
        panel, model, knot_count, settings=settings, inner=inner,
        bound_method=bound_method, eval_points=eval_points,
    )
    thetas = [(float(t1), float(t2)) for t1 in theta1_grid for t2 in theta2_grid]
    chunk = 32
    tasks = [
        (thetas[i:i + chunk], panel.states, panel.choices, model, knot_count, alpha,
         sup_lower, fit.ll, inner, bound_method, eval_points)
        for i in range(0, len(thetas), chunk)
    ]
    if threads > 1:
        with ProcessPoolExecutor(max_workers=threads) as pool:
            chunks = list(pool.map(_grid_worker, tasks))
    else:
        chunks = [_grid_worker(t) for t in tasks]
    rows = [row for ch in chunks for row in ch]
    sidecar = {
        "theta_hat": list(fit.theta_hat),
        "sup_ll_lower": sup_lower,
        "sup_ll_plugin": fit.ll,
        "c_alpha": chi2_quantile(1.0 - alpha, df=2),
        "alpha": alpha,
        "knot_count": knot_count,
        "boundary": fit.boundary,
    }
    return rows, sidecar


_GRID_HEADER = [
    "theta1", "theta2", "in_set_estimate", "in_robust_ci", "in_standard_ci",
    "ll_upper", "ll_lower", "ll_point",
]


def export_set_grid(
    panel: Panel,
    model,
    knot_count: int,
    theta1_grid,
    theta2_grid,
    alpha: float,
    out_csv,
    sidecar_path=None,
    **kwargs,
):
    """Write the membership grid CSV plus a JSON sidecar of the test scalars."""
    rows, sidecar = membership_grid(panel, model, knot_count, theta1_grid, theta2_grid, alpha, **kwargs)
    out_csv = Path(out_csv)
    out_csv.parent.mkdir(parents=True, exist_ok=True)
    with open(out_csv, "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(_GRID_HEADER)
        for row in rows:
            w.writerow([
                repr(row["theta1"]), repr(row["theta2"]),
                row["in_set_estimate"], row["in_robust_ci"], row["in_standard_ci"],
                repr(row["ll_upper"]), repr(row["ll_lower"]), repr(row["ll_point"]),
            ])
    if sidecar_path is not None:
        jsonio.dump_atomic(sidecar, sidecar_path)
    return rows, sidecar
