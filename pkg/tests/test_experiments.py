import numpy as np
import pytest

from ddcbounds import ModelSpec, OptimizerSettings, SimConfig
from ddcbounds.experiments import membership_grid, run_coverage, run_replication
from ddcbounds.inference import InnerSolve
from ddcbounds.sim import simulate_panel

FAST = OptimizerSettings(starts=((-0.5, -3.0),))


@pytest.fixture(scope="module")
def small_cfg(bus):
    return SimConfig(model=bus, horizon=150)


def test_single_replication_smoke(bus, small_cfg):
    rep = run_replication(0, 0, small_cfg, [8], alpha=0.05, settings=FAST)
    entry = rep["knots"]["8"]
    assert not entry["failed"]
    assert entry["sq_err"] >= 0.0
    assert entry["in_set"] in (True, False)
    assert entry["ll_lower_true"] <= entry["ll_point_true"] <= entry["ll_upper_true"]


def test_run_coverage_single_rep_degenerate_stats(bus, small_cfg):
    report = run_coverage(small_cfg, [8], 1, alpha=0.05, master_seed=3, settings=FAST)
    row = report.rows[0]
    assert row.n_rep == 1
    assert row.set_cov in (0.0, 1.0)
    assert row.robust_cov in (0.0, 1.0)
    assert row.std_cov in (0.0, 1.0)
    assert row.mse >= 0.0


def test_run_coverage_threads_and_resume_match(bus, small_cfg, tmp_path):
    serial = run_coverage(small_cfg, [8], 3, alpha=0.05, master_seed=5, settings=FAST)
    outdir = tmp_path / "study"
    threaded = run_coverage(small_cfg, [8], 3, alpha=0.05, master_seed=5, threads=2,
                            out_dir=outdir, settings=FAST)
    assert serial.rows == threaded.rows
    # drop one per-replication file; the rerun recomputes only that one
    (outdir / "reps" / "rep_00001.json").unlink()
    resumed = run_coverage(small_cfg, [8], 3, alpha=0.05, master_seed=5, threads=1,
                           out_dir=outdir, settings=FAST)
    assert resumed.rows == serial.rows


def test_run_coverage_ignores_stale_manifest(bus, small_cfg, tmp_path):
    outdir = tmp_path / "study"
    run_coverage(small_cfg, [8], 2, alpha=0.05, master_seed=5, out_dir=outdir, settings=FAST)
    # different master seed: cached replications must not be reused
    other = run_coverage(small_cfg, [8], 2, alpha=0.05, master_seed=6, out_dir=outdir, settings=FAST)
    fresh = run_coverage(small_cfg, [8], 2, alpha=0.05, master_seed=6, settings=FAST)
    assert other.rows == fresh.rows


def test_membership_grid_orderings(bus, small_cfg):
    panel = simulate_panel(small_cfg)
    t1 = np.linspace(-1.1, -0.1, 4)
    t2 = np.linspace(-6.0, -2.0, 4)
    rows, sidecar = membership_grid(panel, bus, 8, t1, t2, alpha=0.05, settings=FAST,
                                    inner=InnerSolve(seed=small_cfg.seed))
    assert len(rows) == 16
    for row in rows:
        assert row["ll_lower"] <= row["ll_point"] <= row["ll_upper"]
        # set estimate is contained in the robust confidence set
        assert row["in_set_estimate"] <= row["in_robust_ci"]
        # a standard member whose plug-in likelihood is bracketed is a robust member
        if row["in_standard_ci"] and row["ll_lower"] <= row["ll_point"] <= row["ll_upper"]:
            assert row["in_robust_ci"]
    assert sidecar["sup_ll_lower"] <= sidecar["sup_ll_plugin"] + 1e-9


def test_coverage_report_serialisation(tmp_path, bus, small_cfg):
    report = run_coverage(small_cfg, [8], 2, alpha=0.05, master_seed=1, settings=FAST)
    path = tmp_path / "coverage.csv"
    report.to_csv(path)
    lines = path.read_text().strip().splitlines()
    assert lines[0] == "knots,n_rep,mse,set_cov,robust_cov,std_cov"
    assert len(lines) == 2
    obj = report.to_json_dict()
    assert obj["rows"][0]["knots"] == 8
