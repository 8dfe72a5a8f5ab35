"""Run configuration: defaults, validation, and the echoed resolved form.

Configs are JSON with one block per subsystem.  Unknown keys are rejected,
defaults are materialised into the resolved config, and every command echoes
that resolved form so a run can be reproduced from its own output directory.
"""

from __future__ import annotations

import copy
import json
from pathlib import Path

import numpy as np

from .inference import InnerSolve, OptimizerSettings
from .model import ContractViolation, ModelSpec
from .sim import SimConfig

__all__ = ["ConfigError", "RunConfig", "DEFAULTS"]


class ConfigError(ValueError):
    """Configuration failed validation; the message names the offending key."""


DEFAULTS = {
    "seed": 0,
    "model": {
        "beta": 0.8,
        "theta": [-0.6, -4.0],
        "gamma": [1.0, -1.0, 5.0],
        "state_lo": 0.0,
        "state_hi": 20.0,
    },
    "sim": {
        "horizon": 5000,
        "truth_knots": 1001,
        "truth_draws": 100,
        "initial_state": 10.0,
        "burn_in": 100,
        "solve_tol": 1e-9,
        "solve_max_iter": 2000,
    },
    "dp": {
        "knots": 1001,
        "n_draws": 100,
        "tol": 1e-9,
        "max_iter": 2000,
    },
    "bounds": {
        "tau": 0.5,
        "candidate_points": 1001,
        "initial_anchors": 11,
        "max_rounds": 12,
        "method": "dense",
        "eval_points": 1001,
    },
    "inference": {
        "alpha": 0.05,
        "starts": [[-0.5, -3.0], [-1.0, -6.0], [0.0, -1.0]],
        "xatol": 1e-5,
        "fatol": 1e-8,
        "max_fun_evals": 400,
        "boundary_threshold": 25.0,
        "grid": None,  # materialised from model.theta when absent
    },
    "experiments": {
        "n_replications": 100,
        "horizon": 1000,
        "knot_counts": [10, 100],
        "alpha": 0.05,
    },
}


def _merge(defaults: dict, user: dict, path: str = "") -> dict:
    out = copy.deepcopy(defaults)
    for key, value in user.items():
        here = f"{path}.{key}" if path else key
        if key not in defaults:
            raise ConfigError(f"unknown config key: {here}")
        if isinstance(defaults[key], dict) and defaults[key] is not None:
            if not isinstance(value, dict):
                raise ConfigError(f"config key {here} must be an object")
            out[key] = _merge(defaults[key], value, here)
        else:
            out[key] = copy.deepcopy(value)
    return out


def _require_number(obj, key: str, kind=float):
    try:
        return kind(obj)
    except (TypeError, ValueError):
        raise ConfigError(f"config key {key} must be a {kind.__name__}") from None


class RunConfig:
    """Resolved configuration with typed accessors for each subsystem."""

    def __init__(self, data: dict):
        self.data = data
        self.validate()

    @classmethod
    def from_file(cls, path) -> "RunConfig":
        try:
            with open(path) as f:
                raw = json.load(f)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"config is not valid JSON: {exc}") from None
        if not isinstance(raw, dict):
            raise ConfigError("config root must be a JSON object")
        return cls(_merge(DEFAULTS, raw))

    @classmethod
    def defaults(cls) -> "RunConfig":
        return cls(copy.deepcopy(DEFAULTS))

    def override(self, path: str, value) -> None:
        """Fold a CLI flag into the config so the echoed form reproduces the run."""
        keys = path.split(".")
        node = self.data
        for k in keys[:-1]:
            node = node[k]
        if keys[-1] not in node:
            raise ConfigError(f"unknown config key: {path}")
        node[keys[-1]] = value
        self.validate()

    # -- validation ----------------------------------------------------------

    def validate(self) -> None:
        d = self.data
        _require_number(d["seed"], "seed", int)
        if int(d["seed"]) < 0:
            raise ConfigError("seed must be nonnegative")
        try:
            model = self.model()
        except ContractViolation as exc:
            raise ConfigError(f"model: {exc}") from None
        sim = d["sim"]
        for key in ("horizon", "truth_knots", "truth_draws", "burn_in", "solve_max_iter"):
            if _require_number(sim[key], f"sim.{key}", int) < 0:
                raise ConfigError(f"sim.{key} must be nonnegative")
        if sim["horizon"] < 1:
            raise ConfigError("sim.horizon must be at least 1")
        if sim["truth_knots"] < 2:
            raise ConfigError("sim.truth_knots must be at least 2")
        dp = d["dp"]
        if _require_number(dp["knots"], "dp.knots", int) < 2:
            raise ConfigError("dp.knots must be at least 2")
        if _require_number(dp["n_draws"], "dp.n_draws", int) < 1:
            raise ConfigError("dp.n_draws must be at least 1")
        if _require_number(dp["tol"], "dp.tol") <= 0:
            raise ConfigError("dp.tol must be positive")
        if _require_number(dp["max_iter"], "dp.max_iter", int) < 1:
            raise ConfigError("dp.max_iter must be at least 1")
        b = d["bounds"]
        if _require_number(b["tau"], "bounds.tau") <= 0:
            raise ConfigError("bounds.tau must be positive")
        if b["method"] not in ("dense", "refine"):
            raise ConfigError("bounds.method must be 'dense' or 'refine'")
        if _require_number(b["initial_anchors"], "bounds.initial_anchors", int) < 2:
            raise ConfigError("bounds.initial_anchors must be at least 2")
        inf = d["inference"]
        alpha = _require_number(inf["alpha"], "inference.alpha")
        if not 0.0 < alpha < 1.0:
            raise ConfigError("inference.alpha must lie in (0, 1)")
        if not inf["starts"]:
            raise ConfigError("inference.starts must list at least one start point")
        ex = d["experiments"]
        if _require_number(ex["n_replications"], "experiments.n_replications", int) < 1:
            raise ConfigError("experiments.n_replications must be at least 1")
        if _require_number(ex["horizon"], "experiments.horizon", int) < 1:
            raise ConfigError("experiments.horizon must be at least 1")
        if not ex["knot_counts"] or any(int(k) < 2 for k in ex["knot_counts"]):
            raise ConfigError("experiments.knot_counts must list grid sizes of at least 2")
        grid = inf["grid"]
        if grid is None:
            t1, t2 = model.theta
            grid = {"theta1": [t1 - 1.0, t1 + 1.0, 41], "theta2": [t2 - 3.0, t2 + 3.0, 41]}
            inf["grid"] = grid
        for axis in ("theta1", "theta2"):
            if axis not in grid or len(grid[axis]) != 3:
                raise ConfigError(f"inference.grid.{axis} must be [lo, hi, n]")
            if int(grid[axis][2]) < 1:
                raise ConfigError(f"inference.grid.{axis} must contain at least one point")
        extra = set(grid) - {"theta1", "theta2"}
        if extra:
            raise ConfigError(f"unknown config key: inference.grid.{sorted(extra)[0]}")

    # -- typed accessors -----------------------------------------------------

    @property
    def seed(self) -> int:
        return int(self.data["seed"])

    def model(self) -> ModelSpec:
        return ModelSpec.from_json_dict(self.data["model"])

    def sim_config(self, horizon=None) -> SimConfig:
        s = self.data["sim"]
        return SimConfig(
            model=self.model(),
            horizon=int(horizon if horizon is not None else s["horizon"]),
            truth_knots=int(s["truth_knots"]),
            truth_draws=int(s["truth_draws"]),
            seed=self.seed,
            initial_state=float(s["initial_state"]),
            burn_in=int(s["burn_in"]),
            solve_tol=float(s["solve_tol"]),
            solve_max_iter=int(s["solve_max_iter"]),
        )

    def optimizer_settings(self) -> OptimizerSettings:
        inf = self.data["inference"]
        return OptimizerSettings(
            starts=tuple(tuple(float(v) for v in s) for s in inf["starts"]),
            xatol=float(inf["xatol"]),
            fatol=float(inf["fatol"]),
            max_fun_evals=int(inf["max_fun_evals"]),
            boundary_threshold=float(inf["boundary_threshold"]),
        )

    def inner_solve(self) -> InnerSolve:
        dp = self.data["dp"]
        return InnerSolve(
            n_draws=int(dp["n_draws"]),
            tol=float(dp["tol"]),
            max_iter=int(dp["max_iter"]),
            seed=self.seed,
        )

    def theta_grids(self):
        g = self.data["inference"]["grid"]
        t1 = np.linspace(float(g["theta1"][0]), float(g["theta1"][1]), int(g["theta1"][2]))
        t2 = np.linspace(float(g["theta2"][0]), float(g["theta2"][1]), int(g["theta2"][2]))
        return t1, t2

    def resolved(self) -> dict:
        return copy.deepcopy(self.data)
