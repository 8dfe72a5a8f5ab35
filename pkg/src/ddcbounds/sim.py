"""Synthetic panels from the bus-engine model via a dense-grid truth solve.

The data-generating value function is solved once on a dense grid, then the
path alternates T1EV shock draws, an argmax decision, and a transition draw.
All randomness is inverse-CDF over counter-based uniform streams, so a panel
is a pure function of its configuration.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from . import rng
from .dp import DrawSet, ValueTable, solve_value_function, uniform_knots
from .inference import Panel
from .model import ContractViolation, ModelSpec

__all__ = ["SimConfig", "simulate_panel", "truth_table"]


@dataclass(frozen=True)
class SimConfig:
    """Data-generating configuration.

    The initial state (midpoint by default) and the discarded burn-in are
    implementation defaults, documented rather than inherited from any
    canonical choice.
    """

    model: ModelSpec = field(default_factory=ModelSpec)
    horizon: int = 5000
    truth_knots: int = 1001
    truth_draws: int = 100
    seed: int = 0
    initial_state: float = 10.0
    burn_in: int = 100
    solve_tol: float = 1e-9
    solve_max_iter: int = 2000

    def __post_init__(self):
        if self.horizon < 1:
            raise ContractViolation("horizon must be at least 1")
        if self.truth_knots < 2:
            raise ContractViolation("need at least two truth knots")
        if self.burn_in < 0:
            raise ContractViolation("burn-in cannot be negative")
        if not self.model.state_lo <= self.initial_state <= self.model.state_hi:
            raise ContractViolation("initial state outside the state space")

    def to_json_dict(self) -> dict:
        return {
            "horizon": self.horizon,
            "truth_knots": self.truth_knots,
            "truth_draws": self.truth_draws,
            "seed": self.seed,
            "initial_state": self.initial_state,
            "burn_in": self.burn_in,
            "solve_tol": self.solve_tol,
            "solve_max_iter": self.solve_max_iter,
        }


def truth_table(cfg: SimConfig, callback: Optional[Callable[[float], None]] = None) -> ValueTable:
    """The dense-grid value function used as the data-generating truth."""
    knots = uniform_knots(cfg.model, cfg.truth_knots)
    draws = DrawSet.generate(cfg.seed, knots, cfg.model.n_choices, cfg.truth_draws)
    return solve_value_function(
        cfg.model,
        cfg.model.theta,
        knots,
        tol=cfg.solve_tol,
        max_iter=cfg.solve_max_iter,
        draws=draws,
        callback=callback,
    )


def simulate_panel(
    cfg: SimConfig,
    callback: Optional[Callable[[float], None]] = None,
    vtab: Optional[ValueTable] = None,
) -> Panel:
    """Simulate a panel of cfg.horizon periods (after burn-in) from the model.

    Shocks are T1EV via eps = -ln(-ln u); ties in the argmax go to the lowest
    choice index (a probability-zero event under continuous shocks).  A
    pre-solved truth table can be supplied to amortise the solve across calls.
    """
    model = cfg.model
    if vtab is None:
        vtab = truth_table(cfg, callback=callback)
    n_steps = cfg.burn_in + cfg.horizon
    n_choices = model.n_choices
    shock_u = rng.path_stream(cfg.seed, rng.STREAM_SHOCKS).random((n_steps, n_choices))
    trans_u = rng.path_stream(cfg.seed, rng.STREAM_TRANSITIONS).random(n_steps)
    eps = -np.log(-np.log(shock_u))

    knots = vtab.knots
    values = vtab.values
    theta = model.theta
    beta = model.beta
    states = np.empty(cfg.horizon)
    choices = np.empty(cfg.horizon, dtype=int)
    s = float(cfg.initial_state)
    for t in range(n_steps):
        w_best, d_best = -np.inf, 0
        for d in range(n_choices):
            w = model.utility(s, d, theta) + eps[t, d] + beta * np.interp(s, knots, values[d])
            if w > w_best:
                w_best, d_best = w, d
        if t >= cfg.burn_in:
            states[t - cfg.burn_in] = s
            choices[t - cfg.burn_in] = d_best
        s = float(model.transition_sample(s, d_best, trans_u[t]))
    return Panel(states, choices)
