"""Bellman operator for T1EV shocks and value-function iteration on a knot grid.

The grid operator replaces the outer transition expectation by an empirical
mean over fixed uniform draws and evaluates the iterate between knots by
linear interpolation with clamping.  Both steps are sup-norm nonexpansive, so
the composite operator inherits the discount factor as its contraction rate.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np

from . import rng
from .model import ContractViolation

__all__ = [
    "EULER_GAMMA",
    "ValueTable",
    "DrawSet",
    "NonConvergence",
    "emax",
    "bellman_at",
    "bellman_apply",
    "solve_value_function",
]

EULER_GAMMA = 0.5772156649015329


class NonConvergence(RuntimeError):
    """Bellman iteration hit max_iter before the sup-norm change fell below tol."""

    def __init__(self, max_iter: int, last_delta: float):
        super().__init__(f"no convergence after {max_iter} iterations (last delta {last_delta:.3e})")
        self.max_iter = max_iter
        self.last_delta = last_delta


@dataclass
class ValueTable:
    """Per-choice values on a sorted knot grid, linearly interpolated between knots.

    Evaluation outside [knots[0], knots[-1]] clamps to the nearest knot value.
    """

    knots: np.ndarray
    values: np.ndarray  # shape (n_choices, len(knots))

    def __post_init__(self):
        self.knots = np.asarray(self.knots, dtype=float)
        self.values = np.atleast_2d(np.asarray(self.values, dtype=float))
        if self.knots.ndim != 1 or len(self.knots) < 1:
            raise ContractViolation("knots must be a 1-d grid")
        if len(self.knots) > 1 and np.any(np.diff(self.knots) <= 0):
            raise ContractViolation("knots must be strictly increasing")
        if self.values.shape[1] != len(self.knots):
            raise ContractViolation("values shape does not match knots")
        if not np.all(np.isfinite(self.values)):
            raise ContractViolation("values must be finite at every knot")

    @property
    def n_choices(self) -> int:
        return self.values.shape[0]

    @classmethod
    def zeros(cls, knots, n_choices: int = 2) -> "ValueTable":
        knots = np.asarray(knots, dtype=float)
        return cls(knots, np.zeros((n_choices, len(knots))))

    def evaluate(self, states) -> np.ndarray:
        """Values at arbitrary states, shape (n_choices, ...)."""
        s = np.asarray(states, dtype=float)
        return np.stack([np.interp(s, self.knots, row) for row in self.values])

    def evaluate_choice(self, states, d: int):
        return np.interp(np.asarray(states, dtype=float), self.knots, self.values[d])

    def copy(self) -> "ValueTable":
        return ValueTable(self.knots.copy(), self.values.copy())

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as f:
            w = csv.writer(f)
            w.writerow(["state", "choice", "value"])
            for k, s in enumerate(self.knots):
                for d in range(self.n_choices):
                    w.writerow([repr(float(s)), d, repr(float(self.values[d, k]))])

    @classmethod
    def from_csv(cls, path) -> "ValueTable":
        rows = []
        with open(path, newline="") as f:
            r = csv.reader(f)
            header = next(r)
            if header != ["state", "choice", "value"]:
                raise ContractViolation(f"unexpected value-table header {header}")
            for line in r:
                rows.append((float(line[0]), int(line[1]), float(line[2])))
        states = sorted({s for s, _, _ in rows})
        n_choices = max(d for _, d, _ in rows) + 1
        values = np.full((n_choices, len(states)), np.nan)
        pos = {s: i for i, s in enumerate(states)}
        for s, d, v in rows:
            values[d, pos[s]] = v
        if np.any(np.isnan(values)):
            raise ContractViolation("value-table CSV is missing (state, choice) entries")
        return cls(np.asarray(states), values)


@dataclass
class DrawSet:
    """Per-(knot, choice) uniforms used for the empirical transition expectation.

    Drawn once per solve and held fixed across Bellman iterations; the streams
    are keyed by state bits so a state keeps its draws on any grid.
    """

    uniforms: np.ndarray  # shape (n_knots, n_choices, n_draws)

    def __post_init__(self):
        self.uniforms = np.asarray(self.uniforms, dtype=float)
        if self.uniforms.ndim != 3 or self.uniforms.shape[2] < 1:
            raise ContractViolation("draw set needs shape (knots, choices, draws) with n >= 1")

    @property
    def n_draws(self) -> int:
        return self.uniforms.shape[2]

    @classmethod
    def generate(cls, seed: int, knots, n_choices: int, n_draws: int) -> "DrawSet":
        """Stratified uniforms per (knot, choice): (i + jitter_i) / n.

        Jitter comes from the counter-based stream keyed by (seed, state bits,
        choice), so draws are reproducible on any grid and in any order.  The
        stratification integrates the uniform exactly to first order, which
        keeps the sampled value function's noise well below the statistical
        noise of estimation-size panels.
        """
        knots = np.asarray(knots, dtype=float)
        strata = np.arange(n_draws, dtype=float)
        u = np.empty((len(knots), n_choices, n_draws))
        for k, s in enumerate(knots):
            for d in range(n_choices):
                u[k, d] = (strata + rng.state_uniforms(seed, float(s), d, n_draws)) / n_draws
        return cls(u)

    @classmethod
    def stratified(cls, knots, n_choices: int, n_draws: int) -> "DrawSet":
        """Midpoint-stratified uniforms: (i + 1/2)/n for i = 0..n-1.

        On a finite surrogate whose transition probabilities are multiples of
        1/n these reproduce each discrete distribution exactly, making the
        sampled Bellman operator exact.
        """
        base = (np.arange(n_draws) + 0.5) / n_draws
        u = np.broadcast_to(base, (len(np.asarray(knots)), n_choices, n_draws)).copy()
        return cls(u)


def emax(s_next, vtab: ValueTable, model, theta=None, beta: Optional[float] = None):
    """Expected maximum over choices under T1EV shocks at next-state s_next.

    ln sum_d exp(u(s_next, d) + beta * Vtilde(s_next, d)) plus the
    Euler-Mascheroni constant, computed max-shifted.
    """
    beta = model.beta if beta is None else beta
    s = np.asarray(s_next, dtype=float)
    scores = np.stack(
        [model.utility(s, d, theta) + beta * vtab.evaluate_choice(s, d) for d in range(model.n_choices)]
    )
    top = scores.max(axis=0)
    out = top + np.log(np.exp(scores - top).sum(axis=0)) + EULER_GAMMA
    return out if out.shape else float(out)


def bellman_at(vtab: ValueTable, model, theta, states, draws: Optional[DrawSet] = None) -> np.ndarray:
    """T[Vtilde] evaluated at arbitrary states, shape (n_choices, len(states)).

    With ``draws`` the outer expectation is the empirical mean over the given
    uniforms (the grid-operator protocol); with ``draws=None`` it is computed
    exactly from the model's transition law.
    """
    states = np.asarray(states, dtype=float)
    if draws is not None:
        u = draws.uniforms
        if u.shape[0] != len(states) or u.shape[1] != model.n_choices:
            raise ContractViolation("draw set does not cover every (state, choice)")
        out = np.empty((model.n_choices, len(states)))
        for d in range(model.n_choices):
            s_next = model.transition_sample(states[:, None], d, u[:, d, :])
            out[d] = emax(s_next, vtab, model, theta).mean(axis=1)
        return out

    def integrand(x):
        return np.asarray(emax(x, vtab, model, theta))

    breaks = np.union1d(vtab.knots, [model.state_lo, model.state_hi])
    op = model.expectation_operator(integrand, breaks)
    return np.stack([op(states, d) for d in range(model.n_choices)])


def bellman_apply(vtab: ValueTable, model, theta, draws: DrawSet) -> ValueTable:
    """One application of the grid operator: same knots, updated values."""
    return ValueTable(vtab.knots, bellman_at(vtab, model, theta, vtab.knots, draws))


class _FastOperator:
    """Grid operator with next states and interpolation weights precomputed.

    Draws are fixed across iterations, so the transformed next states, the
    bracketing knot indices and the interpolation weights never change; each
    iteration is then two gathers and a logsumexp per next state.  The binary
    choice set gets a buffered two-score path; larger choice sets fall back to
    a stacked logsumexp.
    """

    def __init__(self, model, theta, knots: np.ndarray, draws: DrawSet):
        self.model = model
        self.knots = knots
        n_choices = model.n_choices
        s_next = np.stack(
            [model.transition_sample(knots[:, None], d, draws.uniforms[:, d, :]) for d in range(n_choices)],
            axis=1,
        )  # (m, n_choices, n)
        self.shape = s_next.shape
        flat = s_next.ravel()
        idx = np.clip(np.searchsorted(knots, flat) - 1, 0, max(len(knots) - 2, 0))
        if len(knots) > 1:
            w = np.clip((flat - knots[idx]) / (knots[idx + 1] - knots[idx]), 0.0, 1.0)
        else:
            idx = np.zeros(flat.shape, dtype=np.intp)
            w = np.zeros(flat.shape)
        self.idx = idx
        self.hi = np.minimum(idx + 1, len(knots) - 1)
        self.w = w
        self.w1m = 1.0 - w
        self.u_next = np.stack(
            [np.asarray(model.utility(flat, d, theta), dtype=float) for d in range(n_choices)]
        )
        self._buf = np.empty((4, flat.size))

    def _score(self, values: np.ndarray, d: int, out: np.ndarray, tmp: np.ndarray) -> np.ndarray:
        row = values[d]
        np.multiply(row[self.idx], self.w1m, out=out)
        np.multiply(row[self.hi], self.w, out=tmp)
        out += tmp
        out *= self.model.beta
        out += self.u_next[d]
        return out

    def apply(self, values: np.ndarray) -> np.ndarray:
        b0, b1, b2, b3 = self._buf
        if self.model.n_choices == 2:
            s0 = self._score(values, 0, b0, b2)
            s1 = self._score(values, 1, b1, b2)
            np.subtract(s0, s1, out=b2)
            np.abs(b2, out=b2)
            np.negative(b2, out=b2)
            np.exp(b2, out=b2)
            np.log1p(b2, out=b2)
            np.maximum(s0, s1, out=b3)
            b3 += b2
            b3 += EULER_GAMMA
            e = b3
        else:
            scores = np.stack(
                [self._score(values, d, np.empty(self.w.size), b2) for d in range(self.model.n_choices)]
            )
            top = scores.max(axis=0)
            e = top + np.log(np.exp(scores - top).sum(axis=0)) + EULER_GAMMA
        return e.reshape(self.shape).mean(axis=2).T  # (n_choices, m)


def solve_value_function(
    model,
    theta,
    knots,
    n_draws: int = 100,
    tol: float = 1e-9,
    max_iter: int = 2000,
    seed: int = 0,
    draws: Optional[DrawSet] = None,
    callback: Optional[Callable[[float], None]] = None,
) -> ValueTable:
    """Iterate the grid operator from Vtilde0 = 0 until the sup-norm change < tol.

    Draws are generated once (or passed in) and reused across iterations and,
    via the caller, across candidate parameter values.  ``callback`` receives
    the sup-norm delta after each iteration.

    Raises NonConvergence if max_iter is reached first.
    """
    if tol <= 0:
        raise ContractViolation("tol must be positive")
    if max_iter < 1:
        raise ContractViolation("max_iter must be at least 1")
    knots = np.asarray(knots, dtype=float)
    if draws is None:
        draws = DrawSet.generate(seed, knots, model.n_choices, n_draws)
    op = _FastOperator(model, theta, knots, draws)
    values = np.zeros((model.n_choices, len(knots)))
    delta = np.inf
    for _ in range(max_iter):
        new = op.apply(values)
        delta = float(np.max(np.abs(new - values)))
        values = new
        if callback is not None:
            callback(delta)
        if delta < tol:
            return ValueTable(knots, values)
    raise NonConvergence(max_iter, delta)


def uniform_knots(model, n: int) -> np.ndarray:
    """n evenly spaced knots spanning the model's state space."""
    if n < 2:
        raise ContractViolation("need at least two knots")
    return np.linspace(model.state_lo, model.state_hi, n)
