"""Certified bounds on value-difference approximation error.

The amplification factor b(s, d, d') converts the supremum of the Bellman
residual spread into a bound on errors in value differences.  That supremum is
either maximised directly over a dense state grid (the replication protocol)
or bracketed from above and below by an anchor-set envelope that only applies
the Bellman operator at finitely many points, refined until the bracket is
tighter than a tolerance.

All bound computations here evaluate T[Vtilde] through the model's exact
transition expectation, so the envelope inequalities hold at float precision;
the sampled-operator variant is available through the ``draws`` argument of
``theorem1_sup`` for protocol parity with the grid solver.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np

from .dp import DrawSet, ValueTable, bellman_at, emax, uniform_knots
from .model import ContractViolation

__all__ = [
    "DegenerateBound",
    "EmptyAnchorSet",
    "RefinementStalled",
    "BoundCertificate",
    "b_factor",
    "b_bar",
    "theorem1_sup",
    "theorem2_envelope",
    "refine_bound",
    "q_bound",
    "dense_grid_certificate",
    "model_q_factor",
]


class DegenerateBound(ValueError):
    """beta * delta_sup >= 1: the amplification factor is unbounded."""


class EmptyAnchorSet(ValueError):
    """The anchor set must contain at least one (state, choice) pair."""


class RefinementStalled(RuntimeError):
    """Anchor refinement failed to close the bracket within max_rounds."""

    def __init__(self, max_rounds: int, gap: float, tau: float):
        super().__init__(f"bracket gap {gap:.3e} > tau {tau:.3e} after {max_rounds} rounds")
        self.max_rounds = max_rounds
        self.gap = gap
        self.tau = tau


@dataclass(frozen=True)
class BoundCertificate:
    """Everything needed to widen the likelihood at one (theta, Vtilde).

    delta_sup : sup of the TV distance over all state/choice pairs
    b_bar     : per-choice sup spread of u + beta * Vtilde
    B_upper   : certified upper bound on the residual-spread supremum
    B_lower   : certified lower bound on the same supremum
    method    : "dense_grid" or "refine", recording how B_upper was produced
    """

    delta_sup: float
    b_bar: float
    B_upper: float
    B_lower: float
    method: str

    def __post_init__(self):
        if not 0.0 <= self.delta_sup <= 1.0:
            raise ContractViolation(f"delta_sup {self.delta_sup!r} outside [0, 1]")
        if self.b_bar < 0 or self.B_lower < 0:
            raise ContractViolation("b_bar and B_lower must be nonnegative")
        if self.B_lower > self.B_upper:
            raise ContractViolation("B_lower exceeds B_upper")

    def scaled(self, factor: float) -> "BoundCertificate":
        """Certificate with B_upper inflated; used for widening sensitivity checks."""
        return BoundCertificate(self.delta_sup, self.b_bar, self.B_upper * factor,
                                min(self.B_lower, self.B_upper * factor), self.method)

    def to_json_dict(self) -> dict:
        return {
            "delta_sup": self.delta_sup,
            "b_bar": self.b_bar,
            "B_upper": self.B_upper,
            "B_lower": self.B_lower,
            "method": self.method,
        }

    def to_json(self, path) -> None:
        with open(path, "w") as f:
            json.dump(self.to_json_dict(), f, indent=2, sort_keys=True)
            f.write("\n")

    @classmethod
    def from_json_dict(cls, obj: dict) -> "BoundCertificate":
        return cls(
            delta_sup=float(obj["delta_sup"]),
            b_bar=float(obj["b_bar"]),
            B_upper=float(obj["B_upper"]),
            B_lower=float(obj["B_lower"]),
            method=str(obj["method"]),
        )


def b_factor(s, d: int, d2: int, model, delta_sup: Optional[float] = None) -> float:
    """(1 - beta*delta_sup + beta*delta(F_{s,d}, F_{s,d2})) / (1 - beta*delta_sup)."""
    if delta_sup is None:
        delta_sup = model.delta_sup()
    denom = 1.0 - model.beta * delta_sup
    if denom <= 0.0:
        raise DegenerateBound(f"beta * delta_sup = {model.beta * delta_sup!r} >= 1")
    delta = model.transition_tv(s, d, s, d2)
    return (denom + model.beta * delta) / denom


def _b_factors(states, d: int, d2: int, model, delta_sup: float) -> np.ndarray:
    denom = 1.0 - model.beta * delta_sup
    if denom <= 0.0:
        raise DegenerateBound(f"beta * delta_sup = {model.beta * delta_sup!r} >= 1")
    return (denom + model.beta * model.tv_rival(states, d, d2)) / denom


def b_bar(vtab: ValueTable, model, theta) -> float:
    """Largest per-choice spread of u(., d) + beta * Vtilde(., d) over the state space.

    Exact for utilities affine in s and piecewise-linear Vtilde: the extrema
    sit on knots or state-space endpoints, which are enumerated.
    """
    states = model.b_bar_states(vtab.knots)
    best = 0.0
    for d in range(model.n_choices):
        g = np.asarray(model.utility(states, d, theta), dtype=float) + model.beta * vtab.evaluate_choice(states, d)
        best = max(best, float(g.max() - g.min()))
    return best


def theorem1_sup(vtab: ValueTable, model, theta, eval_grid, draws: Optional[DrawSet] = None) -> float:
    """max over grid pairs of |[T(s',d') - T(s,d)] - [Vtilde(s',d') - Vtilde(s,d)]|.

    Equals the range of g(s,d) = T[Vtilde](s,d) - Vtilde(s,d), so it costs one
    sweep of the grid rather than a pairwise scan.
    """
    eval_grid = np.asarray(eval_grid, dtype=float)
    g = bellman_at(vtab, model, theta, eval_grid, draws) - vtab.evaluate(eval_grid)
    return float(g.max() - g.min())


def _normalise_anchors(anchor_set):
    if isinstance(anchor_set, tuple) and len(anchor_set) == 2:
        states, choices = anchor_set
    else:
        pairs = list(anchor_set)
        if not pairs:
            raise EmptyAnchorSet("anchor set is empty")
        states = [p[0] for p in pairs]
        choices = [p[1] for p in pairs]
    states = np.asarray(states, dtype=float)
    choices = np.asarray(choices, dtype=int)
    if states.size == 0:
        raise EmptyAnchorSet("anchor set is empty")
    return states, choices


def theorem2_envelope(vtab: ValueTable, model, theta, anchor_set, candidate_grid):
    """Upper/lower bracket of the residual-spread supremum from a finite anchor set.

    The Bellman operator is applied only at the anchors.  The upper bound
    combines each anchor's value with the TV distance to the candidate point,
    scaled by b_bar; the lower bound is the residual range over the anchors
    themselves.  Returns (B_upper, B_lower).
    """
    a_states, a_choices = _normalise_anchors(anchor_set)
    grid = np.asarray(candidate_grid, dtype=float)
    bb = b_bar(vtab, model, theta)
    t_anchor = bellman_at(vtab, model, theta, a_states)[a_choices, np.arange(len(a_states))]
    v_anchor = np.stack([vtab.evaluate_choice(a_states, d) for d in range(model.n_choices)])[
        a_choices, np.arange(len(a_states))
    ]

    cand_states = np.tile(grid, model.n_choices)
    cand_choices = np.repeat(np.arange(model.n_choices), len(grid))
    v_cand = vtab.evaluate(grid).ravel()  # matches (choice-major) candidate layout
    delta = model.tv_matrix(cand_states, cand_choices, a_states, a_choices)
    m_up = (t_anchor[None, :] + delta * bb).min(axis=1)
    m_dn = (t_anchor[None, :] - delta * bb).max(axis=1)
    B_upper = float((m_up - v_cand).max() + (v_cand - m_dn).max())
    h = t_anchor - v_anchor
    B_lower = float(h.max() - h.min())
    return B_upper, B_lower


def _anchor_indices(n_grid: int, stride: int) -> np.ndarray:
    idx = np.arange(0, n_grid, stride)
    if idx[-1] != n_grid - 1:
        idx = np.append(idx, n_grid - 1)
    return idx


def refine_bound(
    vtab: ValueTable,
    model,
    theta,
    tau: float,
    initial_anchor_count: int = 11,
    max_rounds: int = 12,
    candidate_grid=None,
    on_round: Optional[Callable[[int, float, float], None]] = None,
) -> BoundCertificate:
    """Anchor-refinement loop: double anchor density until B_upper - B_lower <= tau.

    Anchors are nested stride subsets of the candidate grid (every state at
    both choices), so B_upper is nonincreasing and B_lower nondecreasing
    across rounds by construction; at full density the bracket closes
    entirely, which bounds the number of rounds by log2 of the initial
    stride.  Bellman values and TV columns are cached per anchor, so each
    round only pays for the newly added anchors.
    """
    if tau <= 0:
        raise ContractViolation("tau must be positive")
    if initial_anchor_count < 2:
        raise ContractViolation("need at least two initial anchors")
    if candidate_grid is None:
        candidate_grid = uniform_knots(model, 1001)
    grid = np.asarray(candidate_grid, dtype=float)
    n = len(grid)
    bb = b_bar(vtab, model, theta)

    def integrand(x):
        return np.asarray(emax(x, vtab, model, theta))

    breaks = np.union1d(vtab.knots, [model.state_lo, model.state_hi])
    op = model.expectation_operator(integrand, breaks)

    cand_states = np.tile(grid, model.n_choices)
    cand_choices = np.repeat(np.arange(model.n_choices), n)
    v_cand = vtab.evaluate(grid).ravel()

    stride = max(1, (n - 1) // (initial_anchor_count - 1))
    stride = 1 << max(0, stride.bit_length() - 1)  # power of two keeps anchor sets nested

    m_up = np.full(cand_states.shape, np.inf)
    m_dn = np.full(cand_states.shape, -np.inf)
    h_max, h_min = -np.inf, np.inf
    seen = np.zeros(n, dtype=bool)
    B_upper = B_lower = None

    for round_idx in range(max_rounds):
        new = _anchor_indices(n, stride)
        new = new[~seen[new]]
        seen[new] = True
        if new.size:
            a_states = grid[new]
            t_new = np.concatenate([op(a_states, d) for d in range(model.n_choices)])
            a_all_states = np.tile(a_states, model.n_choices)
            a_all_choices = np.repeat(np.arange(model.n_choices), len(a_states))
            delta = model.tv_matrix(cand_states, cand_choices, a_all_states, a_all_choices)
            m_up = np.minimum(m_up, (t_new[None, :] + delta * bb).min(axis=1))
            m_dn = np.maximum(m_dn, (t_new[None, :] - delta * bb).max(axis=1))
            v_new = np.concatenate([vtab.evaluate_choice(a_states, d) for d in range(model.n_choices)])
            h = t_new - v_new
            h_max = max(h_max, float(h.max()))
            h_min = min(h_min, float(h.min()))
        B_upper = float((m_up - v_cand).max() + (v_cand - m_dn).max())
        B_lower = float(h_max - h_min)
        # exact-arithmetic theory gives B_lower <= B_upper; guard the float margin
        B_lower = min(B_lower, B_upper)
        if on_round is not None:
            on_round(round_idx, B_upper, B_lower)
        if B_upper - B_lower <= tau:
            return BoundCertificate(
                delta_sup=model.delta_sup(),
                b_bar=bb,
                B_upper=B_upper,
                B_lower=max(B_lower, 0.0),
                method="refine",
            )
        stride = max(1, stride // 2)
    raise RefinementStalled(max_rounds, B_upper - B_lower, tau)


def q_bound(s, d: int, d2: int, cert: BoundCertificate, model, theta=None) -> float:
    """Per-triple likelihood widening: b(s, d, d') times the certified B_upper."""
    return b_factor(s, d, d2, model, cert.delta_sup) * cert.B_upper


def q_bounds(states, d: int, d2: int, cert: BoundCertificate, model) -> np.ndarray:
    """Vectorised q_bound over an array of states for one (d, d') pair."""
    return _b_factors(np.asarray(states, dtype=float), d, d2, model, cert.delta_sup) * cert.B_upper


def model_q_factor(model) -> float:
    """Single model-wide amplification factor used by the replication protocol.

    For the bus-engine model this is
    (1 - beta + beta * min(|gamma1 - gamma2| / (2 gamma3), 1)) / (1 - beta);
    for other models the rival TV distance is maximised over a state scan.
    """
    if hasattr(model, "gamma"):
        delta = min(abs(model.gamma[0] - model.gamma[1]) / (2.0 * model.gamma[2]), 1.0)
    else:
        grid = np.linspace(model.state_lo, model.state_hi, 101)
        delta = 0.0
        for d in range(model.n_choices):
            for d2 in range(d + 1, model.n_choices):
                delta = max(delta, float(model.tv_rival(grid, d, d2).max()))
    return (1.0 - model.beta + model.beta * delta) / (1.0 - model.beta)


def dense_grid_certificate(
    vtab: ValueTable,
    model,
    theta,
    eval_grid=None,
    draws: Optional[DrawSet] = None,
    continuum_margin: bool = False,
) -> BoundCertificate:
    """Certificate from direct maximisation of the residual spread on a dense grid.

    This is the replication protocol: B_upper is the grid supremum itself,
    certified relative to the evaluation grid.  ``continuum_margin`` adds
    2 * (delta_to_nearest_grid_point * b_bar + max_slope * half_spacing),
    which restores validity over the full continuum.
    """
    if eval_grid is None:
        eval_grid = uniform_knots(model, 1001)
    eval_grid = np.asarray(eval_grid, dtype=float)
    bb = b_bar(vtab, model, theta)
    sup = theorem1_sup(vtab, model, theta, eval_grid, draws)
    B_upper = sup
    if continuum_margin:
        mids = 0.5 * (eval_grid[1:] + eval_grid[:-1])
        nearest = eval_grid[1:]
        delta_near = 0.0
        for d in range(model.n_choices):
            d_arr = np.full(len(mids), d)
            delta_near = max(delta_near, float(model.tv_elementwise(mids, d_arr, nearest, d_arr).max()))
        knots = vtab.knots
        slopes = 0.0
        if len(knots) > 1:
            dv = np.abs(np.diff(vtab.values, axis=1)) / np.diff(knots)[None, :]
            slopes = float(dv.max()) * model.beta
        for d in range(model.n_choices):
            u0 = np.asarray(model.utility(eval_grid[:-1], d, theta), dtype=float)
            u1 = np.asarray(model.utility(eval_grid[1:], d, theta), dtype=float)
            du = np.abs(u1 - u0) / np.diff(eval_grid)
            slopes = max(slopes, float(du.max()) if du.size else 0.0)
        half = 0.5 * float(np.diff(eval_grid).max())
        B_upper = sup + 2.0 * (delta_near * bb + slopes * half)
    return BoundCertificate(
        delta_sup=model.delta_sup(),
        b_bar=bb,
        B_upper=B_upper,
        B_lower=min(sup, B_upper),
        method="dense_grid",
    )
