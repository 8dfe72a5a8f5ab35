"""Model primitives: the modified bus-engine model and a finite test surrogate.

The reference model has a binary choice (run vs. repair), a continuous mileage
state on [state_lo, state_hi], linear/constant flow utilities, and a
clipped-uniform transition law.  Clipping a uniform to the state bounds puts
point masses at the boundaries, so the kernel is represented as two atoms plus
a uniform interior slab and total variation distances are computed exactly
over that mixture.

Both model classes expose the same surface (utility, transition sampling,
exact transition expectations, total variation distances), so the dynamic
programming and bound machinery is generic over them.
"""

from __future__ import annotations

import functools
import json
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

__all__ = [
    "ContractViolation",
    "ClippedUniform",
    "ModelSpec",
    "FiniteSurrogate",
    "CumulativeIntegral",
]


class ContractViolation(ValueError):
    """An argument violated an operation's stated preconditions."""


# ---------------------------------------------------------------------------
# transition kernel
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class ClippedUniform:
    """Law of clip(loc + U[-half, half], lo, hi).

    Two boundary atoms plus a uniform density over the interior overlap.
    ``interior_lo == interior_hi`` (zero interior mass) when the unclipped
    support lies entirely outside the state space.
    """

    atom_lo: float
    atom_hi: float
    interior_lo: float
    interior_hi: float
    density: float
    lo: float
    hi: float

    def __post_init__(self):
        total = self.atom_lo + self.atom_hi + self.interior_mass
        if abs(total - 1.0) > 1e-12:
            raise ContractViolation(f"kernel mass {total!r} != 1")
        if self.atom_lo < 0 or self.atom_hi < 0:
            raise ContractViolation("negative atom mass")

    @property
    def interior_mass(self) -> float:
        return self.density * (self.interior_hi - self.interior_lo)

    def pdf(self, x):
        """Interior density at x (the atoms are not part of the density)."""
        x = np.asarray(x, dtype=float)
        inside = (x >= self.interior_lo) & (x <= self.interior_hi)
        return np.where(inside, self.density, 0.0)

    def sample(self, u01):
        """Inverse-CDF sample; equals clip(loc + (2 u - 1) half, lo, hi)."""
        u01 = np.asarray(u01, dtype=float)
        a = self.interior_lo - self.atom_lo / self.density if self.density > 0 else self.lo
        width = 1.0 / self.density if self.density > 0 else 0.0
        return np.clip(a + u01 * width, self.lo, self.hi)


# ---------------------------------------------------------------------------
# exact expectations of piecewise-smooth integrands
# ---------------------------------------------------------------------------


class CumulativeIntegral:
    """Antiderivative of a piecewise-smooth function on [lo, hi].

    Gauss-Legendre on sub-segments split at the integrand's breakpoints (and
    capped in width), which integrates each analytic piece to near machine
    precision.  ``between`` then evaluates integrals over arbitrary
    sub-intervals from the cached cumulative table plus two partial-segment
    quadratures, so a family of integrals of one integrand costs a single
    vectorised sweep.
    """

    def __init__(self, fn, breakpoints, lo: float, hi: float, n_nodes: int = 10, max_width: float = 0.5):
        self._fn = fn
        pts = np.unique(np.clip(np.asarray(breakpoints, dtype=float), lo, hi))
        pts = np.union1d(pts, [lo, hi])
        # cap segment widths so Gauss-Legendre resolves the logsumexp curvature
        edges = [pts[0]]
        for a, b in zip(pts[:-1], pts[1:]):
            k = max(1, int(np.ceil((b - a) / max_width)))
            edges.extend(np.linspace(a, b, k + 1)[1:])
        self._edges = np.asarray(edges)
        x, w = np.polynomial.legendre.leggauss(n_nodes)
        self._gl_x, self._gl_w = x, w
        mid = 0.5 * (self._edges[1:] + self._edges[:-1])
        half = 0.5 * (self._edges[1:] - self._edges[:-1])
        nodes = mid[:, None] + half[:, None] * x[None, :]
        vals = fn(nodes.ravel()).reshape(nodes.shape)
        seg = (vals * w[None, :]).sum(axis=1) * half
        self._cum = np.concatenate([[0.0], np.cumsum(seg)])

    def antiderivative(self, x):
        """F(x) = integral from the left edge to x, vectorised."""
        x = np.asarray(x, dtype=float)
        flat = np.clip(x.ravel(), self._edges[0], self._edges[-1])
        i = np.clip(np.searchsorted(self._edges, flat, side="right") - 1, 0, len(self._edges) - 2)
        left = self._edges[i]
        half = 0.5 * (flat - left)
        nodes = (left + half)[:, None] + half[:, None] * self._gl_x[None, :]
        vals = self._fn(nodes.ravel()).reshape(nodes.shape)
        partial = (vals * self._gl_w[None, :]).sum(axis=1) * half
        return (self._cum[i] + partial).reshape(x.shape)

    def between(self, a, b):
        """Integral over [a, b], vectorised over paired endpoints."""
        a = np.asarray(a, dtype=float)
        b = np.asarray(b, dtype=float)
        both = self.antiderivative(np.stack([a, b]))
        return both[1] - both[0]


# ---------------------------------------------------------------------------
# the bus-engine model
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class ModelSpec:
    """Modified bus-engine model: parameters, utilities and transition law.

    Parameters
    ----------
    beta : discount factor in [0, 1)
    theta : (theta1, theta2); u(s, 0) = theta1 * s and u(s, 1) = theta2
    gamma : (gamma1, gamma2, gamma3); next state is
        clip(s + gamma_{d+1} + U[-gamma3, gamma3], state_lo, state_hi)
    state_lo, state_hi : state-space bounds
    n_choices : number of discrete choices (2 for the reference model)
    """

    beta: float = 0.8
    theta: tuple = (-0.6, -4.0)
    gamma: tuple = (1.0, -1.0, 5.0)
    state_lo: float = 0.0
    state_hi: float = 20.0
    n_choices: int = 2

    def __post_init__(self):
        if not 0.0 <= self.beta < 1.0:
            raise ContractViolation(f"beta must satisfy 0 <= beta < 1, got {self.beta}")
        if not self.state_lo < self.state_hi:
            raise ContractViolation("state_lo must be below state_hi")
        if not self.gamma[2] > 0:
            raise ContractViolation("gamma3 (uniform half-width) must be positive")
        if self.n_choices < 2:
            raise ContractViolation("need at least two choices")
        object.__setattr__(self, "theta", tuple(float(t) for t in self.theta))
        object.__setattr__(self, "gamma", tuple(float(g) for g in self.gamma))

    # -- utilities ----------------------------------------------------------

    def _check_choice(self, d: int) -> None:
        if not 0 <= int(d) < self.n_choices:
            raise ContractViolation(f"choice index {d} outside 0..{self.n_choices - 1}")

    def utility(self, s, d: int, theta=None):
        """Flow utility u(s, d; theta): theta1 * s for d=0, theta2 for d=1."""
        self._check_choice(d)
        theta = self.theta if theta is None else theta
        s = np.asarray(s, dtype=float)
        out = theta[0] * s if d == 0 else np.full(s.shape, float(theta[1]))
        return out if out.shape else float(out)

    # -- transition law -----------------------------------------------------

    def _loc(self, s, d: int):
        return np.asarray(s, dtype=float) + self.gamma[d]

    def transition(self, s: float, d: int) -> ClippedUniform:
        """The clipped-uniform kernel F_{s,d} as atoms plus interior slab."""
        self._check_choice(d)
        h = self.gamma[2]
        loc = float(s) + self.gamma[d]
        a, b = loc - h, loc + h
        density = 1.0 / (2.0 * h)
        atom_lo = float(np.clip((self.state_lo - a) * density, 0.0, 1.0))
        atom_hi = float(np.clip((b - self.state_hi) * density, 0.0, 1.0))
        c = min(max(a, self.state_lo), self.state_hi)
        e = max(min(b, self.state_hi), self.state_lo)
        if e < c:
            c = e
        return ClippedUniform(atom_lo, atom_hi, c, e, density, self.state_lo, self.state_hi)

    def transition_sample(self, s, d: int, u01):
        """Next state from uniform variate u01, inverse-CDF style."""
        self._check_choice(d)
        z = self._loc(s, d) + (2.0 * np.asarray(u01, dtype=float) - 1.0) * self.gamma[2]
        out = np.clip(z, self.state_lo, self.state_hi)
        return out if out.shape else float(out)

    def _kernel_parts(self, s, d):
        """Vectorised (atom_lo, atom_hi, interior_lo, interior_hi) for F_{s,d}."""
        h = self.gamma[2]
        loc = self._loc(s, d)
        a, b = loc - h, loc + h
        density = 1.0 / (2.0 * h)
        atom_lo = np.clip((self.state_lo - a) * density, 0.0, 1.0)
        atom_hi = np.clip((b - self.state_hi) * density, 0.0, 1.0)
        c = np.clip(a, self.state_lo, self.state_hi)
        e = np.clip(b, self.state_lo, self.state_hi)
        return atom_lo, atom_hi, c, e

    def _tv_parts(self, s, d_arr):
        """Vectorised kernel parts (atom_lo, atom_hi, c, e) with per-entry choices."""
        h = self.gamma[2]
        density = 1.0 / (2.0 * h)
        loc = np.asarray(s, dtype=float) + np.asarray(self.gamma)[np.asarray(d_arr, dtype=int)]
        a, b = loc - h, loc + h
        return (
            np.clip((self.state_lo - a) * density, 0.0, 1.0),
            np.clip((b - self.state_hi) * density, 0.0, 1.0),
            np.clip(a, self.state_lo, self.state_hi),
            np.clip(b, self.state_lo, self.state_hi),
        )

    @staticmethod
    def _tv_combine(pa, pb, density):
        alo_a, ahi_a, c_a, e_a = pa
        alo_b, ahi_b, c_b, e_b = pb
        overlap = np.maximum(0.0, np.minimum(e_a, e_b) - np.maximum(c_a, c_b))
        sym = (e_a - c_a) + (e_b - c_b) - 2.0 * overlap
        atoms = np.abs(alo_a - alo_b) + np.abs(ahi_a - ahi_b)
        return 0.5 * (atoms + density * sym)

    def transition_tv(self, s, d: int, s2, d2: int) -> float:
        """Exact total variation distance between F_{s,d} and F_{s2,d2}."""
        self._check_choice(d)
        self._check_choice(d2)
        return float(self.tv_elementwise(np.array([s]), np.array([d]), np.array([s2]), np.array([d2]))[0])

    def tv_elementwise(self, s_a, d_a, s_b, d_b):
        """Paired TV distances for equally shaped argument arrays.

        Both interiors share the density 1/(2 gamma3), so the density integral
        reduces to the symmetric-difference length of the interior intervals.
        """
        density = 1.0 / (2.0 * self.gamma[2])
        return self._tv_combine(self._tv_parts(s_a, d_a), self._tv_parts(s_b, d_b), density)

    def tv_matrix(self, s_a, d_a, s_b, d_b):
        """Pairwise TV distances, shape (len(a), len(b))."""
        density = 1.0 / (2.0 * self.gamma[2])
        pa = tuple(x[:, None] for x in self._tv_parts(s_a, d_a))
        pb = tuple(x[None, :] for x in self._tv_parts(s_b, d_b))
        return self._tv_combine(pa, pb, density)

    def tv_rival(self, states, d: int, d2: int):
        """delta(F_{s,d}, F_{s,d2}) for an array of states (same s both sides)."""
        states = np.asarray(states, dtype=float)
        shape = np.broadcast_shapes(states.shape, ())
        d_a = np.full(shape, d, dtype=int)
        d_b = np.full(shape, d2, dtype=int)
        return self.tv_elementwise(states, d_a, states, d_b)

    @functools.lru_cache(maxsize=None)
    def delta_sup(self) -> float:
        """sup over (s,d),(s',d') of the TV distance.

        The kernel is a location family, so the supremum sits at maximally
        separated locations; a coarse state scan over all choice pairs covers
        boundary-atom effects.  Equal to 1 for the Table-style parameters,
        where opposite corners have disjoint supports.
        """
        grid = np.linspace(self.state_lo, self.state_hi, 41)
        choices = np.repeat(np.arange(self.n_choices), len(grid))
        states = np.tile(grid, self.n_choices)
        return float(self.tv_matrix(states, choices, states, choices).max())

    # -- exact expectations and bound support -------------------------------

    def expectation_operator(self, fn, breakpoints) -> Callable:
        """Exact E[fn(S')|s,d] as a reusable callable (states, d) -> array.

        fn must be vectorised and piecewise smooth with kinks only at
        ``breakpoints``; the expectation splits into the two boundary atoms
        plus an exact interior integral.
        """
        ci = CumulativeIntegral(fn, breakpoints, self.state_lo, self.state_hi)
        f_lo = float(fn(np.array([self.state_lo]))[0])
        f_hi = float(fn(np.array([self.state_hi]))[0])

        def op(states, d: int):
            atom_lo, atom_hi, c, e = self._kernel_parts(np.asarray(states, dtype=float), d)
            density = 1.0 / (2.0 * self.gamma[2])
            return atom_lo * f_lo + atom_hi * f_hi + density * ci.between(c, e)

        return op

    def b_bar_states(self, knots) -> np.ndarray:
        """States where extrema of u(., d) + beta * Vtilde(., d) can occur.

        u is affine in s and Vtilde piecewise linear with clamping, so the
        per-choice sup/inf sit at knots or state-space endpoints.
        """
        return np.union1d(np.asarray(knots, dtype=float), [self.state_lo, self.state_hi])

    # -- serialisation ------------------------------------------------------

    def to_json_dict(self) -> dict:
        return {
            "beta": self.beta,
            "theta": list(self.theta),
            "gamma": list(self.gamma),
            "state_lo": self.state_lo,
            "state_hi": self.state_hi,
        }

    @classmethod
    def from_json_dict(cls, obj: dict) -> "ModelSpec":
        known = {"beta", "theta", "gamma", "state_lo", "state_hi"}
        unknown = set(obj) - known
        if unknown:
            raise ContractViolation(f"unknown model keys: {sorted(unknown)}")
        missing = known - set(obj)
        if missing:
            raise ContractViolation(f"missing model keys: {sorted(missing)}")
        return cls(
            beta=float(obj["beta"]),
            theta=tuple(obj["theta"]),
            gamma=tuple(obj["gamma"]),
            state_lo=float(obj["state_lo"]),
            state_hi=float(obj["state_hi"]),
        )


# ---------------------------------------------------------------------------
# finite surrogate with exact discrete transitions
# ---------------------------------------------------------------------------


class FiniteSurrogate:
    """Finite-state model whose transitions are supported exactly on its knots.

    With stratified uniforms (see ``DrawSet.stratified``) and transition
    probabilities in multiples of 1/n_draws, the Monte Carlo Bellman update is
    exact, so the fixed point of the sampled operator is the true value
    function of this model.  That makes the surrogate the ground-truth oracle
    for the bound soundness tests.
    """

    def __init__(self, knots, utilities, transition, beta: float):
        self.knots = np.asarray(knots, dtype=float)
        self.utilities = np.asarray(utilities, dtype=float)  # (n_choices, m)
        self.transition_probs = np.asarray(transition, dtype=float)  # (n_choices, m, m)
        self.beta = float(beta)
        if not 0.0 <= self.beta < 1.0:
            raise ContractViolation(f"beta must satisfy 0 <= beta < 1, got {beta}")
        if np.any(np.diff(self.knots) <= 0):
            raise ContractViolation("knots must be strictly increasing")
        m = len(self.knots)
        if self.utilities.shape[1] != m or self.transition_probs.shape[1:] != (m, m):
            raise ContractViolation("utility/transition shapes do not match knots")
        if np.any(self.transition_probs < 0) or np.any(np.abs(self.transition_probs.sum(axis=2) - 1.0) > 1e-12):
            raise ContractViolation("transition rows must be distributions")
        self.n_choices = self.utilities.shape[0]
        self.state_lo = float(self.knots[0])
        self.state_hi = float(self.knots[-1])
        self._cum = np.cumsum(self.transition_probs, axis=2)

    def _index(self, s) -> np.ndarray:
        s = np.atleast_1d(np.asarray(s, dtype=float))
        right = np.clip(np.searchsorted(self.knots, s), 0, len(self.knots) - 1)
        left = np.clip(right - 1, 0, len(self.knots) - 1)
        pick = np.where(np.abs(self.knots[left] - s) < np.abs(self.knots[right] - s), left, right)
        if np.any(np.abs(self.knots[pick] - s) > 1e-9):
            raise ContractViolation("surrogate states must lie on its knots")
        return pick

    def utility(self, s, d: int, theta=None):
        # utilities are tables; theta is accepted for interface compatibility
        if not 0 <= int(d) < self.n_choices:
            raise ContractViolation(f"choice index {d} outside 0..{self.n_choices - 1}")
        s_arr = np.asarray(s, dtype=float)
        out = self.utilities[d][self._index(s_arr)].reshape(s_arr.shape)
        return out if out.shape else float(out)

    def transition_sample(self, s, d: int, u01):
        s_arr = np.asarray(s, dtype=float)
        u = np.asarray(u01, dtype=float)
        idx = self._index(s_arr)
        cum = self._cum[d][idx]  # (..., m)
        j = (u[..., None] >= cum).sum(axis=-1)
        j = np.clip(j, 0, len(self.knots) - 1)
        out = self.knots[j].reshape(np.broadcast(s_arr, u).shape)
        return out if out.shape else float(out)

    def transition_tv(self, s, d: int, s2, d2: int) -> float:
        p = self.transition_probs[d][self._index(s)[0]]
        q = self.transition_probs[d2][self._index(s2)[0]]
        return 0.5 * float(np.abs(p - q).sum())

    def tv_elementwise(self, s_a, d_a, s_b, d_b):
        pa = self.transition_probs[np.asarray(d_a, dtype=int), self._index(s_a)]
        pb = self.transition_probs[np.asarray(d_b, dtype=int), self._index(s_b)]
        return 0.5 * np.abs(pa - pb).sum(axis=-1)

    def tv_matrix(self, s_a, d_a, s_b, d_b):
        ia, ib = self._index(s_a), self._index(s_b)
        pa = self.transition_probs[np.asarray(d_a, dtype=int), ia]
        pb = self.transition_probs[np.asarray(d_b, dtype=int), ib]
        return 0.5 * np.abs(pa[:, None, :] - pb[None, :, :]).sum(axis=2)

    def tv_rival(self, states, d: int, d2: int):
        idx = self._index(states)
        return 0.5 * np.abs(self.transition_probs[d][idx] - self.transition_probs[d2][idx]).sum(axis=1)

    def delta_sup(self) -> float:
        m = len(self.knots)
        states = np.tile(self.knots, self.n_choices)
        choices = np.repeat(np.arange(self.n_choices), m)
        return float(self.tv_matrix(states, choices, states, choices).max())

    def expectation_operator(self, fn, breakpoints) -> Callable:
        f_knots = fn(self.knots)

        def op(states, d: int):
            return self.transition_probs[d][self._index(states)] @ f_knots

        return op

    def b_bar_states(self, knots) -> np.ndarray:
        return self.knots

    @classmethod
    def random(cls, m: int = 13, n_choices: int = 2, resolution: int = 100, seed: int = 0,
               span=(0.0, 20.0), utility_scale: float = 5.0) -> "FiniteSurrogate":
        """Random surrogate whose transition probabilities are multiples of 1/resolution."""
        g = np.random.Generator(np.random.Philox(seed))
        knots = np.linspace(span[0], span[1], m)
        utilities = g.uniform(-utility_scale, 0.0, size=(n_choices, m))
        counts = g.multinomial(resolution, np.full(m, 1.0 / m), size=(n_choices, m))
        transition = counts / float(resolution)
        return cls(knots, utilities, transition, beta=0.8)

    def to_json_dict(self) -> dict:
        return {
            "beta": self.beta,
            "knots": self.knots.tolist(),
            "utilities": self.utilities.tolist(),
            "transition": self.transition_probs.tolist(),
        }

    @classmethod
    def from_json_dict(cls, obj: dict) -> "FiniteSurrogate":
        return cls(obj["knots"], obj["utilities"], obj["transition"], beta=float(obj["beta"]))
