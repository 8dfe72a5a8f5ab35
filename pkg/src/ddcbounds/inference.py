"""Likelihood, envelopes, NFXP estimation, and set / confidence-set membership.

The exact likelihood needs value differences from the true fixed point, which
is unavailable; the plug-in likelihood substitutes the grid approximation.
Shifting each rival's value difference by the certified widening Q produces
envelopes that bracket the exact log likelihood at every parameter value,
which is what the set estimator and the robust confidence set invert.

Membership conventions follow the Monte Carlo protocol: the robust set
compares the maximised lower envelope against the upper envelope at the
candidate parameters (the conservative direction); the alternative threshold
that maximises the upper envelope instead is available behind ``variant``.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from typing import Optional

import numpy as np
from scipy import optimize
from scipy import stats as sps

from .bounds import BoundCertificate, b_bar, dense_grid_certificate, model_q_factor, refine_bound
from .dp import DrawSet, ValueTable, solve_value_function, uniform_knots
from .model import ContractViolation

__all__ = [
    "Panel",
    "LikelihoodEnvelope",
    "OptimizerSettings",
    "MLEResult",
    "OptimizerFailed",
    "choice_prob",
    "loglik",
    "loglik_envelope",
    "mle",
    "sup_lower_loglik",
    "sup_upper_loglik",
    "set_estimate_member",
    "robust_ci_member",
    "standard_ci_member",
    "chi2_quantile",
]

P_FLOOR = 1e-300
_LOG_P_FLOOR = float(np.log(P_FLOOR))


class OptimizerFailed(RuntimeError):
    """No optimizer start produced a finite objective value."""


@dataclass
class Panel:
    """Observed single-agent time series of (state, choice) pairs."""

    states: np.ndarray
    choices: np.ndarray

    def __post_init__(self):
        self.states = np.asarray(self.states, dtype=float)
        self.choices = np.asarray(self.choices, dtype=int)
        if self.states.ndim != 1 or len(self.states) == 0:
            raise ContractViolation("panel must be a nonempty 1-d series")
        if self.choices.shape != self.states.shape:
            raise ContractViolation("states and choices must align")
        if not np.all(np.isfinite(self.states)):
            raise ContractViolation("panel states must be finite")
        if np.any(self.choices < 0):
            raise ContractViolation("choice indices must be nonnegative")

    def __len__(self) -> int:
        return len(self.states)

    def validate_against(self, model) -> None:
        if np.any(self.states < model.state_lo) or np.any(self.states > model.state_hi):
            raise ContractViolation("panel states fall outside the model state space")
        if np.any(self.choices >= model.n_choices):
            raise ContractViolation("panel contains out-of-range choice indices")

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as f:
            w = csv.writer(f)
            w.writerow(["t", "state", "choice"])
            for t, (s, d) in enumerate(zip(self.states, self.choices), start=1):
                w.writerow([t, repr(float(s)), int(d)])

    @classmethod
    def from_csv(cls, path) -> "Panel":
        states, choices = [], []
        with open(path, newline="") as f:
            r = csv.reader(f)
            header = next(r)
            if header != ["t", "state", "choice"]:
                raise ContractViolation(f"unexpected panel header {header}")
            for line in r:
                states.append(float(line[1]))
                choices.append(int(line[2]))
        return cls(np.asarray(states), np.asarray(choices))


@dataclass(frozen=True)
class LikelihoodEnvelope:
    """Lower / plug-in / upper sample log likelihood at one parameter value."""

    ll_lower: float
    ll_point: float
    ll_upper: float
    theta: tuple

    def __post_init__(self):
        slack = 1e-9 * max(1.0, abs(self.ll_point))
        if not (self.ll_lower <= self.ll_point + slack and self.ll_point <= self.ll_upper + slack):
            raise ContractViolation("envelope ordering violated")


def choice_prob(s, d: int, adjusted_levels, model, theta=None) -> float:
    """Probability of choice d at state s given per-alternative adjusted value levels.

    Logit over scores u(s, d') + beta * adjusted_levels[d'], computed
    max-shifted; the chosen alternative's own level is zero by construction in
    every caller.  Clamped to [1e-300, 1].
    """
    adjusted_levels = np.asarray(adjusted_levels, dtype=float)
    z = np.array(
        [model.utility(s, dd, theta) + model.beta * adjusted_levels[dd] for dd in range(model.n_choices)]
    )
    z -= z.max()
    p = np.exp(z[d]) / np.exp(z).sum()
    return float(np.clip(p, P_FLOOR, 1.0))


def _log_choice_probs(panel: Panel, theta, model, scores: np.ndarray) -> np.ndarray:
    """Per-observation log probability of the observed choice given score rows."""
    top = scores.max(axis=0)
    lse = top + np.log(np.exp(scores - top).sum(axis=0))
    ll = scores[panel.choices, np.arange(len(panel))] - lse
    return np.maximum(ll, _LOG_P_FLOOR)


def loglik(panel: Panel, theta, model, vtab: ValueTable) -> float:
    """Plug-in partial log likelihood: sum of observed-choice log probabilities."""
    panel.validate_against(model)
    s = panel.states
    scores = np.stack(
        [np.asarray(model.utility(s, d, theta), dtype=float) + model.beta * vtab.evaluate_choice(s, d)
         for d in range(model.n_choices)]
    )
    return float(_log_choice_probs(panel, theta, model, scores).sum())


def loglik_envelope(
    panel: Panel,
    theta,
    model,
    vtab: ValueTable,
    cert: BoundCertificate,
    q_scale: float = 1.0,
    q_mode: str = "per_triple",
) -> LikelihoodEnvelope:
    """Bracket the exact log likelihood by shifting rival value differences by Q.

    For each observation the rival alternatives' adjusted levels
    Vtilde(s, d') - Vtilde(s, Dt) are moved down by Q for the upper envelope
    and up by Q for the lower one; Q = 0 reproduces the plug-in value.
    ``q_mode`` picks the per-triple amplification factor or the single
    model-wide factor of the replication protocol; ``q_scale`` inflates Q for
    widening sensitivity checks.
    """
    panel.validate_against(model)
    s = panel.states
    t_idx = np.arange(len(panel))
    u_rows = np.stack([np.asarray(model.utility(s, d, theta), dtype=float) for d in range(model.n_choices)])
    v_rows = vtab.evaluate(s)
    v_own = v_rows[panel.choices, t_idx]
    u_own = u_rows[panel.choices, t_idx]

    if q_mode == "model_factor":
        q_rows = np.full(v_rows.shape, model_q_factor(model) * cert.B_upper)
    elif q_mode == "per_triple":
        denom = 1.0 - model.beta * cert.delta_sup
        if denom <= 0.0:
            raise ContractViolation("beta * delta_sup >= 1 in certificate")
        q_rows = np.empty(v_rows.shape)
        for d in range(model.n_choices):
            delta = model.tv_elementwise(s, panel.choices, s, np.full(len(panel), d))
            q_rows[d] = (denom + model.beta * delta) / denom * cert.B_upper
    else:
        raise ContractViolation(f"unknown q_mode {q_mode!r}")
    q_rows *= q_scale

    def summed(sign: float) -> float:
        # scores: own alternative u only; rivals u + beta * (adj -/+ Q)
        adj = v_rows - v_own[None, :] + sign * q_rows
        scores = u_rows + model.beta * adj
        scores[panel.choices, t_idx] = u_own
        return float(_log_choice_probs(panel, theta, model, scores).sum())

    ll_upper = summed(-1.0)
    ll_lower = summed(+1.0)
    ll_point = loglik(panel, theta, model, vtab)
    return LikelihoodEnvelope(ll_lower, ll_point, ll_upper, tuple(np.atleast_1d(theta)))


# ---------------------------------------------------------------------------
# estimation
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class OptimizerSettings:
    """Simplex-search configuration for the nested fixed point loops."""

    starts: tuple = ((-0.5, -3.0), (-1.0, -6.0), (0.0, -1.0))
    xatol: float = 1e-5
    fatol: float = 1e-8
    max_fun_evals: int = 400
    boundary_threshold: float = 25.0


@dataclass(frozen=True)
class MLEResult:
    theta_hat: tuple
    ll: float
    converged: bool
    boundary: bool
    n_fun_evals: int


@dataclass(frozen=True)
class InnerSolve:
    """Inner fixed-point configuration shared across candidate parameter values."""

    n_draws: int = 100
    tol: float = 1e-9
    max_iter: int = 2000
    seed: int = 0


def _multistart_minimize(objective, settings: OptimizerSettings) -> MLEResult:
    best = None
    total_evals = 0
    for start in settings.starts:
        res = optimize.minimize(
            objective,
            np.asarray(start, dtype=float),
            method="Nelder-Mead",
            options={
                "xatol": settings.xatol,
                "fatol": settings.fatol,
                "maxfev": settings.max_fun_evals,
                "disp": False,
            },
        )
        total_evals += res.nfev
        if not np.isfinite(res.fun):
            continue
        if best is None or res.fun < best[0]:
            best = (float(res.fun), np.asarray(res.x), bool(res.success))
    if best is None:
        raise OptimizerFailed("no start point produced a finite objective")
    fun, x, success = best
    boundary = bool(np.any(np.abs(x) > settings.boundary_threshold)) or not np.all(np.isfinite(x))
    return MLEResult(tuple(float(v) for v in x), -fun, success, boundary, total_evals)


def _solver_knots_draws(model, knot_count: int, inner: InnerSolve):
    knots = uniform_knots(model, knot_count)
    draws = DrawSet.generate(inner.seed, knots, model.n_choices, inner.n_draws)
    return knots, draws


def mle(
    panel: Panel,
    model,
    knot_count: int,
    settings: Optional[OptimizerSettings] = None,
    inner: Optional[InnerSolve] = None,
) -> MLEResult:
    """Nested fixed point maximum likelihood over theta.

    Each candidate theta triggers an inner value-function solve on the
    estimation grid; one draw set is generated up front and reused for every
    candidate, which keeps the likelihood surface smooth for the simplex
    search.
    """
    settings = settings or OptimizerSettings()
    inner = inner or InnerSolve()
    panel.validate_against(model)
    knots, draws = _solver_knots_draws(model, knot_count, inner)

    def objective(theta):
        vtab = solve_value_function(
            model, tuple(theta), knots, tol=inner.tol, max_iter=inner.max_iter, draws=draws
        )
        return -loglik(panel, tuple(theta), model, vtab)

    return _multistart_minimize(objective, settings)


def _certificate_for(vtab, model, theta, bound_method: str, eval_grid, tau: Optional[float]):
    if bound_method == "dense":
        return dense_grid_certificate(vtab, model, theta, eval_grid)
    if bound_method == "refine":
        t = tau if tau is not None else 0.05 * max(b_bar(vtab, model, theta), 1e-12)
        return refine_bound(vtab, model, theta, t, candidate_grid=eval_grid)
    raise ContractViolation(f"unknown bound_method {bound_method!r}")


def envelope_at(
    theta,
    panel: Panel,
    model,
    knot_count: int,
    inner: Optional[InnerSolve] = None,
    bound_method: str = "dense",
    eval_points: int = 1001,
    tau: Optional[float] = None,
    q_scale: float = 1.0,
    q_mode: str = "per_triple",
):
    """Solve, certify and bracket the likelihood at one theta.

    Returns (envelope, certificate, value table); the shared building block
    for the envelope optimizers and the membership tests.
    """
    inner = inner or InnerSolve()
    knots, draws = _solver_knots_draws(model, knot_count, inner)
    eval_grid = uniform_knots(model, eval_points)
    vtab = solve_value_function(model, tuple(theta), knots, tol=inner.tol, max_iter=inner.max_iter, draws=draws)
    cert = _certificate_for(vtab, model, tuple(theta), bound_method, eval_grid, tau)
    env = loglik_envelope(panel, tuple(theta), model, vtab, cert, q_scale=q_scale, q_mode=q_mode)
    return env, cert, vtab


def _sup_envelope(
    which: str,
    panel: Panel,
    model,
    knot_count: int,
    settings: Optional[OptimizerSettings],
    inner: Optional[InnerSolve],
    bound_method: str,
    eval_points: int,
    tau: Optional[float],
    q_scale: float,
    q_mode: str,
) -> float:
    settings = settings or OptimizerSettings()
    inner = inner or InnerSolve()
    panel.validate_against(model)
    knots, draws = _solver_knots_draws(model, knot_count, inner)
    eval_grid = uniform_knots(model, eval_points)

    def objective(theta):
        theta = tuple(theta)
        vtab = solve_value_function(model, theta, knots, tol=inner.tol, max_iter=inner.max_iter, draws=draws)
        cert = _certificate_for(vtab, model, theta, bound_method, eval_grid, tau)
        env = loglik_envelope(panel, theta, model, vtab, cert, q_scale=q_scale, q_mode=q_mode)
        return -(env.ll_lower if which == "lower" else env.ll_upper)

    return _multistart_minimize(objective, settings).ll


def sup_lower_loglik(
    panel: Panel,
    model,
    knot_count: int,
    settings: Optional[OptimizerSettings] = None,
    inner: Optional[InnerSolve] = None,
    bound_method: str = "dense",
    eval_points: int = 1001,
    tau: Optional[float] = None,
    q_scale: float = 1.0,
    q_mode: str = "per_triple",
) -> float:
    """sup over theta of the lower envelope, with the certificate recomputed per candidate."""
    return _sup_envelope("lower", panel, model, knot_count, settings, inner,
                         bound_method, eval_points, tau, q_scale, q_mode)


def sup_upper_loglik(
    panel: Panel,
    model,
    knot_count: int,
    settings: Optional[OptimizerSettings] = None,
    inner: Optional[InnerSolve] = None,
    bound_method: str = "dense",
    eval_points: int = 1001,
    tau: Optional[float] = None,
    q_scale: float = 1.0,
    q_mode: str = "per_triple",
) -> float:
    """sup over theta of the upper envelope (threshold of the alternative robust set)."""
    return _sup_envelope("upper", panel, model, knot_count, settings, inner,
                         bound_method, eval_points, tau, q_scale, q_mode)


# ---------------------------------------------------------------------------
# membership tests
# ---------------------------------------------------------------------------


def chi2_quantile(p: float, df: int = 2) -> float:
    """Chi-squared quantile; CDF(quantile(p)) = p."""
    return float(sps.chi2.ppf(p, df))


def chi2_cdf(x: float, df: int = 2) -> float:
    return float(sps.chi2.cdf(x, df))


def set_estimate_member(theta, panel: Panel, model, knot_count: int, sup_ll_lower: float, **kwargs) -> bool:
    """theta is in the set estimate iff sup L_lower - L_upper(theta) <= 0."""
    env, _, _ = envelope_at(theta, panel, model, knot_count, **kwargs)
    return bool(sup_ll_lower - env.ll_upper <= 0.0)


def robust_ci_member(
    theta,
    panel: Panel,
    model,
    knot_count: int,
    sup_ll_lower: float,
    alpha: float = 0.05,
    variant: str = "s4",
    sup_ll_upper: Optional[float] = None,
    **kwargs,
) -> bool:
    """Robust test-inversion membership at level 1 - alpha.

    The default compares sup L_lower against L_upper(theta) (the conservative
    protocol); ``variant='s3'`` compares sup L_upper against L_lower(theta)
    and requires ``sup_ll_upper``.
    """
    env, _, _ = envelope_at(theta, panel, model, knot_count, **kwargs)
    half_crit = 0.5 * chi2_quantile(1.0 - alpha, df=len(np.atleast_1d(theta)))
    if variant == "s4":
        return bool(sup_ll_lower - env.ll_upper <= half_crit)
    if variant == "s3":
        if sup_ll_upper is None:
            raise ContractViolation("variant='s3' needs sup_ll_upper")
        return bool(sup_ll_upper - env.ll_lower <= half_crit)
    raise ContractViolation(f"unknown variant {variant!r}")


def standard_ci_member(
    theta,
    panel: Panel,
    model,
    knot_count: int,
    sup_ll_plugin: float,
    alpha: float = 0.05,
    inner: Optional[InnerSolve] = None,
) -> bool:
    """Standard likelihood-ratio membership using the plug-in likelihood only."""
    inner = inner or InnerSolve()
    knots, draws = _solver_knots_draws(model, knot_count, inner)
    vtab = solve_value_function(model, tuple(theta), knots, tol=inner.tol, max_iter=inner.max_iter, draws=draws)
    ll = loglik(panel, tuple(theta), model, vtab)
    half_crit = 0.5 * chi2_quantile(1.0 - alpha, df=len(np.atleast_1d(theta)))
    return bool(sup_ll_plugin - ll <= half_crit)
