"""Independent oracles used across the test suite.

Each oracle recomputes a quantity by a route that shares no code with the
implementation under test: mesh integration for TV distances, brute-force
scans for suprema, pairwise enumeration for residual spreads, and quadrature
of the logistic density for choice probabilities.
"""

import numpy as np


def tv_mesh(model, s1, d1, s2, d2, n_points=10**6):
    """TV by mesh integration of |f - g| plus atom terms.

    The mesh is the uniform n-point grid refined at the kernels' interior
    endpoints (piecewise-constant densities are integrated exactly by midpoint
    sums on that partition); densities are evaluated pointwise.
    """
    k1 = model.transition(s1, d1)
    k2 = model.transition(s2, d2)
    edges = np.union1d(
        np.linspace(model.state_lo, model.state_hi, n_points + 1),
        [k1.interior_lo, k1.interior_hi, k2.interior_lo, k2.interior_hi],
    )
    mid = 0.5 * (edges[1:] + edges[:-1])
    dx = np.diff(edges)
    dens = np.abs(k1.pdf(mid) - k2.pdf(mid))
    atoms = abs(k1.atom_lo - k2.atom_lo) + abs(k1.atom_hi - k2.atom_hi)
    return 0.5 * (float(np.sum(dens * dx)) + atoms)


def b_bar_scan(vtab, model, theta, n_points=10**5):
    """Brute-force scan of the per-choice spread of u + beta * Vtilde."""
    s = np.linspace(model.state_lo, model.state_hi, n_points)
    best = 0.0
    for d in range(model.n_choices):
        g = np.asarray(model.utility(s, d, theta), dtype=float) + model.beta * vtab.evaluate_choice(s, d)
        best = max(best, float(g.max() - g.min()))
    return best


def residual_spread_pairwise(t_values, v_values):
    """O(grid^2) pairwise enumeration of max |[T(a) - T(b)] - [V(a) - V(b)]|."""
    g = (t_values - v_values).ravel()
    return float(np.abs(g[:, None] - g[None, :]).max())


def logistic_prob_quadrature(x, n_points=200001):
    """P(logistic variate <= x) by quadrature of the logistic density."""
    lo = min(x, 0.0) - 40.0
    t = np.linspace(lo, x, n_points)
    dens = np.exp(-t) / (1.0 + np.exp(-t)) ** 2
    return float(np.trapezoid(dens, t))


def loglik_recompute(panel, theta, model, vtab):
    """Plain-Python recomputation of the plug-in log likelihood."""
    import math

    total = 0.0
    for s, d in zip(panel.states, panel.choices):
        scores = [
            float(model.utility(float(s), dd, theta)) + model.beta * float(vtab.evaluate_choice(float(s), dd))
            for dd in range(model.n_choices)
        ]
        top = max(scores)
        p = math.exp(scores[d] - top) / sum(math.exp(z - top) for z in scores)
        total += math.log(max(p, 1e-300))
    return total


def envelope_width_recompute(panel, theta, model, vtab, q_of):
    """Per-observation envelope-width sum using caller-supplied Q values."""
    import math

    total = 0.0
    for s, d in zip(panel.states, panel.choices):
        s = float(s)
        scores = [
            float(model.utility(s, dd, theta)) + model.beta * float(vtab.evaluate_choice(s, dd))
            for dd in range(model.n_choices)
        ]

        def logp(sign):
            adj = [
                scores[dd] + (0.0 if dd == d else sign * model.beta * q_of(s, d, dd))
                for dd in range(model.n_choices)
            ]
            top = max(adj)
            p = math.exp(adj[d] - top) / sum(math.exp(z - top) for z in adj)
            return math.log(max(p, 1e-300))

        total += logp(-1.0) - logp(+1.0)
    return total
