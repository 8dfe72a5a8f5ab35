import numpy as np
import pytest

from ddcbounds import (
    BoundCertificate,
    ContractViolation,
    DegenerateBound,
    EmptyAnchorSet,
    ModelSpec,
    RefinementStalled,
    ValueTable,
    b_bar,
    b_factor,
    dense_grid_certificate,
    model_q_factor,
    q_bound,
    refine_bound,
    solve_value_function,
    theorem1_sup,
    theorem2_envelope,
    uniform_knots,
)
from ddcbounds.dp import DrawSet, bellman_at
from oracles import b_bar_scan, residual_spread_pairwise


def test_b_factor_identity_when_tv_zero(bus):
    assert b_factor(10.0, 0, 0, bus) == pytest.approx(1.0, abs=1e-14)


def test_b_factor_crude_limit():
    # with every TV distance at 1 the factor collapses to 1/(1-beta)
    m = ModelSpec(gamma=(8.0, -8.0, 0.5))  # rival kernels far apart: delta = 1
    assert m.transition_tv(10.0, 0, 10.0, 1) == pytest.approx(1.0, abs=1e-12)
    assert b_factor(10.0, 0, 1, m, delta_sup=1.0) == pytest.approx(1.0 / (1.0 - m.beta), abs=1e-12)


def test_b_factor_bus_interior(bus):
    # (1 - 0.8 + 0.8 * 0.2) / (1 - 0.8) = 1.8
    assert b_factor(10.0, 0, 1, bus, delta_sup=1.0) == pytest.approx(1.8, abs=1e-12)
    assert model_q_factor(bus) == pytest.approx(1.8, abs=1e-12)


def test_b_factor_range(bus):
    g = np.random.Generator(np.random.Philox(31))
    for s in g.uniform(0, 20, 30):
        for d in (0, 1):
            for d2 in (0, 1):
                f = b_factor(float(s), d, d2, bus)
                assert 1.0 - 1e-12 <= f <= 1.0 / (1.0 - bus.beta) + 1e-12


def test_b_factor_degenerate_guard(bus):
    with pytest.raises(DegenerateBound):
        b_factor(10.0, 0, 1, bus, delta_sup=1.3)


def test_b_bar_linear_utilities(bus):
    vt = ValueTable.zeros(np.array([0.0, 20.0]))
    got = b_bar(vt, bus, bus.theta)
    assert got == pytest.approx(12.0, abs=1e-12)
    assert got == pytest.approx(b_bar_scan(vt, bus, bus.theta), abs=1e-4)


def test_b_bar_constant_utilities():
    m = ModelSpec(theta=(0.0, -4.0))
    vt = ValueTable.zeros(np.array([0.0, 20.0]))
    # choice 0 utility is 0 * s; choice 1 constant: both spreads vanish
    assert b_bar(vt, m, m.theta) == 0.0


def test_b_bar_linear_table():
    m = ModelSpec(theta=(0.0, 0.0), beta=0.8)
    k = 0.35
    vt = ValueTable(np.array([0.0, 20.0]), np.array([[0.0, 20.0 * k], [0.0, 0.0]]))
    got = b_bar(vt, m, m.theta)
    assert got == pytest.approx(0.8 * k * 20.0, abs=1e-12)
    assert got == pytest.approx(b_bar_scan(vt, m, m.theta), abs=1e-4)


def test_theorem1_sup_zero_at_surrogate_fixed_point(surrogate, surrogate_fixed_point):
    vstar, draws = surrogate_fixed_point
    assert theorem1_sup(vstar, surrogate, None, surrogate.knots) <= 1e-9


def test_theorem1_sup_constant_shift_is_zero(surrogate, surrogate_fixed_point):
    vstar, _ = surrogate_fixed_point
    shifted = ValueTable(vstar.knots, vstar.values + 2.5)
    # residual of a constant-shifted fixed point is constant, so the spread vanishes
    assert theorem1_sup(shifted, surrogate, None, surrogate.knots) <= 1e-9


def test_theorem1_sup_matches_pairwise_oracle(bus, vtab10):
    grid = uniform_knots(bus, 301)
    perturbed = vtab10.copy()
    perturbed.values[0, 4] += 1.0
    got = theorem1_sup(perturbed, bus, bus.theta, grid)
    t_vals = bellman_at(perturbed, bus, bus.theta, grid)
    v_vals = perturbed.evaluate(grid)
    assert got > 0.5
    assert got == pytest.approx(residual_spread_pairwise(t_vals, v_vals), abs=1e-6)


def test_theorem1_sup_shift_invariance(bus, vtab10):
    grid = uniform_knots(bus, 201)
    base = theorem1_sup(vtab10, bus, bus.theta, grid)
    shifted = ValueTable(vtab10.knots, vtab10.values + 3.7)
    assert theorem1_sup(shifted, bus, bus.theta, grid) == pytest.approx(base, abs=1e-10)
    assert b_bar(ValueTable(vtab10.knots, vtab10.values + 3.7), bus, bus.theta) == pytest.approx(
        b_bar(vtab10, bus, bus.theta), abs=1e-10
    )


def test_theorem2_full_anchor_set_collapses(bus, vtab10):
    grid = uniform_knots(bus, 101)
    anchors = (np.tile(grid, 2), np.repeat([0, 1], len(grid)))
    b_up, b_lo = theorem2_envelope(vtab10, bus, bus.theta, anchors, grid)
    sup = theorem1_sup(vtab10, bus, bus.theta, grid)
    assert b_lo == pytest.approx(sup, abs=1e-10)
    assert b_up >= b_lo - 1e-10
    assert b_up - b_lo <= 1e-9  # anchors cover the grid: zero-width bracket


def test_theorem2_single_anchor_collapse(bus, vtab10):
    s0 = np.array([8.0])
    b_up, b_lo = theorem2_envelope(vtab10, bus, bus.theta, (s0, np.array([0])), s0)
    # candidate pair equals the anchor for choice 0; the choice-1 candidate adds width
    assert b_lo == 0.0
    assert b_up >= 0.0


def test_theorem2_bracket_orders_dense_sup(bus, vtab10):
    grid = uniform_knots(bus, 1001)
    anchor_states = uniform_knots(bus, 51)[np.isin(uniform_knots(bus, 51), grid)]
    anchor_states = grid[::20]  # 51 anchors, subset of the candidate grid
    anchors = (np.tile(anchor_states, 2), np.repeat([0, 1], len(anchor_states)))
    b_up, b_lo = theorem2_envelope(vtab10, bus, bus.theta, anchors, grid)
    sup = theorem1_sup(vtab10, bus, bus.theta, grid)
    assert b_lo <= sup + 1e-12
    assert sup <= b_up + 1e-12


def test_theorem2_rejects_empty_anchor_set(bus, vtab10):
    with pytest.raises(EmptyAnchorSet):
        theorem2_envelope(vtab10, bus, bus.theta, [], uniform_knots(bus, 11))


def test_envelope_monotone_in_anchor_set(bus, vtab10):
    grid = uniform_knots(bus, 401)
    small = grid[::100]
    big = grid[::25]  # superset of `small`
    assert set(small).issubset(set(big))
    a_small = (np.tile(small, 2), np.repeat([0, 1], len(small)))
    a_big = (np.tile(big, 2), np.repeat([0, 1], len(big)))
    up_s, lo_s = theorem2_envelope(vtab10, bus, bus.theta, a_small, grid)
    up_b, lo_b = theorem2_envelope(vtab10, bus, bus.theta, a_big, grid)
    assert up_b <= up_s + 1e-12
    assert lo_b >= lo_s - 1e-12


def test_refine_bound_huge_tau_one_round(bus, vtab10):
    rounds = []
    cert = refine_bound(vtab10, bus, bus.theta, tau=1e9,
                        on_round=lambda r, u, l: rounds.append(r))
    assert rounds == [0]
    assert cert.method == "refine"
    assert cert.B_lower <= cert.B_upper


def test_refine_bound_halts_tight_and_monotone(bus, vtab10):
    bb = b_bar(vtab10, bus, bus.theta)
    tau = 0.1 * bb
    ups = []
    cert = refine_bound(vtab10, bus, bus.theta, tau=tau, on_round=lambda r, u, l: ups.append(u))
    assert cert.B_upper - cert.B_lower <= tau
    assert all(ups[i + 1] <= ups[i] + 1e-12 for i in range(len(ups) - 1))
    sup = theorem1_sup(vtab10, bus, bus.theta, uniform_knots(bus, 1001))
    assert cert.B_lower <= sup + 1e-12 <= cert.B_upper + 1e-12


def test_refine_bound_surrogate_fixed_point(surrogate, surrogate_fixed_point):
    vstar, _ = surrogate_fixed_point
    tau = 0.05
    cert = refine_bound(vstar, surrogate, None, tau=tau, candidate_grid=surrogate.knots,
                        initial_anchor_count=4)
    assert cert.B_upper <= tau + 1e-9
    assert cert.B_lower == pytest.approx(0.0, abs=1e-9)


def test_refine_bound_stalls_on_impossible_tau(bus, vtab10):
    with pytest.raises(RefinementStalled):
        refine_bound(vtab10, bus, bus.theta, tau=1e-300, max_rounds=2,
                     candidate_grid=uniform_knots(bus, 101))


def test_q_bound_values(bus, vtab10):
    cert0 = BoundCertificate(1.0, 5.0, 0.0, 0.0, "dense_grid")
    assert q_bound(4.0, 0, 1, cert0, bus) == 0.0
    cert1 = BoundCertificate(1.0, 5.0, 1.0, 0.5, "dense_grid")
    assert q_bound(10.0, 0, 1, cert1, bus) == pytest.approx(1.8, abs=1e-12)
    assert q_bound(10.0, 1, 1, cert1, bus) == pytest.approx(1.0, abs=1e-12)


def test_certificate_validation_and_json(tmp_path):
    with pytest.raises(ContractViolation):
        BoundCertificate(1.2, 1.0, 1.0, 0.0, "dense_grid")
    with pytest.raises(ContractViolation):
        BoundCertificate(1.0, 1.0, 1.0, 2.0, "dense_grid")
    cert = BoundCertificate(1.0, 12.0, 0.9, 0.8, "refine")
    path = tmp_path / "cert.json"
    cert.to_json(path)
    import json

    again = BoundCertificate.from_json_dict(json.loads(path.read_text()))
    assert again == cert


def test_soundness_on_surrogate(surrogate, surrogate_fixed_point):
    # Value-difference errors are covered by both bound routes on random perturbations.
    vstar, _ = surrogate_fixed_point
    g = np.random.Generator(np.random.Philox(77))
    knots = surrogate.knots
    m = len(knots)
    delta_sup = surrogate.delta_sup()
    for _ in range(10):
        vt = ValueTable(knots, vstar.values + g.uniform(-1.5, 1.5, vstar.values.shape))
        sup = theorem1_sup(vt, surrogate, None, knots)
        cert = refine_bound(vt, surrogate, None, tau=0.05, candidate_grid=knots, initial_anchor_count=4)
        for d in range(2):
            for d2 in range(2):
                lhs = np.abs(
                    (vt.values[d] - vt.values[d2]) - (vstar.values[d] - vstar.values[d2])
                )
                for k in range(m):
                    bf = b_factor(knots[k], d, d2, surrogate, delta_sup)
                    assert lhs[k] <= bf * sup + 1e-8
                    assert lhs[k] <= q_bound(knots[k], d, d2, cert, surrogate) + 1e-8


def test_dense_certificate_margin_is_conservative(bus, vtab10):
    plain = dense_grid_certificate(vtab10, bus, bus.theta)
    margin = dense_grid_certificate(vtab10, bus, bus.theta, continuum_margin=True)
    assert margin.B_upper > plain.B_upper
    assert margin.B_lower == plain.B_lower
