import numpy as np
import pytest

from ddcbounds import FiniteSurrogate, ModelSpec, SimConfig, simulate_panel, solve_value_function, uniform_knots
from ddcbounds.dp import DrawSet


@pytest.fixture(scope="session")
def bus():
    return ModelSpec()


@pytest.fixture(scope="session")
def surrogate():
    return FiniteSurrogate.random(m=13, resolution=100, seed=3)


@pytest.fixture(scope="session")
def surrogate_fixed_point(surrogate):
    """Exact fixed point of the surrogate's sampled operator (stratified draws)."""
    from ddcbounds import ValueTable, bellman_apply

    draws = DrawSet.stratified(surrogate.knots, surrogate.n_choices, 100)
    vtab = ValueTable.zeros(surrogate.knots, surrogate.n_choices)
    for _ in range(500):
        new = bellman_apply(vtab, surrogate, None, draws)
        delta = float(np.abs(new.values - vtab.values).max())
        vtab = new
        if delta < 1e-13:
            break
    assert delta < 1e-13
    return vtab, draws


@pytest.fixture(scope="session")
def desk_panel(bus):
    """Seed-1 panel of 200 observations, shared by the inference tests."""
    return simulate_panel(SimConfig(model=bus, horizon=200, seed=1))


@pytest.fixture(scope="session")
def vtab10(bus):
    return solve_value_function(bus, bus.theta, uniform_knots(bus, 10), seed=1)
