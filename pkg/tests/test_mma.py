import numpy as np
import pytest

from lvto.mma import MmaState, RejectedIterateError, mma_update


def minimize_quadratic(x0: float, iterations: int = 30, **kwargs) -> MmaState:
    state = MmaState([x0], 0.0, 1.0, **kwargs)
    for _ in range(iterations):
        x = state.x
        mma_update(state, float((x[0] - 0.3) ** 2), 2 * (x - 0.3), -1.0, np.zeros(1))
    return state


@pytest.mark.parametrize("x0", [0.9, 0.1, 0.5, 0.31, 0.95])
def test_unconstrained_quadratic(x0: float):
    state = minimize_quadratic(x0)
    assert state.x[0] == pytest.approx(0.3, abs=1e-4)


def test_quadratic_iterates_settle():
    # the last steps must shrink with the gradient, not alternate around the optimum
    state = MmaState([0.9], 0.0, 1.0)
    xs = []
    for _ in range(30):
        x = state.x
        xs.append(mma_update(state, float((x[0] - 0.3) ** 2), 2 * (x - 0.3), -1.0, np.zeros(1))[0])

    tail = np.abs(np.diff(xs[-6:]))
    assert tail.max() < 1e-5


def test_secant_curvature_of_a_quadratic():
    state = minimize_quadratic(0.9, iterations=3)
    assert state.curvature == pytest.approx(2.0, rel=1e-9)


def test_classic_update_has_no_curvature():
    state = minimize_quadratic(0.9, iterations=3, secant=False)
    assert state.curvature == 0.0
    assert 0.0 <= state.x[0] <= 1.0


def test_stationary_point_is_kept():
    state = MmaState([0.4, 0.6], 0.0, 1.0)
    x = mma_update(state, 0.0, np.zeros(2), -1.0, np.zeros(2))
    np.testing.assert_allclose(x, [0.4, 0.6], rtol=1e-12)


def test_resource_allocation():
    c = np.array([1.0, 4.0, 9.0, 16.0])
    state = MmaState(np.full(4, 0.5), 0.01, 1.0)

    for _ in range(100):
        x = state.x
        f0, f1 = float((c / x).sum()), float(x.sum() / 2.0 - 1.0)
        mma_update(state, f0, -c / x**2, f1, np.full(4, 0.5))

    assert state.x.sum() <= 2.0 + 1e-6
    np.testing.assert_allclose(state.x, [0.2, 0.4, 0.6, 0.8], atol=1e-3)


def test_iterates_respect_bounds_and_move_limit():
    rng = np.random.default_rng(0)
    state = MmaState(rng.uniform(0.2, 0.8, size=20), 0.1, 0.9, move_limit=0.1)

    for _ in range(10):
        before = state.x.copy()
        x = mma_update(state, 0.0, rng.normal(size=20), -0.5, rng.normal(size=20))
        assert np.all(x >= 0.1) and np.all(x <= 0.9)
        assert np.all(np.abs(x - before) <= 0.1 * 0.8 + 1e-12)


def test_active_constraint_is_satisfied_by_linear_model():
    # minimizing -sum(x) subject to sum(x) <= 1 keeps the linear constraint satisfied
    state = MmaState(np.full(5, 0.1), 0.0, 1.0)
    for _ in range(20):
        x = state.x
        mma_update(state, float(-x.sum()), -np.ones(5), float(x.sum() - 1.0), np.ones(5))
    assert state.x.sum() == pytest.approx(1.0, abs=1e-3)


def test_non_finite_gradient_is_rejected():
    state = MmaState([0.5, 0.5], 0.0, 1.0)
    with pytest.raises(RejectedIterateError):
        mma_update(state, 1.0, np.array([np.nan, 0.0]), -1.0, np.zeros(2))
    np.testing.assert_array_equal(state.x, [0.5, 0.5])


def test_invalid_state():
    with pytest.raises(ValueError):
        MmaState([0.5], 1.0, 0.0)
    with pytest.raises(ValueError):
        MmaState([1.5], 0.0, 1.0)
    with pytest.raises(ValueError):
        MmaState([0.5], 0.0, 1.0, asymin=0.6)

    state = MmaState([0.5, 0.5], 0.0, 1.0)
    with pytest.raises(ValueError):
        mma_update(state, 1.0, np.zeros(3), -1.0, np.zeros(2))
