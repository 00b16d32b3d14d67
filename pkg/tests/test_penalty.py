import math

import numpy as np
import pytest

from lvto.penalty import (
    PenaltyParams,
    bounding_diagonal,
    closeness,
    penalty_f,
    penalty_grad,
    penalty_many,
)

SIX = np.array([[0.0, 0.0], [1.2, 0.0], [0.4, 0.9], [-0.7, 0.5], [1.5, 1.1], [0.2, -1.3]])


def test_bounding_diagonal():
    assert bounding_diagonal([[0.0, 0.0], [3.0, 0.0], [0.0, 4.0]]) == 5.0
    assert bounding_diagonal([[0.3, 0.4]]) == 1.0
    assert bounding_diagonal([[0.3, 0.4], [0.3, 0.4]]) == 1.0


def test_single_anchor_is_exact():
    params = PenaltyParams([[0.5, -0.2]], lam=500.0, gamma=2.0)
    z = np.array([1.0, 0.3])
    assert penalty_f(z, params) == pytest.approx(math.exp(-0.5 / 2.0), rel=1e-12)


def test_soft_maximum_bounds():
    params = PenaltyParams(SIX)
    rng = np.random.default_rng(0)
    z = rng.uniform(-2.0, 2.5, size=(10_000, 2))

    f, _ = penalty_many(z, params)
    hard = closeness(z, params).max(axis=1)
    assert np.all(f >= hard - 1e-12)
    assert np.all(f <= hard + math.log(6) / 500.0 + 1e-12)


def test_value_at_an_anchor():
    params = PenaltyParams(SIX)
    f = penalty_f(SIX[2], params)
    assert 1.0 <= f <= 1.0 + math.log(6) / 500.0


def test_value_far_from_the_anchors():
    anchors = np.array([[0.0, 0.0], [1.0, 0.0], [0.0, 1.0]])
    params = PenaltyParams(anchors)
    # nearest anchor at squared distance gamma * ln 10, the others much further
    z = np.array([-math.sqrt(params.gamma * math.log(10)), 0.0])
    assert penalty_f(z, params) == pytest.approx(0.1, abs=params.slack + 1e-12)


def test_gradient_matches_finite_differences():
    params = PenaltyParams(SIX)
    rng = np.random.default_rng(1)
    h = 1e-6

    for z in rng.uniform(-2.0, 2.5, size=(100, 2)):
        grad = penalty_grad(z, params)
        for d in range(2):
            step = np.zeros(2)
            step[d] = h
            fd = (penalty_f(z + step, params) - penalty_f(z - step, params)) / (2 * h)
            assert grad[d] == pytest.approx(fd, abs=1e-6)


def test_gradient_vanishes_on_symmetry_axis():
    params = PenaltyParams([[-1.0, 0.0], [1.0, 0.0]])
    grad = penalty_grad([0.0, 0.3], params)
    assert abs(grad[0]) <= 1e-10
    assert grad[1] < 0


def test_gradient_vanishes_at_sole_anchor():
    params = PenaltyParams([[0.2, 0.7]])
    np.testing.assert_array_equal(penalty_grad([0.2, 0.7], params), [0.0, 0.0])


def test_decreases_away_from_sole_anchor():
    params = PenaltyParams([[0.0, 0.0]], gamma=1.0)
    values = [penalty_f([r, r], params) for r in np.linspace(0.0, 3.0, 20)]
    assert all(a > b for a, b in zip(values, values[1:]))


def test_invalid_parameters():
    with pytest.raises(ValueError):
        PenaltyParams(SIX, lam=0.0)
    with pytest.raises(ValueError):
        PenaltyParams(SIX, gamma=-1.0)
    with pytest.raises(ValueError):
        PenaltyParams(np.zeros((0, 2)))
