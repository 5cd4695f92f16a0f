import numpy as np
import pytest

from ldacs_puf.cmaes import (OptimizationAborted, StrategyParams, cma_init, cma_minimize, cma_step, rosenbrock,
                             sphere)


def test_default_params():
    p = StrategyParams.default(10)
    assert p.lam == 10 and p.mu == 5
    assert p.weights.sum() == pytest.approx(1.0) and np.all(np.diff(p.weights) < 0)


@pytest.mark.parametrize("seed", range(3))
def test_sphere_converges(seed):
    state = cma_minimize(sphere, np.full(10, 3.0), 2.0, seed, 300, ftarget=1e-12)
    assert state.best_f < 1e-10


def test_rosenbrock_converges():
    state = cma_minimize(rosenbrock, np.zeros(5), 0.5, 1, 3000, ftarget=1e-12)
    assert state.best_f < 1e-10


def test_covariance_stays_spd():
    state = cma_init(8, np.ones(8), 1.0, 0)
    for _ in range(100):
        state = cma_step(state, sphere)
        np.testing.assert_allclose(state.cov, state.cov.T)
        np.linalg.cholesky(state.cov)


def test_step_is_pure():
    state = cma_init(4, np.ones(4), 1.0, 5)
    a, b = cma_step(state, sphere), cma_step(state, sphere)
    assert np.array_equal(a.mean, b.mean) and a.sigma == b.sigma


def test_errors():
    with pytest.raises(ValueError):
        cma_init(3, np.zeros(2), 1.0, 0)
    with pytest.raises(ValueError):
        cma_init(3, np.zeros(3), 0.0, 0)
    with pytest.raises(OptimizationAborted, match="generation 1"):
        cma_step(cma_init(3, np.zeros(3), 1.0, 0), lambda x: float("nan"))
