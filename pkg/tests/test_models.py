import dataclasses
import io
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from hgmfilter.errors import NonPositiveDefinite, NonPositiveVariance, SingularCovariance
from hgmfilter.models import (
    ROLE_PROCESS,
    GaussianDensity,
    Trajectory,
    builtin_example5,
    builtin_linear,
    gaussian_logpdf,
    get_model,
    input_signal,
    noise_generator,
    simulate,
)

LOG_SQRT_2PI = 0.5 * math.log(2 * math.pi)


def test_example5_maps():
    m = builtin_example5()
    assert (m.n, m.r, m.m) == (1, 1, 1)
    assert m.linear_in_state
    assert m.F[0, 0] == 0.8
    assert m.f(np.array([1.0]), np.array([0.0]))[0] == pytest.approx(0.8)
    assert m.h(np.array([1.0]))[0] == 1.0
    assert m.h(np.array([0.0]))[0] == 0.0
    assert m.h_jac(np.array([0.0]))[0, 0] == 2.0


def test_linear_model_maps():
    m = builtin_linear(a=0.8, c=1.0)
    assert m.f(np.array([1.0]), np.array([0.0]))[0] == pytest.approx(0.8)
    assert m.h(np.array([2.0]))[0] == 2.0
    assert m.f_jac(np.array([5.0]), np.array([1.0]))[0, 0] == 0.8
    assert m.h_jac(np.array([-3.0]))[0, 0] == 1.0


def test_nonpositive_variance():
    with pytest.raises(NonPositiveVariance):
        builtin_linear(obs_var=0.0)
    with pytest.raises(NonPositiveVariance):
        builtin_linear(process_var=-1.0)


def test_get_model():
    assert get_model("example5").name == "example5"
    with pytest.raises(ValueError):
        get_model("nope")


def test_input_signal():
    assert input_signal(0) == 1.0
    assert input_signal(1) == pytest.approx(0.825336, abs=1e-6)
    assert all(-1 <= input_signal(k) <= 1 for k in range(500))


@pytest.mark.parametrize("model", [builtin_example5(), builtin_linear()])
def test_jacobians_match_differences(model):
    rng = np.random.default_rng(0)
    h = 1e-5
    for _ in range(100):
        x = rng.uniform(-3, 3, size=1)
        u = rng.uniform(-1, 1, size=1)
        df = (model.f(x + h, u) - model.f(x - h, u)) / (2 * h)
        dh = (model.h(x + h) - model.h(x - h)) / (2 * h)
        assert model.f_jac(x, u)[0, 0] == pytest.approx(df[0], abs=1e-6)
        assert model.h_jac(x)[0, 0] == pytest.approx(dh[0], abs=1e-6)


def test_vectorised_maps():
    m = builtin_example5()
    x = np.linspace(-2, 2, 7)[:, None]
    assert m.h(x).shape == (7, 1)
    assert np.allclose(m.h(x)[:, 0], 2 * x[:, 0] / (1 + x[:, 0] ** 2))


def test_transition_density_factorisation():
    m = builtin_example5()
    rng = np.random.default_rng(1)
    for _ in range(20):
        x, xp, u = rng.normal(size=3)
        direct = gaussian_logpdf(GaussianDensity(m.f(np.array([xp]), np.array([u])), [[1.0]]), [x])
        assert m.transition_logpdf([x], [xp], [u]) == pytest.approx(direct, rel=1e-15)
        y = rng.normal()
        obs = gaussian_logpdf(GaussianDensity(m.h(np.array([x])), [[1.0]]), [y])
        assert m.observation_logpdf([y], [x]) == pytest.approx(obs, rel=1e-15)


# Gaussian densities


def test_logpdf_standard_normal():
    d = GaussianDensity([0.0], [[1.0]])
    assert gaussian_logpdf(d, [0.0]) == pytest.approx(-0.9189385, abs=1e-7)
    assert gaussian_logpdf(d, [1.0]) == pytest.approx(-0.9189385 - 0.5, abs=1e-7)


def test_logpdf_bivariate_identity():
    d = GaussianDensity([0.0, 0.0], np.eye(2))
    assert gaussian_logpdf(d, [0.0, 0.0]) == pytest.approx(-math.log(2 * math.pi))


def test_logpdf_general_covariance():
    cov = np.array([[2.0, 0.3], [0.3, 0.5]])
    mean = np.array([0.1, -0.4])
    x = np.array([1.0, 0.2])
    d = x - mean
    ref = -0.5 * (2 * math.log(2 * math.pi) + math.log(np.linalg.det(cov)) + d @ np.linalg.solve(cov, d))
    assert gaussian_logpdf(GaussianDensity(mean, cov), x) == pytest.approx(ref, rel=1e-14)


@pytest.mark.parametrize(
    "cov",
    [[[1.0, 0.5], [0.4, 1.0]], [[1.0, 2.0], [2.0, 1.0]], [[0.0, 0.0], [0.0, 1.0]], [[np.nan, 0], [0, 1]]],
)
def test_invalid_density(cov):
    with pytest.raises(NonPositiveDefinite):
        GaussianDensity([0.0, 0.0], cov)


def test_logpdf_singular_covariance():
    d = GaussianDensity([0.0], [[1.0]])
    object.__setattr__(d, "cov", np.array([[0.0]]))
    with pytest.raises(SingularCovariance):
        gaussian_logpdf(d, [0.0])


# simulation


def test_noise_free_linear_stays_at_zero():
    base = builtin_linear(process_var=1e-30, obs_var=1e-30)
    m = dataclasses.replace(base, input_fn=lambda k: 0.0)
    traj = simulate(m, 40, GaussianDensity([0.0], [[1e-30]]), seed=5)
    assert np.max(np.abs(traj.states)) < 1e-12
    assert np.all(traj.inputs == 0.0)


def test_simulation_reproducible():
    m = builtin_example5()
    d = GaussianDensity([0.0], [[1.0]])
    a = simulate(m, 50, d, seed=11)
    b = simulate(m, 50, d, seed=11)
    c = simulate(m, 50, d, seed=12)
    assert np.array_equal(a.states, b.states) and np.array_equal(a.outputs, b.outputs)
    assert not np.array_equal(a.states, c.states)


def test_simulation_shapes_and_inputs():
    traj = simulate(builtin_example5(), 7, GaussianDensity([0.0], [[1.0]]), seed=0)
    assert traj.states.shape == (8, 1) and traj.outputs.shape == (7, 1) and traj.inputs.shape == (7, 1)
    assert np.allclose(traj.inputs[:, 0], np.cos(0.6 * np.arange(1, 8)))


def test_noise_generator_variance():
    draws = noise_generator(2024, 3, ROLE_PROCESS).standard_normal(10**6)
    assert draws.var() == pytest.approx(1.0, abs=0.01)


def test_noise_generator_streams_differ():
    a = noise_generator(1, 1, 1).standard_normal(4)
    assert not np.array_equal(a, noise_generator(1, 2, 1).standard_normal(4))
    assert not np.array_equal(a, noise_generator(1, 1, 2).standard_normal(4))
    assert not np.array_equal(a, noise_generator(2, 1, 1).standard_normal(4))
    assert np.array_equal(a, noise_generator(np.int64(1), 1, 1).standard_normal(4))


def test_trajectory_csv_round_trip():
    traj = simulate(builtin_example5(), 5, GaussianDensity([0.0], [[1.0]]), seed=3)
    text = traj.dumps()
    assert text.splitlines()[0] == "k,x1,y1,u1"
    back = Trajectory.from_csv(io.StringIO(text), seed=3)
    assert np.array_equal(back.states, traj.states)
    assert np.array_equal(back.outputs, traj.outputs)
    assert np.array_equal(back.inputs, traj.inputs)


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 2**63 - 1))
def test_any_seed_reproducible(seed):
    m = builtin_linear()
    d = GaussianDensity([0.0], [[1.0]])
    assert np.array_equal(simulate(m, 3, d, seed).states, simulate(m, 3, d, seed).states)
