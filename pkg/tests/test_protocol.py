import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from isingqb.protocol import (
    NoisePath,
    NoiseSpec,
    RampProtocol,
    field_at,
    noisy_field,
    ou_sample_path,
    ou_sample_paths,
    trajectory_grid,
)

RAMP = RampProtocol(0.8, 1.5, 10.0)


def test_field_examples():
    assert field_at(RAMP, 0.0) == 0.8
    assert field_at(RAMP, 5.0) == pytest.approx(1.15)
    assert field_at(RAMP, 25.0) == 1.5
    assert RAMP.v == pytest.approx(0.07)


def test_field_negative_time_rejected():
    with pytest.raises(ValueError):
        field_at(RAMP, -0.1)


def test_field_continuous_at_tf():
    assert field_at(RAMP, 10.0 - 1e-12) == pytest.approx(field_at(RAMP, 10.0), abs=1e-10)


def test_sudden_quench():
    q = RampProtocol(0.8, 1.5, 0.0)
    assert q.v is None and q.is_sudden
    assert field_at(q, 0.0) == 0.8
    assert field_at(q, 1e-9) == 1.5


def test_ramp_rejects_negative_duration():
    with pytest.raises(ValueError):
        RampProtocol(0.0, 1.0, -1.0)


def test_field_vectorised():
    t = np.array([0.0, 5.0, 10.0, 20.0])
    np.testing.assert_allclose(field_at(RAMP, t), [0.8, 1.15, 1.5, 1.5])
    np.testing.assert_allclose(RAMP.rate(t), [0.07, 0.07, 0.0, 0.0])


def test_noise_spec_validation():
    with pytest.raises(ValueError):
        NoiseSpec(-1.0)
    with pytest.raises(ValueError):
        NoiseSpec(1.0, tau_n=0.0)
    assert NoiseSpec(1.0, 2.0).variance == 0.25


def test_zero_noise_path():
    p = ou_sample_path(NoiseSpec(0.0, seed=3), np.linspace(0, 5, 11))
    assert np.all(p.values == 0.0)


def test_path_rejects_non_monotone_grid():
    with pytest.raises(ValueError):
        ou_sample_path(NoiseSpec(1.0), [0.0, 1.0, 0.5])
    with pytest.raises(ValueError):
        ou_sample_path(NoiseSpec(1.0), [0.0, 1.0, 1.0])


def test_same_seed_bit_identical():
    grid = np.linspace(0, 10, 501)
    a = ou_sample_path(NoiseSpec(1.0, seed=42), grid)
    b = ou_sample_path(NoiseSpec(1.0, seed=42), grid)
    assert np.array_equal(a.values, b.values)
    c = ou_sample_path(NoiseSpec(1.0, seed=43), grid)
    assert not np.array_equal(a.values, c.values)


def test_stacked_paths_match_single_paths():
    grid = np.linspace(0, 3, 151)
    spec = NoiseSpec(0.3, 0.5, seed=7)
    stack = ou_sample_paths(spec, grid, 4, start=2)
    for m in range(4):
        assert np.array_equal(stack.values[m], ou_sample_path(spec, grid, 2 + m).values)


def _long_path(xi, tau, seed, n=100_000, dt=None):
    dt = tau if dt is None else dt
    grid = dt * np.arange(n)
    return ou_sample_path(NoiseSpec(xi, tau, seed), grid)


def _ar1_standard_error_of_mean(var, rho, n):
    return np.sqrt(var / n * (1 + rho) / (1 - rho))


def test_stationary_variance():
    xi, tau, dt, n = 1.0, 1.0, 1.0, 100_000
    eta = _long_path(xi, tau, 11, n, dt).values
    var = xi**2 / (2 * tau)
    rho = np.exp(-dt / tau)
    # SE of the sample variance of a Gaussian AR(1): 2 var^2 (1 + rho^2) / (1 - rho^2) / n
    se = np.sqrt(2 * var**2 * (1 + rho**2) / (1 - rho**2) / n)
    assert abs(eta.var() - var) < 3 * se


def test_mean_zero():
    eta = _long_path(1.0, 1.0, 12).values
    se = _ar1_standard_error_of_mean(0.5, np.exp(-1.0), eta.size)
    assert abs(eta.mean()) < 3 * se


@pytest.mark.parametrize("lag_steps", [1, 2, 5])
def test_autocovariance_decay(lag_steps):
    tau, dt = 1.0, 0.5
    path = _long_path(1.0, tau, 13, 200_000, dt)
    eta = path.values
    c0 = np.mean(eta * eta)
    cl = np.mean(eta[:-lag_steps] * eta[lag_steps:])
    expected = np.exp(-lag_steps * dt / tau)
    # crude SE for a lag-product estimator of a correlated series
    n_eff = eta.size * (1 - np.exp(-dt / tau)) / (1 + np.exp(-dt / tau))
    assert abs(cl / c0 - expected) < 3 * np.sqrt((1 + expected**2) / n_eff)


def test_independent_seeds_uncorrelated():
    grid = np.arange(10_000.0)  # dt = 5 tau: nearly independent samples
    a = ou_sample_path(NoiseSpec(1.0, 0.2, seed=1), grid).values
    b = ou_sample_path(NoiseSpec(1.0, 0.2, seed=2), grid).values
    r = np.corrcoef(a, b)[0, 1]
    assert abs(r) < 3 / np.sqrt(grid.size)


def test_refinement_keeps_marginals():
    # exact AR(1): marginal at shared nodes is N(0, var) for any step
    spec = NoiseSpec(1.0, 1.0, seed=0)
    coarse = np.linspace(0, 2, 3)
    fine = np.linspace(0, 2, 5)
    a = ou_sample_paths(spec, coarse, 4000).values[:, -1]
    b = ou_sample_paths(spec, fine, 4000).values[:, -1]
    se = np.sqrt(2 * 0.5**2 / 4000)
    assert abs(a.var() - 0.5) < 3 * se
    assert abs(b.var() - 0.5) < 3 * se


def test_noisy_field():
    grid = np.linspace(0, 20, 101)
    zero = ou_sample_path(NoiseSpec(0.0), grid)
    t = np.linspace(0, 20, 37)
    np.testing.assert_array_equal(noisy_field(RAMP, zero, t), field_at(RAMP, t))
    p = ou_sample_path(NoiseSpec(0.5, seed=4), grid)
    assert noisy_field(RAMP, p, grid[17]) == field_at(RAMP, grid[17]) + p.values[17]
    with pytest.raises(ValueError):
        noisy_field(RAMP, p, 25.0)


def test_strong_noise_swamps_ramp():
    grid = trajectory_grid(30, 1.0)
    p = ou_sample_path(NoiseSpec(1.0, seed=5), grid)
    # noise std 0.71 exceeds the whole ramp excursion per unit time (0.07)
    assert np.std(p.values) > 5 * RAMP.v


def test_trajectory_grid_spacing():
    g = trajectory_grid(30.0, 1.0)
    assert g[0] == 0 and g[-1] == 30.0
    assert np.max(np.diff(g)) <= 1.0 / 50 + 1e-12


def test_path_interpolation_stack():
    grid = np.linspace(0, 1, 5)
    vals = np.arange(10.0).reshape(2, 5)
    p = NoisePath(grid, vals)
    np.testing.assert_allclose(p(0.125), [0.5, 5.5])
    np.testing.assert_allclose(p(1.0), [4.0, 9.0])


def test_path_csv(tmp_path):
    p = ou_sample_path(NoiseSpec(0.1, seed=9), np.linspace(0, 1, 4))
    p.to_csv(tmp_path / "eta.csv")
    lines = (tmp_path / "eta.csv").read_text().splitlines()
    assert lines[0] == "t,eta" and len(lines) == 5


@settings(max_examples=50, deadline=None)
@given(st.floats(-3, 3), st.floats(-3, 3), st.floats(0.1, 50), st.floats(0, 1))
def test_field_piecewise_linear(h_i, h_f, t_f, frac):
    r = RampProtocol(h_i, h_f, t_f)
    t = frac * t_f
    assert field_at(r, t) == pytest.approx(h_i + (h_f - h_i) * frac, abs=1e-12)
    assert field_at(r, t_f * 2) == h_f
