import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy.stats import unitary_group

from isingqb.dynamics import evolve_modes_noiseless, evolve_modes_noisy_averaged, evolve_qubit_uxy
from isingqb.model import (
    mode_excited_state,
    mode_ground_state,
    mode_hamiltonian,
    mode_spectrum,
    quasimomenta,
)
from isingqb.observables import (
    DegenerateFitError,
    adiabatic_energy,
    chain_observables,
    efficiency,
    ergotropy_2x2,
    excitation_probability,
    fit_oscillations,
    instantaneous_frequency,
    passive_energy_2x2,
    phase_integral,
    phase_series,
    stored_energy_mode,
    stored_energy_per_site,
)
from isingqb.protocol import NoiseSpec, RampProtocol

RAMP = RampProtocol(0.8, 1.5, 10.0)
K, H = np.pi / 3, 0.8


def _random_state(draw_seed):
    rng = np.random.default_rng(draw_seed)
    w = rng.random(2)
    w /= w.sum()
    u = unitary_group.rvs(2, random_state=rng)
    return u @ np.diag(w) @ u.conj().T


def test_stored_energy_examples():
    g = mode_ground_state(K, H)
    e = mode_excited_state(K, H)
    hb = mode_hamiltonian(K, H)
    _, ep = mode_spectrum(K, H)
    assert stored_energy_mode(g, g, hb) == pytest.approx(0.0, abs=1e-14)
    assert stored_energy_mode(e, g, hb) == pytest.approx(2 * ep)
    assert stored_energy_mode(np.eye(2) / 2, g, hb) == pytest.approx(ep)


def test_stored_energy_per_site_checks_length():
    assert stored_energy_per_site(np.ones(3), 6) == pytest.approx(0.5)
    with pytest.raises(ValueError):
        stored_energy_per_site(np.ones(3), 8)
    with pytest.raises(ValueError):
        stored_energy_per_site(np.ones(3), 7)


def test_ergotropy_examples():
    g = mode_ground_state(K, H)
    e = mode_excited_state(K, H)
    hb = mode_hamiltonian(K, H)
    _, ep = mode_spectrum(K, H)
    assert ergotropy_2x2(g, hb) == pytest.approx(0.0, abs=1e-12)
    assert ergotropy_2x2(e, hb) == pytest.approx(2 * ep)
    assert ergotropy_2x2(np.eye(2) / 2, hb) == pytest.approx(0.0, abs=1e-14)
    assert passive_energy_2x2(e, hb) == pytest.approx(-ep)


@settings(max_examples=100, deadline=None)
@given(st.integers(0, 2**32 - 1), st.floats(0.05, np.pi - 0.05), st.floats(-3, 3))
def test_ergotropy_bounds(seed, k, h):
    rho = _random_state(seed)
    hb = mode_hamiltonian(k, h)
    g = mode_ground_state(k, h)
    erg = ergotropy_2x2(rho, hb)
    d_e = stored_energy_mode(rho, g, hb)
    assert -1e-12 <= erg <= d_e + 1e-12


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_passive_energy_unitarily_invariant(seed):
    rho = _random_state(seed)
    hb = mode_hamiltonian(1.1, 0.4)
    u = unitary_group.rvs(2, random_state=np.random.default_rng(seed + 1))
    rot = u @ rho @ u.conj().T
    assert passive_energy_2x2(rot, hb) == pytest.approx(passive_energy_2x2(rho, hb), abs=1e-12)


def test_efficiency_sentinel():
    assert np.isnan(efficiency(0.0, 0.0))
    assert np.isnan(efficiency(1e-14, 1e-13))
    assert efficiency(0.5, 1.0) == 0.5
    out = efficiency(np.array([1.0, 0.0]), np.array([2.0, 0.0]))
    assert out[0] == 0.5 and np.isnan(out[1])


def test_excitation_probability_examples():
    ks = quasimomenta(10)
    g = mode_ground_state(ks, H)
    np.testing.assert_allclose(excitation_probability(g, ks, H), 0.0, atol=1e-14)
    np.testing.assert_allclose(excitation_probability(mode_excited_state(ks, H), ks, H), 1.0)
    mixed = np.broadcast_to(np.eye(2) / 2, g.shape)
    np.testing.assert_allclose(excitation_probability(mixed, ks, H), 0.5)


def test_adiabatic_energy_zero_at_start():
    assert adiabatic_energy(RAMP, 1.0, 0.0) == pytest.approx(0.0, abs=1e-15)


def test_adiabatic_energy_matches_eigenvector_route():
    # Independent route: <g(t)| H_B |g(t)> - E_0 with g(t) from numerical diagonalisation.
    hb = np.array([[-0.8, -1.0], [-1.0, 0.8]])
    for t in (2.0, 7.5, 20.0):
        h = RAMP.field(t)
        _, v = np.linalg.eigh(np.array([[-h, -1.0], [-1.0, h]]))
        g = v[:, 0]
        e0 = np.linalg.eigvalsh(hb)[0]
        assert adiabatic_energy(RAMP, 1.0, t) == pytest.approx(g @ hb @ g - e0, abs=1e-13)


def test_phase_integral_constant_field():
    flat = RampProtocol(1.5, 1.5, 0.0)
    om = 2 * np.hypot(1.0, 1.5)
    np.testing.assert_allclose(phase_integral(flat, 1.0, [1.0, 4.0]), [om, 4 * om])


@pytest.mark.parametrize("J", [1.0, 0.7])
def test_phase_integral_closed_form(J):
    # Antiderivative of 2 sqrt(J^2 + h^2) dh / v.
    def prim(h):
        return h * np.hypot(J, h) + J**2 * np.arcsinh(h / J)

    for t in (3.0, 10.0):
        expected = (prim(RAMP.field(t)) - prim(RAMP.h_i)) / RAMP.v
        assert phase_integral(RAMP, J, t) == pytest.approx(expected, rel=1e-11)
    tail = phase_integral(RAMP, J, 25.0) - phase_integral(RAMP, J, 10.0)
    assert tail == pytest.approx(2 * np.hypot(J, 1.5) * 15.0, rel=1e-12)


def test_phase_integral_bounds_on_ramp():
    ph = phase_integral(RAMP, 1.0, 10.0)
    lo = instantaneous_frequency(RAMP, 1.0, 0.0) * 10
    hi = instantaneous_frequency(RAMP, 1.0, 10.0) * 10
    assert lo < ph < hi


def test_phase_series_matches_quadrature():
    t = np.linspace(0, 30, 30001)
    np.testing.assert_allclose(phase_series(RAMP, 1.0, t)[::1000], phase_integral(RAMP, 1.0, t[::1000]), atol=1e-6)


def test_fit_recovers_synthetic_signal():
    t = np.linspace(0, 10, 2001)
    phase = phase_integral(RAMP, 1.0, t)
    slow = adiabatic_energy(RAMP, 1.0, t)
    fit = fit_oscillations(t, slow + 0.01 * np.cos(phase - 0.3), slow, phase)
    assert fit.A_fit == pytest.approx(0.01, abs=1e-6)
    assert fit.phi_0 == pytest.approx(0.3, abs=1e-6)
    assert fit.residual < 1e-12
    np.testing.assert_allclose(fit.ansatz(), slow + 0.01 * np.cos(phase - 0.3), atol=1e-10)


def test_fit_rejects_short_window():
    t = np.linspace(0, 0.2, 50)
    phase = 2.0 * t
    with pytest.raises(DegenerateFitError):
        fit_oscillations(t, np.zeros_like(t), np.zeros_like(t), phase)
    t = np.linspace(0, 10, 100)
    with pytest.raises(DegenerateFitError):
        fit_oscillations(t, t, t, 2 * t, window=(20.0, 30.0))


def _plateau_peak(t, signal):
    dt = t[1] - t[0]
    x = signal - signal.mean()
    n = 16 * x.size
    spec = np.abs(np.fft.rfft(x * np.hanning(x.size), n))
    freqs = 2 * np.pi * np.fft.rfftfreq(n, dt)
    return freqs[np.argmax(spec)]


def test_qubit_plateau_frequency():
    t = np.linspace(10, 110, 5001)
    s = evolve_qubit_uxy(RAMP, t)
    peak = _plateau_peak(t, s.stored_energy(0.8, 1.0))
    assert peak == pytest.approx(2 * np.sqrt(1 + 1.5**2), rel=0.01)


def test_chain_plateau_converges_in_size():
    t = np.linspace(0, 30, 301)
    plateau = []
    for n in (150, 300):
        ks = quasimomenta(n)
        obs = chain_observables(t, ks, evolve_modes_noiseless(ks, RAMP, t), 0.8)
        plateau.append(obs.dE_per_site[t >= 20].mean())
    assert plateau[0] == pytest.approx(plateau[1], rel=0.01)


def test_chain_oscillation_smaller_than_qubit():
    t = np.linspace(10, 30, 401)
    ks = quasimomenta(300)
    chain = chain_observables(t, ks, evolve_modes_noiseless(ks, RAMP, np.r_[0.0, t])[1:], 0.8).dE_per_site
    qubit = evolve_qubit_uxy(RAMP, t).stored_energy(0.8, 1.0)
    assert np.ptp(chain) < np.ptp(qubit)


@pytest.mark.parametrize("h_i,direction", [(0.8, +1), (-1.5, -1)])
def test_noise_direction(h_i, direction):
    # Strong noise drives modes toward the maximally mixed state; relative to the
    # noiseless value this raises the stored energy for a weak quench and lowers it for a strong one.
    prot = RampProtocol(h_i, 1.5, 10.0)
    ks = quasimomenta(100)
    t = np.array([0.0, 30.0])
    clean = chain_observables(t, ks, evolve_modes_noiseless(ks, prot, t), h_i).dE_per_site[-1]
    noisy = evolve_modes_noisy_averaged(ks, prot, NoiseSpec(1.0), t).rho
    d_noisy = chain_observables(t, ks, noisy, h_i).dE_per_site[-1]
    assert direction * (d_noisy - clean) > 0
