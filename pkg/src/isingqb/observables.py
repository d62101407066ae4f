"""Stored energy, ergotropy, efficiency and excitation probabilities.

Also the adiabatic (slow) approximation of the single-qubit stored energy and
the least-squares fit of the oscillations around it.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.integrate import cumulative_trapezoid, quad

from .model import mode_hamiltonian, _ground_vectors
from .protocol import RampProtocol

EFFICIENCY_THRESHOLD = 1e-12


def stored_energy_mode(rho_t, rho_0, h_batt) -> np.ndarray:
    """Tr[(rho(t) - rho(0)) H]; broadcasts over leading axes."""
    diff = np.asarray(rho_t) - np.asarray(rho_0)
    return np.einsum("...ij,...ji->...", diff, np.asarray(h_batt)).real


def stored_energy_per_site(mode_energies, n_sites: int):
    """Sum of per-mode stored energies over the last axis, divided by N."""
    mode_energies = np.asarray(mode_energies, dtype=float)
    if mode_energies.shape[-1] != n_sites // 2 or n_sites % 2:
        raise ValueError(f"expected {n_sites // 2} mode energies for N={n_sites}, got {mode_energies.shape[-1]}")
    return mode_energies.sum(-1) / n_sites


def passive_energy_2x2(rho, h) -> np.ndarray:
    """Energy of the passive state: largest population on the lowest level."""
    p = np.linalg.eigvalsh(np.asarray(rho))  # ascending
    e = np.linalg.eigvalsh(np.asarray(h))
    return p[..., 1] * e[..., 0] + p[..., 0] * e[..., 1]


def ergotropy_2x2(rho, h) -> np.ndarray:
    """Tr[rho H] minus the passive-state energy, for stacks of 2x2 states."""
    rho = np.asarray(rho)
    h = np.asarray(h)
    energy = np.einsum("...ij,...ji->...", rho, h).real
    return energy - passive_energy_2x2(rho, h)


def efficiency(ergotropy, d_e):
    """Ergotropy / stored energy, NaN where the stored energy is below 1e-12."""
    ergotropy = np.asarray(ergotropy, dtype=float)
    d_e = np.asarray(d_e, dtype=float)
    ok = d_e > EFFICIENCY_THRESHOLD
    out = np.full(np.broadcast(ergotropy, d_e).shape, np.nan)
    np.divide(ergotropy, d_e, out=out, where=ok)
    return out if out.ndim else float(out)


def excitation_probability(rho, k, h_i) -> np.ndarray:
    """<chi_plus|rho|chi_plus> with chi_plus the upper eigenvector of the mode block at h_i."""
    g = _ground_vectors(k, h_i)
    chi = np.stack([-g[..., 1], g[..., 0]], -1)
    return np.einsum("...i,...ij,...j->...", chi, np.asarray(rho), chi).real


@dataclass
class ObservableSeries:
    t: np.ndarray
    dE_per_site: np.ndarray
    ergotropy_per_site: np.ndarray
    efficiency: np.ndarray
    metadata: dict = field(default_factory=dict)


def chain_observables(t, ks, rho, h_i: float, metadata: dict | None = None) -> ObservableSeries:
    """Per-site stored energy, ergotropy and efficiency from mode states (n_t, n_k, 2, 2)."""
    ks = np.asarray(ks)
    n_sites = 2 * ks.size
    h_batt = mode_hamiltonian(ks, h_i)
    d_e = stored_energy_per_site(stored_energy_mode(rho, rho[0], h_batt), n_sites)
    erg = ergotropy_2x2(rho, h_batt).sum(-1) / n_sites
    return ObservableSeries(np.asarray(t), d_e, erg, efficiency(erg, d_e), dict(metadata or {}))


# ---------------------------------------------------------------------------
# single-qubit adiabatic analysis


def instantaneous_frequency(protocol: RampProtocol, J: float, t):
    """Omega(t) = 2 sqrt(J^2 + h(t)^2), the instantaneous gap."""
    return 2.0 * np.hypot(J, protocol.field(t))


def adiabatic_energy(protocol: RampProtocol, J: float, t):
    """Stored energy if the qubit followed the instantaneous ground state exactly."""
    h = protocol.field(t)
    h_i = protocol.h_i
    w_t = np.hypot(J, h)
    w_i = np.hypot(J, h_i)
    return -h_i * (h / w_t - h_i / w_i) - J**2 * (1.0 / w_t - 1.0 / w_i)


def phase_integral(protocol: RampProtocol, J: float, t):
    """phi(t) = integral of Omega over [0, t], by adaptive quadrature (vectorised over t).

    The integrand is split at t_f, where it has a kink.
    """
    t_arr = np.atleast_1d(np.asarray(t, dtype=float))
    if np.any(t_arr < 0):
        raise ValueError("phase requested at negative time")
    om = lambda s: 2.0 * np.hypot(J, protocol.field(s))
    om_f = 2.0 * np.hypot(J, protocol.h_f)
    ramp_total = quad(om, 0.0, protocol.t_f, epsabs=1e-13, epsrel=1e-12)[0] if protocol.t_f > 0 else 0.0
    out = np.empty_like(t_arr)
    for j, tt in enumerate(t_arr):
        if tt <= protocol.t_f:
            out[j] = quad(om, 0.0, tt, epsabs=1e-13, epsrel=1e-12)[0]
        else:
            out[j] = ramp_total + om_f * (tt - protocol.t_f)
    return out if np.ndim(t) else float(out[0])


def phase_series(protocol: RampProtocol, J: float, t) -> np.ndarray:
    """Cumulative trapezoid phase on a fine grid; cheaper than ``phase_integral`` for long series."""
    t = np.asarray(t, dtype=float)
    return cumulative_trapezoid(instantaneous_frequency(protocol, J, t), t, initial=0.0) + (
        phase_integral(protocol, J, t[0]) if t[0] > 0 else 0.0
    )


class DegenerateFitError(ValueError):
    pass


@dataclass(frozen=True)
class AdiabaticDecomposition:
    t: np.ndarray
    dE_slow: np.ndarray
    phase: np.ndarray
    A_fit: float
    phi_0: float
    residual: float

    def ansatz(self) -> np.ndarray:
        return self.dE_slow + self.A_fit * np.cos(self.phase - self.phi_0)


def fit_oscillations(t, d_e_numeric, d_e_slow, phase, window=None) -> AdiabaticDecomposition:
    """Least-squares fit of d_e_numeric - d_e_slow to A cos(phase - phi_0).

    Linear in the regressors cos(phase), sin(phase); A >= 0 and phi_0 in (-pi, pi].
    ``window`` = (t_start, t_end) restricts the fitted samples.
    """
    t = np.asarray(t, dtype=float)
    d_e_numeric = np.asarray(d_e_numeric, dtype=float)
    d_e_slow = np.asarray(d_e_slow, dtype=float)
    phase = np.asarray(phase, dtype=float)
    mask = np.ones(t.shape, bool)
    if window is not None:
        mask = (t >= window[0]) & (t <= window[1])
    if mask.sum() < 3 or np.ptp(phase[mask]) < np.pi:
        raise DegenerateFitError("phase span in the fit window is below pi; amplitude and phase are not identifiable")
    resid_target = (d_e_numeric - d_e_slow)[mask]
    design = np.column_stack([np.cos(phase[mask]), np.sin(phase[mask])])
    (c, s), *_ = np.linalg.lstsq(design, resid_target, rcond=None)
    amp = float(np.hypot(c, s))
    phi_0 = float(np.arctan2(s, c))
    rms = float(np.sqrt(np.mean((resid_target - design @ np.array([c, s])) ** 2)))
    return AdiabaticDecomposition(t, d_e_slow, phase, amp, phi_0, rms)


def ground_energy_density_limit(h: float) -> float:
    """Thermodynamic-limit ground energy per site, -(1/pi) int_0^pi sqrt(1 + h^2 - 2h cos k) dk."""
    val, _ = quad(lambda k: np.sqrt(1.0 + h * h - 2.0 * h * np.cos(k)), 0.0, np.pi, epsabs=1e-13)
    return -val / np.pi
