"""Mode Hamiltonians, spectra and ground states of the transverse-field Ising chain.

Each positive quasimomentum ``k`` labels the 2x2 block acting on the paired
``(k, -k)`` sector, written in the basis ``|1> = (1, 0)``, ``|0> = (0, 1)``.
The standalone single-qubit battery ``H_B = -J sigma^x - h_i sigma^z`` lives
here as well since it is the same kind of object.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

SIGMA_X = np.array([[0.0, 1.0], [1.0, 0.0]])
SIGMA_Z = np.array([[1.0, 0.0], [0.0, -1.0]])

# Noise coupling in each mode block: h -> h + eta shifts the diagonal by 2*eta.
H1 = np.array([[2.0, 0.0], [0.0, -2.0]])


def quasimomenta(n_sites: int) -> np.ndarray:
    """Positive quasimomenta (2l - 1) pi / N, l = 1..N/2, of the even-parity sector."""
    if isinstance(n_sites, bool) or int(n_sites) != n_sites:
        raise ValueError(f"number of sites must be an integer, got {n_sites!r}")
    n_sites = int(n_sites)
    if n_sites < 2 or n_sites % 2:
        raise ValueError(f"number of sites must be even and >= 2, got {n_sites}")
    l = np.arange(1, n_sites // 2 + 1)
    return (2 * l - 1) * np.pi / n_sites


@dataclass(frozen=True)
class ChainSpec:
    n_sites: int
    h_i: float
    modes: np.ndarray = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        object.__setattr__(self, "modes", quasimomenta(self.n_sites))

    @property
    def n_modes(self) -> int:
        return self.n_sites // 2

    def battery_hamiltonians(self) -> np.ndarray:
        return mode_hamiltonian(self.modes, self.h_i)


def mode_hamiltonian(k, h) -> np.ndarray:
    """Real symmetric block [[2(h - cos k), 2 sin k], [2 sin k, -2(h - cos k)]].

    Broadcasts over ``k`` and ``h``; the trailing two axes are the matrix.
    """
    k = np.asarray(k, dtype=float)
    h = np.asarray(h, dtype=float)
    d = 2.0 * (h - np.cos(k))
    o = 2.0 * np.sin(k) * np.ones_like(d)
    return np.stack([np.stack([d, o], -1), np.stack([o, -d], -1)], -2)


def mode_spectrum(k, h):
    """Return ``(eps_minus, eps_plus)`` with eps_plus = 2 sqrt((h - cos k)^2 + sin^2 k)."""
    k = np.asarray(k, dtype=float)
    eps = 2.0 * np.hypot(h - np.cos(k), np.sin(k))
    return -eps, eps


@dataclass(frozen=True)
class ModeEigenSystem:
    eps_minus: float
    eps_plus: float
    a_k: float
    b_k: float
    norm: float

    @property
    def chi_minus(self) -> np.ndarray:
        return np.array([self.a_k, self.b_k])

    @property
    def chi_plus(self) -> np.ndarray:
        return np.array([-self.b_k, self.a_k])


def _ground_amplitudes(k, h):
    """(a, b, N_k) of the ground state, vectorised; stable when d >> |o|."""
    k = np.asarray(k, dtype=float)
    d = 2.0 * (h - np.cos(k))
    o = 2.0 * np.sin(k) * np.ones_like(d)
    eps = np.hypot(d, o)
    with np.errstate(divide="ignore", invalid="ignore"):
        a = np.where(d > 0, -(o * o) / (d + eps), d - eps)
    norm = np.hypot(a, o)
    # o = 0 and d > 0: the block is already diagonal and the ground state is |0>.
    degenerate = norm == 0
    safe = np.where(degenerate, 1.0, norm)
    a = np.where(degenerate, 0.0, a / safe)
    b = np.where(degenerate, 1.0, o / safe)
    return a, b, np.where(degenerate, 1.0, norm)


def mode_eigensystem(k: float, h: float) -> ModeEigenSystem:
    """Instantaneous eigenpair of one mode block.

    Ground state is ``a |1> + b |0>`` with a = (2(h - cos k) - eps)/N_k and
    b = 2 sin k / N_k, where eps = eps_plus; the gauge keeps b > 0 on (0, pi).
    """
    eps_m, eps_p = mode_spectrum(k, h)
    a, b, norm = _ground_amplitudes(k, h)
    return ModeEigenSystem(float(eps_m), float(eps_p), float(a), float(b), float(norm))


def _ground_vectors(k, h) -> np.ndarray:
    """Vectorised chi_minus for arrays of k, shape (..., 2)."""
    a, b, _ = _ground_amplitudes(k, h)
    return np.stack([a, b], -1)


def mode_ground_state(k, h) -> np.ndarray:
    """Projector onto the instantaneous ground state, complex (..., 2, 2)."""
    if np.ndim(k) == 0:
        chi = mode_eigensystem(float(k), float(h)).chi_minus
    else:
        chi = _ground_vectors(k, h)
    return np.einsum("...i,...j->...ij", chi, chi).astype(complex)


def mode_excited_state(k, h) -> np.ndarray:
    if np.ndim(k) == 0:
        chi = mode_eigensystem(float(k), float(h)).chi_plus
    else:
        g = _ground_vectors(k, h)
        chi = np.stack([-g[..., 1], g[..., 0]], -1)
    return np.einsum("...i,...j->...ij", chi, chi).astype(complex)


@dataclass(frozen=True)
class QubitBattery:
    h_i: float
    J: float = 1.0

    def __post_init__(self):
        if not self.J > 0:
            raise ValueError(f"J must be positive, got {self.J}")

    @property
    def omega_B(self) -> float:
        return float(np.hypot(self.J, self.h_i))

    @property
    def hamiltonian(self) -> np.ndarray:
        return np.array([[-self.h_i, -self.J], [-self.J, self.h_i]])

    def eigvec(self, sign: int) -> np.ndarray:
        """Normalised |+> (sign=+1) or |-> (sign=-1), energy sign * omega_B."""
        w = self.omega_B
        vec = np.array([self.h_i - sign * w, self.J])
        return vec / np.sqrt(2.0 * w * (w - sign * self.h_i))

    @property
    def ground_state(self) -> np.ndarray:
        v = self.eigvec(-1)
        return np.outer(v, v).astype(complex)


def qubit_battery(h_i: float, J: float = 1.0) -> QubitBattery:
    return QubitBattery(h_i=float(h_i), J=float(J))


def check_density_matrix(rho, *, herm_tol=1e-12, trace_tol=1e-10, eig_tol=1e-9) -> None:
    """Raise ``ValueError`` if ``rho`` (or any matrix in a stack) is not a valid state."""
    rho = np.asarray(rho)
    herm = np.max(np.abs(rho - np.swapaxes(rho.conj(), -1, -2)))
    if herm > herm_tol:
        raise ValueError(f"state is not Hermitian (deviation {herm:.3e})")
    tr = np.max(np.abs(np.trace(rho, axis1=-2, axis2=-1) - 1.0))
    if tr > trace_tol:
        raise ValueError(f"state trace deviates from 1 by {tr:.3e}")
    w = np.linalg.eigvalsh(0.5 * (rho + np.swapaxes(rho.conj(), -1, -2)))
    if w.min() < -eig_tol or w.max() > 1.0 + eig_tol:
        raise ValueError(f"state eigenvalues out of [0, 1]: [{w.min():.3e}, {w.max():.3e}]")


def purity(rho) -> np.ndarray:
    rho = np.asarray(rho)
    return np.einsum("...ij,...ji->...", rho, rho).real


def ground_energy_density(n_sites: int, h: float) -> float:
    """Finite-N ground-state energy per site from the mode sum."""
    eps_m, _ = mode_spectrum(quasimomenta(n_sites), h)
    return float(np.sum(eps_m) / n_sites)
