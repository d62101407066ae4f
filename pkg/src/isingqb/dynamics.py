"""Time evolution of the qubit and of the chain's mode blocks.

Mode evolutions are batched: every function taking ``ks`` integrates all modes
as one ODE system and returns arrays shaped ``(n_t, n_k, 2, 2)``.  The ramp
has a kink at ``t_f``, so integration is always split there.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, replace
from functools import reduce

import numpy as np
import scipy.sparse as sp
from scipy.integrate import solve_ivp

from .model import H1, _ground_vectors, mode_ground_state, qubit_battery
from .protocol import NoisePath, NoiseSpec, RampProtocol

log = logging.getLogger(__name__)

MAX_ORACLE_SITES = 10


class IntegrationError(RuntimeError):
    pass


@dataclass(frozen=True)
class IntegratorSettings:
    """``method`` is a ``solve_ivp`` method name or ``"RK4"`` (fixed step ``max_step``)."""

    rtol: float = 1e-9
    atol: float = 1e-12
    max_step: float = np.inf
    method: str = "DOP853"

    def __post_init__(self):
        if not (self.rtol > 0 and self.atol > 0):
            raise ValueError("rtol and atol must be positive")
        if not self.max_step > 0:
            raise ValueError("max_step must be positive")
        if self.method == "RK4" and not np.isfinite(self.max_step):
            raise ValueError("RK4 needs a finite max_step (the fixed step size)")


DEFAULT_SETTINGS = IntegratorSettings()
QUBIT_SETTINGS = IntegratorSettings(method="RK4", max_step=1e-3)


def _batched(settings: IntegratorSettings, n_blocks: int) -> IntegratorSettings:
    """Tolerances for ``n_blocks`` independent systems stacked into one ODE.

    solve_ivp controls the RMS error over all components, so each block could
    drift sqrt(n_blocks) times further than in a solo solve; shrink to compensate.
    """
    if n_blocks <= 1:
        return settings
    f = np.sqrt(n_blocks)
    return replace(settings, rtol=settings.rtol / f, atol=settings.atol / f)


def _check_grid(t_grid) -> np.ndarray:
    t_grid = np.asarray(t_grid, dtype=float)
    if t_grid.ndim != 1 or t_grid.size == 0:
        raise ValueError("t_grid must be a non-empty 1-d array")
    if t_grid[0] < 0 or np.any(np.diff(t_grid) <= 0):
        raise ValueError("t_grid must be non-negative and strictly increasing")
    return t_grid


def _segments(protocol: RampProtocol, t_grid: np.ndarray):
    """Split [0, t_grid[-1]] at t_f; yield (t0, t1, mask of t_grid inside)."""
    t_end = t_grid[-1]
    cuts = [0.0]
    if 0.0 < protocol.t_f < t_end:
        cuts.append(protocol.t_f)
    cuts.append(t_end)
    for j, (t0, t1) in enumerate(zip(cuts[:-1], cuts[1:])):
        last = j == len(cuts) - 2
        mask = (t_grid >= t0) & ((t_grid <= t1) if last else (t_grid < t1))
        yield t0, t1, mask


def _field_on_segment(protocol: RampProtocol, t0: float):
    # Within a segment the field is smooth; evaluate the branch chosen at its start.
    if protocol.is_sudden or t0 >= protocol.t_f:
        return lambda t: protocol.h_f
    v = protocol.v
    return lambda t: protocol.h_i + v * t


def _solve(rhs, y0, t0, t1, t_eval, settings: IntegratorSettings):
    """Integrate on [t0, t1]; return (states at t_eval, state at t1)."""
    if t1 <= t0:
        return np.repeat(y0[None, :], len(t_eval), 0), y0
    tail = len(t_eval) == 0 or t_eval[-1] != t1

    # A NaN in the error estimate makes the step-size loop spin forever.
    def checked(t, y):
        dy = rhs(t, y)
        if not np.all(np.isfinite(dy)):
            raise IntegrationError(
                f"non-finite derivative at t={t} ({settings.method}, rtol={settings.rtol}, atol={settings.atol})"
            )
        return dy

    sol = solve_ivp(
        checked,
        (t0, t1),
        y0,
        method=settings.method,
        t_eval=np.append(t_eval, t1) if tail else t_eval,
        rtol=settings.rtol,
        atol=settings.atol,
        max_step=settings.max_step,
    )
    if not sol.success:
        raise IntegrationError(
            f"{settings.method} failed on [{t0}, {t1}] (rtol={settings.rtol}, atol={settings.atol}): {sol.message}"
        )
    ys = sol.y.T
    return (ys[:-1] if tail else ys), ys[-1]


def _integrate(make_rhs, y0, protocol, t_grid, settings):
    """Run ``make_rhs(field)`` segment by segment; rows of output match t_grid."""
    out = np.empty((t_grid.size, y0.size), dtype=y0.dtype)
    y = y0
    for t0, t1, mask in _segments(protocol, t_grid):
        rhs = make_rhs(_field_on_segment(protocol, t0))
        ys, y = _solve(rhs, y, t0, t1, t_grid[mask], settings)
        out[mask] = ys
    return out


def _commutator(a, b):
    return a @ b - b @ a


# ---------------------------------------------------------------------------
# single qubit


@dataclass(frozen=True)
class QubitSeries:
    """Bloch-like components u = rho00 - rho11, x = rho01 + rho10, y = -i(rho01 - rho10)."""

    t: np.ndarray
    u: np.ndarray
    x: np.ndarray
    y: np.ndarray

    def density_matrices(self) -> np.ndarray:
        rho01 = 0.5 * (self.x + 1j * self.y)
        rho = np.empty((self.t.size, 2, 2), dtype=complex)
        rho[:, 0, 0] = 0.5 * (1 + self.u)
        rho[:, 1, 1] = 0.5 * (1 - self.u)
        rho[:, 0, 1] = rho01
        rho[:, 1, 0] = rho01.conj()
        return rho

    def stored_energy(self, h_i: float, J: float = 1.0) -> np.ndarray:
        return -h_i * (self.u - self.u[0]) - J * (self.x - self.x[0])

    @property
    def norm(self) -> np.ndarray:
        return self.u**2 + self.x**2 + self.y**2


def qubit_initial_uxy(h_i: float, J: float = 1.0) -> tuple[float, float, float]:
    w = qubit_battery(h_i, J).omega_B
    return h_i / w, J / w, 0.0


def _rk4_uxy(state, t, dt, field, J):
    def f(s, tt):
        u, x, y = s
        h = field(tt)
        return (2.0 * J * y, -2.0 * h * y, -2.0 * J * u + 2.0 * h * x)

    k1 = f(state, t)
    k2 = f(tuple(s + 0.5 * dt * k for s, k in zip(state, k1)), t + 0.5 * dt)
    k3 = f(tuple(s + 0.5 * dt * k for s, k in zip(state, k2)), t + 0.5 * dt)
    k4 = f(tuple(s + dt * k for s, k in zip(state, k3)), t + dt)
    return tuple(s + dt / 6.0 * (a + 2 * b + 2 * c + d) for s, a, b, c, d in zip(state, k1, k2, k3, k4))


def evolve_qubit_uxy(protocol: RampProtocol, t_grid, J: float = 1.0, settings: IntegratorSettings = QUBIT_SETTINGS,
                     initial=None) -> QubitSeries:
    """Integrate u' = 2Jy, x' = -2hy, y' = -2Ju + 2hx from the ground state of H_B.

    Fixed-step RK4 by default: each output interval (and the ramp end) is cut
    into equal substeps no longer than ``settings.max_step``.  Any other method
    name goes through ``solve_ivp``.
    """
    t_grid = _check_grid(t_grid)
    state = qubit_initial_uxy(protocol.h_i, J) if initial is None else tuple(float(c) for c in initial)

    if settings.method != "RK4":
        def make_rhs(field):
            def rhs(t, s):
                h = field(t)
                return [2.0 * J * s[2], -2.0 * h * s[2], -2.0 * J * s[0] + 2.0 * h * s[1]]
            return rhs
        ys = _integrate(make_rhs, np.array(state, dtype=float), protocol, t_grid, settings)
        return QubitSeries(t_grid, ys[:, 0], ys[:, 1], ys[:, 2])

    nodes = np.union1d(np.concatenate([[0.0], t_grid]), [protocol.t_f] if 0 < protocol.t_f < t_grid[-1] else [])
    out = np.empty((t_grid.size, 3))
    out_idx = {t: i for i, t in enumerate(t_grid)}
    if 0.0 in out_idx:
        out[out_idx[0.0]] = state
    for t0, t1 in zip(nodes[:-1], nodes[1:]):
        field = _field_on_segment(protocol, t0)
        n_sub = max(1, int(np.ceil((t1 - t0) / settings.max_step - 1e-9)))
        dt = (t1 - t0) / n_sub
        for j in range(n_sub):
            state = _rk4_uxy(state, t0 + j * dt, dt, field, J)
        if t1 in out_idx:
            out[out_idx[t1]] = state
    return QubitSeries(t_grid, out[:, 0], out[:, 1], out[:, 2])


# ---------------------------------------------------------------------------
# chain modes


def _as_modes(ks):
    ks = np.atleast_1d(np.asarray(ks, dtype=float))
    if np.any((ks <= 0) | (ks >= np.pi)):
        raise ValueError("quasimomenta must lie strictly inside (0, pi)")
    return ks


def _projectors(psi) -> np.ndarray:
    """Normalised |psi><psi| for spinors (..., 2)."""
    norm = np.einsum("...i,...i->...", psi.conj(), psi).real
    return np.einsum("...i,...j->...ij", psi, psi.conj()) / norm[..., None, None]


def evolve_modes_noiseless(ks, protocol: RampProtocol, t_grid, settings: IntegratorSettings = DEFAULT_SETTINGS,
                           psi0=None) -> np.ndarray:
    """Unitary evolution of every mode from its ground state at h_i.

    The pure state is integrated as a spinor (equivalent to the von Neumann
    equation for rho = |psi><psi|), which keeps rho exactly pure.  Returns rho
    with shape (n_t, n_k, 2, 2).
    """
    ks = _as_modes(ks)
    t_grid = _check_grid(t_grid)
    if psi0 is None:
        psi0 = _ground_vectors(ks, protocol.h_i)
    n = ks.size
    cos_k, sin_k = np.cos(ks), np.sin(ks)

    def make_rhs(field):
        def rhs(t, y):
            psi = y.reshape(n, 2)
            d = 2.0 * (field(t) - cos_k)
            o = 2.0 * sin_k
            return (-1j * np.stack([d * psi[:, 0] + o * psi[:, 1], o * psi[:, 0] - d * psi[:, 1]], -1)).ravel()
        return rhs

    ys = _integrate(make_rhs, np.asarray(psi0, dtype=complex).ravel(), protocol, t_grid, _batched(settings, ks.size))
    return _projectors(ys.reshape(t_grid.size, n, 2))


def _blocks(d, o):
    H = np.empty(d.shape + (2, 2))
    H[..., 0, 0] = d
    H[..., 1, 1] = -d
    H[..., 0, 1] = o
    H[..., 1, 0] = o
    return H


def evolve_mode_noiseless(k: float, protocol: RampProtocol, t_grid, settings: IntegratorSettings = DEFAULT_SETTINGS):
    return evolve_modes_noiseless([k], protocol, t_grid, settings)[:, 0]


@dataclass(frozen=True)
class ModeSeries:
    """Ensemble-averaged states ``rho`` and memory matrices ``gamma``, both (n_t, n_k, 2, 2)."""

    t: np.ndarray
    ks: np.ndarray
    rho: np.ndarray
    gamma: np.ndarray


def evolve_modes_noisy_averaged(ks, protocol: RampProtocol, noise: NoiseSpec, t_grid,
                                settings: IntegratorSettings = DEFAULT_SETTINGS, rho0=None, gamma0=None,
                                propagate_kernel: bool = False) -> ModeSeries:
    """Noise-averaged mode dynamics with an exponential memory kernel.

        rho'   = -i[H0(t), rho] - xi^2/(2 tau) [H1, Gamma]
        Gamma' = -Gamma / tau + [H1, rho]

    Starts from the ground state at h_i with Gamma = 0; the state carries over
    unchanged from the ramp to the plateau.

    With ``propagate_kernel`` the memory matrix also rotates under H0
    (an extra ``-i[H0, Gamma]`` in Gamma'), which is the second-order
    closure that the trajectory average actually follows when the mode gap
    is large compared to 1/tau.  The default keeps the kernel frozen.
    """
    ks = _as_modes(ks)
    t_grid = _check_grid(t_grid)
    n = ks.size
    if rho0 is None:
        rho0 = mode_ground_state(ks, protocol.h_i)
    if gamma0 is None:
        gamma0 = np.zeros((n, 2, 2), dtype=complex)
    strength = noise.variance
    inv_tau = 1.0 / noise.tau_n
    cos_k, sin_k = np.cos(ks), np.sin(ks)

    def make_rhs(field):
        def rhs(t, y):
            rho = y[: 4 * n].reshape(n, 2, 2)
            gam = y[4 * n:].reshape(n, 2, 2)
            H = _blocks(2.0 * (field(t) - cos_k), 2.0 * sin_k)
            drho = -1j * _commutator(H, rho) - strength * _commutator(H1, gam)
            dgam = -inv_tau * gam + _commutator(H1, rho)
            if propagate_kernel:
                dgam = dgam - 1j * _commutator(H, gam)
            return np.concatenate([drho.ravel(), dgam.ravel()])
        return rhs

    y0 = np.concatenate([np.asarray(rho0, dtype=complex).ravel(), np.asarray(gamma0, dtype=complex).ravel()])
    ys = _integrate(make_rhs, y0, protocol, t_grid, _batched(settings, ks.size))
    rho = ys[:, : 4 * n].reshape(t_grid.size, n, 2, 2)
    gam = ys[:, 4 * n:].reshape(t_grid.size, n, 2, 2)
    return ModeSeries(t_grid, ks, rho, gam)


def evolve_mode_noisy_averaged(k: float, protocol: RampProtocol, noise: NoiseSpec, t_grid,
                               settings: IntegratorSettings = DEFAULT_SETTINGS, propagate_kernel: bool = False) -> ModeSeries:
    return evolve_modes_noisy_averaged([k], protocol, noise, t_grid, settings, propagate_kernel=propagate_kernel)


def evolve_modes_trajectories(ks, protocol: RampProtocol, path: NoisePath, t_grid,
                              settings: IntegratorSettings = DEFAULT_SETTINGS) -> np.ndarray:
    """Unitary evolution of every mode under h(t) + eta(t), one global eta per path.

    Spinors are integrated, as in ``evolve_modes_noiseless``.  The noise is linear between path nodes, so the integrator restarts at every
    node (and at t_f) and the field stays smooth inside each interval.  Returns
    (n_t, n_paths, n_k, 2, 2); a 1-d ``path`` counts as one path.
    """
    ks = _as_modes(ks)
    t_grid = _check_grid(t_grid)
    if t_grid[-1] > path.grid[-1] or path.grid[0] > 0:
        raise ValueError("noise path grid must cover [0, t_grid[-1]]")
    eta = np.atleast_2d(path.values)
    m, n = eta.shape[0], ks.size
    cos_k, sin_k = np.cos(ks), np.sin(ks)
    off = np.broadcast_to(2.0 * sin_k, (m, n))

    nodes = path.grid[path.grid <= t_grid[-1]]
    extra = [protocol.t_f] if 0 < protocol.t_f < t_grid[-1] else []
    nodes = np.union1d(np.union1d(nodes, t_grid), np.concatenate([[0.0], extra]))
    eta_nodes = NoisePath(path.grid, eta)(nodes)  # (m, n_nodes)

    psi = np.broadcast_to(_ground_vectors(ks, protocol.h_i), (m, n, 2)).astype(complex)
    out = np.empty((t_grid.size, m, n, 2), dtype=complex)
    where = {t: i for i, t in enumerate(t_grid)}
    if 0.0 in where:
        out[where[0.0]] = psi
    y = psi.ravel()
    tol = _batched(settings, m * n)
    for j in range(nodes.size - 1):
        t0, t1 = nodes[j], nodes[j + 1]
        field = _field_on_segment(protocol, t0)
        e0 = eta_nodes[:, j, None]
        slope = (eta_nodes[:, j + 1, None] - e0) / (t1 - t0)

        def rhs(t, y, field=field, e0=e0, slope=slope, t0=t0):
            p = y.reshape(m, n, 2)
            d = 2.0 * (field(t) + e0 + slope * (t - t0) - cos_k)
            return (-1j * np.stack([d * p[..., 0] + off * p[..., 1], off * p[..., 0] - d * p[..., 1]], -1)).ravel()

        sol = solve_ivp(rhs, (t0, t1), y, method=tol.method, rtol=tol.rtol, atol=tol.atol, max_step=tol.max_step)
        if not sol.success:
            raise IntegrationError(f"trajectory integration failed on [{t0}, {t1}]: {sol.message}")
        y = sol.y[:, -1]
        if t1 in where:
            out[where[t1]] = y.reshape(m, n, 2)
    return _projectors(out)


def evolve_mode_trajectory(k: float, protocol: RampProtocol, path: NoisePath, t_grid,
                           settings: IntegratorSettings = DEFAULT_SETTINGS) -> np.ndarray:
    """One mode under one or many noise paths: (n_t, 2, 2) or (n_t, n_paths, 2, 2)."""
    out = evolve_modes_trajectories([k], protocol, path, t_grid, settings)[:, :, 0]
    return out[:, 0] if path.values.ndim == 1 else out


# ---------------------------------------------------------------------------
# exact spin-chain oracle


def _site_op(op, j, n):
    mats = [sp.identity(2, format="csr")] * n
    mats[j] = sp.csr_matrix(op)
    return reduce(lambda a, b: sp.kron(a, b, format="csr"), mats)


def spin_chain_terms(n_sites: int):
    """Return (H_xx, H_z) with H(h) = H_xx + h * H_z for -sum sx sx - h sum sz, periodic."""
    sx = np.array([[0.0, 1.0], [1.0, 0.0]])
    sz = np.array([[1.0, 0.0], [0.0, -1.0]])
    xs = [_site_op(sx, j, n_sites) for j in range(n_sites)]
    zs = [_site_op(sz, j, n_sites) for j in range(n_sites)]
    h_xx = -sum(xs[j] @ xs[(j + 1) % n_sites] for j in range(n_sites))
    h_z = -sum(zs)
    return h_xx.tocsr(), h_z.tocsr()


def parity_diagonal(n_sites: int) -> np.ndarray:
    """Diagonal of prod_j sigma^z_j in the computational basis."""
    bits = (np.arange(2**n_sites)[:, None] >> np.arange(n_sites)[None, :]) & 1
    return np.where(bits.sum(1) % 2 == 0, 1.0, -1.0)


def exact_chain_oracle(n_sites: int, protocol: RampProtocol, t_grid,
                       settings: IntegratorSettings = IntegratorSettings(rtol=1e-10, atol=1e-12)) -> np.ndarray:
    """Stored energy per site from direct 2^N Schrodinger evolution of the spin chain.

    The start is the global ground state of H(h_i), which must be parity-even.
    """
    if n_sites > MAX_ORACLE_SITES:
        raise ValueError(f"exact oracle limited to N <= {MAX_ORACLE_SITES}, got {n_sites}")
    if n_sites < 2 or n_sites % 2:
        raise ValueError(f"number of sites must be even and >= 2, got {n_sites}")
    t_grid = _check_grid(t_grid)
    h_xx, h_z = spin_chain_terms(n_sites)
    h_batt = (h_xx + protocol.h_i * h_z).toarray()
    energies, vecs = np.linalg.eigh(h_batt)
    if energies[1] - energies[0] < 1e-10:
        raise ValueError("ground state of the battery Hamiltonian is degenerate")
    psi0 = vecs[:, 0].astype(complex)
    parity = float(np.real(np.vdot(psi0, parity_diagonal(n_sites) * psi0)))
    if parity < 1 - 1e-8:
        raise ValueError(f"ground state is not parity-even (<P> = {parity:.6f})")

    def make_rhs(field):
        def rhs(t, psi):
            return -1j * (h_xx @ psi + field(t) * (h_z @ psi))
        return rhs

    psis = _integrate(make_rhs, psi0, protocol, t_grid, settings)
    e = np.einsum("ti,ij,tj->t", psis.conj(), h_batt, psis).real
    norms = np.einsum("ti,ti->t", psis.conj(), psis).real
    return (e / norms - energies[0]) / n_sites
