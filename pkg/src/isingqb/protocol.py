"""Charging ramp h(t) and Ornstein-Uhlenbeck field noise."""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path

import numpy as np


@dataclass(frozen=True)
class RampProtocol:
    """Linear ramp from ``h_i`` to ``h_f`` over ``[0, t_f]``, constant afterwards.

    ``t_f = 0`` is a sudden quench: h(0) = h_i and h(t) = h_f for t > 0.
    """

    h_i: float
    h_f: float
    t_f: float

    def __post_init__(self):
        if not np.all(np.isfinite([self.h_i, self.h_f, self.t_f])):
            raise ValueError("ramp parameters must be finite")
        if not self.t_f >= 0:
            raise ValueError(f"t_f must be >= 0, got {self.t_f}")

    @property
    def v(self) -> float | None:
        if self.t_f == 0:
            return None
        return (self.h_f - self.h_i) / self.t_f

    @property
    def is_sudden(self) -> bool:
        return self.t_f == 0

    def field(self, t):
        """Vectorised field without the sign check on ``t``."""
        t = np.asarray(t, dtype=float)
        if self.is_sudden:
            out = np.where(t > 0, self.h_f, self.h_i)
        else:
            out = np.where(t < self.t_f, self.h_i + self.v * t, self.h_f)
        return out if out.ndim else float(out)

    def rate(self, t):
        """dh/dt; zero on the plateau."""
        t = np.asarray(t, dtype=float)
        v = 0.0 if self.is_sudden else self.v
        out = np.where(t < self.t_f, v, 0.0)
        return out if out.ndim else float(out)


def field_at(protocol: RampProtocol, t):
    if np.any(np.asarray(t) < 0):
        raise ValueError("field requested at negative time")
    return protocol.field(t)


@dataclass(frozen=True)
class NoiseSpec:
    xi: float
    tau_n: float = 1.0
    seed: int = 0

    def __post_init__(self):
        if not self.xi >= 0:
            raise ValueError(f"noise intensity xi must be >= 0, got {self.xi}")
        if not self.tau_n > 0:
            raise ValueError(f"correlation time tau_n must be > 0, got {self.tau_n}")

    @property
    def variance(self) -> float:
        """Stationary variance xi^2 / (2 tau_n)."""
        return self.xi**2 / (2.0 * self.tau_n)

    def covariance(self, lag):
        return self.variance * np.exp(-np.abs(lag) / self.tau_n)


@dataclass(frozen=True)
class NoisePath:
    grid: np.ndarray
    values: np.ndarray

    def __post_init__(self):
        if self.grid.shape != self.values.shape[-1:]:
            raise ValueError("noise path values do not match grid length")
        if not np.all(np.isfinite(self.values)):
            raise ValueError("noise path contains non-finite values")

    def __call__(self, t):
        """Piecewise-linear interpolation; a stack of paths gives shape (n_paths, ...)."""
        if self.values.ndim == 1:
            return np.interp(t, self.grid, self.values)
        t = np.asarray(t, dtype=float)
        i = np.clip(np.searchsorted(self.grid, t, side="right") - 1, 0, self.grid.size - 2)
        w = (t - self.grid[i]) / (self.grid[i + 1] - self.grid[i])
        return self.values[:, i] * (1.0 - w) + self.values[:, i + 1] * w

    def to_csv(self, path) -> None:
        with open(Path(path), "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["t", "eta"])
            for t, eta in zip(self.grid, self.values):
                w.writerow([f"{t:.12g}", f"{eta:.12g}"])


def trajectory_rng(seed: int, index: int | None = None) -> np.random.Generator:
    """Generator for one trajectory, derived from the master seed by spawn key."""
    key = () if index is None else (int(index),)
    ss = np.random.SeedSequence(entropy=int(seed) & (2**64 - 1), spawn_key=key)
    return np.random.Generator(np.random.PCG64(ss))


def _check_grid(grid) -> np.ndarray:
    grid = np.asarray(grid, dtype=float)
    if grid.ndim != 1 or grid.size < 1:
        raise ValueError("noise grid must be a non-empty 1-d array")
    if np.any(np.diff(grid) <= 0):
        raise ValueError("noise grid must be strictly increasing")
    return grid


def _ou_recursion(spec: NoiseSpec, grid: np.ndarray, g: np.ndarray) -> np.ndarray:
    """Map standard normals ``g`` (..., n) onto OU values on ``grid``."""
    eta = np.zeros_like(g)
    if spec.xi == 0:
        return eta
    s = np.sqrt(spec.variance)
    dt = np.diff(grid)
    decay = np.exp(-dt / spec.tau_n)
    kick = s * np.sqrt(-np.expm1(-2.0 * dt / spec.tau_n))
    eta[..., 0] = s * g[..., 0]
    for n in range(dt.size):
        eta[..., n + 1] = eta[..., n] * decay[n] + kick[n] * g[..., n + 1]
    return eta


def ou_sample_path(spec: NoiseSpec, grid, index: int | None = None) -> NoisePath:
    """Exact OU sample on ``grid``: AR(1) recursion from a stationary start.

    ``index`` selects an independent trajectory stream under the same master seed.
    """
    grid = _check_grid(grid)
    g = trajectory_rng(spec.seed, index).standard_normal(grid.size)
    return NoisePath(grid, _ou_recursion(spec, grid, g))


def ou_sample_paths(spec: NoiseSpec, grid, n_paths: int, start: int = 0) -> NoisePath:
    """Paths for trajectory indices ``start .. start + n_paths - 1``, values shape (n_paths, len(grid)).

    Row ``m`` is bit-identical to ``ou_sample_path(spec, grid, start + m)``.
    """
    grid = _check_grid(grid)
    g = np.stack([trajectory_rng(spec.seed, start + m).standard_normal(grid.size) for m in range(n_paths)])
    return NoisePath(grid, _ou_recursion(spec, grid, g))


def noisy_field(protocol: RampProtocol, path: NoisePath, t):
    t_arr = np.asarray(t, dtype=float)
    if np.any(t_arr < path.grid[0]) or np.any(t_arr > path.grid[-1]):
        raise ValueError("time outside the noise path grid")
    return field_at(protocol, t) + path(t)


def trajectory_grid(t_max: float, tau_n: float, nodes_per_tau: int = 50) -> np.ndarray:
    """Uniform node grid on [0, t_max] with spacing <= tau_n / nodes_per_tau."""
    n = max(1, int(np.ceil(t_max * nodes_per_tau / tau_n)))
    return np.linspace(0.0, t_max, n + 1)
