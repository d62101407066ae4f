"""Config-driven runner: single runs, noise sweeps and oracle validation.

Config files are INI documents::

    [system]
    kind = chain            # chain | single_qubit
    n_sites = 300
    J = 1

    [protocol]
    h_i = 0.8
    h_f = 1.5
    t_f = 10

    [noise]
    xi = 0.1
    tau_n = 1
    seed = 0

    [run]
    mode = averaged         # noiseless | averaged | trajectories
    n_trajectories = 200
    t_max = 30
    dt_out = 0.1
    t_star = 30

    [integrator]
    rtol = 1e-9
    atol = 1e-12

    [output]
    directory = out
"""

from __future__ import annotations

import argparse
import configparser
import csv
import dataclasses
import hashlib
import json
import logging
import math
import os
import sys
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import __version__
from .dynamics import (
    IntegrationError,
    IntegratorSettings,
    QUBIT_SETTINGS,
    evolve_mode_noisy_averaged,
    evolve_mode_trajectory,
    evolve_modes_noiseless,
    evolve_modes_noisy_averaged,
    evolve_modes_trajectories,
    evolve_qubit_uxy,
    exact_chain_oracle,
    MAX_ORACLE_SITES,
)
from .model import quasimomenta, qubit_battery
from .observables import (
    ObservableSeries,
    chain_observables,
    efficiency,
    ergotropy_2x2,
    excitation_probability,
)
from .protocol import NoiseSpec, RampProtocol, ou_sample_paths, trajectory_grid

log = logging.getLogger("isingqb")

MODES = ("noiseless", "averaged", "trajectories")
SERIES_HEADER = ["t", "dE_per_site", "ergotropy_per_site", "efficiency"]
PK_HEADER = ["k", "P_k_noiseless", "P_k_noisy"]
SUMMARY_HEADER = ["xi", "dE_star", "ergotropy_star", "efficiency_star", "frac_Pk_above_half"]
TRAJECTORY_CHUNK = 100


class ConfigError(ValueError):
    """Invalid configuration; ``key`` names the offending ``section.option``."""

    def __init__(self, key: str, message: str):
        super().__init__(f"{key}: {message}")
        self.key = key


@dataclass(frozen=True)
class RunConfig:
    system: str = "chain"
    n_sites: int = 300
    J: float = 1.0
    protocol: RampProtocol = RampProtocol(0.8, 1.5, 10.0)
    noise: NoiseSpec | None = None
    mode: str = "noiseless"
    n_trajectories: int = 1
    t_max: float = 30.0
    dt_out: float = 0.1
    t_star: float | None = None
    integrator: IntegratorSettings = IntegratorSettings()
    output: str = "out"

    def __post_init__(self):
        if self.system not in ("chain", "single_qubit"):
            raise ConfigError("system.kind", f"expected 'chain' or 'single_qubit', got {self.system!r}")
        if self.system == "chain" and (self.n_sites < 2 or self.n_sites % 2):
            raise ConfigError("system.n_sites", f"must be even and >= 2, got {self.n_sites}")
        if not self.J > 0:
            raise ConfigError("system.J", f"must be positive, got {self.J}")
        if self.mode not in MODES:
            raise ConfigError("run.mode", f"expected one of {MODES}, got {self.mode!r}")
        if self.mode != "noiseless" and self.noise is None:
            raise ConfigError("noise.xi", f"a [noise] section is required for mode {self.mode!r}")
        if self.system == "single_qubit" and self.mode != "noiseless":
            raise ConfigError("run.mode", "single_qubit runs support only mode = noiseless")
        if self.mode == "trajectories" and self.n_trajectories < 1:
            raise ConfigError("run.n_trajectories", f"must be >= 1, got {self.n_trajectories}")
        if not self.dt_out > 0:
            raise ConfigError("run.dt_out", f"must be positive, got {self.dt_out}")
        if self.t_max < self.protocol.t_f:
            raise ConfigError("run.t_max", f"must be >= t_f = {self.protocol.t_f}, got {self.t_max}")
        if self.t_star is not None and not 0 <= self.t_star <= self.t_max:
            raise ConfigError("run.t_star", f"must lie in [0, t_max], got {self.t_star}")

    @property
    def t_grid(self) -> np.ndarray:
        n = int(math.floor(self.t_max / self.dt_out + 1e-9))
        grid = self.dt_out * np.arange(n + 1)
        if self.t_max - grid[-1] > 1e-9 * max(1.0, self.t_max):
            grid = np.append(grid, self.t_max)
        return grid

    def replace(self, **changes) -> "RunConfig":
        return dataclasses.replace(self, **changes)

    def to_dict(self) -> dict:
        return {
            "system": {"kind": self.system, "n_sites": self.n_sites, "J": self.J},
            "protocol": {"h_i": self.protocol.h_i, "h_f": self.protocol.h_f, "t_f": self.protocol.t_f},
            "noise": None if self.noise is None else {
                "xi": self.noise.xi, "tau_n": self.noise.tau_n, "seed": self.noise.seed},
            "run": {"mode": self.mode, "n_trajectories": self.n_trajectories, "t_max": self.t_max,
                    "dt_out": self.dt_out, "t_star": self.t_star},
            "integrator": {"rtol": self.integrator.rtol, "atol": self.integrator.atol,
                           "max_step": None if math.isinf(self.integrator.max_step) else self.integrator.max_step,
                           "method": self.integrator.method},
            "output": {"directory": self.output},
        }

    @classmethod
    def from_dict(cls, d: dict) -> "RunConfig":
        cp = configparser.ConfigParser()
        for section, values in d.items():
            if values is None:
                continue
            cp[section] = {k: ("" if v is None else repr(v) if isinstance(v, float) else str(v))
                           for k, v in values.items()}
        return cls.from_parser(cp)

    @classmethod
    def from_parser(cls, cp: configparser.ConfigParser) -> "RunConfig":
        def get(section, key, conv, default=None, required=False):
            if not cp.has_option(section, key) or cp.get(section, key).strip() == "":
                if required:
                    raise ConfigError(f"{section}.{key}", "missing required value")
                return default
            raw = cp.get(section, key).split("#")[0].split(";")[0].strip()
            try:
                return conv(raw)
            except ValueError as exc:
                raise ConfigError(f"{section}.{key}", f"cannot parse {raw!r} ({exc})") from None

        def to_int(s):
            val = float(s)
            if val != int(val):
                raise ValueError("not an integer")
            return int(val)

        system = get("system", "kind", str, "chain")
        try:
            protocol = RampProtocol(get("protocol", "h_i", float, required=True),
                                    get("protocol", "h_f", float, required=True),
                                    get("protocol", "t_f", float, required=True))
        except ValueError as exc:
            if isinstance(exc, ConfigError):
                raise
            raise ConfigError("protocol.t_f", str(exc)) from None
        noise = None
        if cp.has_section("noise"):
            xi = get("noise", "xi", float, required=True)
            tau_n = get("noise", "tau_n", float, 1.0)
            if xi < 0:
                raise ConfigError("noise.xi", f"must be >= 0, got {xi}")
            if not tau_n > 0:
                raise ConfigError("noise.tau_n", f"must be positive, got {tau_n}")
            noise = NoiseSpec(xi, tau_n, get("noise", "seed", to_int, 0))
        default_settings = QUBIT_SETTINGS if system == "single_qubit" else IntegratorSettings()
        max_step = get("integrator", "max_step", float, default_settings.max_step)
        try:
            settings = IntegratorSettings(
                rtol=get("integrator", "rtol", float, default_settings.rtol),
                atol=get("integrator", "atol", float, default_settings.atol),
                max_step=max_step,
                method=get("integrator", "method", str, default_settings.method),
            )
        except ValueError as exc:
            raise ConfigError("integrator", str(exc)) from None
        return cls(
            system=system,
            n_sites=get("system", "n_sites", to_int, 300),
            J=get("system", "J", float, 1.0),
            protocol=protocol,
            noise=noise,
            mode=get("run", "mode", str, "noiseless"),
            n_trajectories=get("run", "n_trajectories", to_int, 1),
            t_max=get("run", "t_max", float, 30.0),
            dt_out=get("run", "dt_out", float, 0.1),
            t_star=get("run", "t_star", float, None),
            integrator=settings,
            output=get("output", "directory", str, "out"),
        )


def load_config(path) -> RunConfig:
    """Read an INI config, or the ``config`` echo inside a run manifest (``.json``)."""
    path = Path(path)
    if path.suffix == ".json":
        return RunConfig.from_dict(json.loads(path.read_text())["config"])
    cp = configparser.ConfigParser(inline_comment_prefixes=("#", ";"))
    try:
        found = cp.read(path)
    except configparser.Error as exc:
        raise ConfigError("config", str(exc)) from None
    if not found:
        raise ConfigError("config", f"cannot read {path}")
    return RunConfig.from_parser(cp)


@dataclass
class RunManifest:
    config: dict
    version: str
    seed: int | None
    wall_clock_s: float
    started: str
    files: dict = field(default_factory=dict)

    def to_json(self) -> str:
        return json.dumps(dataclasses.asdict(self), indent=2, sort_keys=True)


@dataclass
class RunResult:
    series: ObservableSeries
    pk: np.ndarray | None
    manifest: RunManifest
    directory: Path


def _fmt(x) -> str:
    return "" if x is None or not np.isfinite(x) else f"{x:.12g}"


def _write_csv(path: Path, header, rows) -> str:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([_fmt(v) for v in row])
    return hashlib.sha256(path.read_bytes()).hexdigest()


def _trajectory_mean(ks, cfg: RunConfig, t_eval) -> np.ndarray:
    """Mean of mode states over trajectories, accumulated in index order."""
    grid = trajectory_grid(t_eval[-1], cfg.noise.tau_n)
    total = None
    for start in range(0, cfg.n_trajectories, TRAJECTORY_CHUNK):
        m = min(TRAJECTORY_CHUNK, cfg.n_trajectories - start)
        paths = ou_sample_paths(cfg.noise, grid, m, start=start)
        part = evolve_modes_trajectories(ks, cfg.protocol, paths, t_eval, cfg.integrator).sum(1)
        total = part if total is None else total + part
        log.debug("trajectories %d..%d done", start, start + m - 1)
    return total / cfg.n_trajectories


def simulate(cfg: RunConfig):
    """Compute the observable series and, for chains with t_star, P_k rows (k, noiseless, noisy)."""
    grid = cfg.t_grid
    t_star = cfg.t_star
    t_eval = np.union1d(grid, [t_star]) if t_star is not None else grid
    on_grid = np.isin(t_eval, grid)
    meta = {"system": cfg.system, "n_sites": cfg.n_sites, "mode": cfg.mode,
            "protocol": dataclasses.asdict(cfg.protocol),
            "noise": None if cfg.noise is None else dataclasses.asdict(cfg.noise)}

    if cfg.system == "single_qubit":
        qs = evolve_qubit_uxy(cfg.protocol, grid, cfg.J, cfg.integrator)
        d_e = qs.stored_energy(cfg.protocol.h_i, cfg.J)
        erg = ergotropy_2x2(qs.density_matrices(), qubit_battery(cfg.protocol.h_i, cfg.J).hamiltonian)
        return ObservableSeries(grid, d_e, erg, efficiency(erg, d_e), meta), None

    ks = quasimomenta(cfg.n_sites)
    h_i = cfg.protocol.h_i
    noiseless = None
    if cfg.mode == "noiseless" or t_star is not None:
        noiseless = evolve_modes_noiseless(ks, cfg.protocol, t_eval, cfg.integrator)
    if cfg.mode == "noiseless":
        rho = noiseless
    elif cfg.mode == "averaged":
        rho = evolve_modes_noisy_averaged(ks, cfg.protocol, cfg.noise, t_eval, cfg.integrator).rho
    else:
        rho = _trajectory_mean(ks, cfg, t_eval)
    obs = chain_observables(t_eval, ks, rho, h_i, meta)
    series = ObservableSeries(grid, obs.dE_per_site[on_grid], obs.ergotropy_per_site[on_grid],
                              obs.efficiency[on_grid], meta)
    pk = None
    if t_star is not None:
        i = int(np.flatnonzero(t_eval == t_star)[0])
        p_clean = excitation_probability(noiseless[i], ks, h_i)
        p_noisy = excitation_probability(rho[i], ks, h_i) if cfg.mode != "noiseless" else np.full(ks.size, np.nan)
        pk = np.column_stack([ks, p_clean, p_noisy])
        series.metadata["t_star"] = t_star
        series.metadata["star"] = {"dE": float(obs.dE_per_site[i]), "ergotropy": float(obs.ergotropy_per_site[i]),
                                   "efficiency": float(obs.efficiency[i])}
    return series, pk


def run(cfg: RunConfig, out_dir=None) -> RunResult:
    """Simulate and write series.csv, pk.csv (chain with t_star) and manifest.json."""
    out = Path(out_dir if out_dir is not None else cfg.output)
    out.mkdir(parents=True, exist_ok=True)
    started = time.strftime("%Y-%m-%dT%H:%M:%S%z")
    t0 = time.perf_counter()
    log.info("run: %s N=%s mode=%s -> %s", cfg.system, cfg.n_sites, cfg.mode, out)
    series, pk = simulate(cfg)
    files = {
        "series.csv": _write_csv(out / "series.csv", SERIES_HEADER,
                                 zip(series.t, series.dE_per_site, series.ergotropy_per_site, series.efficiency))
    }
    if pk is not None:
        files["pk.csv"] = _write_csv(out / "pk.csv", PK_HEADER, pk)
    manifest = RunManifest(
        config=cfg.to_dict(),
        version=__version__,
        seed=None if cfg.noise is None else cfg.noise.seed,
        wall_clock_s=time.perf_counter() - t0,
        started=started,
        files=files,
    )
    (out / "manifest.json").write_text(manifest.to_json() + "\n")
    return RunResult(series, pk, manifest, out)


def _star_row(cfg: RunConfig, result: RunResult):
    star = result.series.metadata.get("star")
    if star is None:
        i = -1
        star = {"dE": result.series.dE_per_site[i], "ergotropy": result.series.ergotropy_per_site[i],
                "efficiency": result.series.efficiency[i]}
    frac = np.nan
    if result.pk is not None:
        col = 1 if cfg.mode == "noiseless" else 2
        frac = float(np.mean(result.pk[:, col] > 0.5))
    xi = 0.0 if cfg.noise is None else cfg.noise.xi
    return [xi, star["dE"], star["ergotropy"], star["efficiency"], frac]


def run_sweep(cfg: RunConfig, xi_list, out_dir=None):
    """One run per noise intensity in ``xi_list`` plus ``summary.csv``.

    A noiseless base config is promoted to ``averaged``; ``t_star`` defaults to t_max.
    """
    out = Path(out_dir if out_dir is not None else cfg.output)
    base_noise = cfg.noise or NoiseSpec(0.0)
    mode = "averaged" if cfg.mode == "noiseless" else cfg.mode
    t_star = cfg.t_max if cfg.t_star is None else cfg.t_star
    rows, results = [], []
    for xi in xi_list:
        sub = cfg.replace(noise=dataclasses.replace(base_noise, xi=float(xi)), mode=mode, t_star=t_star)
        res = run(sub, out / f"xi_{float(xi):g}")
        results.append(res)
        rows.append(_star_row(sub, res))
    _write_csv(out / "summary.csv", SUMMARY_HEADER, rows)
    return results, np.array(rows, dtype=float)


def validate(cfg: RunConfig, out_dir=None, n_checkpoints: int = 20) -> dict:
    """Compare the mode sum with the exact spin chain, and averaged dynamics with trajectory means."""
    if cfg.system != "chain" or cfg.n_sites > MAX_ORACLE_SITES:
        raise ConfigError("system.n_sites", f"validation needs a chain with N <= {MAX_ORACLE_SITES}")
    grid = cfg.t_grid
    ks = quasimomenta(cfg.n_sites)
    rho = evolve_modes_noiseless(ks, cfg.protocol, grid, cfg.integrator)
    mode_sum = chain_observables(grid, ks, rho, cfg.protocol.h_i).dE_per_site
    exact = exact_chain_oracle(cfg.n_sites, cfg.protocol, grid)
    oracle_dev = float(np.max(np.abs(mode_sum - exact)))

    noise = cfg.noise or NoiseSpec(0.1)
    m = cfg.n_trajectories if cfg.mode == "trajectories" else 2000
    k = np.pi / 2
    checkpoints = np.linspace(0.0, cfg.t_max, n_checkpoints + 1)[1:]
    paths = ou_sample_paths(noise, trajectory_grid(cfg.t_max, noise.tau_n), m)
    traj = evolve_mode_trajectory(k, cfg.protocol, paths, checkpoints, cfg.integrator)
    mean = traj.mean(1)
    se_re = traj.real.std(1, ddof=1) / np.sqrt(m) if m > 1 else np.zeros_like(mean.real)
    se_im = traj.imag.std(1, ddof=1) / np.sqrt(m) if m > 1 else np.zeros_like(mean.real)
    report = {
        "n_sites": cfg.n_sites,
        "oracle_max_deviation": oracle_dev,
        "oracle_pass": oracle_dev < 1e-6,
        "monte_carlo": {"k": k, "xi": noise.xi, "tau_n": noise.tau_n, "n_trajectories": m},
    }
    for name, propagate in (("frozen_kernel", False), ("propagated_kernel", True)):
        avg = evolve_mode_noisy_averaged(k, cfg.protocol, noise, checkpoints, cfg.integrator,
                                         propagate_kernel=propagate).rho[:, 0]
        d_re, d_im = np.abs((mean - avg).real), np.abs((mean - avg).imag)
        ok = np.all(d_re <= np.maximum(3 * se_re, 5e-3)) and np.all(d_im <= np.maximum(3 * se_im, 5e-3))
        report["monte_carlo"][name] = {"max_deviation": float(max(d_re.max(), d_im.max())), "pass": bool(ok)}
    if out_dir is not None:
        Path(out_dir).mkdir(parents=True, exist_ok=True)
        (Path(out_dir) / "validate.json").write_text(json.dumps(report, indent=2, sort_keys=True) + "\n")
    return report


def _parse_sweep(text: str):
    key, _, values = text.partition("=")
    if key.strip() != "xi" or not values:
        raise ConfigError("--sweep", f"expected xi=<comma list>, got {text!r}")
    try:
        return [float(v) for v in values.split(",") if v.strip()]
    except ValueError as exc:
        raise ConfigError("--sweep", str(exc)) from None


def main(argv=None) -> int:
    ap = argparse.ArgumentParser(prog="isingqb", description="Ising-chain quantum battery charging simulator")
    ap.add_argument("--config", required=True, help="INI config, or a manifest.json to reproduce a run")
    ap.add_argument("--out", help="output directory (overrides [output] directory)")
    ap.add_argument("--seed", type=int, help="master noise seed (overrides [noise] seed)")
    ap.add_argument("--sweep", help="noise sweep, e.g. xi=0,0.01,0.1,1")
    ap.add_argument("--validate", action="store_true", help="run the small-N oracle checks instead")
    args = ap.parse_args(argv)

    logging.basicConfig(level=os.environ.get("ISINGQB_LOG_LEVEL", "WARNING").upper(),
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = load_config(args.config)
        if args.seed is not None:
            if args.seed < 0 or args.seed >= 2**64:
                raise ConfigError("--seed", "must be an unsigned 64-bit integer")
            cfg = cfg.replace(noise=dataclasses.replace(cfg.noise or NoiseSpec(0.0), seed=args.seed))
        out = args.out or cfg.output
        if args.validate:
            print(json.dumps(validate(cfg, out), indent=2, sort_keys=True))
        elif args.sweep:
            _, rows = run_sweep(cfg, _parse_sweep(args.sweep), out)
            print(f"wrote {len(rows)} sweep points to {out}")
        else:
            res = run(cfg, out)
            print(f"wrote {', '.join(res.manifest.files)} to {res.directory}")
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except IntegrationError as exc:
        print(f"integration failed: {exc}", file=sys.stderr)
        return 3
    return 0


if __name__ == "__main__":
    sys.exit(main())
