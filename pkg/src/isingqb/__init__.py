"""Transverse-field Ising chain as a quantum battery: ramp charging, noise, ergotropy."""

__version__ = "0.1.0"

from .model import (
    ChainSpec,
    QubitBattery,
    mode_eigensystem,
    mode_ground_state,
    mode_hamiltonian,
    mode_spectrum,
    quasimomenta,
    qubit_battery,
)
from .protocol import NoisePath, NoiseSpec, RampProtocol, field_at, noisy_field, ou_sample_path, ou_sample_paths
from .dynamics import (
    IntegratorSettings,
    evolve_mode_noiseless,
    evolve_mode_noisy_averaged,
    evolve_mode_trajectory,
    evolve_modes_noiseless,
    evolve_modes_noisy_averaged,
    evolve_modes_trajectories,
    evolve_qubit_uxy,
    exact_chain_oracle,
)
from .observables import (
    adiabatic_energy,
    chain_observables,
    efficiency,
    ergotropy_2x2,
    excitation_probability,
    fit_oscillations,
    phase_integral,
    stored_energy_mode,
    stored_energy_per_site,
)
