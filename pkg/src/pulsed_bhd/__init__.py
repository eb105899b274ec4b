"""Simulation, tomography and characterization for pulsed balanced homodyne detection."""

__version__ = "0.1.0"

from .errors import BHDError, ConfigError, DataError, NumericalError, PhaseUnresolvableError
from .fockstate import (
    DensityMatrix,
    WignerGrid,
    apply_loss,
    coherent_density_matrix,
    fock_density_matrix,
    vacuum_density_matrix,
    wigner_from_density,
)
from .simulator import AcquisitionConfig, DetectorParams, run_acquisition
from .tomography import bin_marginals, estimate_phases, inverse_radon, sample_density_matrix

__all__ = [
    "AcquisitionConfig",
    "BHDError",
    "ConfigError",
    "DataError",
    "DensityMatrix",
    "DetectorParams",
    "NumericalError",
    "PhaseUnresolvableError",
    "WignerGrid",
    "apply_loss",
    "bin_marginals",
    "coherent_density_matrix",
    "estimate_phases",
    "fock_density_matrix",
    "inverse_radon",
    "run_acquisition",
    "sample_density_matrix",
    "vacuum_density_matrix",
    "wigner_from_density",
]
