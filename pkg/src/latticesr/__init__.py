"""Semiclassical simulation of directed transport in probe-modulated dissipative
optical lattices, with tools for sweeps, mode analysis and spectrum fitting."""

from .dynamics import (
    DEFAULT_ELASTIC_FRACTION,
    AtomState,
    Ensemble,
    EnsembleStats,
    SimConfig,
    Spin,
    init_ensemble,
    simulate_ensemble,
    step,
)
from .fields import DriveMode, ProbeDrive, eval_fields, pumping_rates, snapshot_z_geometry
from .lattice_params import (
    RB85,
    AtomicSpecies,
    DerivedLattice,
    Geometry,
    LatticeConfig,
    derive_lattice,
    invert_to_beam_params,
    lattice_for_targets,
    modulation_strength,
)
from .observables import (
    DeltaPolicy,
    ModeSpectrum,
    SweepResult,
    delta_sweep,
    locate_peak,
    mode_spectrum,
    noise_sweep,
    sr_prediction,
)
from .specfit import FitModel, FitResult, SpectrumData, eval_fit_model, fit_spectrum, load_spectrum_csv

__version__ = "0.1.0"
