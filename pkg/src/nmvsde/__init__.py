"""Particle simulation of neutral McKean-Vlasov delay equations driven by fractional Brownian motion."""

from .fbm import (
    FgnBatch,
    PathBatch,
    TimeGrid,
    coarsen,
    covariance,
    fgn_autocovariance,
    sample_fbm,
    sample_fgn,
    scale_and_cumulate,
)
from .measure import EmpiricalMeasure, mean, pairing_bound, theta_moment, wasserstein_1d
from .model import ModelSpec, additive_model, example_model, frozen_model, get_model, validate_assumptions
from .solver import (
    DivergenceError,
    DriverSet,
    SimConfig,
    SimOutput,
    caratheodory_simulate,
    coupled_simulate,
    em_step,
    make_drivers,
    simulate,
)
from .experiments import (
    chaos_study,
    fit_loglog_slope,
    moment_study,
    strong_convergence_study,
)

__version__ = "0.1.0"
