"""Stochastic particle-optimization sampling (SPOS), its variance-reduced variants,
and SGLD/SVGD baselines over decomposable potentials."""

from .diagnostics import (
    DiagnosticsConfig,
    ModeSet,
    RunTrace,
    find_modes_grid,
    mode_coverage,
    reference_for,
    sample_moments,
    w1_1d,
    w1_vs_reference,
)
from .errors import DivergenceError, InvalidArgumentError, SamplerError, StateError, UnsupportedTargetError
from .kernel import KernelConfig, kernel_gradient, kernel_value, median_bandwidth
from .samplers import (
    Kind,
    ParticleEnsemble,
    SamplerConfig,
    init_ensemble,
    run,
    sample_batch,
    sgld_step,
    spos_step,
    step_generator,
    svgd_step,
)
from .targets import (
    BayesLinReg,
    GaussianTarget,
    MixtureTarget,
    MultimodeParams,
    MultimodeTarget,
    PotentialModel,
    RegressionDataset,
    analytic_posterior,
    make_bayes_linreg,
    make_gaussian,
    multimode_potential,
    standard_gaussian,
)

__version__ = "0.1.0"

__all__ = [
    "DiagnosticsConfig",
    "ModeSet",
    "RunTrace",
    "find_modes_grid",
    "mode_coverage",
    "reference_for",
    "sample_moments",
    "w1_1d",
    "w1_vs_reference",
    "DivergenceError",
    "InvalidArgumentError",
    "SamplerError",
    "StateError",
    "UnsupportedTargetError",
    "KernelConfig",
    "kernel_gradient",
    "kernel_value",
    "median_bandwidth",
    "Kind",
    "ParticleEnsemble",
    "SamplerConfig",
    "init_ensemble",
    "run",
    "sample_batch",
    "sgld_step",
    "spos_step",
    "step_generator",
    "svgd_step",
    "BayesLinReg",
    "GaussianTarget",
    "MixtureTarget",
    "MultimodeParams",
    "MultimodeTarget",
    "PotentialModel",
    "RegressionDataset",
    "analytic_posterior",
    "make_bayes_linreg",
    "make_gaussian",
    "multimode_potential",
    "standard_gaussian",
]
