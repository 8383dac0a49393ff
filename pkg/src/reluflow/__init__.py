"""Exact transport of densities by piecewise-constant ReLU vector fields."""

from .core import (
    ControlSchedule,
    ControlSegment,
    GaussianPiece,
    GridDensity,
    HalfSpace,
    PiecewiseGaussianDensity,
    Polyhedron,
    TargetSpec,
    build_grid_interpolant,
    select_truncation,
    switch_budget,
)
from .densities import Gaussian, GaussianMixture, Uniform
from .divergence import hellinger_sq, kl, pinsker_certificates, renyi, sup_ratio, tv
from .flow import density_at, flow_forward, flow_inverse, pushforward_density
from .points import exact_match, genericity_probe, minimum_norm_path, pick_separating_vector
from .synthesis import SynthesisReport, synthesize
from .xlogx import tail_conversion_check, xlogx_density, xlogx_flow

__version__ = "0.1.0"

__all__ = [
    "ControlSchedule",
    "ControlSegment",
    "Gaussian",
    "GaussianMixture",
    "GaussianPiece",
    "GridDensity",
    "HalfSpace",
    "PiecewiseGaussianDensity",
    "Polyhedron",
    "SynthesisReport",
    "TargetSpec",
    "Uniform",
    "build_grid_interpolant",
    "density_at",
    "exact_match",
    "flow_forward",
    "flow_inverse",
    "genericity_probe",
    "hellinger_sq",
    "kl",
    "minimum_norm_path",
    "pick_separating_vector",
    "pinsker_certificates",
    "pushforward_density",
    "renyi",
    "select_truncation",
    "sup_ratio",
    "switch_budget",
    "synthesize",
    "tail_conversion_check",
    "tv",
    "xlogx_density",
    "xlogx_flow",
]
