"""Multivariate geometric anisotropic log-Gaussian Cox processes with
Matérn covariance: validity checks, simulation, summary statistics and
two-stage Palm likelihood fitting."""

__version__ = "0.1.0"

from .covariance import (  # noqa: E402
    MaternParams,
    ModelSpec,
    coherence,
    cov,
    cross_spectrum_bound,
    matern_iso,
    pcf,
    pcf_polar,
    spectral_density,
    table1_model,
)
from .geometry import Deformation, MultiTypePattern, PointPattern, TransformedWindow, Window  # noqa: E402
from .validity import (  # noqa: E402
    CrossConstruction,
    ValidityReport,
    check_conditions,
    colocated_correlation_bound,
    construct_cross,
)

__all__ = [
    "MaternParams",
    "ModelSpec",
    "Deformation",
    "Window",
    "TransformedWindow",
    "PointPattern",
    "MultiTypePattern",
    "matern_iso",
    "cov",
    "pcf",
    "pcf_polar",
    "spectral_density",
    "coherence",
    "cross_spectrum_bound",
    "table1_model",
    "check_conditions",
    "construct_cross",
    "colocated_correlation_bound",
    "CrossConstruction",
    "ValidityReport",
]
