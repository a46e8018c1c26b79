"""Numerical laboratory for Q-valued maps and their variational integrals."""

from ._validation import ConfigurationError, DomainError, InvalidInputError, InvalidIntegrandError
from .currents import DifferentialForm, stokes_residual
from .equiint import SampledFunctionSeq, biting_truncations, distribution_tail, dlvp_check, sobolev_critical_check
from .integrands import QIntegrand, QuadraticIntegrand, dirichlet, energy
from .minors import MultiIndexPair, PolyaffineFn, all_minors, enumerate_pairs, minor
from .qfield import AffineQMap, QMapFunction, QSheetField, blowup_residual, fold_sequence
from .qspace import QPoint, metric_g, translate

__version__ = "0.1.0"

__all__ = [
    "AffineQMap",
    "ConfigurationError",
    "DifferentialForm",
    "DomainError",
    "InvalidInputError",
    "InvalidIntegrandError",
    "MultiIndexPair",
    "PolyaffineFn",
    "QIntegrand",
    "QMapFunction",
    "QPoint",
    "QSheetField",
    "QuadraticIntegrand",
    "SampledFunctionSeq",
    "all_minors",
    "biting_truncations",
    "blowup_residual",
    "dirichlet",
    "distribution_tail",
    "dlvp_check",
    "energy",
    "enumerate_pairs",
    "fold_sequence",
    "metric_g",
    "minor",
    "sobolev_critical_check",
    "stokes_residual",
    "translate",
]
