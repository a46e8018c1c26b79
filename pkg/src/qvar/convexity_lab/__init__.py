"""Numerical tests of quasiconvexity, semiellipticity and polyconvexity."""

from .estimators import PolyconvexityCertifier, QuasiconvexityTester, RankOneMinimizer, SemiellipticityTester
from .necessity import affine_competitors, lsc_margin, necessity_experiment
from .quadratic import (
    PolyconvexityCertificate,
    RankOneResult,
    check_convex_representative,
    minor_form_matrices,
    polyconvexity_certificate,
    rank_one_min,
    rank_one_value,
)
from .quasiconvexity import (
    NO_VIOLATION,
    VIOLATION,
    QCConfig,
    QCVerdict,
    combine_competitors,
    competitor_margin,
    frozen_integrand,
    quasiconvexity_test,
    semiellipticity_test,
    translation_identity_gap,
    verify_certificate,
    zero_map,
)

__all__ = [
    "NO_VIOLATION",
    "VIOLATION",
    "PolyconvexityCertificate",
    "PolyconvexityCertifier",
    "QCConfig",
    "QCVerdict",
    "QuasiconvexityTester",
    "RankOneMinimizer",
    "RankOneResult",
    "SemiellipticityTester",
    "affine_competitors",
    "check_convex_representative",
    "combine_competitors",
    "competitor_margin",
    "frozen_integrand",
    "lsc_margin",
    "minor_form_matrices",
    "necessity_experiment",
    "polyconvexity_certificate",
    "quasiconvexity_test",
    "rank_one_min",
    "rank_one_value",
    "semiellipticity_test",
    "translation_identity_gap",
    "verify_certificate",
    "zero_map",
]
