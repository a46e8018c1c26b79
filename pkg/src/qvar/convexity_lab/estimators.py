"""scikit-learn style wrappers around the convexity tests.

Hyperparameters are constructor arguments (so ``get_params``/``set_params``
and ``sklearn.base.clone`` work); ``fit`` runs the test and stores results in
trailing-underscore attributes.
"""

from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_array, check_is_fitted

from ..integrands import QIntegrand, QuadraticIntegrand
from ..qfield import AffineQMap
from .quadratic import FEASIBILITY_TOL, polyconvexity_certificate, rank_one_min
from .quasiconvexity import QCConfig, quasiconvexity_test, semiellipticity_test


def _quadratic(A, m=None, n=None) -> QuadraticIntegrand:
    if isinstance(A, QuadraticIntegrand):
        return A
    M = check_array(A, ensure_2d=True, dtype=float)
    if m is None or n is None:
        raise ValueError("pass m and n when fitting on a raw matrix")
    return QuadraticIntegrand(M, m, n)


class QuasiconvexityTester(BaseEstimator):
    """Competitor search at one affine Q-map; ``fit(f, u)``."""

    def __init__(self, cells_per_side=8, restarts=8, max_iters=300, seed=0, tol=1e-9,
                 laminate_seeds=True, stop_on_violation=True):
        self.cells_per_side = cells_per_side
        self.restarts = restarts
        self.max_iters = max_iters
        self.seed = seed
        self.tol = tol
        self.laminate_seeds = laminate_seeds
        self.stop_on_violation = stop_on_violation

    def _config(self) -> QCConfig:
        return QCConfig(cells_per_side=self.cells_per_side, restarts=self.restarts, max_iters=self.max_iters,
                        seed=self.seed, tol=self.tol, laminate_seeds=self.laminate_seeds,
                        stop_on_violation=self.stop_on_violation)

    def fit(self, f: QIntegrand, u: AffineQMap):
        if not isinstance(f, QIntegrand) or not isinstance(u, AffineQMap):
            raise TypeError("fit expects (QIntegrand, AffineQMap)")
        self.verdict_ = quasiconvexity_test(f, u, self._config())
        self.status_ = self.verdict_.status
        self.margin_ = self.verdict_.margin
        self.certificate_ = self.verdict_.certificate
        return self

    def predict(self, X=None) -> bool:
        """True when a violating competitor was found."""
        check_is_fitted(self, "verdict_")
        return self.verdict_.violation

    def score(self, X=None, y=None) -> float:
        check_is_fitted(self, "verdict_")
        return self.margin_


class SemiellipticityTester(BaseEstimator):
    """Smallest normalized quadratic energy on compactly supported fields; ``fit(A, Q)``."""

    def __init__(self, cells_per_side=8, tol=1e-9, m=None, n=None):
        self.cells_per_side = cells_per_side
        self.tol = tol
        self.m = m
        self.n = n

    def fit(self, A, Q: int = 1):
        A = _quadratic(A, self.m, self.n)
        self.verdict_ = semiellipticity_test(A, Q, QCConfig(cells_per_side=self.cells_per_side, tol=self.tol))
        self.status_ = self.verdict_.status
        self.margin_ = self.verdict_.margin
        return self

    def predict(self, X=None) -> bool:
        check_is_fitted(self, "verdict_")
        return self.verdict_.violation


class RankOneMinimizer(BaseEstimator):
    """min <A(a (x) b), a (x) b> over unit vectors; ``fit(A)``."""

    def __init__(self, n_starts=24, seed=0, max_iter=500, m=None, n=None):
        self.n_starts = n_starts
        self.seed = seed
        self.max_iter = max_iter
        self.m = m
        self.n = n

    def fit(self, A):
        res = rank_one_min(_quadratic(A, self.m, self.n), self.n_starts, self.seed, self.max_iter)
        self.value_, self.a_, self.b_ = res.value, res.a, res.b
        return self

    def transform(self, A) -> np.ndarray:
        """The minimizing rank-one matrix a (x) b."""
        check_is_fitted(self, "value_")
        return np.outer(self.a_, self.b_)


class PolyconvexityCertifier(BaseEstimator):
    """Search for lambda with A + sum lambda_k D_k >= 0; ``fit(A)``."""

    def __init__(self, n_starts=8, seed=0, max_iter=400, tol=FEASIBILITY_TOL, m=None, n=None):
        self.n_starts = n_starts
        self.seed = seed
        self.max_iter = max_iter
        self.tol = tol
        self.m = m
        self.n = n

    def fit(self, A):
        cert = polyconvexity_certificate(_quadratic(A, self.m, self.n), self.n_starts, self.seed,
                                         self.max_iter, self.tol)
        self.certificate_ = cert
        self.lambdas_ = cert.lambdas
        self.min_eigenvalue_ = cert.min_eigenvalue
        self.feasible_ = cert.feasible
        return self

    def predict(self, X=None) -> bool:
        check_is_fitted(self, "certificate_")
        return self.feasible_
