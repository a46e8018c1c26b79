"""Rank-one minima and minor-shift certificates for quadratic forms on n x m matrices."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .._validation import make_rng
from ..integrands import PolyconvexIntegrand, QuadraticIntegrand
from ..minors import all_minors, enumerate_pairs

#: Feasibility threshold on the optimized smallest eigenvalue.
FEASIBILITY_TOL = 1e-8


def _as_quadratic(A) -> QuadraticIntegrand:
    if not isinstance(A, QuadraticIntegrand):
        raise TypeError("expected a QuadraticIntegrand")
    return A


def _contract_b(A4: np.ndarray, b: np.ndarray) -> np.ndarray:
    """n x n form a -> <A(a (x) b), a (x) b> for fixed b."""
    return np.einsum("rcsd,c,d->rs", A4, b, b)


def _contract_a(A4: np.ndarray, a: np.ndarray) -> np.ndarray:
    return np.einsum("rcsd,r,s->cd", A4, a, a)


def _tensor(Q: QuadraticIntegrand) -> np.ndarray:
    """A as a 4-tensor T[r, c, s, d] = A[vec(r, c), vec(s, d)] with vec(r, c) = c*n + r."""
    n, m = Q.n, Q.m
    T = Q.A.reshape(m, n, m, n)  # [c, r, d, s]
    return np.transpose(T, (1, 0, 3, 2))


def rank_one_value(A: QuadraticIntegrand, a, b) -> float:
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    return float(A.form(np.outer(a, b)))


@dataclass(frozen=True)
class RankOneResult:
    value: float
    a: np.ndarray
    b: np.ndarray

    def __iter__(self):
        return iter((self.value, self.a, self.b))


def rank_one_min(A: QuadraticIntegrand, n_starts: int = 24, seed: int = 0, max_iter: int = 500) -> RankOneResult:
    """min over unit a in R^n, unit b in R^m of <A(a (x) b), a (x) b>.

    Alternates exact minimization in a (smallest eigenvector of the
    contracted n x n form) and in b, from the coordinate directions and
    seeded random starts; each sweep can only lower the value.
    """
    A = _as_quadratic(A)
    T = _tensor(A)
    m = A.m
    rng = make_rng(seed)
    starts = [np.eye(m)[i] for i in range(m)]
    while len(starts) < n_starts:
        v = rng.standard_normal(m)
        starts.append(v / np.linalg.norm(v))
    best = None
    for b in starts:
        val = np.inf
        for _ in range(max_iter):
            w, V = np.linalg.eigh(_contract_b(T, b))
            a = V[:, 0]
            w2, V2 = np.linalg.eigh(_contract_a(T, a))
            b = V2[:, 0]
            new = float(w2[0])
            if val - new <= 1e-15 * max(1.0, abs(new)):
                val = min(val, new)
                break
            val = new
        val = rank_one_value(A, a, b)
        if best is None or val < best[0] - 1e-15:
            best = (val, a.copy(), b.copy())
    val, a, b = best
    i = int(np.argmax(np.abs(a)))
    if a[i] < 0:
        a = -a
    j = int(np.argmax(np.abs(b)))
    if b[j] < 0:
        b = -b
    return RankOneResult(val, a, b)


# ---------------------------------------------------------------------------
# minor forms


def minor_form_matrices(m: int, n: int) -> tuple[list, np.ndarray]:
    """Symmetric matrices D_k with <D_k vec M, vec M> = k-th 2 x 2 minor of M.

    Returns ``(pairs, D)`` with D of shape (K, nm, nm), in canonical pair order.
    """
    pairs = [p for p in enumerate_pairs(m, n) if p.order == 2]
    D = np.zeros((len(pairs), n * m, n * m))

    def idx(r, c):
        return c * n + r

    for k, p in enumerate(pairs):
        (c0, c1), (r0, r1) = p.alpha, p.beta
        for (i, j), s in (((idx(r0, c0), idx(r1, c1)), 0.5), ((idx(r0, c1), idx(r1, c0)), -0.5)):
            D[k, i, j] += s
            D[k, j, i] += s
    return pairs, D


def _lam_min(A, D, lam):
    M = A + np.tensordot(lam, D, axes=1)
    w, V = np.linalg.eigh(M)
    v = V[:, 0]
    return float(w[0]), np.einsum("i,kij,j->k", v, D, v)


@dataclass(frozen=True)
class PolyconvexityCertificate:
    """A + sum_k lambdas[k] D_k is positive semidefinite (up to tolerance)."""

    lambdas: np.ndarray
    min_eigenvalue: float
    m: int
    n: int
    feasible: bool = True

    def shifted_matrix(self, A: QuadraticIntegrand) -> np.ndarray:
        _, D = minor_form_matrices(self.m, self.n)
        return A.A + np.tensordot(self.lambdas, D, axes=1)

    def convex_representative(self, A: QuadraticIntegrand):
        """g on minor vectors with g(M(L)) = <A L, L>, convex when feasible.

        g(X) = X1^T P X1 - sum_k lambdas[k] X2_k with X1 the entry block,
        X2 the 2 x 2 minors and P the shifted (PSD) matrix.
        """
        P = self.shifted_matrix(A)
        nm = self.m * self.n
        lam = self.lambdas
        pos = [i for i, p in enumerate(enumerate_pairs(self.m, self.n)) if p.order == 2]

        def g(X):
            X = np.asarray(X, dtype=float)
            X1 = X[..., :nm]
            return np.einsum("...i,ij,...j->...", X1, P, X1) - X[..., pos] @ lam

        def subgradient(X):
            X = np.asarray(X, dtype=float)
            out = np.zeros_like(X)
            out[..., :nm] = 2.0 * X[..., :nm] @ P
            out[..., pos] = -lam
            return out

        return g, subgradient

    def as_polyconvex_integrand(self, A: QuadraticIntegrand, Q: int = 1) -> PolyconvexIntegrand:
        """sum_i <A L_i, L_i> carrying its convex representative (for support maps)."""
        g, sub = self.convex_representative(A)
        base = A.integrand(Q)
        return PolyconvexIntegrand(
            base.func, A.m, A.n, Q,
            lambda a, X: float(np.sum(g(X))),
            lambda a, X: sub(X),
            grad_A=base.grad_A, x_dependent=False, value_dependent=False, name="quadratic_certified",
        )

    def to_json(self) -> dict:
        return {
            "feasible": self.feasible,
            "lambdas": self.lambdas.tolist(),
            "min_eigenvalue": self.min_eigenvalue,
        }


def polyconvexity_certificate(A: QuadraticIntegrand, n_starts: int = 8, seed: int = 0,
                              max_iter: int = 400, tol: float = FEASIBILITY_TOL) -> PolyconvexityCertificate:
    """Maximize lambda_min(A + sum_k lambda_k D_k) over lambda.

    The objective is concave; it is maximized by subgradient ascent from
    several starts followed by coordinatewise golden-section polishing.
    The result has ``feasible`` set iff the optimum is >= -tol; infeasible
    results carry the best lambda found.
    """
    A = _as_quadratic(A)
    _, D = minor_form_matrices(A.m, A.n)
    K = len(D)
    M0 = A.A
    if K == 0:
        w = float(np.linalg.eigvalsh(M0)[0])
        return PolyconvexityCertificate(np.zeros(0), w, A.m, A.n, w >= -tol)
    R = 4.0 * float(np.abs(np.linalg.eigvalsh(M0)).max()) + 1.0
    rng = make_rng(seed)
    starts = [np.zeros(K)] + [rng.uniform(-R / 4, R / 4, K) for _ in range(n_starts - 1)]
    best_val, best_lam = -np.inf, np.zeros(K)
    for lam in starts:
        val, g = _lam_min(M0, D, lam)
        lam_best, val_best = lam.copy(), val
        for it in range(max_iter):
            gn = np.linalg.norm(g)
            if gn < 1e-14:
                break
            lam = np.clip(lam + (R / (4.0 * np.sqrt(it + 1.0))) * g / gn, -R, R)
            val, g = _lam_min(M0, D, lam)
            if val > val_best:
                val_best, lam_best = val, lam.copy()
        if val_best > best_val:
            best_val, best_lam = val_best, lam_best
    best_lam, best_val = _coordinate_polish(M0, D, best_lam, R)
    if abs(best_val) <= 1e-14:
        best_val = 0.0
    return PolyconvexityCertificate(best_lam, float(best_val), A.m, A.n, bool(best_val >= -tol))


def _golden(fun, lo, hi, iters=120):
    phi = (np.sqrt(5.0) - 1.0) / 2.0
    a, b = lo, hi
    c, d = b - phi * (b - a), a + phi * (b - a)
    fc, fd = fun(c), fun(d)
    for _ in range(iters):
        if fc >= fd:
            b, d, fd = d, c, fc
            c = b - phi * (b - a)
            fc = fun(c)
        else:
            a, c, fc = c, d, fd
            d = a + phi * (b - a)
            fd = fun(d)
    x = 0.5 * (a + b)
    return x, fun(x)


def _coordinate_polish(M0, D, lam, R, sweeps: int = 30):
    lam = lam.copy()
    val = _lam_min(M0, D, lam)[0]
    for _ in range(sweeps):
        before = val
        for k in range(len(lam)):
            def f(t, k=k):
                trial = lam.copy()
                trial[k] = t
                return _lam_min(M0, D, trial)[0]

            t, v = _golden(f, -R, R)
            if v > val:
                lam[k], val = t, v
        if val - before <= 1e-15:
            break
    return lam, val


def check_convex_representative(cert: PolyconvexityCertificate, A: QuadraticIntegrand,
                                samples: int = 200, seed: int = 0) -> dict:
    """Check the representative against the definition of polyconvexity.

    Reports the largest |g(M(L)) - <A L, L>| over random L and the smallest
    eigenvalue of its Hessian in the entry block (convexity).
    """
    g, _ = cert.convex_representative(A)
    rng = make_rng(seed)
    L = rng.standard_normal((samples, A.n, A.m))
    err = np.abs(g(all_minors(L)) - A.form(L))
    P = cert.shifted_matrix(A)
    return {
        "max_identity_error": float(err.max()),
        "hessian_min_eigenvalue": float(np.linalg.eigvalsh(P)[0]),
    }


def laminate_direction(H: np.ndarray, m: int, n: int, seed: int = 0):
    """(a, b) minimizing the rank-one value of a (possibly numerical) Hessian."""
    res = rank_one_min(QuadraticIntegrand(H, m, n), seed=seed)
    return res.a, res.b

