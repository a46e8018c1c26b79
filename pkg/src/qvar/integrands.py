"""Q-integrands f(x, a_1..a_Q, A_1..A_Q) and their energies on Q-fields.

Integrand callables are vectorized: ``func(x, a, A)`` receives x of shape
(P, m), a of shape (P, Q, n) and A of shape (P, Q, n, m) and returns (P,).
Quadratic forms act on column-major flattened n x m matrices.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ._validation import (
    ConfigurationError,
    InvalidInputError,
    check_symmetric,
    make_rng,
    unvec_colmajor,
    vec_colmajor,
)
from .minors import all_minors, tau
from .qfield import QSheetField

_CHUNK = 1 << 15


class QIntegrand:
    """A Q-integrand with optional analytic gradient in the matrix slots.

    Parameters
    ----------
    func : callable (x, a, A) -> values, vectorized as described in the module doc
    m, n, Q : dimensions
    grad_A : callable (x, a, A) -> (P, Q, n, m), optional
        Partial derivatives with respect to each A_i.
    x_dependent, value_dependent : bool
        Declaring either False lets energies skip the corresponding inputs
        (constant-per-cell evaluation when both are False).
    """

    def __init__(self, func, m: int, n: int, Q: int, *, grad_A=None, x_dependent: bool = True,
                 value_dependent: bool = True, name: str = "custom", description: dict | None = None):
        self.func = func
        self.m, self.n, self.Q = int(m), int(n), int(Q)
        self.grad_A = grad_A
        self.x_dependent = bool(x_dependent)
        self.value_dependent = bool(value_dependent)
        self.name = name
        self.description = description

    def _coerce(self, x, a, A):
        x = np.asarray(x, dtype=float)
        a = np.asarray(a, dtype=float)
        A = np.asarray(A, dtype=float)
        single = A.ndim == 3 or (A.ndim == 2 and self.Q == 1 and A.shape == (self.n, self.m))
        if single:
            return (x.reshape(1, self.m), a.reshape(1, self.Q, self.n),
                    A.reshape(1, self.Q, self.n, self.m), True)
        P = A.shape[0]
        return (np.broadcast_to(x.reshape(-1, self.m), (P, self.m)),
                a.reshape(P, self.Q, self.n), A.reshape(P, self.Q, self.n, self.m), False)

    def __call__(self, x, a, A):
        x, a, A, single = self._coerce(x, a, A)
        out = np.asarray(self.func(x, a, A), dtype=float).reshape(len(A))
        return float(out[0]) if single else out

    def gradient(self, x, a, A) -> np.ndarray:
        if self.grad_A is None:
            raise ConfigurationError(f"integrand {self.name!r} has no analytic gradient")
        x, a, A, single = self._coerce(x, a, A)
        g = np.asarray(self.grad_A(x, a, A), dtype=float).reshape(A.shape)
        return g[0] if single else g

    def __repr__(self):
        return f"QIntegrand({self.name}, m={self.m}, n={self.n}, Q={self.Q})"


class QuadraticIntegrand:
    """M -> <A vec(M), vec(M)> on n x m matrices (column-major vec).

    The matrix is symmetrized at construction.
    """

    def __init__(self, A, m: int, n: int):
        self.m, self.n = int(m), int(n)
        self.A = check_symmetric(A, self.m * self.n)
        self.A.setflags(write=False)

    @classmethod
    def identity(cls, m: int, n: int) -> "QuadraticIntegrand":
        return cls(np.eye(m * n), m, n)

    def form(self, M) -> np.ndarray | float:
        """<A M, M> for one matrix or a batch (..., n, m)."""
        v = vec_colmajor(np.asarray(M, dtype=float))
        out = np.einsum("...i,ij,...j->...", v, self.A, v)
        return float(out) if np.ndim(out) == 0 else out

    def apply(self, M) -> np.ndarray:
        """A M as an n x m matrix (batched)."""
        v = vec_colmajor(np.asarray(M, dtype=float))
        return unvec_colmajor(v @ self.A, self.n, self.m)

    def lambda_max(self) -> float:
        return float(np.linalg.eigvalsh(self.A)[-1])

    def integrand(self, Q: int = 1) -> QIntegrand:
        """sum_i <A M_i, M_i> as a Q-integrand."""

        def func(x, a, A):
            return np.sum(self.form(A), axis=-1)

        def grad(x, a, A):
            return 2.0 * self.apply(A)

        return QIntegrand(func, self.m, self.n, Q, grad_A=grad, x_dependent=False,
                          value_dependent=False, name="quadratic", description=self.to_json())

    def to_json(self) -> dict:
        return {"kind": "quadratic", "matrix": self.A.tolist()}

    def __repr__(self):
        return f"QuadraticIntegrand(m={self.m}, n={self.n})"


def dirichlet(m: int, n: int, Q: int) -> QIntegrand:
    """f = sum_i |A_i|^2."""

    def func(x, a, A):
        return np.einsum("pqnm,pqnm->p", A, A)

    def grad(x, a, A):
        return 2.0 * A

    return QIntegrand(func, m, n, Q, grad_A=grad, x_dependent=False, value_dependent=False,
                      name="dirichlet", description={"kind": "dirichlet"})


def constant_integrand(value: float, m: int, n: int, Q: int) -> QIntegrand:
    value = float(value)

    def func(x, a, A):
        return np.full(len(A), value)

    def grad(x, a, A):
        return np.zeros_like(A)

    return QIntegrand(func, m, n, Q, grad_A=grad, x_dependent=False, value_dependent=False,
                      name="constant", description={"kind": "constant", "value": value})


# ---------------------------------------------------------------------------
# growth and invariance checks


@dataclass(frozen=True)
class GrowthBound:
    """0 <= f(x, a, A) <= C (1 + |a|^q + |A|^p).

    q is 0 when p > m and p* = mp/(m - p) when p < m; at p = m any q >= 1 is
    allowed but it must be given explicitly.
    """

    C: float
    p: float
    m: int
    q: float | None = None

    def __post_init__(self):
        if self.C < 0 or self.p < 1:
            raise InvalidInputError("growth bound needs C >= 0 and p >= 1")
        if self.p > self.m:
            rule = 0.0
        elif self.p < self.m:
            rule = self.m * self.p / (self.m - self.p)
        else:
            if self.q is None or self.q < 1:
                raise InvalidInputError("for p = m the value exponent q >= 1 must be chosen explicitly")
            rule = float(self.q)
        if self.q is not None and abs(float(self.q) - rule) > 1e-12:
            raise InvalidInputError(f"q must be {rule} for p={self.p}, m={self.m}")
        object.__setattr__(self, "q", rule)

    def bound(self, a_norm, A_norm):
        return self.C * (1.0 + np.asarray(a_norm) ** self.q + np.asarray(A_norm) ** self.p)


def _random_inputs(f: QIntegrand, rng, count: int, log_magnitudes: bool):
    x = rng.uniform(-0.5, 0.5, size=(count, f.m))
    a = rng.standard_normal((count, f.Q, f.n))
    A = rng.standard_normal((count, f.Q, f.n, f.m))
    if log_magnitudes:
        a *= (10.0 ** rng.uniform(-3, 3, size=count) / np.sqrt(np.einsum("pqn,pqn->p", a, a)))[:, None, None]
        A *= (10.0 ** rng.uniform(-3, 3, size=count) / np.sqrt(np.einsum("pqnm,pqnm->p", A, A)))[:, None, None, None]
    return x, a, A


def check_perm_invariance(f: QIntegrand, samples: int = 200, seed: int = 0, tol: float = 1e-12) -> bool:
    """Spot-check f under simultaneous permutations of (a_i, A_i).

    The comparison is |f(perm) - f| <= tol * max(1, |f|).
    """
    if samples < 1:
        raise InvalidInputError("samples must be >= 1")
    rng = make_rng(seed)
    x, a, A = _random_inputs(f, rng, samples, log_magnitudes=False)
    base = f(x, a, A)
    if f.Q == 1:
        return bool(np.all(np.isfinite(base)))
    for _ in range(3):
        perm = np.argsort(rng.random((samples, f.Q)), axis=1)
        pa = np.take_along_axis(a, perm[:, :, None], axis=1)
        pA = np.take_along_axis(A, perm[:, :, None, None], axis=1)
        with np.errstate(all="ignore"):
            diff = np.abs(f(x, pa, pA) - base)
        if not np.all(diff <= tol * np.maximum(1.0, np.abs(base))):
            return False
    return True


def check_growth(f: QIntegrand, b: GrowthBound, samples: int = 2000, seed: int = 0) -> bool:
    """Sample |a|, |A| log-uniformly in [1e-3, 1e3] and test 0 <= f <= bound."""
    if samples < 1:
        raise InvalidInputError("samples must be >= 1")
    if b.m != f.m:
        raise InvalidInputError("growth bound and integrand disagree on m")
    rng = make_rng(seed)
    x, a, A = _random_inputs(f, rng, samples, log_magnitudes=True)
    with np.errstate(all="ignore"):
        vals = f(x, a, A)
        bound = b.bound(np.sqrt(np.einsum("pqn,pqn->p", a, a)), np.sqrt(np.einsum("pqnm,pqnm->p", A, A)))
        ok = np.isfinite(vals) & (vals >= 0) & (vals <= bound)
    return bool(np.all(ok))


# ---------------------------------------------------------------------------
# energies


def _check_dims(f, u: QSheetField) -> None:
    if (f.m, f.n, f.Q) != (u.m, u.n, u.Q):
        raise InvalidInputError(
            f"integrand (m={f.m}, n={f.n}, Q={f.Q}) does not match field (m={u.m}, n={u.n}, Q={u.Q})"
        )


def cell_energies(f: QIntegrand, u: QSheetField, order: int = 4) -> np.ndarray:
    """Per-cell integrals of f(x, u, Du)."""
    _check_dims(f, u)
    Du = u.gradients
    C = u.n_cells
    if not f.x_dependent and not f.value_dependent:
        x = np.zeros((C, u.m))
        a = np.zeros((C, u.Q, u.n))
        return np.asarray(f.func(x, a, Du), dtype=float).reshape(C) * u.mesh.cell_volume
    pts, w, bary = u.quadrature(order)
    P = len(w)
    out = np.empty(C)
    step = max(1, _CHUNK // P)
    for s in range(0, C, step):
        e = min(C, s + step)
        x = pts[s:e].reshape(-1, u.m)
        a = np.einsum("pt,ctqn->cpqn", bary, u.cell_sheets[s:e]).reshape(-1, u.Q, u.n)
        A = np.repeat(Du[s:e], P, axis=0)
        vals = np.asarray(f.func(x, a, A), dtype=float).reshape(e - s, P)
        out[s:e] = vals @ w
    return out


def energy(f: QIntegrand, u: QSheetField, order: int = 4, cells=None) -> float:
    """F(u) = int f(x, u, Du), optionally restricted to a subset of cells."""
    vals = cell_energies(f, u, order)
    if cells is not None:
        vals = vals[np.asarray(cells)]
    return float(np.sum(vals))


def mattila_energy(A: QuadraticIntegrand, u: QSheetField) -> float:
    """int sum_i <A Du_i, Du_i>, computed cellwise from the constant gradients."""
    if (A.m, A.n) != (u.m, u.n):
        raise InvalidInputError("quadratic form and field disagree on m or n")
    v = vec_colmajor(u.gradients)  # (C, Q, nm)
    per_cell = np.einsum("cqi,ij,cqj->c", v, A.A, v)
    return float(np.sum(per_cell) * u.mesh.cell_volume)


# ---------------------------------------------------------------------------
# polyconvex families


class PolyconvexIntegrand(QIntegrand):
    """A Q-integrand with an explicit convex representative in the minors.

    ``convex_part(a, X)`` with a of shape (Q, n) and minor vectors X of shape
    (Q, tau) returns g(a, X) with f(a, L) = g(a, M(L_1), ..., M(L_Q));
    ``convex_subgradient(a, X)`` returns an element of the subdifferential in
    X, shape (Q, tau).
    """

    def __init__(self, func, m, n, Q, convex_part, convex_subgradient, **kwargs):
        super().__init__(func, m, n, Q, **kwargs)
        self.convex_part = convex_part
        self.convex_subgradient = convex_subgradient


def _subgradient_of(g, subgradient):
    sub = subgradient if subgradient is not None else getattr(g, "subgradient", None)
    if sub is None or not callable(g):
        raise ConfigurationError("polyconvex family needs a callable g with a subgradient oracle")
    return sub


def polyconvex_family(kind: str, g, m: int, n: int, Q: int, subgradient=None) -> PolyconvexIntegrand:
    """The three polyconvex example families.

    * ``"a"``: g(G(L, Q[[0]])) = g(sqrt(sum_i |L_i|^2)), with g a convex,
      nondecreasing function on [0, inf) acting elementwise on arrays.
    * ``"b"``: sum_{i,j} g(L_i - L_j), with g convex on n x m matrices
      (vectorized over leading axes), subgradient returning matrices.
    * ``"c"``: sum_i g(a_i, M(L_i)), with g jointly convex on R^n x R^tau;
      subgradient with respect to the minor argument.
    """
    dg = _subgradient_of(g, subgradient)
    nm = n * m
    t = tau(m, n)

    if kind == "a":
        def func(x, a, A):
            return np.asarray(g(np.sqrt(np.einsum("pqnm,pqnm->p", A, A))), dtype=float)

        def grad(x, a, A):
            r = np.sqrt(np.einsum("pqnm,pqnm->p", A, A))
            scale = np.where(r > 0, np.asarray(dg(r), dtype=float) / np.where(r > 0, r, 1.0), 0.0)
            return scale[:, None, None, None] * A

        def convex_part(a, X):
            return float(g(np.sqrt(np.sum(X[:, :nm] ** 2))))

        def convex_sub(a, X):
            out = np.zeros_like(X)
            r = np.sqrt(np.sum(X[:, :nm] ** 2))
            if r > 0:
                out[:, :nm] = float(dg(r)) * X[:, :nm] / r
            return out

    elif kind == "b":
        def func(x, a, A):
            diff = A[:, :, None] - A[:, None, :]
            return np.sum(np.asarray(g(diff), dtype=float).reshape(len(A), -1), axis=1)

        def grad(x, a, A):
            s = np.asarray(dg(A[:, :, None] - A[:, None, :]), dtype=float)
            return s.sum(axis=2) - s.sum(axis=1)

        def convex_part(a, X):
            L = unvec_colmajor(X[:, :nm], n, m)
            return float(np.sum(g(L[:, None] - L[None, :])))

        def convex_sub(a, X):
            L = unvec_colmajor(X[:, :nm], n, m)
            s = np.asarray(dg(L[:, None] - L[None, :]), dtype=float)
            out = np.zeros_like(X)
            out[:, :nm] = vec_colmajor(s.sum(axis=1) - s.sum(axis=0))
            return out

    elif kind == "c":
        def func(x, a, A):
            X = all_minors(A)  # (P, Q, tau)
            return np.sum(np.asarray(g(a, X), dtype=float).reshape(len(A), Q), axis=1)

        grad = None

        def convex_part(a, X):
            return float(np.sum(g(np.asarray(a)[None], np.asarray(X)[None])))

        def convex_sub(a, X):
            return np.asarray(dg(np.asarray(a)[None], np.asarray(X)[None]), dtype=float).reshape(Q, t)

    else:
        raise InvalidInputError(f"unknown polyconvex family {kind!r}; expected 'a', 'b' or 'c'")

    description = getattr(g, "description", None)
    return PolyconvexIntegrand(
        func, m, n, Q, convex_part, convex_sub, grad_A=grad, x_dependent=False,
        value_dependent=(kind == "c"), name=f"family_{kind}",
        description={"kind": f"family_{kind}", "g": description} if description is not None else None,
    )


class _Fn:
    """A callable with an attached subgradient and JSON description."""

    def __init__(self, func, subgradient, description):
        self._func = func
        self.subgradient = subgradient
        self.description = description

    def __call__(self, *args):
        return self._func(*args)


def power_fn(p: float = 2.0, c: float = 1.0) -> _Fn:
    """t -> c t^p on [0, inf) (convex nondecreasing for p >= 1, c >= 0)."""
    if p < 1 or c < 0:
        raise InvalidInputError("power profile needs p >= 1 and c >= 0")
    return _Fn(lambda t: c * np.asarray(t, dtype=float) ** p,
               lambda t: c * p * np.asarray(t, dtype=float) ** (p - 1),
               {"type": "power", "p": p, "c": c})


def frobenius_power_fn(p: float = 2.0, c: float = 1.0) -> _Fn:
    """M -> c |M|_F^p on (..., n, m) arrays."""
    if p < 1 or c < 0:
        raise InvalidInputError("Frobenius profile needs p >= 1 and c >= 0")

    def func(M):
        return c * np.sqrt(np.sum(np.asarray(M) ** 2, axis=(-2, -1))) ** p

    def sub(M):
        M = np.asarray(M, dtype=float)
        r = np.sqrt(np.sum(M**2, axis=(-2, -1)))
        if p == 2:
            return 2.0 * c * M
        scale = np.where(r > 0, c * p * np.where(r > 0, r, 1.0) ** (p - 2), 0.0)
        return scale[..., None, None] * M

    return _Fn(func, sub, {"type": "frobenius_power", "p": p, "c": c})


def minor_quadratic_fn(weights, value_weight: float = 0.0) -> _Fn:
    """(a, X) -> sum_k w_k X_k^2 + c |a|^2 with w_k, c >= 0."""
    w = np.asarray(weights, dtype=float)
    if np.any(w < 0) or value_weight < 0:
        raise InvalidInputError("minor-quadratic weights must be nonnegative")
    c = float(value_weight)

    def func(a, X):
        return np.sum(w * np.asarray(X) ** 2, axis=-1) + c * np.sum(np.asarray(a) ** 2, axis=-1)

    def sub(a, X):
        return 2.0 * w * np.asarray(X)

    return _Fn(func, sub, {"type": "minor_quadratic", "weights": w.tolist(), "value_weight": c})


def g_from_json(doc: dict, m: int, n: int) -> _Fn:
    kind = doc.get("type")
    if kind == "power":
        return power_fn(doc.get("p", 2.0), doc.get("c", 1.0))
    if kind == "frobenius_power":
        return frobenius_power_fn(doc.get("p", 2.0), doc.get("c", 1.0))
    if kind == "minor_quadratic":
        weights = doc.get("weights", [1.0] * tau(m, n))
        if len(weights) != tau(m, n):
            raise InvalidInputError(f"minor weights must have length tau={tau(m, n)}")
        return minor_quadratic_fn(weights, doc.get("value_weight", 0.0))
    raise ConfigurationError(f"unknown g profile {kind!r}")


def integrand_from_json(doc: dict, m: int, n: int, Q: int) -> QIntegrand:
    """Build an integrand from its JSON description."""
    kind = doc.get("kind")
    if kind == "dirichlet":
        return dirichlet(m, n, Q)
    if kind == "constant":
        return constant_integrand(doc.get("value", 1.0), m, n, Q)
    if kind == "quadratic":
        return QuadraticIntegrand(doc["matrix"], m, n).integrand(Q)
    if kind in ("family_a", "family_b", "family_c"):
        if "g" not in doc:
            raise ConfigurationError(f"{kind} requires a 'g' profile")
        return polyconvex_family(kind[-1], g_from_json(doc["g"], m, n), m, n, Q)
    raise ConfigurationError(f"unknown integrand kind {kind!r}")

