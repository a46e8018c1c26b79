"""Multi-indices, minors and polyaffine maps of n x m matrices.

Matrices are n x m: rows index the target R^n, columns the domain R^m.
The minor for a pair (alpha, beta) takes columns alpha (a subset of the
domain indices) and rows beta (a subset of the target indices).  All indices
are zero-based.

The canonical enumeration orders pairs by size l, then lexicographically by
alpha, then by beta.  For l = 1 this is exactly column-major order of the
entries, so ``all_minors(A)[:n*m]`` is the column-major flattening of A.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass
from functools import lru_cache
from math import comb

import numpy as np

from ._validation import InvalidInputError, check_matrix


def tau(m: int, n: int) -> int:
    """Number of minors of an n x m matrix: sum_k C(m,k) C(n,k), k <= min(m,n)."""
    if m < 1 or n < 1:
        raise InvalidInputError("dimensions must be positive")
    return sum(comb(m, k) * comb(n, k) for k in range(1, min(m, n) + 1))


def permutation_sign(seq) -> int:
    """Sign of the permutation sorting ``seq`` (distinct entries)."""
    seq = list(seq)
    sign = 1
    for i in range(len(seq)):
        for j in range(i + 1, len(seq)):
            if seq[i] > seq[j]:
                sign = -sign
    return sign


@dataclass(frozen=True)
class MultiIndexPair:
    alpha: tuple[int, ...]
    beta: tuple[int, ...]
    m: int
    n: int

    @property
    def order(self) -> int:
        return len(self.alpha)

    @property
    def alpha_bar(self) -> tuple[int, ...]:
        return tuple(c for c in range(self.m) if c not in self.alpha)

    @property
    def sigma(self) -> int:
        """Sign of the permutation ordering (alpha, alpha_bar)."""
        return permutation_sign(self.alpha + self.alpha_bar)

    @property
    def pullback_sign(self) -> int:
        """Sign relating dx_{alpha_bar} ^ dy_beta on a graph to the minor.

        The pullback of dx_{alpha_bar} ^ dy_beta through x -> (x, u(x)) is
        ``pullback_sign * M_{alpha beta}(Du) dx_1 ^ ... ^ dx_m``; it equals
        ``sigma * (-1)**(l*(m-l))``.
        """
        return permutation_sign(self.alpha_bar + self.alpha)


@lru_cache(maxsize=None)
def enumerate_pairs(m: int, n: int) -> tuple[MultiIndexPair, ...]:
    pairs = []
    for l in range(1, min(m, n) + 1):
        for alpha in itertools.combinations(range(m), l):
            for beta in itertools.combinations(range(n), l):
                pairs.append(MultiIndexPair(alpha, beta, m, n))
    return tuple(pairs)


@lru_cache(maxsize=None)
def _index_table(m: int, n: int) -> dict:
    return {(p.alpha, p.beta): i for i, p in enumerate(enumerate_pairs(m, n))}


def pair_index(pair: MultiIndexPair) -> int:
    try:
        return _index_table(pair.m, pair.n)[(pair.alpha, pair.beta)]
    except KeyError:
        raise IndexError(f"{pair} is not a valid multi-index pair") from None


def pair_at(index: int, m: int, n: int) -> MultiIndexPair:
    pairs = enumerate_pairs(m, n)
    if not 0 <= index < len(pairs):
        raise IndexError(f"minor index {index} out of range for tau={len(pairs)}")
    return pairs[index]


def _det(sub: np.ndarray) -> np.ndarray:
    l = sub.shape[-1]
    if l == 1:
        return sub[..., 0, 0]
    if l == 2:
        return sub[..., 0, 0] * sub[..., 1, 1] - sub[..., 0, 1] * sub[..., 1, 0]
    return np.linalg.det(sub)


def minor(A, idx: MultiIndexPair) -> float:
    """det of the submatrix with rows beta and columns alpha."""
    A = np.asarray(A, dtype=float)
    if A.ndim != 2 or A.shape != (idx.n, idx.m):
        raise InvalidInputError(f"matrix shape {A.shape} does not fit pair for n={idx.n}, m={idx.m}")
    if (
        len(idx.alpha) != len(idx.beta)
        or not idx.alpha
        or any(not 0 <= c < idx.m for c in idx.alpha)
        or any(not 0 <= r < idx.n for r in idx.beta)
        or list(idx.alpha) != sorted(set(idx.alpha))
        or list(idx.beta) != sorted(set(idx.beta))
    ):
        raise IndexError(f"invalid multi-index pair {idx}")
    return float(_det(A[np.ix_(idx.beta, idx.alpha)]))


@lru_cache(maxsize=None)
def _blocks(m: int, n: int):
    out = []
    for l in range(1, min(m, n) + 1):
        alphas = list(itertools.combinations(range(m), l))
        betas = list(itertools.combinations(range(n), l))
        rows = np.array([b for a in alphas for b in betas]).reshape(-1, l)
        cols = np.array([a for a in alphas for b in betas]).reshape(-1, l)
        out.append((l, rows, cols))
    return out


def all_minors(A) -> np.ndarray:
    """M(A) in canonical order.  Accepts a batch of shape (..., n, m)."""
    A = np.asarray(A, dtype=float)
    if A.ndim < 2:
        raise InvalidInputError("expected a matrix or a batch of matrices")
    n, m = A.shape[-2:]
    parts = []
    for l, rows, cols in _blocks(m, n):
        if l == 1:
            parts.append(np.swapaxes(A, -1, -2).reshape(A.shape[:-2] + (n * m,)))
            continue
        sub = A[..., rows[:, :, None], cols[:, None, :]]
        parts.append(_det(sub))
    return np.concatenate(parts, axis=-1)


@dataclass(frozen=True, eq=False)
class PolyaffineFn:
    """P(A) = c0 + <zeta, M(A)>."""

    c0: float
    zeta: np.ndarray
    m: int
    n: int

    def __post_init__(self):
        z = np.asarray(self.zeta, dtype=float).reshape(-1).copy()
        if z.shape[0] != tau(self.m, self.n):
            raise InvalidInputError(f"zeta must have length tau={tau(self.m, self.n)}, got {z.shape[0]}")
        z.setflags(write=False)
        object.__setattr__(self, "zeta", z)
        object.__setattr__(self, "c0", float(self.c0))

    def __call__(self, A) -> np.ndarray | float:
        val = self.c0 + all_minors(A) @ self.zeta
        return float(val) if np.ndim(val) == 0 else val

    def coefficient(self, pair: MultiIndexPair) -> float:
        return float(self.zeta[pair_index(pair)])

    def to_json(self) -> dict:
        return {"m": self.m, "n": self.n, "c0": self.c0, "zeta": self.zeta.tolist()}

    @classmethod
    def from_json(cls, doc: dict) -> "PolyaffineFn":
        return cls(doc.get("c0", 0.0), doc["zeta"], int(doc["m"]), int(doc["n"]))


def polyaffine_support(f, a, A) -> list[PolyaffineFn]:
    """Polyaffine maps P_1..P_Q touching a polyconvex Q-integrand at (a, A).

    ``f`` must expose ``convex_part(a, X)`` and ``convex_subgradient(a, X)``
    acting on minor vectors X of shape (Q, tau) (see
    :class:`qvar.integrands.PolyconvexIntegrand`).  With zeta a subgradient at
    X = M(A_1..A_Q), P_j(L) = f(a, A)/Q + <zeta_j, M(L) - M(A_j)>, so that
    sum_j P_j(A_j) = f(a, A) and sum_j P_j(L_j) <= f(a, L) for all L.
    """
    convex_part = getattr(f, "convex_part", None)
    subgradient = getattr(f, "convex_subgradient", None)
    if convex_part is None or subgradient is None:
        raise InvalidInputError("integrand does not expose a convex representative with subgradients")
    m, n, Q = f.m, f.n, f.Q
    a = np.asarray(a, dtype=float).reshape(Q, n)
    A = np.stack([check_matrix(Ai, n, m) for Ai in np.asarray(A, dtype=float).reshape(Q, n, m)])
    same = np.all(a[:, None, :] == a[None, :, :], axis=-1)
    for i, j in zip(*np.nonzero(same)):
        if not np.array_equal(A[i], A[j]):
            raise InvalidInputError(f"a_{i} == a_{j} but A_{i} != A_{j}")
    X = all_minors(A)
    value = float(convex_part(a, X))
    zeta = np.asarray(subgradient(a, X), dtype=float).reshape(Q, -1)
    for i, j in zip(*np.nonzero(same)):
        if not np.allclose(zeta[i], zeta[j], rtol=0, atol=1e-12):
            raise InvalidInputError("subgradient oracle broke the symmetry zeta_i == zeta_j for a_i == a_j")
    return [PolyaffineFn(value / Q - zeta[j] @ X[j], zeta[j], m, n) for j in range(Q)]
