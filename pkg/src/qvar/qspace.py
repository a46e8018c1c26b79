"""The metric space of unordered Q-tuples of points in R^n.

A :class:`QPoint` stores its points in some order, but nothing in the public
API depends on that order: the metric, the mean, the grouping and the JSON
form all treat the tuple as a multiset.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass

import numpy as np
from scipy.optimize import linear_sum_assignment

from ._validation import InvalidInputError, as_float_array, check_points


@dataclass(frozen=True, eq=False)
class QPoint:
    """An element sum_i [[P_i]] of A_Q(R^n)."""

    points: np.ndarray

    def __post_init__(self):
        pts = check_points(self.points).copy()
        pts.setflags(write=False)
        object.__setattr__(self, "points", pts)

    @classmethod
    def repeated(cls, a, q: int) -> "QPoint":
        """q [[a]]."""
        a = np.atleast_1d(np.asarray(a, dtype=float))
        return cls(np.tile(a, (q, 1)))

    @property
    def Q(self) -> int:
        return self.points.shape[0]

    @property
    def n(self) -> int:
        return self.points.shape[1]

    def canonical(self) -> np.ndarray:
        """Points sorted lexicographically (first coordinate is the primary key)."""
        order = np.lexsort(self.points.T[::-1])
        return self.points[order]

    def to_json(self) -> dict:
        return {"n": self.n, "points": self.canonical().tolist()}

    @classmethod
    def from_json(cls, doc: dict) -> "QPoint":
        try:
            n = int(doc["n"])
            pts = check_points(doc["points"], n)
        except (KeyError, TypeError) as exc:
            raise InvalidInputError(f"malformed QPoint document: {exc}") from exc
        return cls(pts)

    def __eq__(self, other):
        if not isinstance(other, QPoint):
            return NotImplemented
        return self.points.shape == other.points.shape and bool(
            np.array_equal(self.canonical(), other.canonical())
        )

    def __hash__(self):
        return hash(self.canonical().tobytes())

    def __repr__(self):
        return f"QPoint(Q={self.Q}, n={self.n}, points={self.canonical().tolist()})"


def _check_pair(T1: QPoint, T2: QPoint) -> None:
    if T1.Q != T2.Q or T1.n != T2.n:
        raise InvalidInputError(
            f"Q-points differ in shape: (Q={T1.Q}, n={T1.n}) vs (Q={T2.Q}, n={T2.n})"
        )


def _sq_cost(P: np.ndarray, S: np.ndarray) -> np.ndarray:
    diff = P[:, None, :] - S[None, :, :]
    return np.einsum("ijk,ijk->ij", diff, diff)


def optimal_matching(T1: QPoint, T2: QPoint) -> np.ndarray:
    """A permutation sigma minimizing sum |P_i - S_sigma(i)|^2.

    When several permutations are optimal the returned one is whatever the
    assignment solver picks; the metric value itself is unique.
    """
    _check_pair(T1, T2)
    cost = _sq_cost(T1.points, T2.points)
    if not np.all(np.isfinite(cost)):
        raise FloatingPointError("squared distances overflow; no matching is defined")
    rows, cols = linear_sum_assignment(cost)
    sigma = np.empty(T1.Q, dtype=int)
    sigma[rows] = cols
    return sigma


def metric_g(T1: QPoint, T2: QPoint) -> float:
    """G(T1, T2) = min over permutations of sqrt(sum_i |P_i - S_sigma(i)|^2)."""
    _check_pair(T1, T2)
    if T1.Q == 1:
        return float(np.linalg.norm(T1.points[0] - T2.points[0]))
    cost = _sq_cost(T1.points, T2.points)
    if not np.all(np.isfinite(cost)):
        return float("inf")
    rows, cols = linear_sum_assignment(cost)
    return float(np.sqrt(cost[rows, cols].sum()))


def metric_g_bruteforce(T1: QPoint, T2: QPoint) -> float:
    """Enumerate all Q! permutations. Test oracle only."""
    _check_pair(T1, T2)
    cost = _sq_cost(T1.points, T2.points)
    idx = np.arange(T1.Q)
    best = min(cost[idx, list(perm)].sum() for perm in itertools.permutations(range(T1.Q)))
    return float(np.sqrt(best))


def metric_g_batch(P: np.ndarray, S: np.ndarray) -> np.ndarray:
    """G between stacks of Q-tuples given as arrays of shape (..., Q, n)."""
    P = np.asarray(P, dtype=float)
    S = np.asarray(S, dtype=float)
    if P.shape != S.shape:
        raise InvalidInputError(f"shape mismatch {P.shape} vs {S.shape}")
    lead = P.shape[:-2]
    Q = P.shape[-2]
    if Q == 1:
        return np.linalg.norm(P[..., 0, :] - S[..., 0, :], axis=-1)
    flatP = P.reshape((-1,) + P.shape[-2:])
    flatS = S.reshape((-1,) + S.shape[-2:])
    diff = flatP[:, :, None, :] - flatS[:, None, :, :]
    costs = np.einsum("bijk,bijk->bij", diff, diff)
    out = np.empty(len(costs))
    for b, cost in enumerate(costs):
        if not np.all(np.isfinite(cost)):
            out[b] = np.inf
            continue
        rows, cols = linear_sum_assignment(cost)
        out[b] = cost[rows, cols].sum()
    return np.sqrt(out).reshape(lead)


def translate(T: QPoint, v) -> QPoint:
    """tau_v(T) = sum_i [[T_i - v]]."""
    v = as_float_array(np.atleast_1d(v), ndim=1, name="translation")
    if v.shape[0] != T.n:
        raise InvalidInputError(f"translation has dimension {v.shape[0]}, Q-point has n={T.n}")
    return QPoint(T.points - v)


def mean_eta(T: QPoint) -> np.ndarray:
    """The barycenter Q^{-1} sum_i T_i."""
    return T.canonical().mean(axis=0)


@dataclass(frozen=True)
class SupportGrouping:
    """Decomposition T = sum_j q_j [[a_j]] up to a clustering tolerance."""

    multiplicities: tuple[int, ...]
    centers: np.ndarray
    tolerance: float

    @property
    def groups(self) -> list[tuple[int, np.ndarray]]:
        return list(zip(self.multiplicities, self.centers))

    @property
    def Q(self) -> int:
        return int(sum(self.multiplicities))

    def __len__(self):
        return len(self.multiplicities)


def group_by_support(T: QPoint, tol: float = 0.0) -> SupportGrouping:
    """Single-linkage clustering of the support at threshold ``tol``.

    Two points are linked when their distance is <= tol, so ``tol=0`` merges
    exactly coincident points only.  Groups come out ordered by their center,
    lexicographically.
    """
    if tol < 0:
        raise InvalidInputError("tolerance must be nonnegative")
    pts = T.canonical()
    Q = len(pts)
    parent = list(range(Q))

    def find(i):
        while parent[i] != i:
            parent[i] = parent[parent[i]]
            i = parent[i]
        return i

    dist = np.sqrt(_sq_cost(pts, pts))
    for i in range(Q):
        for j in range(i + 1, Q):
            if dist[i, j] <= tol:
                ri, rj = find(i), find(j)
                if ri != rj:
                    parent[max(ri, rj)] = min(ri, rj)
    clusters: dict[int, list[int]] = {}
    for i in range(Q):
        clusters.setdefault(find(i), []).append(i)
    members = list(clusters.values())
    centers = np.array([pts[idx].mean(axis=0) for idx in members])
    mult = [len(idx) for idx in members]
    order = np.lexsort(centers.T[::-1])
    centers = centers[order]
    centers.setflags(write=False)
    return SupportGrouping(tuple(mult[i] for i in order), centers, float(tol))
