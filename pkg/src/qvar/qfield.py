"""Discrete Q-valued maps on cube meshes.

The central object is :class:`QSheetField`: a piecewise-affine Q-valued map
on a Kuhn-triangulated cube.  Each vertex stores an unordered Q-tuple, and
each cell stores a *matching*, i.e. for every local vertex the permutation
saying which stored entry belongs to which of the cell's Q affine sheets.
Matchings are per cell, so branched maps (sheets that swap around a point
where they coincide) are representable.
"""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass, field
from functools import cached_property

import numpy as np
from scipy.optimize import linear_sum_assignment

from ._mesh import KuhnMesh
from ._quadrature import barycentric, cube_rule, simplex_rule
from ._validation import DomainError, InvalidInputError, check_matrix, check_points, check_positive_int
from .qspace import QPoint, group_by_support, metric_g_batch

#: G-sup tolerance for boundary-pinned competitors.
BOUNDARY_TOL = 1e-9


class InvalidCompetitorError(InvalidInputError):
    """A competitor does not carry the required boundary trace."""


def _assign(src: np.ndarray, dst: np.ndarray) -> np.ndarray:
    """perm with dst[perm[i]] closest to src[i] in the optimal-assignment sense."""
    if len(src) == 1:
        return np.zeros(1, dtype=np.int64)
    diff = src[:, None, :] - dst[None, :, :]
    rows, cols = linear_sum_assignment(np.einsum("ijk,ijk->ij", diff, diff))
    out = np.empty(len(src), dtype=np.int64)
    out[rows] = cols
    return out


# ---------------------------------------------------------------------------
# affine Q-maps


@dataclass(frozen=True, eq=False)
class AffineQMap:
    """sum_j q_j [[a_j + L_j (x - origin)]] with pairwise distinct a_j."""

    multiplicities: tuple[int, ...]
    centers: np.ndarray
    slopes: np.ndarray
    origin: np.ndarray = None

    def __post_init__(self):
        mult = tuple(check_positive_int(q, "multiplicity") for q in self.multiplicities)
        centers = np.atleast_2d(np.asarray(self.centers, dtype=float))
        slopes = np.asarray(self.slopes, dtype=float)
        if slopes.ndim == 2:
            slopes = slopes[None]
        J, n = centers.shape
        if len(mult) != J or slopes.shape[:2] != (J, n):
            raise InvalidInputError("groups, centers and slopes disagree in count or dimension")
        m = slopes.shape[2]
        origin = np.zeros(m) if self.origin is None else np.asarray(self.origin, dtype=float).reshape(m)
        for i in range(J):
            for j in range(i + 1, J):
                if np.array_equal(centers[i], centers[j]):
                    raise InvalidInputError("group centers must be pairwise distinct")
        for arr in (centers, slopes, origin):
            arr.setflags(write=False)
        object.__setattr__(self, "multiplicities", mult)
        object.__setattr__(self, "centers", centers)
        object.__setattr__(self, "slopes", slopes)
        object.__setattr__(self, "origin", origin)

    @classmethod
    def from_groups(cls, groups, origin=None) -> "AffineQMap":
        """Build from ``[(q_j, a_j, L_j), ...]``."""
        groups = list(groups)
        if not groups:
            raise InvalidInputError("an affine Q-map needs at least one group")
        n = np.atleast_1d(groups[0][1]).shape[0]
        L0 = np.asarray(groups[0][2], dtype=float)
        m = L0.shape[-1] if L0.ndim == 2 else L0.size // n
        return cls(
            tuple(int(g[0]) for g in groups),
            np.array([np.atleast_1d(np.asarray(g[1], dtype=float)) for g in groups]),
            np.array([check_matrix(g[2], n, m, "slope") for g in groups]),
            origin,
        )

    @property
    def J(self) -> int:
        return len(self.multiplicities)

    @property
    def Q(self) -> int:
        return int(sum(self.multiplicities))

    @property
    def n(self) -> int:
        return self.centers.shape[1]

    @property
    def m(self) -> int:
        return self.slopes.shape[2]

    @property
    def groups(self):
        return list(zip(self.multiplicities, self.centers, self.slopes))

    def group_of_sheet(self) -> np.ndarray:
        return np.repeat(np.arange(self.J), self.multiplicities)

    def frozen_points(self) -> np.ndarray:
        """(Q, n): a_1 repeated q_1 times, ..., a_J repeated q_J times."""
        return self.centers[self.group_of_sheet()]

    def frozen_gradients(self) -> np.ndarray:
        """(Q, n, m): Du(origin), each L_j repeated q_j times."""
        return self.slopes[self.group_of_sheet()]

    def sheets(self, X) -> np.ndarray:
        """Labelled sheet values at points X (P, m) -> (P, Q, n)."""
        X = np.atleast_2d(np.asarray(X, dtype=float)) - self.origin
        g = self.group_of_sheet()
        return self.centers[g][None] + np.einsum("qnm,pm->pqn", self.slopes[g], X)

    def evaluate_many(self, X) -> np.ndarray:
        return self.sheets(X)

    def evaluate(self, x) -> QPoint:
        return QPoint(self.sheets(np.asarray(x, dtype=float).reshape(1, -1))[0])

    def to_field(self, cells_per_side: int, center=None, side: float = 1.0) -> "QSheetField":
        center = np.zeros(self.m) if center is None else center
        return QSheetField.from_sheets(self.sheets, self.n, self.Q, cells_per_side, center, side)

    def group_field(self, j: int, cells_per_side: int, center=None, side: float = 1.0) -> "QSheetField":
        """The q_j-valued affine piece q_j [[a_j + L_j x]] as a field."""
        sub = AffineQMap((self.multiplicities[j],), self.centers[j : j + 1], self.slopes[j : j + 1], self.origin)
        return sub.to_field(cells_per_side, center, side)

    def to_json(self) -> dict:
        doc = {
            "groups": [
                {"q": int(q), "a": a.tolist(), "L": L.tolist()} for q, a, L in self.groups
            ]
        }
        if np.any(self.origin != 0):
            doc["origin"] = self.origin.tolist()
        return doc

    @classmethod
    def from_json(cls, doc: dict) -> "AffineQMap":
        try:
            groups = [(g["q"], g["a"], g["L"]) for g in doc["groups"]]
        except (KeyError, TypeError) as exc:
            raise InvalidInputError(f"malformed affine map document: {exc}") from exc
        return cls.from_groups(groups, doc.get("origin"))


# ---------------------------------------------------------------------------
# smooth synthetic Q-maps


class QMapFunction:
    """A Q-valued map given by Q labelled sheet functions and their Jacobians.

    ``sheets(X)`` maps points (P, m) to (P, Q, n); ``jacobian(X)`` to
    (P, Q, n, m).  Used for smooth synthetic fields in blow-up experiments.
    """

    def __init__(self, sheets, jacobian, m: int, n: int, Q: int, domain=None):
        self._sheets = sheets
        self._jacobian = jacobian
        self.m, self.n, self.Q = int(m), int(n), int(Q)
        self.domain = domain  # (center, side) or None for all of R^m

    def evaluate_many(self, X) -> np.ndarray:
        X = np.atleast_2d(np.asarray(X, dtype=float))
        return np.asarray(self._sheets(X), dtype=float).reshape(len(X), self.Q, self.n)

    def evaluate(self, x) -> QPoint:
        return QPoint(self.evaluate_many(np.reshape(x, (1, -1)))[0])

    def first_order(self, x0, tol: float = 0.0) -> AffineQMap:
        """T_{x0}u, grouping sheets whose values at x0 coincide within ``tol``."""
        x0 = np.asarray(x0, dtype=float).reshape(1, self.m)
        vals = self.evaluate_many(x0)[0]
        jac = np.asarray(self._jacobian(x0), dtype=float).reshape(self.Q, self.n, self.m)
        grouping = group_by_support(QPoint(vals), tol)
        groups = []
        for q, a in grouping.groups:
            members = np.linalg.norm(vals - a, axis=1) <= max(tol, 0.0) + 1e-15 * (1 + np.abs(a).max())
            if members.sum() != q:
                d = np.linalg.norm(vals - a, axis=1)
                members = np.zeros(self.Q, dtype=bool)
                members[np.argsort(d, kind="stable")[:q]] = True
            groups.append((q, a, jac[members].mean(axis=0)))
        return AffineQMap.from_groups(groups, origin=x0[0])


# ---------------------------------------------------------------------------
# piecewise-affine Q-fields


class QSheetField:
    """Piecewise-affine Q-valued field on the cube C_side(center).

    Parameters
    ----------
    vertex_values : array (V, Q, n)
        Unordered Q-tuple at each mesh vertex (vertex order as in the mesh).
    cells_per_side, center, side
        Mesh description.
    matching : int array (C, m+1, Q), optional
        ``matching[c, t, i]`` is the entry of local vertex t that belongs to
        sheet i of cell c.  Defaults to the identity (stored order = sheet
        label everywhere).
    """

    def __init__(self, vertex_values, cells_per_side: int, center, side: float = 1.0, matching=None):
        center = np.atleast_1d(np.asarray(center, dtype=float))
        m = center.shape[0]
        N = check_positive_int(cells_per_side, "cells_per_side")
        if not side > 0:
            raise InvalidInputError("side must be positive")
        self.mesh = KuhnMesh(m, N, center, side)
        vals = np.asarray(vertex_values, dtype=float)
        if vals.ndim == 2:
            vals = vals[:, :, None]
        if vals.ndim != 3 or vals.shape[0] != self.mesh.n_vertices:
            raise InvalidInputError(
                f"vertex_values must be ({self.mesh.n_vertices}, Q, n), got {vals.shape}"
            )
        if not np.all(np.isfinite(vals)):
            raise InvalidInputError("vertex values must be finite")
        vals = vals.copy()
        vals.setflags(write=False)
        self.vertex_values = vals
        Q = vals.shape[1]
        if matching is None:
            match = np.broadcast_to(np.arange(Q), (self.mesh.n_cells, m + 1, Q)).copy()
        else:
            match = np.asarray(matching, dtype=np.int64)
            if match.shape != (self.mesh.n_cells, m + 1, Q):
                raise InvalidInputError(f"matching must have shape {(self.mesh.n_cells, m + 1, Q)}")
            if not np.all(np.sort(match, axis=-1) == np.arange(Q)):
                raise InvalidInputError("each matching row must be a permutation")
        match.setflags(write=False)
        self.matching = match

    # -- basic attributes ---------------------------------------------------
    @property
    def m(self) -> int:
        return self.mesh.m

    @property
    def n(self) -> int:
        return self.vertex_values.shape[2]

    @property
    def Q(self) -> int:
        return self.vertex_values.shape[1]

    @property
    def cells_per_side(self) -> int:
        return self.mesh.N

    @property
    def center(self) -> np.ndarray:
        return self.mesh.center

    @property
    def side(self) -> float:
        return self.mesh.side

    @property
    def n_cells(self) -> int:
        return self.mesh.n_cells

    # -- constructors --------------------------------------------------------
    @classmethod
    def from_sheets(cls, sheets, n: int, Q: int, cells_per_side: int, center, side: float = 1.0):
        """Sample labelled sheets ``sheets(X) -> (P, Q, n)`` at the vertices."""
        mesh = KuhnMesh(len(np.atleast_1d(center)), cells_per_side, center, side)
        vals = np.asarray(sheets(mesh.vertices), dtype=float).reshape(mesh.n_vertices, Q, n)
        return cls(vals, cells_per_side, center, side)

    @classmethod
    def from_branches(cls, branches, n: int, Q: int, cells_per_side: int, center, side: float = 1.0):
        """Sample a branched map whose labelled branches are continuous inside each cell.

        ``branches(X) -> (P, Q, n)`` may jump across cell boundaries (e.g. a
        branch cut along grid lines).  Each cell is matched to the branch
        values seen from its interior, so the resulting field follows the
        branches and not the label order.
        """
        mesh = KuhnMesh(len(np.atleast_1d(center)), cells_per_side, center, side)
        vals = np.asarray(branches(mesh.vertices), dtype=float).reshape(mesh.n_vertices, Q, n)
        corners = mesh.vertices[mesh.cells]
        centroid = corners.mean(axis=1, keepdims=True)
        inner = corners + 1e-7 * (centroid - corners)
        C, m1 = mesh.cells.shape
        seen = np.asarray(branches(inner.reshape(-1, mesh.m)), dtype=float).reshape(C, m1, Q, n)
        match = np.empty((C, m1, Q), dtype=np.int64)
        for c in range(C):
            for t in range(m1):
                match[c, t] = _assign(seen[c, t], vals[mesh.cells[c, t]])
        return cls(vals, cells_per_side, center, side, match)

    @classmethod
    def from_vertex_values(cls, values, cells_per_side: int, center, side: float = 1.0, relabel: bool = False):
        """Fields from raw vertex tuples with one global labelling.

        With ``relabel=True`` each vertex's entries are re-ordered by
        optimal-assignment propagation from vertex 0 along grid edges
        (breadth first, neighbours in lexicographic order), so that sheets
        follow nearest entries.
        """
        mesh = KuhnMesh(len(np.atleast_1d(center)), cells_per_side, center, side)
        vals = np.asarray(values, dtype=float)
        if vals.ndim == 2:
            vals = vals[:, :, None]
        if relabel and vals.shape[1] > 1:
            vals = _propagate_labels(mesh, vals)
        return cls(vals, cells_per_side, center, side)

    @classmethod
    def constant(cls, T: QPoint, m: int, cells_per_side: int = 1, center=None, side: float = 1.0):
        center = np.zeros(m) if center is None else center
        mesh = KuhnMesh(m, cells_per_side, center, side)
        return cls(np.broadcast_to(T.points, (mesh.n_vertices, T.Q, T.n)), cells_per_side, center, side)

    def with_vertex_values(self, values) -> "QSheetField":
        """Same mesh and matching, new vertex tuples."""
        return QSheetField(values, self.cells_per_side, self.center, self.side, self.matching)

    # -- derived data ----------------------------------------------------------
    @cached_property
    def cell_sheets(self) -> np.ndarray:
        """(C, m+1, Q, n): sheet values at each cell's local vertices."""
        vals = self.vertex_values[self.mesh.cells]  # (C, m+1, Q, n)
        return np.take_along_axis(vals, self.matching[..., None], axis=2)

    @cached_property
    def gradients(self) -> np.ndarray:
        """(C, Q, n, m): constant differential of each sheet on each cell."""
        S = self.cell_sheets
        C = S.shape[0]
        diffs = (S[:, 1:] - S[:, :-1]) / self.mesh.h  # (C, m, Q, n)
        Du = np.zeros((C, self.Q, self.n, self.m))
        rows = np.arange(C)
        for t in range(self.m):
            Du[rows, :, :, self.mesh.cell_sigma[:, t]] = diffs[:, t]
        Du.setflags(write=False)
        return Du

    def differential(self, cell: int) -> np.ndarray:
        """Q-tuple of n x m matrices Du_i on ``cell`` (shape (Q, n, m))."""
        if not (isinstance(cell, (int, np.integer)) and 0 <= cell < self.n_cells):
            raise IndexError(f"cell index {cell!r} out of range [0, {self.n_cells})")
        return self.gradients[cell].copy()

    def gradient_norms(self) -> np.ndarray:
        """|Du| = sqrt(sum_i |Du_i|_F^2) per cell."""
        return np.sqrt(np.einsum("cqnm,cqnm->c", self.gradients, self.gradients))

    def lipschitz_seminorm(self) -> float:
        return float(np.sqrt(np.einsum("cqnm,cqnm->cq", self.gradients, self.gradients)).max())

    def gradient_energy(self, p: float = 2.0) -> float:
        """int |Du|^p."""
        return float(np.sum(self.gradient_norms() ** p) * self.mesh.cell_volume)

    # -- evaluation --------------------------------------------------------------
    def values_in_cells(self, cells, bary) -> np.ndarray:
        return np.einsum("pt,ptqn->pqn", bary, self.cell_sheets[cells])

    def evaluate_many(self, X) -> np.ndarray:
        cells, bary = self.mesh.locate(X)
        return self.values_in_cells(cells, bary)

    def evaluate(self, x) -> QPoint:
        return QPoint(self.evaluate_many(np.reshape(np.asarray(x, dtype=float), (1, -1)))[0])

    def quadrature(self, order: int = 4):
        """Points (C, P, m), weights (P,) already scaled by the cell volume,
        and the barycentric weights (P, m+1) of a per-cell simplex rule."""
        ref, w = simplex_rule(self.m, order)
        bary = barycentric(ref)
        return self.mesh.cell_points(bary), w * (self.mesh.cell_volume * np.prod(np.arange(1, self.m + 1))), bary

    def sheet_values_at(self, bary) -> np.ndarray:
        """(C, P, Q, n) sheet values at barycentric points of every cell."""
        return np.einsum("pt,ctqn->cpqn", bary, self.cell_sheets)

    # -- structure checks ------------------------------------------------------
    def face_mismatch(self) -> float:
        """Largest disagreement between the two sides of any interior facet."""
        cell, local, keys, inverse, counts = self.mesh.facets()
        shared = counts[inverse] == 2
        if not shared.any():
            return 0.0
        cell, local, keys, inverse = cell[shared], local[shared], keys[shared], inverse[shared]
        m1 = self.m + 1
        keep = ~np.eye(m1, dtype=bool)
        chains = np.stack([self.cell_sheets[c][keep[t]] for c, t in zip(cell, local)])  # (F, m, Q, n)
        verts = np.stack([self.mesh.cells[c][keep[t]] for c, t in zip(cell, local)])
        order = np.argsort(verts, axis=1)
        chains = np.take_along_axis(chains, order[:, :, None, None], axis=1)
        chains = np.swapaxes(chains, 1, 2).reshape(len(chains), self.Q, -1)  # (F, Q, m*n)
        canon = np.empty_like(chains)
        for k in range(len(chains)):
            canon[k] = chains[k][np.lexsort(chains[k].T[::-1])]
        srt = np.argsort(inverse, kind="stable")
        a, b = canon[srt[0::2]], canon[srt[1::2]]
        return float(np.abs(a - b).max())

    def check_face_consistency(self, tol: float = 1e-12) -> bool:
        return self.face_mismatch() <= tol

    def boundary_vertices(self) -> np.ndarray:
        return np.nonzero(self.mesh.boundary_vertex_mask())[0]

    # -- transformations ---------------------------------------------------------
    def add_affine(self, L, b=None) -> "QSheetField":
        """sum_i [[f_i(x) + L x + b]] (same matching)."""
        L = check_matrix(L, self.n, self.m, "L")
        shift = self.mesh.vertices @ L.T
        if b is not None:
            shift = shift + np.asarray(b, dtype=float)
        return self.with_vertex_values(self.vertex_values + shift[:, None, :])

    def refine(self, factor: int) -> "QSheetField":
        """Exact re-sampling on the mesh with ``factor`` times more cells per side."""
        factor = check_positive_int(factor, "factor")
        if factor == 1:
            return self
        fine = KuhnMesh(self.m, self.cells_per_side * factor, self.center, self.side)
        centroids = fine.vertices[fine.cells].mean(axis=1)
        parent, _ = self.mesh.locate(centroids)
        C, m1 = fine.cells.shape
        pts = fine.vertices[fine.cells].reshape(-1, self.m)
        bary = self.mesh.barycentric_in(np.repeat(parent, m1), pts)
        sheets = self.values_in_cells(np.repeat(parent, m1), bary).reshape(C, m1, self.Q, self.n)
        values = np.full((fine.n_vertices, self.Q, self.n), np.nan)
        flat_v = fine.cells.reshape(-1)
        first = np.unique(flat_v, return_index=True)[1]
        values[flat_v[first]] = sheets.reshape(-1, self.Q, self.n)[first]
        match = np.empty((C, m1, self.Q), dtype=np.int64)
        for c in range(C):
            for t in range(m1):
                match[c, t] = _assign(sheets[c, t], values[fine.cells[c, t]])
        return QSheetField(values, fine.N, self.center, self.side, match)

    # -- serialization -------------------------------------------------------------
    def to_json(self) -> dict:
        return {
            "m": self.m,
            "n": self.n,
            "Q": self.Q,
            "domain": {"center": self.center.tolist(), "side": self.side},
            "cells_per_side": self.cells_per_side,
            "vertices": self.vertex_values.tolist(),
            "matching": self.matching.tolist(),
        }

    @classmethod
    def from_json(cls, doc: dict) -> "QSheetField":
        try:
            m, n, Q = int(doc["m"]), int(doc["n"]), int(doc["Q"])
            dom = doc["domain"]
            vals = np.asarray(doc["vertices"], dtype=float).reshape(-1, Q, n)
            field = cls(vals, int(doc["cells_per_side"]), dom["center"], float(dom["side"]), doc.get("matching"))
        except (KeyError, TypeError, ValueError) as exc:
            raise InvalidInputError(f"malformed field document: {exc}") from exc
        if field.m != m:
            raise InvalidInputError("domain center does not match m")
        return field


def _propagate_labels(mesh: KuhnMesh, vals: np.ndarray) -> np.ndarray:
    out = vals.copy()
    shape = (mesh.N + 1,) * mesh.m
    done = np.zeros(mesh.n_vertices, dtype=bool)
    done[0] = True
    queue = deque([0])
    while queue:
        v = queue.popleft()
        g = mesh.grid[v]
        for axis in range(mesh.m):
            for step in (-1, 1):
                nb = g.copy()
                nb[axis] += step
                if nb[axis] < 0 or nb[axis] > mesh.N:
                    continue
                w = int(np.ravel_multi_index(tuple(nb), shape))
                if done[w]:
                    continue
                out[w] = out[w][_assign(out[v], out[w])]
                done[w] = True
                queue.append(w)
    return out


# ---------------------------------------------------------------------------
# operations


def _check_compatible(f, g) -> None:
    if (f.Q, f.n, f.m) != (g.Q, g.n, g.m):
        raise InvalidInputError("fields differ in Q, n or m")
    if not f.mesh.same_domain(g.mesh):
        raise InvalidInputError("fields live on different domains")


def evaluate(f: QSheetField, x) -> QPoint:
    return f.evaluate(x)


def differential(f: QSheetField, cell: int) -> np.ndarray:
    return f.differential(cell)


def lp_distance(f: QSheetField, g: QSheetField, p: float = 2.0, order: int = 4) -> float:
    """(int G(f, g)^p)^(1/p) by per-cell Gauss quadrature on the finer mesh."""
    if p < 1:
        raise InvalidInputError("exponent p must be >= 1")
    _check_compatible(f, g)
    fine, coarse = (f, g) if f.cells_per_side >= g.cells_per_side else (g, f)
    pts, w, bary = fine.quadrature(order)
    C, P, m = pts.shape
    vf = fine.sheet_values_at(bary).reshape(C * P, fine.Q, fine.n)
    if coarse.cells_per_side == fine.cells_per_side:
        vg = coarse.sheet_values_at(bary).reshape(C * P, fine.Q, fine.n)
    else:
        vg = coarse.evaluate_many(pts.reshape(C * P, m))
    dist = metric_g_batch(vf, vg).reshape(C, P)
    total = float(np.sum((dist**p) @ w))
    return total ** (1.0 / p)


@dataclass(frozen=True)
class QFieldSequence:
    items: tuple
    p: float = 2.0

    def __post_init__(self):
        items = tuple(self.items)
        if self.p < 1:
            raise InvalidInputError("exponent p must be >= 1")
        for it in items[1:]:
            _check_compatible(items[0], it)
        object.__setattr__(self, "items", items)

    def __len__(self):
        return len(self.items)


@dataclass(frozen=True)
class WeakConvergenceReport:
    distances: list
    energies: list
    sup_energy: float
    threshold: float
    consistent: bool
    label: str = field(default="")


def weak_convergence_report(seq: QFieldSequence, u: QSheetField, threshold: float | None = None):
    """Finite-sequence evidence for u_k -> u weakly in W^{1,p}.

    The flag ``consistent`` is set iff the L^p distances never increase, the
    last one is <= ``threshold`` (default: a quarter of the first distance,
    plus 1e-12) and sup_k int |Du_k|^p is finite.  A finite sequence can only
    be consistent with weak convergence, never prove it.
    """
    if len(seq) == 0:
        raise InvalidInputError("empty sequence")
    d = [lp_distance(item, u, seq.p) for item in seq.items]
    e = [item.gradient_energy(seq.p) for item in seq.items]
    thr = 0.25 * d[0] + 1e-12 if threshold is None else float(threshold)
    monotone = all(b <= a + 1e-12 * max(1.0, a) for a, b in zip(d, d[1:]))
    sup_e = max(e)
    ok = monotone and d[-1] <= thr and bool(np.isfinite(sup_e))
    label = "consistent with weak convergence" if ok else "not consistent with weak convergence"
    return WeakConvergenceReport(d, e, sup_e, thr, ok, label)


def blowup_residual(f, x0, T: AffineQMap, rho: float, p: float = 2.0, subdivisions: int = 4, order: int = 4) -> float:
    """rho^(-p-m) int_{C_rho(x0)} G(u, T)^p by composite Gauss quadrature.

    ``f`` is a :class:`QSheetField` or any object with ``evaluate_many``.
    """
    x0 = np.asarray(x0, dtype=float).reshape(-1)
    m = x0.shape[0]
    if rho <= 0:
        raise InvalidInputError("radius must be positive")
    mesh = getattr(f, "mesh", None)
    if mesh is not None:
        corners = np.array([x0 - rho / 2, x0 + rho / 2])
        if not np.all(mesh.contains(corners)):
            raise DomainError("the cube C_rho(x0) is not contained in the domain")
    ref, w = cube_rule(m, order)
    s = subdivisions
    sub = np.array(list(np.ndindex(*((s,) * m))), dtype=float).reshape(-1, m)
    h = rho / s
    pts = (x0 - rho / 2) + (sub[:, None, :] + ref[None]) * h
    pts = pts.reshape(-1, m)
    if mesh is not None:
        pts = np.clip(pts, mesh.lo, mesh.lo + mesh.side)
    dist = metric_g_batch(f.evaluate_many(pts), T.sheets(pts)).reshape(len(sub), len(w))
    integral = float(np.sum((dist**p) @ w)) * h**m
    return integral * rho ** (-p - m)


def fold_sequence(u: AffineQMap, w, k: int, r: float = 1.0) -> QSheetField:
    """The folded competitor u_{k,r} on C_r (centered at the origin).

    ``w`` holds one field per group of ``u``: w[j] is q_j-valued on C_1 with
    boundary trace q_j [[a_j + L_j x]].  With z_j = w_j - (a_j + L_j y)
    extended periodically, u_{k,r}(x) = sum_j sum_i [[a_j + L_j x + (r/k)
    z_j,i(k x / r)]].  The periodic copies are anchored at the corner of
    C_r, so the trace on the boundary of C_r is exactly u for every k; the
    output mesh has k times the competitors' cells per side.
    """
    k = check_positive_int(k, "k")
    if r <= 0:
        raise InvalidInputError("scale r must be positive")
    w = list(w)
    if len(w) != u.J:
        raise InvalidInputError(f"need one competitor per group ({u.J}), got {len(w)}")
    N = w[0].cells_per_side
    m, n = u.m, u.n
    for j, wj in enumerate(w):
        if wj.m != m or wj.n != n or wj.Q != u.multiplicities[j]:
            raise InvalidInputError(f"competitor {j} has the wrong shape")
        if wj.cells_per_side != N or abs(wj.side - 1.0) > 1e-12 or np.any(np.abs(wj.center) > 1e-12):
            raise InvalidInputError("competitors must share one mesh of the unit cube centered at 0")
        if np.any(u.origin != 0):
            raise InvalidInputError("the affine map must be based at the origin")
    check_competitors(u, w)
    base = w[0].mesh
    bd = base.boundary_vertex_mask()
    z = []
    for j, wj in enumerate(w):
        aff = u.centers[j] + base.vertices @ u.slopes[j].T  # (V, n)
        zj = wj.vertex_values - aff[:, None, :]
        zj = np.where(bd[:, None, None], 0.0, zj)
        z.append(zj)

    fine = KuhnMesh(m, k * N, np.zeros(m), r)
    local_grid = fine.grid % N
    coarse_v = np.ravel_multi_index(tuple(local_grid.T), (N + 1,) * m)
    x = fine.vertices
    blocks = []
    for j in range(u.J):
        aff = u.centers[j] + x @ u.slopes[j].T
        blocks.append(aff[:, None, :] + (r / k) * z[j][coarse_v])
    values = np.concatenate(blocks, axis=1)

    local_cube = fine.cell_cube % N
    n_perm = len(base.cells) // N**m
    cube_flat = np.ravel_multi_index(tuple(local_cube.T), (N,) * m)
    perm_idx = np.arange(fine.n_cells) % n_perm
    coarse_cell = cube_flat * n_perm + perm_idx
    offsets = np.concatenate([[0], np.cumsum(u.multiplicities)[:-1]])
    match = np.concatenate([w[j].matching[coarse_cell] + offsets[j] for j in range(u.J)], axis=2)
    return QSheetField(values, fine.N, np.zeros(m), r, match)


def check_competitors(u: AffineQMap, w, tol: float = BOUNDARY_TOL) -> float:
    """G-sup distance between each w[j] and q_j [[a_j + L_j x]] on the boundary.

    Raises :class:`InvalidCompetitorError` when it exceeds ``tol``.
    """
    worst = 0.0
    for j, wj in enumerate(w):
        bd = wj.boundary_vertices()
        X = wj.mesh.vertices[bd]
        target = u.centers[j] + (X - u.origin) @ u.slopes[j].T
        target = np.repeat(target[:, None, :], u.multiplicities[j], axis=1)
        worst = max(worst, float(metric_g_batch(wj.vertex_values[bd], target).max()))
    if worst > tol:
        raise InvalidCompetitorError(f"competitor boundary trace off by {worst:.3e} > {tol:.1e}")
    return worst


def boundary_trace_distance(f: QSheetField, g) -> float:
    """G-sup distance of two traces, sampled at the boundary vertices of f.

    ``g`` may be a field or an :class:`AffineQMap`.
    """
    X = f.mesh.vertices[f.boundary_vertices()]
    gv = g.evaluate_many(X) if not isinstance(g, AffineQMap) else g.sheets(X)
    return float(metric_g_batch(f.evaluate_many(X), gv).max())


def sup_distance(f: QSheetField, g) -> float:
    """max over the vertices of f of G(f, g); exact when g is affine and f refines g."""
    X = f.mesh.vertices
    gv = g.sheets(X) if isinstance(g, AffineQMap) else g.evaluate_many(X)
    return float(metric_g_batch(f.vertex_values, gv).max())
