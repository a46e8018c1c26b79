"""Seeded generators of test data: affine maps, fields, equal-trace pairs, smooth maps."""

from __future__ import annotations

import numpy as np

from ._mesh import KuhnMesh
from ._validation import InvalidInputError, make_rng
from .qfield import AffineQMap, QMapFunction, QSheetField


def random_affine_map(m: int, n: int, Q: int, seed=0, scale: float = 1.0) -> AffineQMap:
    """Random partition of Q into groups with Gaussian centers and slopes."""
    rng = make_rng(seed)
    sizes = []
    left = Q
    while left:
        q = int(rng.integers(1, left + 1))
        sizes.append(q)
        left -= q
    groups = [(q, scale * rng.standard_normal(n), scale * rng.standard_normal((n, m))) for q in sizes]
    return AffineQMap.from_groups(groups)


def random_field(m: int, n: int, Q: int, cells_per_side: int, seed=0, kind: str = "rough",
                 scale: float = 1.0) -> QSheetField:
    """Random piecewise-affine Q-field on the unit cube centered at the origin.

    ``rough``: independent Gaussian vertex values with one global labelling.
    ``branched``: the Q-th roots of x_1 + i x_2 mapped linearly into R^n,
    plus a common random affine map; the sheets are permuted around the
    axis {x_1 = x_2 = 0} (needs m >= 2, and an even ``cells_per_side`` so
    the branch cut lies on grid faces).
    """
    rng = make_rng(seed)
    center = np.zeros(m)
    if kind == "rough":
        nv = KuhnMesh(m, cells_per_side, center, 1.0).n_vertices
        vals = scale * rng.standard_normal((nv, Q, n))
        return QSheetField(vals, cells_per_side, center, 1.0)
    if kind != "branched":
        raise InvalidInputError(f"unknown field kind {kind!r}")
    if m < 2 or cells_per_side % 2:
        raise InvalidInputError("branched fields need m >= 2 and an even number of cells per side")
    M = scale * rng.standard_normal((n, 2))
    b = scale * rng.standard_normal(n)
    L = scale * rng.standard_normal((n, m))

    def branches(X):
        z = X[:, 0] + 1j * X[:, 1]
        r, th = np.abs(z), np.angle(z)
        roots = np.stack([r ** (1.0 / Q) * np.exp(1j * (th + 2 * np.pi * j) / Q) for j in range(Q)], axis=1)
        planar = np.stack([roots.real, roots.imag], axis=-1)  # (P, Q, 2)
        return planar @ M.T + (X @ L.T + b)[:, None, :]

    return QSheetField.from_branches(branches, n, Q, cells_per_side, center, 1.0)


def perturb_interior(u: QSheetField, seed=0, scale: float = 0.1) -> QSheetField:
    """Same field with Gaussian noise added at interior vertices only."""
    rng = make_rng(seed)
    vals = np.array(u.vertex_values)
    interior = np.setdiff1d(np.arange(len(vals)), u.boundary_vertices())
    vals[interior] += scale * rng.standard_normal(vals[interior].shape)
    return u.with_vertex_values(vals)


def equal_trace_pair(m: int, n: int, Q: int, cells_per_side: int, seed=0) -> tuple[QSheetField, QSheetField]:
    """Two fields sharing their boundary trace but differing inside."""
    rng = make_rng(seed)
    s1, s2, s3 = (int(s) for s in rng.integers(0, 2**31, size=3))
    base = random_field(m, n, Q, cells_per_side, s1)
    return perturb_interior(base, s2, 0.5), perturb_interior(base, s3, 0.5)


def quadratic_qmap(centers, slopes, hessians=None) -> QMapFunction:
    """Sheets y_i(x) = c_i + L_i x + (1/2) H_i[x, x] with H_i of shape (n, m, m)."""
    C = np.asarray(centers, dtype=float)
    L = np.asarray(slopes, dtype=float)
    Q, n, m = L.shape
    H = np.zeros((Q, n, m, m)) if hessians is None else np.asarray(hessians, dtype=float).reshape(Q, n, m, m)
    H = 0.5 * (H + np.swapaxes(H, -1, -2))

    def sheets(X):
        return C[None] + np.einsum("qnm,pm->pqn", L, X) + 0.5 * np.einsum("qnab,pa,pb->pqn", H, X, X)

    def jacobian(X):
        return L[None] + np.einsum("qnab,pb->pqna", H, X)

    return QMapFunction(sheets, jacobian, m, n, Q)


def random_quadratic_qmap(m: int, n: int, Q: int, seed=0, separation: float = 2.0) -> QMapFunction:
    """Smooth sheets whose values near the origin stay ``separation`` apart on average."""
    rng = make_rng(seed)
    C = separation * rng.standard_normal((Q, n))
    return quadratic_qmap(C, rng.standard_normal((Q, n, m)), rng.standard_normal((Q, n, m, m)))


def pinned_field(m: int, n: int, Q: int, cells_per_side: int, seed=0, kind: str = "rough") -> QSheetField:
    """A random field multiplied vertexwise by a cutoff vanishing on the boundary (trace Q[[0]])."""
    u = random_field(m, n, Q, cells_per_side, seed, kind)
    X = u.mesh.vertices
    cut = np.prod(1.0 - (2.0 * X) ** 2, axis=1)
    cut[u.boundary_vertices()] = 0.0
    return u.with_vertex_values(u.vertex_values * cut[:, None, None])
