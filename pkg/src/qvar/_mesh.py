"""Kuhn (Freudenthal) triangulation of a regular cube grid.

Each of the N^m grid cubes is split into m! simplices, one per ordering
sigma of the axes: the simplex {1 >= t_sigma(0) >= ... >= t_sigma(m-1) >= 0}
in local cube coordinates.  Its vertices are the cube corner plus the
cumulative sums of e_sigma(0), e_sigma(1), ...  The triangulation of a grid
with kN cells per side refines the one with N cells per side.
"""

from __future__ import annotations

import itertools
from functools import lru_cache

import numpy as np

from ._validation import DomainError


@lru_cache(maxsize=None)
def _perms(m: int) -> np.ndarray:
    p = np.array(list(itertools.permutations(range(m))), dtype=np.int64).reshape(-1, m)
    p.setflags(write=False)
    return p


@lru_cache(maxsize=None)
def _perm_lookup(m: int) -> np.ndarray:
    perms = _perms(m)
    codes = (perms * (m ** np.arange(m))).sum(axis=1)
    table = np.full(m**m if m > 0 else 1, -1, dtype=np.int64)
    table[codes] = np.arange(len(perms))
    table.setflags(write=False)
    return table


@lru_cache(maxsize=32)
def _topology(m: int, N: int):
    shape = (N + 1,) * m
    cubes = np.array(list(np.ndindex(*((N,) * m))), dtype=np.int64).reshape(-1, m)
    perms = _perms(m)
    n_perm = len(perms)
    cell_cube = np.repeat(cubes, n_perm, axis=0)
    cell_perm = np.tile(np.arange(n_perm), len(cubes))
    sig = perms[cell_perm]
    steps = np.zeros((len(cell_cube), m + 1, m), dtype=np.int64)
    for t in range(1, m + 1):
        steps[:, t] = steps[:, t - 1]
        steps[np.arange(len(sig)), t, sig[:, t - 1]] += 1
    multi = cell_cube[:, None, :] + steps
    vidx = np.ravel_multi_index(tuple(np.moveaxis(multi, -1, 0)), shape)
    grid = np.array(list(np.ndindex(*shape)), dtype=np.int64).reshape(-1, m)
    for arr in (cell_cube, sig, vidx, grid):
        arr.setflags(write=False)
    return cell_cube, sig, vidx, grid


class KuhnMesh:
    """Simplicial mesh of the cube with given center and side."""

    def __init__(self, m: int, cells_per_side: int, center, side: float):
        self.m = int(m)
        self.N = int(cells_per_side)
        self.center = np.asarray(center, dtype=float).reshape(self.m)
        self.side = float(side)
        self.h = self.side / self.N
        self.lo = self.center - self.side / 2.0
        self.cell_cube, self.cell_sigma, self.cells, self.grid = _topology(self.m, self.N)
        self.vertices = self.lo + self.grid * self.h
        self.n_cells = len(self.cells)
        self.n_vertices = len(self.grid)
        self.cell_volume = self.h**self.m / float(np.prod(np.arange(1, self.m + 1)))
        self.volume = self.side**self.m

    def same_domain(self, other: "KuhnMesh", tol: float = 1e-12) -> bool:
        return (
            self.m == other.m
            and abs(self.side - other.side) <= tol * max(1.0, self.side)
            and np.allclose(self.center, other.center, rtol=0, atol=tol * max(1.0, self.side))
        )

    def boundary_vertex_mask(self) -> np.ndarray:
        return np.any((self.grid == 0) | (self.grid == self.N), axis=1)

    def contains(self, X, tol: float = 1e-12) -> np.ndarray:
        X = np.atleast_2d(X)
        slack = tol * max(1.0, self.side)
        return np.all((X >= self.lo - slack) & (X <= self.lo + self.side + slack), axis=1)

    def locate(self, X):
        """Containing cell and barycentric coordinates for points X (P, m)."""
        X = np.atleast_2d(np.asarray(X, dtype=float))
        if not np.all(self.contains(X)):
            raise DomainError("point outside the field's domain")
        t = (X - self.lo) / self.h
        cube = np.clip(np.floor(t), 0, self.N - 1).astype(np.int64)
        local = np.clip(t - cube, 0.0, 1.0)
        sig = np.argsort(-local, axis=1, kind="stable")
        code = (sig * (self.m ** np.arange(self.m))).sum(axis=1)
        perm_idx = _perm_lookup(self.m)[code]
        cube_flat = np.ravel_multi_index(tuple(cube.T), (self.N,) * self.m)
        cells = cube_flat * len(_perms(self.m)) + perm_idx
        return cells, self._bary(local, sig)

    def barycentric_in(self, cells, X) -> np.ndarray:
        """Barycentric coordinates of X with respect to given cells (no search)."""
        X = np.atleast_2d(np.asarray(X, dtype=float))
        local = (X - self.lo) / self.h - self.cell_cube[cells]
        return self._bary(local, self.cell_sigma[cells])

    @staticmethod
    def _bary(local, sig):
        ordered = np.take_along_axis(local, sig, axis=1)
        P, m = ordered.shape
        lam = np.empty((P, m + 1))
        lam[:, 0] = 1.0 - ordered[:, 0] if m else 1.0
        if m:
            lam[:, 1:m] = ordered[:, :-1] - ordered[:, 1:]
            lam[:, m] = ordered[:, -1]
        return lam

    def cell_points(self, bary_ref: np.ndarray, cells=None) -> np.ndarray:
        """Physical points for barycentric weights (P, m+1) in every cell -> (C, P, m)."""
        cells = np.arange(self.n_cells) if cells is None else cells
        corners = self.vertices[self.cells[cells]]
        return np.einsum("pt,ctk->cpk", bary_ref, corners)

    def facets(self):
        """All (cell, omitted local vertex) pairs with sorted vertex keys.

        Returns ``(cell, local, keys, inverse, counts)`` where facets sharing
        ``inverse`` are the same geometric facet.
        """
        C, m1 = self.cells.shape
        cell = np.repeat(np.arange(C), m1)
        local = np.tile(np.arange(m1), C)
        keep = np.ones((m1, m1), dtype=bool)
        np.fill_diagonal(keep, False)
        verts = np.stack([self.cells[:, keep[t]] for t in range(m1)], axis=1).reshape(C * m1, m1 - 1)
        keys = np.sort(verts, axis=1)
        uniq, inverse, counts = np.unique(keys, axis=0, return_inverse=True, return_counts=True)
        return cell, local, keys, inverse.reshape(-1), counts

    def boundary_facets(self):
        """Facets on the cube boundary: (cell, omitted local vertex, axis, side +-1)."""
        cell, local, keys, inverse, counts = self.facets()
        on_bd = counts[inverse] == 1
        cell, local, keys = cell[on_bd], local[on_bd], keys[on_bd]
        g = self.grid[keys]
        lo_face = np.all(g == 0, axis=1)
        hi_face = np.all(g == self.N, axis=1)
        axis = np.where(lo_face.any(axis=1), lo_face.argmax(axis=1), hi_face.argmax(axis=1))
        side = np.where(lo_face.any(axis=1), -1, 1)
        return cell, local, axis, side
