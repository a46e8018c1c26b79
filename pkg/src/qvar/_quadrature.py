"""Gauss rules on the unit simplex and the unit cube."""

from __future__ import annotations

import itertools
from functools import lru_cache

import numpy as np
from scipy.special import roots_jacobi, roots_legendre


@lru_cache(maxsize=None)
def simplex_rule(dim: int, order: int = 4) -> tuple[np.ndarray, np.ndarray]:
    """Collapsed-coordinate Gauss-Jacobi rule on {y >= 0, sum(y) <= 1}.

    Returns ``(points, weights)`` with points of shape (P, dim) and weights
    summing to 1/dim!.  Exact for polynomials of degree <= 2*order - 1.
    """
    if dim == 0:
        return np.zeros((1, 0)), np.ones(1)
    nodes, wts = [], []
    for i in range(dim):
        alpha = dim - 1 - i
        x, w = roots_jacobi(order, alpha, 0.0)
        nodes.append((1.0 + x) / 2.0)
        wts.append(w / 2.0 ** (alpha + 1))
    pts, weights = [], []
    for combo in itertools.product(range(order), repeat=dim):
        t = [nodes[i][c] for i, c in enumerate(combo)]
        w = float(np.prod([wts[i][c] for i, c in enumerate(combo)]))
        y = np.empty(dim)
        scale = 1.0
        for i in range(dim):
            y[i] = scale * t[i]
            scale *= 1.0 - t[i]
        pts.append(y)
        weights.append(w)
    out_p, out_w = np.array(pts), np.array(weights)
    out_p.setflags(write=False)
    out_w.setflags(write=False)
    return out_p, out_w


@lru_cache(maxsize=None)
def cube_rule(dim: int, order: int = 4) -> tuple[np.ndarray, np.ndarray]:
    """Tensor Gauss-Legendre rule on [0, 1]^dim (weights sum to 1)."""
    x, w = roots_legendre(order)
    x = (x + 1.0) / 2.0
    w = w / 2.0
    pts = np.array(list(itertools.product(x, repeat=dim))).reshape(-1, dim)
    wts = np.array([np.prod(c) for c in itertools.product(w, repeat=dim)])
    pts.setflags(write=False)
    wts.setflags(write=False)
    return pts, wts


def barycentric(points: np.ndarray) -> np.ndarray:
    """Reference-simplex points (P, d) -> barycentric weights (P, d+1)."""
    return np.hstack([1.0 - points.sum(axis=1, keepdims=True), points])
