import itertools
from math import comb

import numpy as np
import pytest

from qvar import InvalidInputError
from qvar.integrands import dirichlet, frobenius_power_fn, minor_quadratic_fn, polyconvex_family, power_fn
from qvar.minors import (
    MultiIndexPair,
    PolyaffineFn,
    all_minors,
    enumerate_pairs,
    minor,
    pair_at,
    pair_index,
    permutation_sign,
    polyaffine_support,
    tau,
)


def test_tau():
    assert tau(2, 2) == 5
    assert tau(2, 3) == 9
    for n in range(1, 5):
        assert tau(1, n) == n
    for m, n in itertools.product(range(1, 5), repeat=2):
        assert tau(m, n) == sum(comb(m, k) * comb(n, k) for k in range(1, min(m, n) + 1))
        assert tau(m, n) == tau(n, m)
        assert len(enumerate_pairs(m, n)) == tau(m, n)


def test_enumeration_roundtrip():
    for m, n in itertools.product(range(1, 5), repeat=2):
        for i, pair in enumerate(enumerate_pairs(m, n)):
            assert pair_index(pair) == i
            assert pair_at(i, m, n) == pair


def test_canonical_order():
    pairs = enumerate_pairs(2, 3)
    orders = [p.order for p in pairs]
    assert orders == sorted(orders)
    first = pairs[: 2 * 3]
    assert [(p.alpha, p.beta) for p in first] == sorted((p.alpha, p.beta) for p in first)


def test_minor_examples():
    I = np.eye(2)
    top = enumerate_pairs(2, 2)[-1]
    assert minor(I, top) == 1.0
    assert minor(np.array([[1.0, 2.0], [3.0, 4.0]]), top) == pytest.approx(-2.0)
    rng = np.random.default_rng(0)
    A = rng.standard_normal((3, 2))
    for i in range(3):
        for j in range(2):
            assert minor(A, MultiIndexPair((j,), (i,), 2, 3)) == A[i, j]


def test_minor_invalid_index():
    with pytest.raises(IndexError):
        minor(np.eye(2), MultiIndexPair((0, 2), (0, 1), 2, 2))


def test_all_minors_examples():
    assert np.array_equal(all_minors(np.zeros((2, 2))), np.zeros(5))
    assert np.allclose(all_minors(np.eye(2)), [1, 0, 0, 1, 1])
    rng = np.random.default_rng(1)
    for m, n in [(2, 3), (3, 2), (3, 3)]:
        A = rng.standard_normal((n, m))
        v = all_minors(A)
        assert np.allclose(v[: n * m], [minor(A, p) for p in enumerate_pairs(m, n)[: n * m]])
        assert np.allclose(v, [minor(A, p) for p in enumerate_pairs(m, n)], atol=1e-13)


def test_top_minor_matches_lu_determinant():
    rng = np.random.default_rng(2)
    for d in (2, 3, 4):
        for _ in range(20):
            A = rng.standard_normal((d, d))
            assert abs(all_minors(A)[-1] - np.linalg.det(A)) <= 1e-10 * (1 + abs(np.linalg.det(A)))


def test_sigma_parity():
    # sigma is the parity of the number of inversions in (alpha, alpha_bar)
    for pair in enumerate_pairs(4, 4):
        seq = pair.alpha + pair.alpha_bar
        inv = sum(1 for i, j in itertools.combinations(range(len(seq)), 2) if seq[i] > seq[j])
        assert pair.sigma == (-1) ** inv
    assert permutation_sign((1, 0)) == -1
    assert permutation_sign((0, 1, 2)) == 1


def test_polyaffine_is_linear_in_coefficients():
    rng = np.random.default_rng(3)
    A = rng.standard_normal((20, 2, 3))
    z1, z2 = rng.standard_normal((2, tau(3, 2)))
    P1, P2 = PolyaffineFn(1.5, z1, 3, 2), PolyaffineFn(-0.5, z2, 3, 2)
    Psum = PolyaffineFn(1.0, z1 + z2, 3, 2)
    assert np.allclose(Psum(A), P1(A) + P2(A), atol=1e-13)
    assert np.allclose(P1(A), 1.5 + sum(z1[i] * np.array([minor(a, p) for a in A])
                                        for i, p in enumerate(enumerate_pairs(3, 2))), atol=1e-12)
    with pytest.raises(InvalidInputError):
        PolyaffineFn(0.0, np.zeros(3), 2, 2)


def test_polyaffine_json_roundtrip():
    P = PolyaffineFn(0.25, np.arange(5.0), 2, 2)
    Q = PolyaffineFn.from_json(P.to_json())
    assert Q.c0 == P.c0 and np.array_equal(Q.zeta, P.zeta)


def _check_support(f, a, A, rng, samples):
    Ps = polyaffine_support(f, a, A)
    assert sum(P(Aj) for P, Aj in zip(Ps, A)) == pytest.approx(f(np.zeros(f.m), a, A), abs=1e-10)
    L = rng.standard_normal((samples, f.Q, f.n, f.m)) * 3
    lower = sum(Ps[j](L[:, j]) for j in range(f.Q))
    assert np.all(lower <= f(np.zeros(f.m), np.broadcast_to(a, (samples,) + a.shape), L) + 1e-9)


def test_support_quadratic_in_minors_touches():
    rng = np.random.default_rng(4)
    g = minor_quadratic_fn(rng.uniform(0.5, 2.0, size=5))
    f = polyconvex_family("c", g, 2, 2, 1)
    a, A = rng.standard_normal((1, 2)), rng.standard_normal((1, 2, 2))
    _check_support(f, a, A, rng, 2000)


def test_support_dirichlet_values():
    rng = np.random.default_rng(5)
    f = polyconvex_family("a", power_fn(2.0), 2, 2, 2)
    a, A = rng.standard_normal((2, 2)), rng.standard_normal((2, 2, 2))
    Ps = polyaffine_support(f, a, A)
    assert sum(P(Aj) for P, Aj in zip(Ps, A)) == pytest.approx(dirichlet(2, 2, 2)(np.zeros(2), a, A), abs=1e-12)


def test_support_family_b_inequality():
    rng = np.random.default_rng(6)
    f = polyconvex_family("b", frobenius_power_fn(2.0), 2, 2, 2)
    a, A = rng.standard_normal((2, 2)), rng.standard_normal((2, 2, 2))
    _check_support(f, a, A, rng, 10_000)


def test_support_rejects_inconsistent_sheets():
    f = polyconvex_family("b", frobenius_power_fn(2.0), 2, 2, 2)
    a = np.zeros((2, 2))
    A = np.stack([np.eye(2), -np.eye(2)])
    with pytest.raises(InvalidInputError):
        polyaffine_support(f, a, A)
