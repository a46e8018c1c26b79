import itertools

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from qvar import InvalidInputError
from qvar.qspace import (
    QPoint,
    group_by_support,
    mean_eta,
    metric_g,
    metric_g_batch,
    metric_g_bruteforce,
    optimal_matching,
    translate,
)


def _brute(P, S):
    return min(np.sqrt(sum(np.sum((P[i] - S[s]) ** 2) for i, s in enumerate(perm)))
               for perm in itertools.permutations(range(len(P))))


def qpoints(Q=None, n=None):
    @st.composite
    def build(draw):
        q = Q or draw(st.integers(1, 5))
        d = n or draw(st.integers(1, 3))
        vals = draw(st.lists(st.floats(-5, 5), min_size=q * d, max_size=q * d))
        return QPoint(np.reshape(vals, (q, d)))

    return build()


def test_metric_examples():
    z = QPoint.repeated([0.0, 0.0], 3)
    assert metric_g(z, z) == 0.0
    assert metric_g(QPoint([[0.0], [1.0]]), QPoint([[1.0], [0.0]])) == 0.0
    T1 = QPoint([[0.0, 0.0], [2.0, 0.0]])
    T2 = QPoint([[1.0, 0.0], [3.0, 0.0]])
    assert metric_g(T1, T2) == pytest.approx(np.sqrt(2.0), abs=1e-15)


def test_metric_rejects_mismatch():
    with pytest.raises(InvalidInputError):
        metric_g(QPoint([[0.0], [1.0]]), QPoint([[0.0]]))
    with pytest.raises(InvalidInputError):
        metric_g(QPoint([[0.0, 1.0]]), QPoint([[0.0]]))


def test_metric_matches_independent_bruteforce():
    rng = np.random.default_rng(12)
    for _ in range(300):
        Q, n = rng.integers(1, 7), rng.integers(1, 4)
        P, S = rng.standard_normal((2, Q, n))
        g = metric_g(QPoint(P), QPoint(S))
        assert abs(g - _brute(P, S)) <= 1e-12
        assert abs(g - metric_g_bruteforce(QPoint(P), QPoint(S))) <= 1e-12


def test_matching_attains_metric():
    rng = np.random.default_rng(3)
    P, S = rng.standard_normal((2, 5, 2))
    sigma = optimal_matching(QPoint(P), QPoint(S))
    assert np.sqrt(np.sum((P - S[sigma]) ** 2)) == pytest.approx(metric_g(QPoint(P), QPoint(S)), abs=1e-12)


def test_batch_agrees_with_scalar():
    rng = np.random.default_rng(4)
    P, S = rng.standard_normal((2, 20, 3, 2))
    batch = metric_g_batch(P, S)
    assert np.allclose(batch, [metric_g(QPoint(p), QPoint(s)) for p, s in zip(P, S)], atol=1e-12, rtol=0)


@given(qpoints(Q=3, n=2), qpoints(Q=3, n=2), qpoints(Q=3, n=2))
def test_metric_axioms(a, b, c):
    assert metric_g(a, a) == 0.0
    assert metric_g(a, b) == pytest.approx(metric_g(b, a), abs=1e-12)
    assert metric_g(a, c) <= metric_g(a, b) + metric_g(b, c) + 1e-12


@given(qpoints(Q=3, n=2), qpoints(Q=3, n=2), st.lists(st.floats(-3, 3), min_size=2, max_size=2))
def test_translation_is_isometry(a, b, v):
    assert metric_g(translate(a, v), translate(b, v)) == pytest.approx(metric_g(a, b), abs=1e-10)


@given(qpoints(), st.randoms(use_true_random=False))
def test_permutation_invariance(T, rnd):
    idx = list(range(T.Q))
    rnd.shuffle(idx)
    S = QPoint(T.points[idx])
    assert S == T
    assert metric_g(S, T) == 0.0
    assert np.array_equal(mean_eta(S), mean_eta(T))
    assert S.to_json() == T.to_json()


def test_translate_examples():
    T = QPoint([[0.0], [2.0]])
    assert translate(T, [1.0]) == QPoint([[-1.0], [1.0]])
    assert translate(T, [0.0]) == T
    assert translate(translate(T, [0.7]), [-0.7]) == T


def test_mean_eta():
    assert np.allclose(mean_eta(QPoint([[1.0, 0.0], [3.0, 0.0]])), [2.0, 0.0])
    assert np.allclose(mean_eta(QPoint.repeated([1.5, -2.0], 4)), [1.5, -2.0])
    rng = np.random.default_rng(0)
    T, v = QPoint(rng.standard_normal((4, 3))), rng.standard_normal(3)
    assert np.allclose(mean_eta(translate(T, v)), mean_eta(T) - v, atol=1e-14)


def test_group_by_support_examples():
    a, b = np.array([0.0, 1.0]), np.array([3.0, 1.0])
    g = group_by_support(QPoint([a, b, a]), 0.0)
    assert [(q, c.tolist()) for q, c in g.groups] == [(2, a.tolist()), (1, b.tolist())]
    assert [q for q, _ in group_by_support(QPoint.repeated(a, 3)).groups] == [3]
    g = group_by_support(QPoint([[0.0], [0.05], [1.0]]), 0.1)
    assert [q for q, _ in g.groups] == [2, 1]
    assert g.groups[0][1][0] == pytest.approx(0.025)
    assert g.groups[1][1][0] == pytest.approx(1.0)


@given(qpoints(), st.floats(0, 2))
def test_grouping_counts_and_separation(T, tol):
    g = group_by_support(T, tol)
    assert g.Q == T.Q
    centers = [c for _, c in g.groups]
    # single linkage: points in different clusters are farther apart than tol
    labels = []
    for p in T.points:
        labels.append(int(np.argmin([np.linalg.norm(p - c) for c in centers])))
    for i, j in itertools.combinations(range(T.Q), 2):
        if np.linalg.norm(T.points[i] - T.points[j]) <= tol:
            assert labels[i] == labels[j] or np.allclose(centers[labels[i]], centers[labels[j]])


def test_json_roundtrip():
    T = QPoint([[2.0, 1.0], [0.0, 5.0]])
    doc = T.to_json()
    assert doc["points"] == [[0.0, 5.0], [2.0, 1.0]]
    assert QPoint.from_json(doc) == T
