import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from qvar import DomainError, InvalidInputError
from qvar.qfield import (
    AffineQMap,
    InvalidCompetitorError,
    QFieldSequence,
    QSheetField,
    blowup_residual,
    boundary_trace_distance,
    differential,
    evaluate,
    fold_sequence,
    lp_distance,
    sup_distance,
    weak_convergence_report,
)
from qvar.qspace import QPoint, metric_g, metric_g_batch, translate
from qvar.synthetic import perturb_interior, quadratic_qmap, random_affine_map, random_field


def _two_sheet_abs():
    # Q=2, m=n=1, two cells on [-1, 1], vertex values {-|x|, |x|}
    X = np.array([-1.0, 0.0, 1.0])
    vals = np.stack([-np.abs(X), np.abs(X)], axis=1)[:, :, None]
    return QSheetField(vals, 2, [0.0], 2.0)


def test_evaluate_examples():
    f = _two_sheet_abs()
    assert evaluate(f, [0.5]) == QPoint([[-0.5], [0.5]])
    assert evaluate(f, [-1.0]) == QPoint([[-1.0], [1.0]])
    with pytest.raises(DomainError):
        evaluate(f, [1.5])


def test_affine_reproduction():
    rng = np.random.default_rng(0)
    for Q, m, n in [(1, 2, 2), (2, 2, 1), (3, 3, 2)]:
        u = random_affine_map(m, n, Q, seed=int(rng.integers(1 << 30)))
        f = u.to_field(4)
        X = rng.uniform(-0.5, 0.5, size=(200, m))
        assert metric_g_batch(f.evaluate_many(X), u.sheets(X)).max() <= 1e-12
        V = f.mesh.vertices[:5]
        for x, v in zip(V, f.vertex_values[:5]):
            assert evaluate(f, x) == QPoint(v)


def test_differentials():
    L = np.array([[1.0, 2.0], [0.5, -1.0]])
    u = AffineQMap.from_groups([(3, np.zeros(2), L)])
    f = u.to_field(3)
    for c in range(f.n_cells):
        assert np.allclose(differential(f, c), np.broadcast_to(L, (3, 2, 2)), atol=1e-12)
    assert np.allclose(f.gradient_norms(), np.sqrt(3) * np.linalg.norm(L))
    with pytest.raises(IndexError):
        differential(f, f.n_cells)
    hat = QSheetField(np.array([[0.0], [0.5], [0.0]]), 2, [0.0], 1.0)
    assert [float(differential(hat, c)[0, 0, 0]) for c in range(2)] == [1.0, -1.0]


def test_face_consistency_of_branched_fields():
    for Q in (2, 3):
        f = random_field(2, 2, Q, 4, seed=Q, kind="branched")
        assert f.face_mismatch() <= 1e-12
        assert f.check_face_consistency()
    g = random_field(3, 1, 2, 2, seed=5)
    assert g.face_mismatch() <= 1e-12


def test_lp_distance_examples():
    rng = np.random.default_rng(1)
    f = random_field(2, 2, 2, 3, seed=1)
    assert lp_distance(f, f, 2) == 0.0
    a, b = rng.standard_normal((2, 2))
    fa = QSheetField.constant(QPoint.repeated(a, 3), 2, 2)
    fb = QSheetField.constant(QPoint.repeated(b, 3), 2, 2)
    for p in (1.0, 2.0, 3.5):
        assert lp_distance(fa, fb, p) == pytest.approx(np.sqrt(3) * np.linalg.norm(a - b), rel=1e-12)
    g = random_field(2, 2, 2, 3, seed=2)
    assert lp_distance(f, g, 3) == pytest.approx(lp_distance(g, f, 3), rel=1e-14)
    with pytest.raises(InvalidInputError):
        lp_distance(f, random_field(2, 2, 3, 3, seed=0))


def test_lp_distance_quadrature_converges():
    f, g = random_field(2, 1, 1, 3, seed=3), random_field(2, 1, 1, 3, seed=4)
    # Q = 1, p = 2: the integrand is a quadratic polynomial per cell, exact from order 2
    assert lp_distance(f, g, 2, order=2) == pytest.approx(lp_distance(f, g, 2, order=4), abs=1e-12)
    f, g = random_field(2, 2, 2, 3, seed=3), random_field(2, 2, 2, 3, seed=4)
    assert abs(lp_distance(f, g, 2, order=8) - lp_distance(f, g, 2, order=16)) < 1e-3


def test_refine_is_exact():
    f = random_field(2, 2, 2, 2, seed=7, kind="branched")
    g = f.refine(2)
    X = np.random.default_rng(0).uniform(-0.5, 0.5, (100, 2))
    assert metric_g_batch(f.evaluate_many(X), g.evaluate_many(X)).max() <= 1e-12
    assert g.gradient_energy(2) == pytest.approx(f.gradient_energy(2), rel=1e-12)


def test_json_roundtrip():
    f = random_field(2, 2, 2, 2, seed=8, kind="branched")
    g = QSheetField.from_json(f.to_json())
    assert np.array_equal(g.vertex_values, f.vertex_values)
    assert np.array_equal(g.matching, f.matching)
    u = random_affine_map(2, 3, 3, seed=1)
    v = AffineQMap.from_json(u.to_json())
    assert np.array_equal(v.sheets(np.eye(2)), u.sheets(np.eye(2)))


def test_weak_convergence_report_examples():
    u = random_field(2, 1, 2, 2, seed=9)
    rep = weak_convergence_report(QFieldSequence((u, u, u), 2.0), u)
    assert rep.distances == [0.0, 0.0, 0.0] and rep.consistent
    drift = [u.add_affine(np.zeros((1, 2)), [0.3 * k]) for k in range(1, 5)]
    rep = weak_convergence_report(QFieldSequence(tuple(drift), 2.0), u)
    assert not rep.consistent
    assert np.allclose(np.diff(rep.distances), rep.distances[0], rtol=1e-10)
    assert "consistent with" in rep.label


def test_blowup_examples():
    u = random_affine_map(2, 2, 2, seed=3)
    f = u.to_field(8)
    assert blowup_residual(f, np.zeros(2), u, 0.25) <= 1e-24
    # Q=1, m=n=1: f(x) = x^2 and T = [[0]] at 0 gives rho^2 / 80
    g = quadratic_qmap([[0.0]], [[[0.0]]], [[[[2.0]]]])
    T = g.first_order([0.0])
    for rho in (0.5, 0.1, 0.01):
        assert blowup_residual(g, [0.0], T, rho) == pytest.approx(rho**2 / 80, rel=1e-12)
    with pytest.raises(DomainError):
        blowup_residual(f, np.array([0.45, 0.0]), u, 0.25)


def _sawtooth_competitor(N=8):
    u = AffineQMap.from_groups([(1, np.zeros(1), np.zeros((1, 2)))])
    base = u.to_field(N)
    X = base.mesh.vertices
    bump = 0.5 - np.max(np.abs(X), axis=1)
    return u, [base.with_vertex_values(bump[:, None, None])]


def test_fold_sequence_properties():
    u, w = _sawtooth_competitor()
    dists = []
    for k in (1, 2, 4, 8):
        fk = fold_sequence(u, w, k)
        assert boundary_trace_distance(fk, u) <= 1e-12
        assert fk.gradient_energy(2) == pytest.approx(w[0].gradient_energy(2), rel=1e-10)
        dists.append(sup_distance(fk, u))
    assert np.allclose(np.array(dists[:-1]) / np.array(dists[1:]), 2.0, rtol=1e-12)


def test_fold_identity_and_scaling():
    u = random_affine_map(2, 2, 3, seed=11)
    w = [u.group_field(j, 4) for j in range(u.J)]
    f1 = fold_sequence(u, w, 1)
    X = f1.mesh.vertices
    assert metric_g_batch(f1.vertex_values, u.sheets(X)).max() <= 1e-12
    rng = np.random.default_rng(2)
    wp = [perturb_interior(wj, int(rng.integers(100)), 0.2) for wj in w]
    r = 0.5
    energies = [fold_sequence(u, wp, k, r).gradient_energy(2) for k in (1, 2, 4)]
    assert np.ptp(energies) <= 1e-10 * max(energies)
    assert energies[0] == pytest.approx(r**2 * sum(wj.gradient_energy(2) for wj in wp), rel=1e-10)


def test_fold_rejects_bad_competitor():
    u, w = _sawtooth_competitor()
    bad = w[0].add_affine(np.zeros((1, 2)), [1e-6])
    with pytest.raises(InvalidCompetitorError):
        fold_sequence(u, [bad], 2)


@given(st.integers(0, 2**16), st.lists(st.floats(-2, 2), min_size=2, max_size=2))
def test_translation_commutes_with_evaluation(seed, v):
    f = random_field(2, 2, 2, 2, seed=seed)
    g = f.add_affine(np.zeros((2, 2)), -np.asarray(v))
    X = np.random.default_rng(seed).uniform(-0.5, 0.5, (5, 2))
    for x in X:
        assert metric_g(evaluate(g, x), translate(evaluate(f, x), v)) <= 1e-12
