import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from qvar.currents import (
    DifferentialForm,
    InvalidFormError,
    Poly,
    exterior_derivative,
    null_lagrangian_gap,
    null_lagrangian_gap_boundary,
    pair_boundary,
    pair_graph,
    polyaffine_energy,
    polyaffine_form,
    radial_primitive,
    random_form,
    stokes_residual,
    volume_form,
)
from qvar.minors import PolyaffineFn, all_minors
from qvar.qspace import QPoint
from qvar.qfield import AffineQMap, InvalidCompetitorError, QSheetField
from qvar.synthetic import equal_trace_pair, perturb_interior, random_field


def test_volume_form_pairs_to_Q():
    for Q in (1, 2, 3):
        u = random_field(2, 2, Q, 4, seed=Q, kind="branched" if Q > 1 else "rough")
        assert pair_graph(u, volume_form(2, 2)) == pytest.approx(Q, rel=1e-14)


def test_dy_form_on_constant_field():
    u = QSheetField.constant(QPoint([[1.0, 2.0], [3.0, -1.0]]), 2, 2)
    nv = 4
    omega = DifferentialForm(2, 2, 2, {((), (0, 1)): Poly.variable(nv, 2), ((0,), (1,)): 1.0})
    assert pair_graph(u, omega) == 0.0


def test_odd_integrand_example():
    u = AffineQMap.from_groups([(1, np.zeros(1), np.ones((1, 1)))]).to_field(4)
    omega = DifferentialForm(1, 1, 1, {((0,), ()): Poly.variable(2, 1)})
    assert abs(pair_graph(u, omega)) <= 1e-16


def test_boundary_examples():
    u = QSheetField.constant(QPoint([[0.0]]), 2, 2)
    omega = DifferentialForm(1, 2, 1, {((1,), ()): Poly.variable(3, 0)})  # x1 dx2
    assert pair_boundary(u, omega) == pytest.approx(1.0, rel=1e-14)
    assert pair_boundary(u, DifferentialForm(1, 2, 1)) == 0.0
    # m = 1: the boundary pairing of a 0-form is its value difference at the endpoints
    v = AffineQMap.from_groups([(2, np.zeros(1), np.array([[2.0]]))]).to_field(3)
    phi = DifferentialForm(0, 1, 1, {((), ()): Poly(2, {(1, 1): 1.0})})  # x * y
    end = 2 * (0.5 * 1.0 - (-0.5) * (-1.0))
    assert pair_boundary(v, phi) == pytest.approx(end, abs=1e-14)


def test_degree_checks():
    u = random_field(2, 1, 1, 2)
    with pytest.raises(InvalidFormError):
        pair_graph(u, random_form(1, 2, 1))
    with pytest.raises(InvalidFormError):
        pair_boundary(u, random_form(2, 2, 1))
    with pytest.raises(InvalidFormError):
        DifferentialForm(2, 2, 1, {((0,), ()): 1.0})


def test_exterior_derivative_examples():
    m, n = 3, 2
    nv = m + n
    omega = DifferentialForm(2, m, n, {((1, 2), ()): Poly.variable(nv, m)})  # y1 dx2 ^ dx3
    d = exterior_derivative(omega)
    # dy1 ^ dx2 ^ dx3 = dx2 ^ dx3 ^ dy1 (moving a 1-form past a 2-form)
    assert list(d.terms) == [((1, 2), (0,))]
    assert d.terms[((1, 2), (0,))].coeffs == {(0,) * nv: 1}
    const = DifferentialForm(2, m, n, {((0, 1), ()): 3.0, ((0,), (1,)): -1.0})
    assert exterior_derivative(const).is_zero()


@given(st.integers(0, 2**20), st.integers(0, 2))
def test_d_squared_is_zero(seed, degree):
    omega = random_form(degree, 2, 2, 3, seed)
    assert exterior_derivative(exterior_derivative(omega)).is_zero()


@pytest.mark.parametrize("m", [2, 3])
@pytest.mark.parametrize("kind,Q", [("rough", 1), ("rough", 2), ("branched", 2), ("branched", 3)])
def test_stokes_on_piecewise_affine_fields(m, kind, Q):
    for s in range(3):
        u = random_field(m, 2, Q, 2, seed=[m, Q, s], kind=kind)
        omega = random_form(m - 1, m, 2, 3, seed=[s, 7])
        assert abs(stokes_residual(u, omega)) <= 1e-10
    assert stokes_residual(u, DifferentialForm(m - 1, m, 2)) == 0.0


def test_stokes_for_refined_smooth_interpolants():
    for N in (2, 4, 8):
        u = QSheetField.from_sheets(lambda X: np.sin(X[:, :1] + 2 * X[:, 1:])[:, None, :], 1, 1, N, np.zeros(2))
        assert abs(stokes_residual(u, random_form(1, 2, 1, 2, seed=3))) <= 1e-12


def test_pairing_linear_and_additive():
    u = random_field(2, 2, 2, 4, seed=4, kind="branched")
    w1, w2 = random_form(2, 2, 2, 3, seed=1), random_form(2, 2, 2, 3, seed=2)
    assert pair_graph(u, w1 + w2.scale(-2.5)) == pytest.approx(
        pair_graph(u, w1) - 2.5 * pair_graph(u, w2), abs=1e-12)
    cells = np.arange(u.n_cells)
    assert pair_graph(u, w1, cells[:13]) + pair_graph(u, w1, cells[13:]) == pytest.approx(pair_graph(u, w1), abs=1e-12)


def test_polyaffine_routes_agree():
    rng = np.random.default_rng(5)
    P = PolyaffineFn(rng.standard_normal(), rng.standard_normal(5), 2, 2)
    u = random_field(2, 2, 2, 4, seed=5, kind="branched")
    direct = float(np.sum(P.c0 + all_minors(u.gradients) @ P.zeta) * u.mesh.cell_volume)
    assert polyaffine_energy(P, u) == pytest.approx(direct, rel=1e-12)
    assert pair_graph(u, polyaffine_form(P)) == pytest.approx(direct, rel=1e-12, abs=1e-12)
    eta = radial_primitive(polyaffine_form(P))
    d_eta = exterior_derivative(eta)
    assert (d_eta + polyaffine_form(P).scale(-1)).is_zero()


def test_null_lagrangian_examples():
    det = PolyaffineFn(0.0, [0, 0, 0, 0, 1.0], 2, 2)
    ident = AffineQMap.from_groups([(1, np.zeros(2), np.eye(2))]).to_field(6)
    bumped = perturb_interior(ident, 3, 0.3)
    assert abs(null_lagrangian_gap(det, ident, bumped)) <= 1e-10
    assert null_lagrangian_gap(det, ident, ident) == 0.0
    vol = PolyaffineFn(2.0, np.zeros(5), 2, 2)
    assert abs(null_lagrangian_gap(vol, ident, bumped)) <= 1e-14


def test_null_lagrangian_two_routes():
    rng = np.random.default_rng(6)
    for s in range(5):
        w1, w2 = equal_trace_pair(2, 2, 2, 4, seed=s)
        P = PolyaffineFn(rng.standard_normal(), rng.standard_normal(5), 2, 2)
        g1 = null_lagrangian_gap(P, w1, w2)
        g2 = null_lagrangian_gap_boundary(P, w1, w2)
        assert abs(g1) <= 1e-10 and abs(g2) <= 1e-10


def test_null_lagrangian_rejects_different_traces():
    w1 = random_field(2, 2, 1, 3, seed=1)
    w2 = random_field(2, 2, 1, 3, seed=2)
    with pytest.raises(InvalidCompetitorError):
        null_lagrangian_gap(PolyaffineFn(0.0, np.ones(5), 2, 2), w1, w2)


def test_form_json_roundtrip():
    omega = random_form(1, 2, 2, 3, seed=9)
    back = DifferentialForm.from_json(omega.to_json())
    assert (back + omega.scale(-1)).is_zero()
