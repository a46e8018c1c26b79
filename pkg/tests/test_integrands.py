import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from qvar import ConfigurationError, InvalidInputError
from qvar.integrands import (
    GrowthBound,
    QIntegrand,
    QuadraticIntegrand,
    check_growth,
    check_perm_invariance,
    constant_integrand,
    dirichlet,
    energy,
    frobenius_power_fn,
    integrand_from_json,
    mattila_energy,
    polyconvex_family,
    power_fn,
)
from qvar.qfield import AffineQMap
from qvar.synthetic import random_affine_map, random_field


def det_form() -> QuadraticIntegrand:
    # <A M, M> = 2 det M for 2x2 M in column-major order (M11, M21, M12, M22)
    A = np.zeros((4, 4))
    A[0, 3] = A[3, 0] = 1.0
    A[1, 2] = A[2, 1] = -1.0
    return QuadraticIntegrand(A, 2, 2)


def random_quadratic(rng, m=2, n=2):
    S = rng.standard_normal((m * n, m * n))
    return QuadraticIntegrand(S + S.T, m, n)


def test_quadratic_is_symmetrized_and_colmajor():
    rng = np.random.default_rng(0)
    B = rng.standard_normal((6, 6))
    q = QuadraticIntegrand(B, 2, 3)
    assert np.array_equal(q.A, q.A.T)
    M = rng.standard_normal((3, 2))
    v = M.reshape(-1, order="F")
    assert q.form(M) == pytest.approx(v @ B @ v, rel=1e-12)
    assert det_form().form(np.array([[1.0, 2.0], [3.0, 4.0]])) == pytest.approx(-4.0)


def test_energy_examples():
    u = random_field(2, 2, 3, 3, seed=0)
    assert energy(constant_integrand(1.0, 2, 2, 3), u) == pytest.approx(1.0, rel=1e-14)
    L = np.array([[1.0, -2.0], [0.5, 3.0]])
    v = AffineQMap.from_groups([(3, np.zeros(2), L)]).to_field(4)
    assert energy(dirichlet(2, 2, 3), v) == pytest.approx(3 * np.sum(L**2), rel=1e-13)
    rng = np.random.default_rng(1)
    A = random_quadratic(rng)
    g = random_affine_map(2, 2, 3, seed=5)
    expected = sum(q * A.form(Lj) for q, _, Lj in g.groups)
    assert mattila_energy(A, g.to_field(4)) == pytest.approx(expected, rel=1e-12, abs=1e-12)
    assert energy(A.integrand(3), g.to_field(4)) == pytest.approx(expected, rel=1e-12, abs=1e-12)


def test_mattila_examples():
    u = random_field(2, 2, 2, 3, seed=2)
    assert mattila_energy(QuadraticIntegrand.identity(2, 2), u) == pytest.approx(u.gradient_energy(2), rel=1e-12)
    zero = random_field(2, 2, 2, 3, seed=2).with_vertex_values(np.zeros_like(u.vertex_values))
    assert mattila_energy(det_form(), zero) == 0.0
    ident = AffineQMap.from_groups([(1, np.zeros(2), np.eye(2))]).to_field(2)
    assert mattila_energy(det_form(), ident) == pytest.approx(2.0, rel=1e-14)


@given(st.integers(0, 2**20))
def test_mattila_agrees_with_general_energy(seed):
    rng = np.random.default_rng(seed)
    A = random_quadratic(rng)
    u = random_field(2, 2, 2, 2, seed=seed, kind="branched")
    assert abs(mattila_energy(A, u) - energy(A.integrand(2), u)) <= 1e-12 * max(1.0, abs(mattila_energy(A, u)))


def test_energy_is_mesh_exact_for_quadratic():
    rng = np.random.default_rng(3)
    A = random_quadratic(rng)
    u = random_field(2, 2, 2, 2, seed=3)
    e1, e2 = energy(A.integrand(2), u), energy(A.integrand(2), u.refine(2))
    assert abs(e1 - e2) <= 1e-12 * max(1.0, abs(e1))


def test_energy_additive_over_cells():
    u = random_field(2, 2, 2, 3, seed=4)
    f = polyconvex_family("b", frobenius_power_fn(2.0), 2, 2, 2)
    cells = np.arange(u.n_cells)
    parts = energy(f, u, cells=cells[::2]) + energy(f, u, cells=cells[1::2])
    assert parts == pytest.approx(energy(f, u), abs=1e-12)


def test_energy_dimension_mismatch():
    with pytest.raises(InvalidInputError):
        energy(dirichlet(2, 2, 1), random_field(2, 2, 2, 2))


def test_perm_invariance_examples():
    rng = np.random.default_rng(5)
    assert check_perm_invariance(random_quadratic(rng).integrand(3))
    broken = QIntegrand(lambda x, a, A: a[:, 0, 0], 2, 2, 3)
    assert not check_perm_invariance(broken)
    assert check_perm_invariance(polyconvex_family("b", frobenius_power_fn(2.0), 2, 2, 3))


def test_growth_examples():
    assert check_growth(dirichlet(1, 2, 1), GrowthBound(1.0, 2.0, 1))
    expo = QIntegrand(lambda x, a, A: np.exp(np.sqrt(np.einsum("pqnm,pqnm->p", A, A))), 2, 2, 1)
    assert not check_growth(expo, GrowthBound(1e6, 8.0, 2))
    rng = np.random.default_rng(6)
    A = random_quadratic(rng)
    shifted = QuadraticIntegrand(A.A - np.linalg.eigvalsh(A.A)[0] * np.eye(4), 2, 2)
    assert check_growth(shifted.integrand(1), GrowthBound(shifted.lambda_max(), 2.0, 2, q=1.0))


def test_growth_exponent_rule():
    assert GrowthBound(1.0, 2.0, 1).q == 0.0
    assert GrowthBound(1.0, 1.0, 2).q == 2.0
    with pytest.raises(InvalidInputError):
        GrowthBound(1.0, 2.0, 2)
    with pytest.raises(InvalidInputError):
        GrowthBound(1.0, 1.0, 2, q=3.0)


def test_family_examples():
    rng = np.random.default_rng(7)
    A = rng.standard_normal((20, 1, 2, 2))
    a = rng.standard_normal((20, 1, 2))
    fa = polyconvex_family("a", power_fn(2.0), 2, 2, 1)
    assert np.allclose(fa(np.zeros(2), a, A), dirichlet(2, 2, 1)(np.zeros(2), a, A), rtol=1e-12)
    fb = polyconvex_family("b", frobenius_power_fn(2.0), 2, 2, 2)
    L = rng.standard_normal((2, 2))
    assert fb(np.zeros(2), np.zeros((2, 2)), np.stack([L, L])) == 0.0
    M = rng.standard_normal((2, 2))
    assert fb(np.zeros(2), np.zeros((2, 2)), np.stack([L + M, L])) == pytest.approx(2 * np.sum(M**2), rel=1e-12)


def test_family_requires_subgradient():
    with pytest.raises(ConfigurationError):
        polyconvex_family("a", lambda t: t**2, 2, 2, 1)
    with pytest.raises(ConfigurationError):
        integrand_from_json({"kind": "family_b"}, 2, 2, 2)


def test_integrand_from_json():
    f = integrand_from_json({"kind": "quadratic", "matrix": det_form().A.tolist()}, 2, 2, 1)
    assert f(np.zeros(2), np.zeros((1, 2)), np.eye(2)[None]) == pytest.approx(2.0)
    assert integrand_from_json({"kind": "dirichlet"}, 2, 2, 1).name == "dirichlet"
    with pytest.raises(ConfigurationError):
        integrand_from_json({"kind": "nope"}, 2, 2, 1)


def test_analytic_gradients_match_differences():
    rng = np.random.default_rng(8)
    for f in (random_quadratic(rng).integrand(2), dirichlet(2, 2, 2),
              polyconvex_family("b", frobenius_power_fn(2.0), 2, 2, 2)):
        if f.grad_A is None:
            continue
        a, A = rng.standard_normal((2, 2)), rng.standard_normal((2, 2, 2))
        G = f.gradient(np.zeros(2), a, A)
        h = 1e-6
        for idx in np.ndindex(A.shape):
            E = np.zeros_like(A)
            E[idx] = h
            fd = (f(np.zeros(2), a, A + E) - f(np.zeros(2), a, A - E)) / (2 * h)
            assert G[idx] == pytest.approx(fd, abs=1e-6)

