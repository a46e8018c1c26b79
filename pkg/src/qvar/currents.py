"""Graph currents of piecewise-affine Q-fields and polynomial differential forms.

Coordinates on R^{m+n} are (x_1..x_m, y_1..y_n), numbered 0..m+n-1 with the
x-variables first.  A term dx_I ^ dy_J with increasing I and J is therefore
dz_K for the increasing global index K = I + (J shifted by m).

Pairings are computed by pulling each term back through the sheet
parametrizations: on a cell, sheet i is x -> (x, u_i(x)) with constant
differential [Id; Du_i], and the pullback of dz_K to parameters (x_d)_{d in
dims} is det([Id; Du_i][K, dims]).  For the full graph this reproduces the
minor formula sum sign * omega_{alpha beta}(x, u_i) M_{alpha beta}(Du_i) with
sign = sign of the permutation (alpha_bar, alpha).
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field
from fractions import Fraction

import numpy as np

from ._quadrature import barycentric, simplex_rule
from ._validation import InvalidInputError, make_rng
from .minors import PolyaffineFn, all_minors, enumerate_pairs
from .qfield import BOUNDARY_TOL, InvalidCompetitorError, QSheetField
from .qspace import metric_g_batch


class InvalidFormError(InvalidInputError):
    """A differential form has the wrong degree or ambient dimension."""


# ---------------------------------------------------------------------------
# polynomials in (x, y)


@dataclass(frozen=True)
class Poly:
    """Polynomial in `nvars` variables: {exponent tuple: coefficient}.

    Coefficients are kept as exact rationals so that the form algebra
    (sums, derivatives, d o d = 0) has no rounding.
    """

    nvars: int
    coeffs: dict = field(default_factory=dict)

    def __post_init__(self):
        clean = {}
        for e, c in self.coeffs.items():
            e = tuple(int(k) for k in e)
            if len(e) != self.nvars or min(e, default=0) < 0:
                raise InvalidFormError(f"bad exponent {e} for {self.nvars} variables")
            c = c if isinstance(c, Fraction) else Fraction(float(c))
            if c != 0:
                clean[e] = clean.get(e, Fraction(0)) + c
        object.__setattr__(self, "coeffs", {e: c for e, c in clean.items() if c != 0})

    @classmethod
    def constant(cls, nvars: int, c: float) -> "Poly":
        return cls(nvars, {(0,) * nvars: c})

    @classmethod
    def variable(cls, nvars: int, v: int, c: float = 1.0) -> "Poly":
        e = [0] * nvars
        e[v] = 1
        return cls(nvars, {tuple(e): c})

    @property
    def degree(self) -> int:
        return max((sum(e) for e in self.coeffs), default=0)

    def is_zero(self) -> bool:
        return not self.coeffs

    def __add__(self, other: "Poly") -> "Poly":
        out = dict(self.coeffs)
        for e, c in other.coeffs.items():
            out[e] = out.get(e, Fraction(0)) + c
        return Poly(self.nvars, out)

    def scale(self, s: float) -> "Poly":
        s = s if isinstance(s, Fraction) else Fraction(float(s))
        return Poly(self.nvars, {e: s * c for e, c in self.coeffs.items()})

    def derivative(self, v: int) -> "Poly":
        out = {}
        for e, c in self.coeffs.items():
            if e[v]:
                d = list(e)
                d[v] -= 1
                out[tuple(d)] = out.get(tuple(d), Fraction(0)) + c * e[v]
        return Poly(self.nvars, out)

    def __call__(self, Z) -> np.ndarray:
        Z = np.asarray(Z, dtype=float)
        out = np.zeros(Z.shape[:-1])
        for e, c in sorted(self.coeffs.items()):
            term = np.full(Z.shape[:-1], float(c))
            for v, k in enumerate(e):
                if k:
                    term = term * Z[..., v] ** k
            out = out + term
        return out

    def to_json(self) -> dict:
        return {",".join(map(str, e)): float(c) for e, c in sorted(self.coeffs.items())}

    @classmethod
    def from_json(cls, nvars: int, doc: dict) -> "Poly":
        coeffs = {}
        for key, c in doc.items():
            e = tuple(int(s) for s in key.split(",")) if key != "" else ()
            coeffs[e] = coeffs.get(e, Fraction(0)) + Fraction(float(c))
        return cls(nvars, coeffs)


# ---------------------------------------------------------------------------
# differential forms


def _global(m: int, I, J) -> tuple[int, ...]:
    return tuple(I) + tuple(m + j for j in J)


def _split(m: int, K) -> tuple[tuple[int, ...], tuple[int, ...]]:
    return tuple(k for k in K if k < m), tuple(k - m for k in K if k >= m)


class DifferentialForm:
    """sum_{(I, J)} p_{IJ}(x, y) dx_I ^ dy_J on R^{m+n}."""

    def __init__(self, degree: int, m: int, n: int, terms: dict | None = None, D: int = 3):
        self.degree, self.m, self.n, self.D = int(degree), int(m), int(n), int(D)
        if not 0 <= self.degree <= self.m + self.n:
            raise InvalidFormError(f"degree {degree} impossible on R^{m + n}")
        clean = {}
        for (I, J), p in (terms or {}).items():
            I, J = tuple(int(i) for i in I), tuple(int(j) for j in J)
            if len(I) + len(J) != self.degree:
                raise InvalidFormError(f"term {(I, J)} does not have degree {self.degree}")
            if list(I) != sorted(set(I)) or list(J) != sorted(set(J)):
                raise InvalidFormError(f"indices of {(I, J)} must be strictly increasing")
            if any(not 0 <= i < self.m for i in I) or any(not 0 <= j < self.n for j in J):
                raise InvalidFormError(f"indices of {(I, J)} out of range")
            if not isinstance(p, Poly):
                p = Poly.constant(self.m + self.n, float(p))
            if p.nvars != self.m + self.n:
                raise InvalidFormError("coefficient polynomial has the wrong number of variables")
            if p.degree > self.D:
                raise InvalidFormError(f"coefficient degree {p.degree} exceeds D={self.D}")
            key = (I, J)
            clean[key] = clean[key] + p if key in clean else p
        self.terms = {k: p for k, p in sorted(clean.items()) if not p.is_zero()}

    @property
    def nvars(self) -> int:
        return self.m + self.n

    def __add__(self, other: "DifferentialForm") -> "DifferentialForm":
        if (self.degree, self.m, self.n) != (other.degree, other.m, other.n):
            raise InvalidFormError("cannot add forms of different type")
        terms = dict(self.terms)
        for k, p in other.terms.items():
            terms[k] = terms[k] + p if k in terms else p
        return DifferentialForm(self.degree, self.m, self.n, terms, max(self.D, other.D))

    def scale(self, s: float) -> "DifferentialForm":
        return DifferentialForm(self.degree, self.m, self.n,
                                {k: p.scale(s) for k, p in self.terms.items()}, self.D)

    def is_zero(self) -> bool:
        return not self.terms

    def to_json(self) -> dict:
        return {
            "degree": self.degree,
            "D": self.D,
            "m": self.m,
            "n": self.n,
            "terms": [
                {"x_idx": list(I), "y_idx": list(J), "poly": p.to_json()}
                for (I, J), p in self.terms.items()
            ],
        }

    @classmethod
    def from_json(cls, doc: dict, m: int | None = None, n: int | None = None) -> "DifferentialForm":
        try:
            m = int(doc.get("m", m))
            n = int(doc.get("n", n))
            terms = {}
            for t in doc["terms"]:
                key = (tuple(t["x_idx"]), tuple(t["y_idx"]))
                p = Poly.from_json(m + n, t["poly"])
                terms[key] = terms[key] + p if key in terms else p
            return cls(int(doc["degree"]), m, n, terms, int(doc.get("D", 3)))
        except (KeyError, TypeError, ValueError) as exc:
            raise InvalidFormError(f"malformed form document: {exc}") from exc

    def __repr__(self):
        return f"DifferentialForm(degree={self.degree}, m={self.m}, n={self.n}, terms={len(self.terms)})"


def exterior_derivative(omega: DifferentialForm) -> DifferentialForm:
    """d(p dz_K) = sum_v (dp/dz_v) dz_v ^ dz_K."""
    if omega.degree >= omega.nvars:
        raise InvalidFormError("cannot differentiate a top-degree form")
    m = omega.m
    out: dict = {}
    for (I, J), p in omega.terms.items():
        K = _global(m, I, J)
        for v in range(omega.nvars):
            if v in K:
                continue
            dp = p.derivative(v)
            if dp.is_zero():
                continue
            sign = -1 if sum(1 for k in K if k < v) % 2 else 1
            key = _split(m, tuple(sorted(K + (v,))))
            term = dp.scale(sign)
            out[key] = out[key] + term if key in out else term
    return DifferentialForm(omega.degree + 1, m, omega.n, out, max(omega.D - 1, 0))


def volume_form(m: int, n: int) -> DifferentialForm:
    """dx_1 ^ ... ^ dx_m."""
    return DifferentialForm(m, m, n, {(tuple(range(m)), ()): 1.0}, 0)


def random_form(degree: int, m: int, n: int, D: int = 3, seed=0, n_terms: int | None = None) -> DifferentialForm:
    """A form with random polynomial coefficients of total degree <= D."""
    rng = make_rng(seed)
    nv = m + n
    keys = []
    for K in itertools.combinations(range(nv), degree):
        keys.append(_split(m, K))
    if n_terms is not None and n_terms < len(keys):
        keys = [keys[i] for i in sorted(rng.choice(len(keys), n_terms, replace=False))]
    exps = [e for e in itertools.product(range(D + 1), repeat=nv) if sum(e) <= D]
    terms = {}
    for key in keys:
        chosen = rng.choice(len(exps), size=min(4, len(exps)), replace=False)
        terms[key] = Poly(nv, {exps[i]: rng.standard_normal() for i in sorted(chosen)})
    return DifferentialForm(degree, m, n, terms, D)


def radial_primitive(omega: DifferentialForm) -> DifferentialForm:
    """eta = (1/k) i_Z omega with Z the radial field, for constant-coefficient k-forms.

    d eta = omega because the Lie derivative of a constant k-form along Z is
    k omega and d omega = 0.
    """
    k = omega.degree
    if k == 0:
        raise InvalidFormError("a 0-form has no primitive")
    nv = omega.nvars
    out: dict = {}
    for (I, J), p in omega.terms.items():
        if p.degree > 0:
            raise InvalidFormError("radial primitive needs constant coefficients")
        c = p.coeffs.get((0,) * nv, Fraction(0))
        K = _global(omega.m, I, J)
        for r, v in enumerate(K):
            key = _split(omega.m, K[:r] + K[r + 1:])
            term = Poly(nv, {tuple(int(i == v) for i in range(nv)): c * (-1) ** r / k})
            out[key] = out[key] + term if key in out else term
    return DifferentialForm(k - 1, omega.m, omega.n, out, 1)


def polyaffine_form(P: PolyaffineFn) -> DifferentialForm:
    """The constant m-form whose graph pairing is int sum_i P(Du_i)."""
    m, n = P.m, P.n
    terms = {(tuple(range(m)), ()): P.c0}
    for pair, z in zip(enumerate_pairs(m, n), P.zeta):
        if z != 0:
            terms[(pair.alpha_bar, pair.beta)] = pair.pullback_sign * float(z)
    return DifferentialForm(m, m, n, terms, 0)


# ---------------------------------------------------------------------------
# pairings


def _check_form(u: QSheetField, omega: DifferentialForm, degree: int) -> None:
    if omega.degree != degree:
        raise InvalidFormError(f"expected a {degree}-form, got degree {omega.degree}")
    if (omega.m, omega.n) != (u.m, u.n):
        raise InvalidFormError(f"form lives on R^{omega.m}+{omega.n}, field on R^{u.m}+{u.n}")


def _frame(u: QSheetField, cells) -> np.ndarray:
    """[Id; Du_i] per cell and sheet: (C, Q, m+n, m)."""
    Du = u.gradients[cells]
    C = len(Du)
    eye = np.broadcast_to(np.eye(u.m), (C, u.Q, u.m, u.m))
    return np.concatenate([eye, Du], axis=2)


def _pullback_dets(frame: np.ndarray, K, dims) -> np.ndarray:
    if len(K) == 0:
        return np.ones(frame.shape[:2])
    sub = frame[:, :, list(K), :][:, :, :, list(dims)]
    if len(K) == 1:
        return sub[..., 0, 0]
    if len(K) == 2:
        return sub[..., 0, 0] * sub[..., 1, 1] - sub[..., 0, 1] * sub[..., 1, 0]
    return np.linalg.det(sub)


def _pair_terms(omega, frame, Z, w, dims) -> float:
    """sum over cells/sheets of det * int p(x, u_i) for every term."""
    total = np.zeros(Z.shape[0])
    for (I, J), p in omega.terms.items():
        K = _global(omega.m, I, J)
        det = _pullback_dets(frame, K, dims)  # (C, Q)
        vals = np.einsum("cpq,p->cq", p(Z), w)  # integrate along quadrature axis
        total += np.sum(det * vals, axis=1)
    return total


def _quad_order(omega: DifferentialForm) -> int:
    deg = max((p.degree for p in omega.terms.values()), default=0)
    return max(2, (deg + 2) // 2)


def pair_graph(u: QSheetField, omega: DifferentialForm, cells=None) -> float:
    """<T_u, omega> for an m-form, exactly for polynomial coefficients."""
    _check_form(u, omega, u.m)
    cells = np.arange(u.n_cells) if cells is None else np.asarray(cells)
    if omega.is_zero() or len(cells) == 0:
        return 0.0
    ref, w = simplex_rule(u.m, _quad_order(omega))
    bary = barycentric(ref)
    w = w * (u.mesh.cell_volume * np.prod(np.arange(1, u.m + 1)))
    corners = u.mesh.vertices[u.mesh.cells[cells]]  # (C, m+1, m)
    X = np.einsum("pt,ctk->cpk", bary, corners)
    Y = np.einsum("pt,ctqn->cpqn", bary, u.cell_sheets[cells])
    Z = np.concatenate([np.broadcast_to(X[:, :, None, :], Y.shape[:3] + (u.m,)), Y], axis=-1)
    per_cell = _pair_terms(omega, _frame(u, cells), Z, w, tuple(range(u.m)))
    return float(np.sum(per_cell))


def pair_boundary(u: QSheetField, omega: DifferentialForm) -> float:
    """<T_{u, boundary}, omega> for an (m-1)-form.

    Faces carry the outward orientation: on {x_d = const} parametrized by the
    remaining coordinates in increasing order, the sign is side * (-1)^d.
    """
    _check_form(u, omega, u.m - 1)
    if omega.is_zero():
        return 0.0
    cell, local, axis, side = u.mesh.boundary_facets()
    m = u.m
    ref, w_ref = simplex_rule(m - 1, _quad_order(omega))
    bary = barycentric(ref)  # (P, m)
    keep_all = ~np.eye(m + 1, dtype=bool)
    total = 0.0
    for d in range(m):
        for s in (-1, 1):
            sel = np.nonzero((axis == d) & (side == s))[0]
            if len(sel) == 0:
                continue
            c, t = cell[sel], local[sel]
            keep = keep_all[t]  # (F, m+1)
            corners = u.mesh.vertices[u.mesh.cells[c]][keep].reshape(len(c), m, m)
            sheets = u.cell_sheets[c][keep].reshape(len(c), m, u.Q, u.n)
            dims = tuple(k for k in range(m) if k != d)
            if m > 1:
                edges = corners[:, 1:, :][:, :, list(dims)] - corners[:, :1, :][:, :, list(dims)]
                jac = np.abs(np.linalg.det(edges))
            else:
                jac = np.ones(len(c))
            X = np.einsum("pt,ftk->fpk", bary, corners)
            Y = np.einsum("pt,ftqn->fpqn", bary, sheets)
            Z = np.concatenate([np.broadcast_to(X[:, :, None, :], Y.shape[:3] + (m,)), Y], axis=-1)
            per = _pair_terms(omega, _frame(u, c), Z, w_ref, dims)
            total += float(s * (-1) ** d * np.sum(per * jac))
    return total


def stokes_residual(u: QSheetField, omega: DifferentialForm) -> float:
    """<T_u, d omega> - <T_{u, boundary}, omega>."""
    _check_form(u, omega, u.m - 1)
    return pair_graph(u, exterior_derivative(omega)) - pair_boundary(u, omega)


# ---------------------------------------------------------------------------
# null Lagrangians


def polyaffine_energy(P: PolyaffineFn, w: QSheetField) -> float:
    """int sum_i P(Dw_i), from the constant per-cell minors."""
    if (P.m, P.n) != (w.m, w.n):
        raise InvalidInputError("polyaffine map and field disagree on m or n")
    vals = P.c0 + all_minors(w.gradients) @ P.zeta  # (C, Q)
    return float(np.sum(np.sum(vals, axis=1)) * w.mesh.cell_volume)


def trace_mismatch(w1: QSheetField, w2: QSheetField) -> float:
    """G-sup distance of the boundary traces, sampled at both fields' boundary vertices."""
    if (w1.m, w1.n, w1.Q) != (w2.m, w2.n, w2.Q) or not w1.mesh.same_domain(w2.mesh):
        raise InvalidInputError("fields differ in shape or domain")
    worst = 0.0
    for a, b in ((w1, w2), (w2, w1)):
        X = a.mesh.vertices[a.boundary_vertices()]
        worst = max(worst, float(metric_g_batch(a.evaluate_many(X), b.evaluate_many(X)).max()))
    return worst


def null_lagrangian_gap(P: PolyaffineFn, w1: QSheetField, w2: QSheetField, tol: float = BOUNDARY_TOL) -> float:
    """int sum_i P(Dw1_i) - int sum_i P(Dw2_i) for fields with equal traces."""
    mismatch = trace_mismatch(w1, w2)
    if mismatch > tol:
        raise InvalidCompetitorError(f"boundary traces differ by {mismatch:.3e} > {tol:.1e}")
    return polyaffine_energy(P, w1) - polyaffine_energy(P, w2)


def null_lagrangian_gap_boundary(P: PolyaffineFn, w1: QSheetField, w2: QSheetField) -> float:
    """The same gap computed as a difference of boundary pairings.

    With omega_P the constant m-form of P and eta its radial primitive,
    int sum_i P(Dw_i) = <T_w, d eta> = <T_{w, boundary}, eta>.
    """
    eta = radial_primitive(polyaffine_form(P))
    return pair_boundary(w1, eta) - pair_boundary(w2, eta)
