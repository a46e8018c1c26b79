"""Searching for competitors that beat an affine Q-map.

For an affine map u = sum_j q_j [[a_j + L_j x]] and an integrand f, the
tested inequality is

    f(x0, a, A) <= int_{C_1} f(x0, a, Dw^1, ..., Dw^J) dx

over q_j-valued competitors w^j with w^j = q_j [[a_j + L_j x]] on the
boundary of the unit cube.  The point arguments are frozen at the group
centers.  Competitors are piecewise affine on a Kuhn mesh; the search
minimizes the right-hand side over interior vertex values with a
limited-memory quasi-Newton method (monotone Armijo line search), with
occasional re-labelling of the sheets at single vertices.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg

from .._mesh import KuhnMesh
from .._validation import InvalidInputError, InvalidIntegrandError, spawn_rngs
from ..integrands import QIntegrand, QuadraticIntegrand, check_perm_invariance, energy, mattila_energy
from ..qfield import BOUNDARY_TOL, AffineQMap, QSheetField, check_competitors
from ..qspace import metric_g_batch
from .quadratic import rank_one_min

NO_VIOLATION = "no-violation-found"
VIOLATION = "violation"


@dataclass(frozen=True)
class QCConfig:
    """Search budget and tolerances for the competitor search."""

    cells_per_side: int = 8
    restarts: int = 8
    max_iters: int = 300
    seed: int = 0
    tol: float = 1e-9
    laminate_seeds: bool = True
    rematch_every: int = 10
    stop_on_violation: bool = True
    perturbation: float = 0.1
    laminate_amplitude: float = 1.0
    fd_step: float = 1e-6
    gtol: float = 1e-10

    def __post_init__(self):
        if self.cells_per_side < 2:
            raise InvalidInputError("cells_per_side must be >= 2 so the cube has interior vertices")
        if self.restarts < 1 or self.max_iters < 0 or self.tol < 0:
            raise InvalidInputError("restarts >= 1, max_iters >= 0 and tol >= 0 required")

    @classmethod
    def from_json(cls, doc: dict | None) -> "QCConfig":
        doc = dict(doc or {})
        known = set(cls.__dataclass_fields__)
        unknown = set(doc) - known
        if unknown:
            raise InvalidInputError(f"unknown optimizer options: {sorted(unknown)}")
        return cls(**doc)

    def to_json(self) -> dict:
        return {k: getattr(self, k) for k in self.__dataclass_fields__}


@dataclass
class QCVerdict:
    status: str
    margin: float
    certificate: list | None
    search_log: dict = field(default_factory=dict)
    affine_value: float = 0.0

    @property
    def violation(self) -> bool:
        return self.status == VIOLATION

    def to_json(self, include_certificate: bool = True) -> dict:
        doc = {
            "status": self.status,
            "margin": self.margin,
            "affine_value": self.affine_value,
            "search_log": self.search_log,
        }
        if include_certificate:
            doc["certificate"] = None if self.certificate is None else [w.to_json() for w in self.certificate]
        return doc


# ---------------------------------------------------------------------------
# discrete energy on a fixed mesh


class _Problem:
    """Frozen-argument energy of Q-valued competitors on the unit cube mesh."""

    def __init__(self, f: QIntegrand, u: AffineQMap, cfg: QCConfig, x0):
        self.f, self.u, self.cfg = f, u, cfg
        self.mesh = KuhnMesh(u.m, cfg.cells_per_side, np.zeros(u.m), 1.0)
        self.Q, self.n, self.m = u.Q, u.n, u.m
        self.x0 = np.zeros(u.m) if x0 is None else np.asarray(x0, dtype=float).reshape(u.m)
        self.a = u.frozen_points()
        self.group = u.group_of_sheet()
        self.boundary = self.mesh.boundary_vertex_mask()
        self.interior = np.nonzero(~self.boundary)[0]
        X = self.mesh.vertices
        self.affine_values = self.a[None] + np.einsum("qnm,vm->vqn", u.frozen_gradients(), X)
        C = self.mesh.n_cells
        self.xs = np.broadcast_to(self.x0, (C, self.m))
        self.as_ = np.broadcast_to(self.a, (C, self.Q, self.n))
        self.vol = self.mesh.cell_volume
        self.affine_value = float(f(self.x0, self.a, u.frozen_gradients()))
        self.volume = self.mesh.volume

    def gradients(self, V: np.ndarray) -> np.ndarray:
        return _gradients_from_corners(V[self.mesh.cells], self.mesh)

    def cell_values(self, Du: np.ndarray) -> np.ndarray:
        return np.asarray(self.f.func(self.xs, self.as_, Du), dtype=float).reshape(len(Du))

    def energy(self, V: np.ndarray) -> float:
        with np.errstate(all="ignore"):
            return float(np.sum(self.cell_values(self.gradients(V))) * self.vol)

    def _dfdA(self, Du: np.ndarray) -> np.ndarray:
        if self.f.grad_A is not None:
            return np.asarray(self.f.grad_A(self.xs, self.as_, Du), dtype=float).reshape(Du.shape)
        h = self.cfg.fd_step
        G = np.empty_like(Du)
        for idx in itertools.product(range(self.Q), range(self.n), range(self.m)):
            E = np.zeros_like(Du)
            E[(slice(None),) + idx] = h
            G[(slice(None),) + idx] = (self.cell_values(Du + E) - self.cell_values(Du - E)) / (2 * h)
        return G

    def energy_and_grad(self, V: np.ndarray):
        Du = self.gradients(V)
        with np.errstate(all="ignore"):
            e = float(np.sum(self.cell_values(Du)) * self.vol)
            G = self._dfdA(Du) * (self.vol / self.mesh.h)
        C = len(Du)
        rows = np.arange(C)
        dS = np.zeros((C, self.m + 1, self.Q, self.n))
        for t in range(self.m):
            g = G[rows, :, :, self.mesh.cell_sigma[:, t]]  # (C, Q, n)
            dS[:, t + 1] += g
            dS[:, t] -= g
        grad = np.zeros_like(V)
        np.add.at(grad, self.mesh.cells.reshape(-1), dS.reshape(-1, self.Q, self.n))
        grad[self.boundary] = 0.0
        return e, grad

    # -- sheet re-labelling ------------------------------------------------------
    def group_permutations(self):
        perms = []
        for j, q in enumerate(self.u.multiplicities):
            if q < 2:
                continue
            idx = np.nonzero(self.group == j)[0]
            for a, b in itertools.combinations(idx, 2):
                p = np.arange(self.Q)
                p[a], p[b] = b, a
                perms.append(p)
        return perms

    def rematch(self, V: np.ndarray, perms) -> tuple[np.ndarray, int]:
        """Swap sheet labels at single interior vertices when that lowers the energy.

        Swaps are accepted only on strict improvement (> 1e-12) and never at
        two vertices sharing a cell in the same pass.
        """
        if not perms:
            return V, 0
        cells = self.mesh.cells
        base_cells = self.cell_values(self.gradients(V))
        cand_delta = []
        for p in perms:
            # effect of swapping at one vertex: re-evaluate each cell with the
            # labels of a single corner swapped, and credit that corner's vertex
            delta = np.zeros(self.mesh.n_vertices)
            for t in range(self.m + 1):
                W = V[cells].copy()
                W[:, t] = W[:, t][:, p]
                Du = _gradients_from_corners(W, self.mesh)
                d = (self.cell_values(Du) - base_cells) * self.vol
                np.add.at(delta, cells[:, t], d)
            delta[self.boundary] = np.inf
            cand_delta.append(delta)
        cand = np.stack(cand_delta)  # (P, V)
        best_p = np.argmin(cand, axis=0)
        best_d = cand[best_p, np.arange(cand.shape[1])]
        order = np.argsort(best_d, kind="stable")
        blocked = np.zeros(self.mesh.n_vertices, dtype=bool)
        cells_of = _vertex_cells(self.mesh)
        V = V.copy()
        count = 0
        for v in order:
            if not best_d[v] < -1e-12:
                break
            if blocked[v]:
                continue
            V[v] = V[v][perms[best_p[v]]]
            count += 1
            blocked[np.unique(cells[cells_of[v]])] = True
        return V, count


def _gradients_from_corners(S, mesh):
    diffs = (S[:, 1:] - S[:, :-1]) / mesh.h
    C, _, Q, n = S.shape
    Du = np.zeros((C, Q, n, mesh.m))
    rows = np.arange(C)
    for t in range(mesh.m):
        Du[rows, :, :, mesh.cell_sigma[:, t]] = diffs[:, t]
    return Du


_VC_CACHE: dict = {}


def _vertex_cells(mesh: KuhnMesh):
    key = (mesh.m, mesh.N)
    if key not in _VC_CACHE:
        lists = [[] for _ in range(mesh.n_vertices)]
        for c, row in enumerate(mesh.cells):
            for v in row:
                lists[v].append(c)
        _VC_CACHE[key] = [np.array(x, dtype=np.int64) for x in lists]
    return _VC_CACHE[key]


# ---------------------------------------------------------------------------
# optimizer


def _lbfgs(problem: _Problem, V0: np.ndarray, cfg: QCConfig, perms, target: float):
    """Monotone L-BFGS descent with periodic re-labelling.

    Returns the final values, the energy record and the iteration count.
    Stops early once the energy drops below ``target`` (if stopping on
    violation) or becomes non-finite.
    """
    mask = ~problem.boundary
    V = V0.copy()
    e, g = problem.energy_and_grad(V)
    record = [e]
    S, Y = [], []
    it = 0
    stalled = 0
    if not np.isfinite(e) or (cfg.stop_on_violation and e < target):
        return V, record, it
    while it < cfg.max_iters:
        it += 1
        if cfg.rematch_every and perms and it % cfg.rematch_every == 0:
            V2, count = problem.rematch(V, perms)
            if count:
                e2, g2 = problem.energy_and_grad(V2)
                if e2 < e - 1e-12:
                    V, e, g = V2, e2, g2
                    record.append(e)
                    S, Y = [], []
        gflat = g[mask].reshape(-1)
        gnorm = np.abs(gflat).max() if gflat.size else 0.0
        if gnorm <= cfg.gtol:
            break
        # two-loop recursion
        q = gflat.copy()
        alphas = []
        for s, y in reversed(list(zip(S, Y))):
            rho = 1.0 / np.dot(y, s)
            a_ = rho * np.dot(s, q)
            alphas.append((rho, a_))
            q -= a_ * y
        if S:
            gamma = np.dot(S[-1], Y[-1]) / np.dot(Y[-1], Y[-1])
        else:
            gamma = min(1.0, 1.0 / max(gnorm, 1e-300))
        r = gamma * q
        for (s, y), (rho, a_) in zip(zip(S, Y), reversed(alphas)):
            b_ = rho * np.dot(y, r)
            r += (a_ - b_) * s
        d = -r
        slope = np.dot(gflat, d)
        if not slope < 0:
            d = -gflat * min(1.0, 1.0 / max(gnorm, 1e-300))
            slope = np.dot(gflat, d)
            S, Y = [], []
        step = 1.0
        accepted = False
        for _ in range(50):
            Vt = V.copy()
            Vt[mask] = V[mask] + step * d.reshape(V[mask].shape)
            et = problem.energy(Vt)
            if np.isfinite(et) and et <= e + 1e-4 * step * slope:
                accepted = True
                break
            step *= 0.5
        if not accepted or not et < e:
            stalled += 1
            S, Y = [], []
            if stalled >= 2:
                break
            continue
        stalled = 0
        et, gt = problem.energy_and_grad(Vt)
        s_vec = (Vt[mask] - V[mask]).reshape(-1)
        y_vec = (gt[mask] - g[mask]).reshape(-1)
        if np.dot(s_vec, y_vec) > 1e-12 * np.dot(s_vec, s_vec) ** 0.5 * np.dot(y_vec, y_vec) ** 0.5:
            S.append(s_vec)
            Y.append(y_vec)
            if len(S) > 10:
                S.pop(0)
                Y.pop(0)
        rel = (e - et) / max(1.0, abs(e))
        V, e, g = Vt, et, gt
        record.append(e)
        if cfg.stop_on_violation and e < target:
            break
        if rel < 1e-15:
            break
    return V, record, it


# ---------------------------------------------------------------------------
# starting points


def _sawtooth(X, b, k):
    s = k * (X @ b)
    return np.abs(s - np.round(s)) / k


def _boundary_distance(X):
    return np.min(0.5 - np.abs(X), axis=1)


def _group_hessian(problem: _Problem, j: int) -> np.ndarray:
    """Second derivative of f(x0, a, A + E on group j) in E (column-major basis)."""
    u = problem.u
    n, m = u.n, u.m
    A0 = u.frozen_gradients()
    members = problem.group == j
    h = 1e-4 * (1.0 + np.abs(A0).max())
    basis = np.eye(n * m).reshape(n * m, m, n).transpose(0, 2, 1)  # column-major unit matrices
    K = n * m
    stacks = []
    for k, l in itertools.product(range(K), repeat=2):
        for sk, sl in ((1, 1), (1, -1), (-1, 1), (-1, -1)):
            A = A0.copy()
            A[members] += h * (sk * basis[k] + sl * basis[l])
            stacks.append(A)
    vals = np.asarray(problem.f(np.broadcast_to(problem.x0, (len(stacks), m)),
                                np.broadcast_to(problem.a, (len(stacks),) + problem.a.shape),
                                np.array(stacks)), dtype=float).reshape(K, K, 4)
    H = (vals[..., 0] - vals[..., 1] - vals[..., 2] + vals[..., 3]) / (4 * h * h)
    return 0.5 * (H + H.T)


def _laminate_starts(problem: _Problem, cfg: QCConfig) -> list:
    u = problem.u
    X = problem.mesh.vertices
    dist = _boundary_distance(X)
    seeds = []
    dirs = []
    for j in range(u.J):
        with np.errstate(all="ignore"):
            H = _group_hessian(problem, j)
        if not np.all(np.isfinite(H)):
            H = np.eye(u.n * u.m)
        res = rank_one_min(QuadraticIntegrand(H, u.m, u.n), n_starts=8, seed=cfg.seed)
        dirs.append((res.a, res.b))
    for k in (1, 2, 3, 4):
        for j in range(u.J):
            a_dir, b_dir = dirs[j]
            psi = cfg.laminate_amplitude * np.minimum(_sawtooth(X, b_dir, k), dist)
            members = np.nonzero(problem.group == j)[0]
            bump = np.zeros((len(X), u.Q, u.n))
            bump[:, members] = psi[:, None, None] * a_dir
            seeds.append(bump)
            if len(members) >= 2:
                split = np.zeros_like(bump)
                half = len(members) // 2
                split[:, members[:half]] = psi[:, None, None] * a_dir
                split[:, members[half:]] = -psi[:, None, None] * a_dir
                seeds.append(split)
    return seeds


def _random_start(problem: _Problem, rng, scale: float) -> np.ndarray:
    X = problem.mesh.vertices
    dist = _boundary_distance(X)
    z = rng.standard_normal((len(X), problem.Q, problem.n)) * scale
    return z * (dist > 1e-12)[:, None, None]


def _split_groups(problem: _Problem, V: np.ndarray) -> list:
    fields = []
    for j in range(problem.u.J):
        members = problem.group == j
        fields.append(QSheetField(V[:, members], problem.cfg.cells_per_side, np.zeros(problem.m), 1.0))
    return fields


# ---------------------------------------------------------------------------
# public entry points


def combine_competitors(w: list) -> QSheetField:
    """Stack per-group competitor fields into one Q-field (group blocks of labels)."""
    first = w[0]
    vals = np.concatenate([wj.vertex_values for wj in w], axis=1)
    offsets = np.cumsum([0] + [wj.Q for wj in w[:-1]])
    match = np.concatenate([wj.matching + off for wj, off in zip(w, offsets)], axis=2)
    return QSheetField(vals, first.cells_per_side, first.center, first.side, match)


def frozen_integrand(f: QIntegrand, u: AffineQMap, x0=None) -> QIntegrand:
    """x, a -> f(x0, frozen centers, A): the right-hand side integrand."""
    x0 = np.zeros(u.m) if x0 is None else np.asarray(x0, dtype=float).reshape(u.m)
    a = u.frozen_points()

    def func(x, _a, A):
        P = len(A)
        return f.func(np.broadcast_to(x0, (P, u.m)), np.broadcast_to(a, (P,) + a.shape), A)

    return QIntegrand(func, u.m, u.n, u.Q, x_dependent=False, value_dependent=False, name=f"frozen_{f.name}")


def competitor_margin(f: QIntegrand, u: AffineQMap, w: list, x0=None, order: int = 4) -> float:
    """int_{C_1} f(x0, a, Dw) - f(x0, a, A), computed through the general energy routine."""
    check_competitors(u, w)
    x0v = np.zeros(u.m) if x0 is None else np.asarray(x0, dtype=float).reshape(u.m)
    lhs = float(f(x0v, u.frozen_points(), u.frozen_gradients()))
    return energy(frozen_integrand(f, u, x0), combine_competitors(w), order) - lhs


def _validate(f: QIntegrand, u: AffineQMap) -> None:
    if (f.m, f.n, f.Q) != (u.m, u.n, u.Q):
        raise InvalidInputError("integrand and affine map disagree on m, n or Q")
    if np.any(u.origin != 0):
        raise InvalidInputError("the affine map must be based at the origin")
    if not check_perm_invariance(f, samples=25, seed=12345):
        raise InvalidIntegrandError("integrand is not invariant under permutations of (a_i, A_i)")


def quasiconvexity_test(f: QIntegrand, u: AffineQMap, cfg: QCConfig | None = None, x0=None) -> QCVerdict:
    """Multistart competitor search for a violation of the quasiconvexity inequality.

    Restart 0 starts from the affine map itself, the next ones from laminate
    seeds (sawtooth profiles along the rank-one direction of the numerical
    Hessian, plus sheet-splitting variants for multiplicity >= 2), the rest
    from random boundary-vanishing perturbations.  "no-violation-found" is
    a statement about this budget only.
    """
    cfg = cfg or QCConfig()
    _validate(f, u)
    problem = _Problem(f, u, cfg, x0)
    vol = problem.volume
    target = (problem.affine_value - cfg.tol) * vol
    perms = problem.group_permutations()
    starts: list = [np.zeros_like(problem.affine_values)]
    if cfg.laminate_seeds:
        starts += _laminate_starts(problem, cfg)
    starts = starts[: cfg.restarts]
    rngs = spawn_rngs(cfg.seed, cfg.restarts)
    while len(starts) < cfg.restarts:
        starts.append(_random_start(problem, rngs[len(starts)], cfg.perturbation))

    best = None
    log = {"restarts": [], "seed": cfg.seed, "budget": cfg.to_json()}
    for r, z in enumerate(starts):
        V0 = problem.affine_values + z
        V0[problem.boundary] = problem.affine_values[problem.boundary]
        V, record, iters = _lbfgs(problem, V0, cfg, perms, target)
        e = record[-1]
        log["restarts"].append({"restart": r, "iterations": iters, "initial": record[0], "final": e,
                                "monotone": bool(all(b <= a for a, b in zip(record, record[1:])))})
        if np.isfinite(e) and (best is None or e < best[0]):
            best = (e, V, r)
        if cfg.stop_on_violation and np.isfinite(e) and e < target:
            break
    if best is None:
        raise FloatingPointError("energy is not finite on any competitor")
    e, V, r = best
    margin = e / vol - problem.affine_value
    log["best_restart"] = r
    log["restarts_run"] = len(log["restarts"])
    if margin < -cfg.tol:
        return QCVerdict(VIOLATION, float(margin), _split_groups(problem, V), log, problem.affine_value)
    return QCVerdict(NO_VIOLATION, float(margin), None, log, problem.affine_value)


def verify_certificate(f: QIntegrand, u: AffineQMap, verdict: QCVerdict, x0=None) -> dict:
    """Re-evaluate a violation certificate through independent code paths."""
    if verdict.certificate is None:
        raise InvalidInputError("verdict carries no certificate")
    w = verdict.certificate
    trace = 0.0
    for j, wj in enumerate(w):
        X = wj.mesh.vertices[wj.boundary_vertices()]
        target = np.repeat((u.centers[j] + X @ u.slopes[j].T)[:, None, :], u.multiplicities[j], axis=1)
        trace = max(trace, float(metric_g_batch(wj.vertex_values[wj.boundary_vertices()], target).max()))
    margin = competitor_margin(f, u, w, x0)
    return {"margin": margin, "margin_error": abs(margin - verdict.margin), "boundary_error": trace}


# ---------------------------------------------------------------------------
# quadratic integrands


def _difference_operator(mesh: KuhnMesh, n: int):
    """Dense map from interior vertex values (Vi*n) to vec(Du) per cell (C*n*m)."""
    interior = np.nonzero(~mesh.boundary_vertex_mask())[0]
    pos = -np.ones(mesh.n_vertices, dtype=np.int64)
    pos[interior] = np.arange(len(interior))
    C, m = mesh.n_cells, mesh.m
    B = np.zeros((C, n * m, len(interior) * n))
    for t in range(m):
        col = mesh.cell_sigma[:, t]
        for end, sgn in ((t + 1, 1.0), (t, -1.0)):
            v = pos[mesh.cells[:, end]]
            ok = v >= 0
            for r in range(n):
                B[np.nonzero(ok)[0], col[ok] * n + r, v[ok] * n + r] += sgn / mesh.h
    return B, interior


def semiellipticity_test(A: QuadraticIntegrand, Q: int = 1, cfg: QCConfig | None = None) -> QCVerdict:
    """Smallest value of E(f) = int sum_i <A Df_i, Df_i> over compactly supported Q-fields.

    Solved as the generalized eigenproblem K_A phi = mu K_I phi on the mesh
    with the boundary pinned to Q[[0]], where K_A, K_I are the stiffness
    matrices of A and of the Dirichlet form; the margin is mu_min when
    negative (competitor normalized to int |Df|^2 = 1) and 0 otherwise.
    """
    cfg = cfg or QCConfig()
    if not isinstance(A, QuadraticIntegrand):
        raise InvalidInputError("expected a QuadraticIntegrand")
    mesh = KuhnMesh(A.m, cfg.cells_per_side, np.zeros(A.m), 1.0)
    B, interior = _difference_operator(mesh, A.n)
    vol = mesh.cell_volume
    P = B.shape[2]
    flat = B.reshape(-1, P)
    KA = vol * (flat.T @ np.einsum("ij,cjq->ciq", A.A, B).reshape(-1, P))
    KI = vol * (flat.T @ flat)
    KA = 0.5 * (KA + KA.T)
    w, vecs = scipy.linalg.eigh(KA, KI, subset_by_index=[0, 0])
    mu = float(w[0])
    phi = vecs[:, 0] / np.sqrt(vecs[:, 0] @ KI @ vecs[:, 0])
    log = {"method": "generalized-eigenproblem", "mu_min": mu, "dofs": int(len(phi)), "seed": cfg.seed,
           "budget": {"cells_per_side": cfg.cells_per_side}}
    if mu < -cfg.tol:
        vals = np.zeros((mesh.n_vertices, Q, A.n))
        vals[interior, 0, :] = phi.reshape(-1, A.n)
        cert = QSheetField(vals, cfg.cells_per_side, np.zeros(A.m), 1.0)
        return QCVerdict(VIOLATION, mu, [cert], log, 0.0)
    return QCVerdict(NO_VIOLATION, 0.0, None, log, 0.0)


def zero_map(m: int, n: int, Q: int) -> AffineQMap:
    return AffineQMap((Q,), np.zeros((1, n)), np.zeros((1, n, m)))


def translation_identity_gap(A: QuadraticIntegrand, f: QSheetField, L) -> float:
    """E(g) - E(f) - k <A L, L> |Omega| with g = sum_i [[f_i + L x]], f pinned to k[[0]]."""
    bd = f.boundary_vertices()
    if np.abs(f.vertex_values[bd]).max(initial=0.0) > BOUNDARY_TOL:
        raise InvalidInputError("field is not pinned to k[[0]] on the boundary")
    L = np.asarray(L, dtype=float).reshape(A.n, A.m)
    g = f.add_affine(L)
    return mattila_energy(A, g) - mattila_energy(A, f) - f.Q * A.form(L) * f.mesh.volume

