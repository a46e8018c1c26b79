"""Equi-integrability diagnostics for sampled function sequences.

Functions are piecewise constant on a common grid of cells with equal
volume; a sequence is stored as an array of shape (K, cells).  All
integrals below are exact for such data.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field

import numpy as np

from ._validation import InvalidInputError


class InvalidExponentError(InvalidInputError):
    """The exponent is outside the range where the check applies."""


class BitingScheduleError(RuntimeError):
    """No truncation in the finite sequence meets the tail schedule."""

    def __init__(self, message: str, diagnostics: dict):
        super().__init__(message)
        self.diagnostics = diagnostics


@dataclass(frozen=True)
class SampledFunctionSeq:
    """g_1..g_K as cell values on a common grid (cells of equal volume)."""

    values: np.ndarray
    cell_volume: float
    labels: tuple = ()
    p: float = 1.0

    def __post_init__(self):
        vals = np.asarray(self.values, dtype=float)
        if vals.ndim == 1:
            vals = vals[None]
        if vals.ndim != 2:
            raise InvalidInputError("values must have shape (K, cells)")
        if not np.all(np.isfinite(vals)):
            raise InvalidInputError("sampled values must be finite")
        if not self.cell_volume > 0:
            raise InvalidInputError("cell volume must be positive")
        vals = vals.copy()
        vals.setflags(write=False)
        object.__setattr__(self, "values", vals)
        labels = tuple(self.labels) if self.labels else tuple(range(1, len(vals) + 1))
        if len(labels) != len(vals):
            raise InvalidInputError("one label per sequence member required")
        object.__setattr__(self, "labels", labels)

    def __len__(self):
        return len(self.values)

    @property
    def measure(self) -> float:
        return self.values.shape[1] * self.cell_volume

    def l1_norms(self) -> np.ndarray:
        return np.abs(self.values).sum(axis=1) * self.cell_volume


def _as_values(g) -> np.ndarray:
    return np.abs(np.asarray(getattr(g, "values", g), dtype=float))


def distribution_tail(g, t: float, cell_volume: float = 1.0) -> float | np.ndarray:
    """int_{|g| >= t} |g|; for a sequence returns one value per member."""
    if t < 0:
        raise InvalidInputError("threshold must be nonnegative")
    if isinstance(g, SampledFunctionSeq):
        cell_volume = g.cell_volume
    v = _as_values(g)
    out = np.where(v >= t, v, 0.0).sum(axis=-1) * cell_volume
    return float(out) if np.ndim(out) == 0 else out


def small_set_sup(g, delta: float, cell_volume: float = 1.0) -> float | np.ndarray:
    """sup over measurable E with |E| <= delta of int_E |g| (cells may be split)."""
    if delta < 0:
        raise InvalidInputError("delta must be nonnegative")
    if isinstance(g, SampledFunctionSeq):
        cell_volume = g.cell_volume
    v = np.sort(_as_values(g), axis=-1)[..., ::-1]
    full = int(min(np.floor(delta / cell_volume), v.shape[-1]))
    total = v[..., :full].sum(axis=-1) * cell_volume
    if full < v.shape[-1]:
        total = total + v[..., full] * (delta - full * cell_volume)
    return float(total) if np.ndim(total) == 0 else total


def equiintegrability_moduli(seq: SampledFunctionSeq, deltas, ts) -> dict:
    """omega(delta) = sup_k small_set_sup and phi(t) = sup_k tail, on given grids."""
    omega = [float(np.max(small_set_sup(seq, d), initial=0.0)) for d in deltas]
    phi = [float(np.max(distribution_tail(seq, t), initial=0.0)) for t in ts]
    return {"deltas": list(map(float, deltas)), "omega": omega, "ts": list(map(float, ts)), "phi": phi}


@dataclass(frozen=True)
class DLVPReport:
    ok: bool
    sup: float
    values: list
    cap: float


def dlvp_check(seq: SampledFunctionSeq, phi, cap: float = 1e3) -> DLVPReport:
    """sup_k int phi(|g_k|) below ``cap`` (superlinearity of phi is the caller's claim)."""
    if len(seq) == 0:
        return DLVPReport(True, 0.0, [], cap)
    vals = [float(np.sum(phi(np.abs(row))) * seq.cell_volume) for row in seq.values]
    sup = max(vals)
    return DLVPReport(bool(np.isfinite(sup) and sup < cap), sup, vals, cap)


# ---------------------------------------------------------------------------
# biting truncations


def sqrt_schedule(C: float):
    """eps(t) = C / sqrt(t)."""
    return lambda t: C / np.sqrt(t)


def inverse_schedule(C: float):
    """eps(t) = C / t."""
    return lambda t: C / t


def _meets(row: np.ndarray, level: float, eps, cell_volume: float) -> tuple[bool, float]:
    """Does tail(min(g, level), t) <= eps(t) hold for every t > 0?

    The tail is a step function that is constant between consecutive
    distinct values, and eps is non-increasing, so checking at the distinct
    positive values is exact.
    """
    v = np.minimum(np.abs(row), level)
    v = v[v > 0]
    if v.size == 0:
        return True, 0.0
    v = np.sort(v)[::-1]
    csum = np.cumsum(v) * cell_volume
    last = np.r_[v[1:] != v[:-1], True]
    levels, tails = v[last], csum[last]
    excess = tails - np.asarray([eps(t) for t in levels], dtype=float)
    worst = float(excess.max())
    return worst <= 1e-12 * max(1.0, float(tails.max())), worst


@dataclass
class BitingResult:
    positions: list
    labels: list
    levels: list
    tail_mass: list
    truncations: np.ndarray = field(repr=False)
    exhausted: bool = False

    def tails(self, t: float, cell_volume: float) -> np.ndarray:
        return distribution_tail(self.truncations, t, cell_volume)


def biting_truncations(seq: SampledFunctionSeq, schedule=None, t0: float | None = None,
                       max_levels: int = 64) -> BitingResult:
    """Greedy selection of levels t_j = t0 2^j and indices k_j with uniform tails.

    For each level, the first member after the previously selected one whose
    truncation min(g_k, t_j) satisfies tail(t) <= eps(t) for all t is
    selected.  The default schedule is eps(t) = C / sqrt(t) with C the
    largest L^1 norm; the default t0 is C / |Omega|.  Raises
    :class:`BitingScheduleError` when not even the first level can be met.
    """
    if len(seq) == 0:
        raise InvalidInputError("empty sequence")
    C = float(seq.l1_norms().max())
    if C == 0:
        C = 1.0
    eps = schedule or sqrt_schedule(C)
    t = float(t0) if t0 is not None else max(C / seq.measure, np.finfo(float).tiny)
    positions, levels, masses, rows = [], [], [], []
    start = 0
    best = {}
    for j in range(max_levels):
        found = None
        for k in range(start, len(seq)):
            ok, worst = _meets(seq.values[k], t, eps, seq.cell_volume)
            if ok:
                found = k
                break
            if worst < best.get(j, (np.inf,))[0]:
                best[j] = (worst, k)
        if found is None:
            break
        trunc = np.minimum(np.abs(seq.values[found]), t)
        positions.append(found)
        levels.append(t)
        masses.append(distribution_tail(trunc, t, seq.cell_volume))
        rows.append(trunc)
        start = found + 1
        t *= 2.0
        if start >= len(seq):
            break
    if not positions:
        raise BitingScheduleError(
            "no member of the sequence meets the tail schedule at the first level",
            {"first_level": levels[0] if levels else t,
             "best_excess": best.get(0, (None, None))[0], "best_position": best.get(0, (None, None))[1]},
        )
    return BitingResult(positions, [seq.labels[i] for i in positions], levels, masses,
                        np.array(rows), exhausted=len(positions) < max_levels)


# ---------------------------------------------------------------------------
# critical exponent check


def _family_tail(vals: np.ndarray, cell_volume: float, level_factor: float, measure: float, rel_tol: float):
    l1 = vals.sum(axis=1) * cell_volume
    S = float(l1.max()) if l1.size else 0.0
    t_star = level_factor * S / measure if S > 0 else 0.0
    tails = np.where(vals >= t_star, vals, 0.0).sum(axis=1) * cell_volume if S > 0 else np.zeros(len(vals))
    sup_tail = float(tails.max()) if len(tails) else 0.0
    return {
        "sup_l1": S,
        "level": t_star,
        "tails": tails.tolist(),
        "sup_tail": sup_tail,
        "equi_integrable": bool(sup_tail <= rel_tol * S) if S > 0 else True,
    }


def sobolev_critical_check(values, grad_norms, p: float, m: int, cell_volume: float,
                           level_factor: float = 16.0, rel_tol: float = 0.1) -> dict:
    """Does equi-integrability of |g_k|^p and |grad g_k|^p carry over to |g_k|^{p*}?

    Each family's tails are measured at the level t* = level_factor * (sup
    L^1 norm) / |Omega|; a family counts as (empirically) equi-integrable
    when sup_k tail(t*) <= rel_tol * sup L^1.  The Chebyshev bound sup_j
    j^p meas{|g_k| > j} over integer j is reported as well.  The report
    separates hypothesis from conclusion and never asserts the implication.
    """
    if not 1 <= p < m:
        raise InvalidExponentError(f"need 1 <= p < m, got p={p}, m={m}")
    g = np.abs(np.atleast_2d(np.asarray(values, dtype=float)))
    dg = np.abs(np.atleast_2d(np.asarray(grad_norms, dtype=float)))
    if g.shape != dg.shape:
        raise InvalidInputError("values and gradient norms must have the same shape")
    p_star = m * p / (m - p)
    measure = g.shape[1] * cell_volume
    fam_p = _family_tail(g**p, cell_volume, level_factor, measure, rel_tol)
    fam_grad = _family_tail(dg**p, cell_volume, level_factor, measure, rel_tol)
    fam_star = _family_tail(g**p_star, cell_volume, level_factor, measure, rel_tol)
    J = int(np.floor(g.max())) if g.size else 0
    cheb = []
    for row in g:
        js = np.arange(1, J + 1)
        meas = (row[None, :] > js[:, None]).sum(axis=1) * cell_volume
        cheb.append(float(np.max(js**p * meas, initial=0.0)))
    hypothesis = fam_p["equi_integrable"] and fam_grad["equi_integrable"]
    conclusion = fam_star["equi_integrable"]
    return {
        "p": p,
        "m": m,
        "p_star": p_star,
        "values_p": fam_p,
        "gradients_p": fam_grad,
        "values_p_star": fam_star,
        "chebyshev": cheb,
        "chebyshev_sup": max(cheb, default=0.0),
        "hypothesis_holds": bool(hypothesis),
        "conclusion_holds": bool(conclusion),
        "consistent_with_transfer": bool(conclusion or not hypothesis),
    }


# ---------------------------------------------------------------------------
# CSV


def read_sequence_csv(path, cell_volume: float | None = None) -> SampledFunctionSeq:
    """Read rows (k, cell_index, value).  Missing cells are an error.

    Without ``cell_volume`` the cells are taken to tile the unit interval/cube.
    """
    data: dict = {}
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        for row in reader:
            if not row or row[0].strip().lower() == "k":
                continue
            try:
                k, c, v = int(row[0]), int(row[1]), float(row[2])
            except (ValueError, IndexError) as exc:
                raise InvalidInputError(f"bad CSV row {row!r}") from exc
            data.setdefault(k, {})[c] = v
    if not data:
        raise InvalidInputError("empty CSV sequence")
    labels = sorted(data)
    ncell = max(max(d) for d in data.values()) + 1
    vals = np.full((len(labels), ncell), np.nan)
    for i, k in enumerate(labels):
        for c, v in data[k].items():
            vals[i, c] = v
    if np.isnan(vals).any():
        raise InvalidInputError("every member must provide a value for every cell")
    return SampledFunctionSeq(vals, cell_volume if cell_volume is not None else 1.0 / ncell, tuple(labels))


def write_sequence_csv(path, seq: SampledFunctionSeq) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["k", "cell_index", "value"])
        for k, row in zip(seq.labels, seq.values):
            for c, v in enumerate(row):
                w.writerow([k, c, format(float(v), ".17g")])


def spike_sequence(ks, cells: int = 1024) -> SampledFunctionSeq:
    """g_k = k chi_[0, 1/k] on [0, 1] sampled on ``cells`` equal cells."""
    x = (np.arange(cells) + 0.5) / cells
    vals = np.array([np.where(x < 1.0 / k, float(k), 0.0) for k in ks])
    return SampledFunctionSeq(vals, 1.0 / cells, tuple(int(k) for k in ks))
