"""Folding experiments: competitors turned into weakly converging sequences."""

from __future__ import annotations

import numpy as np

from .._validation import InvalidInputError
from ..integrands import QIntegrand, energy
from ..qfield import (
    AffineQMap,
    QFieldSequence,
    boundary_trace_distance,
    fold_sequence,
    weak_convergence_report,
)
from .quasiconvexity import combine_competitors, frozen_integrand

#: Agreement required between rescaled folded energies for x- and value-independent integrands.
K_INDEPENDENCE_TOL = 1e-10


def necessity_experiment(F: QIntegrand, u: AffineQMap, w: list, ks=(1, 2, 4, 8), r: float = 1.0,
                         p: float = 2.0) -> dict:
    """Compare F(u, C_r), F(u_{k,r}, C_r) and r^m int_{C_1} f(0, a, Dw).

    For integrands independent of x and of the values, the folded energy is
    exactly r^m times the competitor energy for every k; the report checks
    this to ``K_INDEPENDENCE_TOL`` (relative to max(1, |value|)).  A folded
    energy below F(u, C_r) exhibits a failure of lower semicontinuity along
    a weakly converging sequence.
    """
    ks = [int(k) for k in ks]
    if not ks or min(ks) < 1:
        raise InvalidInputError("fold counts must be positive integers")
    if (F.m, F.n, F.Q) != (u.m, u.n, u.Q):
        raise InvalidInputError("integrand and affine map disagree on m, n or Q")
    N = w[0].cells_per_side
    m = u.m
    folded = [fold_sequence(u, w, k, r) for k in ks]
    base = u.to_field(N * max(ks), side=r)
    affine_energy = energy(F, base)
    folded_energies = [energy(F, fk) for fk in folded]
    rhs = energy(frozen_integrand(F, u), combine_competitors(w)) * r**m
    scale = max(1.0, abs(rhs))
    deviation = max(abs(e - rhs) for e in folded_energies) / scale
    structural = not F.x_dependent and not F.value_dependent
    seq = QFieldSequence(tuple(folded), p)
    report = weak_convergence_report(seq, base) if len(ks) > 1 else None
    return {
        "ks": ks,
        "r": r,
        "affine_energy": affine_energy,
        "folded_energies": folded_energies,
        "rescaled_competitor_energy": rhs,
        "max_relative_deviation": deviation,
        "k_independent": bool(deviation <= K_INDEPENDENCE_TOL) if structural else None,
        "semicontinuity_failure": bool(min(folded_energies) < affine_energy - 1e-12 * max(1.0, abs(affine_energy))),
        "boundary_trace_error": max(boundary_trace_distance(fk, u) for fk in folded),
        "weak_convergence": None if report is None else {
            "distances": report.distances,
            "sup_energy": report.sup_energy,
            "consistent": report.consistent,
            "label": report.label,
        },
    }


def affine_competitors(u: AffineQMap, cells_per_side: int) -> list:
    """The affine map's own groups as (trivial) competitors on C_1."""
    return [u.group_field(j, cells_per_side) for j in range(u.J)]


def lsc_margin(F: QIntegrand, u: AffineQMap, w: list) -> float:
    """int_{C_1} f(0, a, Dw) - f(0, a, A): negative iff w beats the affine map."""
    a = u.frozen_points()
    return energy(frozen_integrand(F, u), combine_competitors(w)) - float(F(np.zeros(u.m), a, u.frozen_gradients()))
