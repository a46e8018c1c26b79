import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from qvar import InvalidInputError
from qvar.equiint import (
    BitingScheduleError,
    InvalidExponentError,
    SampledFunctionSeq,
    biting_truncations,
    distribution_tail,
    dlvp_check,
    equiintegrability_moduli,
    inverse_schedule,
    read_sequence_csv,
    small_set_sup,
    sobolev_critical_check,
    spike_sequence,
    write_sequence_csv,
)

KS = [2**i for i in range(11)]


def test_distribution_tail_examples():
    one = np.ones(16)
    assert distribution_tail(one, 2.0, 1 / 16) == 0.0
    assert distribution_tail(one, 0.5, 1 / 16) == 1.0
    seq = spike_sequence(KS)
    for t in (0.5, 1.0):
        assert np.allclose(distribution_tail(seq, t), 1.0, rtol=0, atol=1e-15)
    assert np.allclose(distribution_tail(seq, 3.0), [0.0, 0.0] + [1.0] * 9)
    with pytest.raises(InvalidInputError):
        distribution_tail(one, -1.0)


@given(st.lists(st.floats(-50, 50), min_size=1, max_size=40), st.floats(0, 60), st.floats(0, 60))
def test_tail_monotone_and_right_continuous(vals, s, t):
    g = np.array(vals)
    lo, hi = min(s, t), max(s, t)
    assert distribution_tail(g, hi, 0.1) <= distribution_tail(g, lo, 0.1) + 1e-12
    # right-continuity on the sampled lattice: the tail is constant on (v_next, v]
    for v in np.unique(np.abs(g)):
        below = np.abs(g)[np.abs(g) < v]
        left = below.max() if below.size else 0.0
        mid = 0.5 * (left + v)
        if mid > left:
            assert distribution_tail(g, mid, 0.1) == distribution_tail(g, v, 0.1)


def test_small_set_sup_splits_cells():
    g = np.array([4.0, 1.0, 2.0, 0.0])
    assert small_set_sup(g, 0.25, 0.25) == pytest.approx(1.0)
    assert small_set_sup(g, 0.375, 0.25) == pytest.approx(1.0 + 0.125 * 2.0)
    assert small_set_sup(g, 10.0, 0.25) == pytest.approx(1.75)


@given(st.integers(0, 2**20))
def test_small_sets_and_tails_bound_each_other(seed):
    rng = np.random.default_rng(seed)
    vals = rng.pareto(1.5, size=(6, 64))
    seq = SampledFunctionSeq(vals, 1 / 64)
    C = seq.l1_norms().max()
    ts = np.geomspace(0.1, 100, 15)
    deltas = np.geomspace(1e-3, 1, 12)
    mod = equiintegrability_moduli(seq, deltas, ts)
    for d, om in zip(deltas, mod["omega"]):
        # omega(delta) <= t delta + phi(t) for every t
        assert all(om <= t * d + ph + 1e-12 for t, ph in zip(ts, mod["phi"]))
    for t, ph in zip(ts, mod["phi"]):
        # phi(t) <= omega(C / t) by Chebyshev
        assert ph <= max(small_set_sup(seq, min(C / t, seq.measure))) + 1e-12


def test_dlvp_examples():
    ones = SampledFunctionSeq(np.ones((5, 32)), 1 / 32)
    rep = dlvp_check(ones, lambda t: t**2)
    assert rep.ok and rep.sup == pytest.approx(1.0)
    rep = dlvp_check(spike_sequence(KS), lambda t: t**2, cap=100.0)
    assert not rep.ok and rep.values == pytest.approx([float(k) for k in KS])
    empty = SampledFunctionSeq(np.zeros((0, 4)), 0.25)
    assert dlvp_check(empty, lambda t: t**2).ok


def test_biting_equi_integrable_input():
    seq = SampledFunctionSeq(np.ones((8, 32)), 1 / 32)
    res = biting_truncations(seq)
    assert res.positions == list(range(8))
    assert res.levels == [2.0**j for j in range(8)]
    assert all(t == pytest.approx(0.0) for t in res.tails(5.0, seq.cell_volume))


def test_biting_spike_rate():
    seq = spike_sequence(KS)
    res = biting_truncations(seq, inverse_schedule(1.0))
    assert res.labels == [4**j for j in range(6)]
    for k, mass, t in zip(res.labels, res.tail_mass, res.levels):
        assert mass == pytest.approx(t / k) and mass == pytest.approx(k**-0.5)
    # below the first level the tails are the truncated masses, which decrease with j
    for t in (0.25, 0.5, 1.0):
        assert np.all(np.diff(res.tails(t, seq.cell_volume)) <= 0)
    # every selected truncation meets the schedule at all its distinct values
    for row in res.truncations:
        for v in np.unique(row[row > 0]):
            assert distribution_tail(row, v, seq.cell_volume) <= 1.0 / v + 1e-12


def test_biting_default_schedule_on_mixed_sequence():
    x = (np.arange(1024) + 0.5) / 1024
    g = 1.0 + 0.5 * np.sin(2 * np.pi * x)
    spikes = spike_sequence(KS)
    mixed = SampledFunctionSeq(spikes.values + g, spikes.cell_volume, spikes.labels)
    res = biting_truncations(mixed)
    assert len(res.positions) >= 4
    assert np.all(np.diff(res.positions) > 0) and np.all(np.diff(res.levels) > 0)
    C = mixed.l1_norms().max()
    for row in res.truncations:
        for v in np.unique(row):
            assert distribution_tail(row, v, mixed.cell_volume) <= C / np.sqrt(v) + 1e-12


def test_biting_fails_loudly():
    seq = spike_sequence([64, 128])
    with pytest.raises(BitingScheduleError) as err:
        biting_truncations(seq, lambda t: 1e-6 / t, t0=100.0)
    assert err.value.diagnostics["best_excess"] > 0


def test_sobolev_bounded_sequence():
    x = (np.arange(256) + 0.5) / 256
    g = np.stack([np.sin(k * x) for k in range(1, 5)])
    dg = np.stack([k * np.abs(np.cos(k * x)) for k in range(1, 5)])
    rep = sobolev_critical_check(g, dg, 1.0, 2, 1 / 256)
    assert rep["hypothesis_holds"] and rep["conclusion_holds"]
    assert rep["values_p_star"]["sup_tail"] == 0.0


def _radial_grid(N):
    h = 1.0 / N
    c = (np.arange(N) + 0.5) * h - 0.5
    X, Y = np.meshgrid(c, c, indexing="ij")
    return np.hypot(X, Y).ravel(), h * h


def test_sobolev_log_spike_family():
    r, vol = _radial_grid(128)
    ks = [2, 4, 8, 16]
    g = np.stack([np.minimum(np.log(1 / np.maximum(r, 1e-12)), np.log(k)) for k in ks])
    dg = np.stack([np.where(r > 1 / k, 1 / np.maximum(r, 1e-12), 0.0) for k in ks])
    rep = sobolev_critical_check(g, dg, 1.0, 2, vol)
    assert rep["gradients_p"]["equi_integrable"]
    assert rep["conclusion_holds"] and rep["consistent_with_transfer"]


def test_sobolev_concentration_flags_hypothesis():
    r, vol = _radial_grid(256)
    ks = [2, 4, 8, 16, 32, 64]
    bump = lambda s: np.maximum(1 - s, 0.0)  # noqa: E731
    g = np.stack([k * bump(k * r) for k in ks])
    dg = np.stack([k * k * (k * r < 1) for k in ks]).astype(float)
    rep = sobolev_critical_check(g, dg, 1.0, 2, vol)
    assert not rep["gradients_p"]["equi_integrable"]
    assert not rep["hypothesis_holds"] and not rep["conclusion_holds"]
    assert rep["consistent_with_transfer"]
    assert rep["chebyshev_sup"] > 0


def test_sobolev_rejects_supercritical_exponent():
    with pytest.raises(InvalidExponentError):
        sobolev_critical_check(np.ones((1, 4)), np.ones((1, 4)), 2.0, 2, 0.25)


def test_csv_roundtrip(tmp_path):
    seq = spike_sequence([1, 2, 4], cells=8)
    path = tmp_path / "seq.csv"
    write_sequence_csv(path, seq)
    back = read_sequence_csv(path)
    assert np.array_equal(back.values, seq.values) and back.labels == seq.labels
    assert back.cell_volume == seq.cell_volume
    path.write_text("k,cell_index,value\n1,0,1.0\n1,2,1.0\n")
    with pytest.raises(InvalidInputError):
        read_sequence_csv(path)
