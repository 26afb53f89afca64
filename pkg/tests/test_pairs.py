import math

import numpy as np
import pytest
from hypothesis import given, strategies as st
from conftest import pulse_stream

from phaseprobe.apt_ingest import IonEvents
from phaseprobe.errors import AnalysisError, CalibrationError
from phaseprobe.pairs import (Roi, apply_roi, build_feature_matrix, calibrate_scale, count_mixed,
                              extract_double_hits, filter_homopairs, make_pairs, pair_separation,
                              pair_separations)
from phaseprobe.synth import default_range_table

TABLE = default_range_table()
R3 = int(TABLE.indices_with_tag("R3")[0])
R18 = int(TABLE.indices_with_tag("R18")[0])


def test_all_singles_give_no_pairs():
    assert len(extract_double_hits(pulse_stream([1] * 100))) == 0


def test_planted_double_hits_found():
    sizes = [1] * 50
    for pos in (3, 20, 41):
        sizes.insert(pos, 2)
    ev = pulse_stream(sizes)
    starts = np.concatenate([[0], np.cumsum(sizes)[:-1]])
    want = [(int(s), int(s) + 1) for s, n in zip(starts, sizes) if n == 2]
    assert list(extract_double_hits(ev)) == want


def test_triple_hit_default_and_higher():
    ev = pulse_stream([1, 3, 1])
    assert len(extract_double_hits(ev)) == 0
    hits = extract_double_hits(ev, include_higher=True)
    assert list(hits) == [(1, 2), (1, 3), (2, 3)]
    assert hits.n_higher == 1


def test_inconsistent_multiplicity_counted_and_skipped():
    # group of two whose leader claims multiplicity 3
    ev = pulse_stream([1, 2, 2], mult=[1, 3, 3, 2, 2])
    hits = extract_double_hits(ev)
    assert list(hits) == [(3, 4)]
    assert hits.n_inconsistent == 1


def test_followers_may_carry_zero_multiplicity():
    ev = pulse_stream([2, 1], mult=[2, 0, 1])
    assert list(extract_double_hits(ev)) == [(0, 1)]


def test_pulse_index_is_cumulative():
    ev = IonEvents.from_columns(pulse_delta=[5, 3, 0, 2], multiplicity=[1, 2, 2, 1])
    hits = extract_double_hits(ev)
    assert list(hits.pulse_index) == [8]


@given(st.lists(st.integers(1, 4), max_size=40), st.integers(0, 2**31))
def test_grouping_ignores_position_and_mass(sizes, seed):
    a = pulse_stream(sizes, seed=1)
    b = pulse_stream(sizes, seed=seed)
    d = b.data.copy()
    d["pulse_delta"], d["multiplicity"] = a.pulse_delta, a.multiplicity
    ha, hb = extract_double_hits(a, True), extract_double_hits(IonEvents(d), True)
    assert np.array_equal(ha.index, hb.index)
    assert ha.n_higher == hb.n_higher


@given(st.lists(st.integers(1, 5), max_size=40))
def test_higher_pairs_count_is_binomial(sizes):
    hits = extract_double_hits(pulse_stream(sizes), include_higher=True)
    assert len(hits) == sum(math.comb(s, 2) for s in sizes)


def ion_pair(ax, ay, bx, by):
    ev = IonEvents.from_columns(det_x=[ax, bx], det_y=[ay, by])
    return ev[0], ev[1]


def test_separation_examples():
    assert pair_separation(*ion_pair(0, 0, 3, 4)) == 5.0
    assert pair_separation(*ion_pair(1.5, -2, 1.5, -2)) == 0.0


def naive_sep(a, b):
    return math.sqrt((float(a.det_x) - float(b.det_x)) ** 2 + (float(a.det_y) - float(b.det_y)) ** 2)


def test_separations_match_naive_routine():
    rng = np.random.default_rng(3)
    ev = IonEvents.from_columns(det_x=rng.uniform(-40, 40, 2000), det_y=rng.uniform(-40, 40, 2000))
    index = np.arange(2000).reshape(1000, 2)
    got = pair_separations(ev, index)
    want = np.array([naive_sep(ev[int(i)], ev[int(j)]) for i, j in index])
    np.testing.assert_allclose(got, want, rtol=1e-12, atol=0)


@given(st.floats(0.125, 8.0))
def test_separation_homogeneous(c):
    rng = np.random.default_rng(5)
    x, y = rng.uniform(-4, 4, 200), rng.uniform(-4, 4, 200)
    # powers-of-two friendly scale keeps float32 storage exact enough
    a = IonEvents.from_columns(det_x=x, det_y=y)
    b = IonEvents.from_columns(det_x=a.det_x.astype(np.float64) * c, det_y=a.det_y.astype(np.float64) * c)
    idx = np.arange(200).reshape(100, 2)
    np.testing.assert_allclose(pair_separations(b, idx), c * pair_separations(a, idx), rtol=1e-6)


def stream_with_pairs(n_pairs, z_pairs, species_pairs=None, seed=0):
    rng = np.random.default_rng(seed)
    sizes = [2] * n_pairs
    ev = pulse_stream(sizes, seed=seed)
    d = ev.data.copy()
    d["z"][0::2] = z_pairs
    d["z"][1::2] = z_pairs
    sp = np.full(len(d), R3)
    if species_pairs is not None:
        sp = np.asarray(species_pairs).reshape(-1)
    ev = IonEvents(d)
    return ev, make_pairs(ev, extract_double_hits(ev), TABLE, species=sp)


def test_universal_roi_is_identity():
    ev, pairs = stream_with_pairs(30, np.linspace(0, 100, 30))
    assert len(apply_roi(pairs, ev, Roi())) == 30


def test_tiny_disc_is_empty():
    ev, pairs = stream_with_pairs(30, np.linspace(0, 100, 30))
    assert len(apply_roi(pairs, ev, Roi(disc=(500.0, 500.0, 0.001)))) == 0


def test_roi_z_keeps_planted_half():
    z = np.where(np.arange(40) % 2 == 0, 25.0, 75.0)
    ev, pairs = stream_with_pairs(40, z)
    kept = apply_roi(pairs, ev, Roi(z_range=(0.0, 50.0)))
    assert len(kept) == 20
    assert np.all(kept.mid_z == 25.0)


def test_roi_requires_both_members():
    ev = IonEvents.from_columns(z=[10, 60], det_x=[0, 0], det_y=[0, 0], pulse_delta=[1, 0], multiplicity=[2, 2])
    pairs = make_pairs(ev, extract_double_hits(ev), TABLE)
    assert len(apply_roi(pairs, ev, Roi(z_range=(0, 50)))) == 0


@pytest.mark.parametrize("kw", [dict(z_range=(5, 5)), dict(disc=(0, 0, 0)), dict(rect=(1, 0, 0, 1)),
                                dict(disc=(0, 0, 1), rect=(0, 1, 0, 1))])
def test_invalid_roi(kw):
    with pytest.raises(ValueError):
        Roi(**kw)


rects = st.tuples(st.floats(-20, 0), st.floats(0.1, 20), st.floats(-20, 0), st.floats(0.1, 20))


@given(rects, st.floats(0, 1), st.floats(0, 1))
def test_roi_idempotent_and_monotone(rect, shrink_a, shrink_b):
    ev, pairs = stream_with_pairs(60, np.linspace(0, 100, 60), seed=2)
    x0, x1, y0, y1 = rect
    big = Roi(z_range=(0, 100), rect=(x0, x1, y0, y1))
    small = Roi(z_range=(10, 90), rect=(x0 * shrink_a, x1 * shrink_b + 1e-9, y0, y1))
    once = apply_roi(pairs, ev, big)
    assert np.array_equal(apply_roi(once, ev, big).index, once.index)
    s = set(map(tuple, apply_roi(pairs, ev, small).index))
    assert s <= set(map(tuple, once.index))


def test_calibration_arithmetic():
    assert calibrate_scale(np.array([0.009, 0.010, 0.011]), 2.77) == pytest.approx(277.0, rel=1e-12)
    assert calibrate_scale(np.array([0.01, 0.02]), 0.0) == 0.0
    with pytest.raises(CalibrationError):
        calibrate_scale(np.array([0.0, 0.0, 1.0]))
    with pytest.raises(CalibrationError):
        calibrate_scale(np.array([]))


def test_calibration_makes_reference_median_exact():
    rng = np.random.default_rng(0)
    det = rng.lognormal(np.log(0.014), 0.1, 501)
    scale = calibrate_scale(det, 2.77)
    assert np.median(det * scale) == pytest.approx(2.77, rel=1e-12)


def test_oracle_scale_recovered(small_specimen):
    events, truth, table = small_specimen
    pairs = make_pairs(events, extract_double_hits(events), table)
    scale = calibrate_scale(filter_homopairs(pairs, "R3"), 2.77)
    assert scale == pytest.approx(truth.magnification, rel=0.01)


def test_homopair_filter_counts():
    sp = [(R3, R3)] * 40 + [(R18, R18)] * 10 + [(R3, R18)] * 5
    ev, pairs = stream_with_pairs(55, np.linspace(0, 1, 55), sp)
    assert len(filter_homopairs(pairs, "R18")) == 10
    assert len(filter_homopairs(pairs, "R3")) == 40
    assert count_mixed(pairs, "R3", "R18") == 5
    r3 = filter_homopairs(pairs, "R3")
    assert len(filter_homopairs(r3, "R3")) == len(r3)


@given(st.floats(1e-3, 1e3), st.floats(1e-3, 1e3))
def test_scale_preserves_ordering(s1, s2):
    ev, pairs = stream_with_pairs(20, np.zeros(20), seed=4)
    o1 = np.argsort(pairs.with_scale(s1).real_sep, kind="stable")
    o2 = np.argsort(pairs.with_scale(s2).real_sep, kind="stable")
    assert np.array_equal(o1, o2)


def test_feature_matrix_minimal_and_roundtrip():
    sp = [(R3, R3), (R18, R18)]
    ev, pairs = stream_with_pairs(2, np.array([1.0, 2.0]), sp)
    pairs = pairs.with_scale(200.0)
    fm = build_feature_matrix(filter_homopairs(pairs, "R3"), filter_homopairs(pairs, "R18"))
    assert fm.values.shape == (2, 5)
    assert list(fm.flags) == [0.0, 1.0]


def test_feature_matrix_standardised(small_specimen):
    events, truth, table = small_specimen
    pairs = make_pairs(events, extract_double_hits(events), table, scale=200.0)
    d, e = filter_homopairs(pairs, "R3"), filter_homopairs(pairs, "R18")
    fm = build_feature_matrix(d, e)
    cols = [0, 2, 3, 4]
    np.testing.assert_allclose(fm.values[:, cols].mean(axis=0), 0, atol=1e-10)
    np.testing.assert_allclose(fm.values[:, cols].std(axis=0), 1, atol=1e-10)
    assert set(np.unique(fm.flags)) == {0.0, 1.0}
    assert np.all(fm.flags[:len(d)] == 0)
    raw = np.vstack([np.column_stack([p.real_sep, np.full(len(p), f), p.mid]) for p, f in ((d, 0), (e, 1))])
    np.testing.assert_allclose(fm.destandardize(), raw, atol=1e-10)


def test_feature_matrix_too_small():
    ev, pairs = stream_with_pairs(1, np.zeros(1))
    with pytest.raises(AnalysisError):
        build_feature_matrix(pairs, filter_homopairs(pairs, "R18"))
