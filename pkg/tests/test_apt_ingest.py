import logging
import struct

import numpy as np
import pytest
from hypothesis import given, strategies as st

from phaseprobe.apt_ingest import (RECORD_SIZE, UNRANGED, IonEvent, IonEvents, RangeTable, SpeciesRange,
                                   assign_species, epos_bytes, format_range_file, parse_epos,
                                   parse_range_file, read_epos, write_epos)
from phaseprobe.errors import ParseError, RangeValidationError

f32 = st.floats(allow_nan=False, allow_infinity=False, width=32)
u32 = st.integers(0, 2**32 - 1)


def pack(x, y, z, mz, tof, v_dc, v_pulse, det_x, det_y, pd, mult):
    return struct.pack(">9f2I", x, y, z, mz, tof, v_dc, v_pulse, det_x, det_y, pd, mult)


def test_record_layout_against_struct():
    raw = pack(1.0, -2.5, 30.0, 106.909, 812.0, 4.5, 0.7, 3.25, -1.5, 17, 2)
    assert len(raw) == RECORD_SIZE
    ev = parse_epos(raw)
    e = ev[0]
    assert (e.x, e.y, e.z, e.tof, e.v_dc, e.det_x, e.det_y) == (1.0, -2.5, 30.0, 812.0, 4.5, 3.25, -1.5)
    assert e.mz == np.float32(106.909)
    assert e.v_pulse == np.float32(0.7)
    assert (e.pulse_delta, e.multiplicity) == (17, 2)


def test_empty_stream():
    assert len(parse_epos(b"")) == 0


def test_truncated_record_reports_offset():
    with pytest.raises(ParseError, match="offset 44"):
        parse_epos(b"\0" * 45)


def test_non_finite_reports_record_index():
    raw = pack(*[0.0] * 9, 1, 1) + pack(float("nan"), *[0.0] * 8, 1, 1)
    with pytest.raises(ParseError, match="record 1"):
        parse_epos(raw)


def test_single_record_roundtrip(tmp_path):
    ev = IonEvents.from_events([IonEvent(x=1.0, y=0.0, z=0.0, mz=106.909, tof=0.0, v_dc=0.0,
                                         det_x=0.0, det_y=0.0, pulse_delta=1, multiplicity=2)])
    write_epos(tmp_path / "one.epos", ev)
    back = read_epos(tmp_path / "one.epos")
    assert back == ev
    assert back[0].x == 1.0 and back[0].multiplicity == 2
    assert back[0].mz == np.float32(106.909)


@given(st.lists(st.tuples(*[f32] * 9, u32, u32), max_size=30))
def test_epos_roundtrip_bit_exact(rows):
    raw = b"".join(pack(*r) for r in rows)
    ev = parse_epos(raw)
    assert len(ev) == len(rows)
    assert epos_bytes(ev) == raw


def test_events_slice_and_columns():
    ev = IonEvents.from_columns(x=[1, 2, 3], mz=[10, 20, 30])
    assert len(ev[1:]) == 2
    assert list(ev.multiplicity) == [1, 1, 1]
    assert ev.positions().shape == (3, 3)
    with pytest.raises(ValueError):
        IonEvents.from_columns(x=[1, 2], mz=[1])


RRNG = """
# fixture
[Ions]
Number=2
Ion1=Nb
Ion2=N
[Ranges]
Number=1
Range1=106.40 107.40 Nb:1 N:1 tag=R3
"""


def test_parse_single_range():
    t = parse_range_file(RRNG)
    assert len(t) == 1
    r = t.ranges[0]
    assert r.composition == {"Nb": 1, "N": 1}
    assert r.pair_tag == "R3"
    assert (r.mz_low, r.mz_high) == (106.40, 107.40)
    assert t.elements == ("Nb", "N")


def test_parse_zero_ranges():
    assert len(parse_range_file("[Ions]\nIon1=Nb\n[Ranges]\nNumber=0\n")) == 0


def test_overlap_lists_both():
    text = "[Ions]\nIon1=Nb\n[Ranges]\nRange1=100 108 Nb:1\nRange2=106 110 Nb:2\n"
    with pytest.raises(RangeValidationError, match="Nb.*Nb2"):
        parse_range_file(text)


@pytest.mark.parametrize("line", ["108 100 Nb:1", "100 100 Nb:1", "100 101 Xx:1", "100 101 Nb:0",
                                  "100 101", "a b Nb:1"])
def test_invalid_ranges(line):
    with pytest.raises(RangeValidationError):
        parse_range_file(f"[Ions]\nIon1=Nb\n[Ranges]\nRange1={line}\n")


def test_undeclared_element_rejected():
    with pytest.raises(RangeValidationError):
        parse_range_file("[Ions]\nIon1=Nb\n[Ranges]\nRange1=10 11 O:1\n")


def test_vendor_fields_warn(caplog):
    text = "[Ions]\nIon1=Nb\n[Ranges]\nRange1=92 94 Vol:0.018 Nb:1 Color:FF00FF\nFoo=1\n"
    with caplog.at_level(logging.WARNING):
        t = parse_range_file(text)
    assert t.ranges[0].composition == {"Nb": 1}
    assert any("Vol" in r.message for r in caplog.records)
    assert any("Foo" in r.message for r in caplog.records)


def ion(mz):
    return IonEvent(x=0, y=0, z=0, mz=mz, tof=0, v_dc=0, det_x=0, det_y=0, pulse_delta=1, multiplicity=1)


def test_assign_species_examples():
    t = parse_range_file(RRNG)
    assert t.tags[assign_species(ion(92.906 + 14.003), t)] == "R3"
    for mz, want in ((50.0, UNRANGED), (107.40, UNRANGED), (106.40, 0)):
        assert assign_species(ion(mz), t) == want


def test_adjacent_windows_half_open():
    t = RangeTable((SpeciesRange("Nb", 90, 95, {"Nb": 1}), SpeciesRange("Nb2", 95, 99, {"Nb": 2})))
    assert list(t.lookup([94.999, 95.0, 99.0])) == [0, 1, UNRANGED]


@st.composite
def tables(draw):
    cuts = sorted(draw(st.lists(st.floats(0, 300, allow_nan=False), min_size=2, max_size=12, unique=True)))
    ranges = []
    for i, (lo, hi) in enumerate(zip(cuts[::2], cuts[1::2])):
        ranges.append(SpeciesRange(f"Nb{i + 1}", lo, hi, {"Nb": i + 1}))
    return RangeTable(tuple(ranges))


@given(tables(), st.lists(st.floats(-10, 310, allow_nan=False), max_size=40))
def test_lookup_matches_linear_scan(table, mz):
    got = table.lookup(np.array(mz, dtype=np.float64))
    for m, g in zip(mz, got):
        hits = [i for i, r in enumerate(table.ranges) if r.mz_low <= m < r.mz_high]
        assert len(hits) <= 1
        assert g == (hits[0] if hits else UNRANGED)


@given(tables(), st.randoms(use_true_random=False))
def test_lookup_commutes_with_permutation(table, rnd):
    mz = np.linspace(-5, 305, 50)
    perm = list(range(50))
    rnd.shuffle(perm)
    assert np.array_equal(table.lookup(mz)[perm], table.lookup(mz[perm]))


@given(tables())
def test_range_file_roundtrip(table):
    back = parse_range_file(format_range_file(table))
    assert [(r.mz_low, r.mz_high, r.composition, r.pair_tag) for r in back.ranges] == \
        [(r.mz_low, r.mz_high, r.composition, r.pair_tag) for r in table.ranges]
