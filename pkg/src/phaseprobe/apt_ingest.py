"""APT event ingestion: EPOS records, simplified RRNG range files, species lookup.

EPOS layout (44 bytes per ion, big-endian)::

    float32  x, y, z        reconstructed position (nm)
    float32  mz             mass-to-charge (Da)
    float32  tof            time of flight (ns)
    float32  v_dc           standing voltage (kV)
    float32  v_pulse        pulse voltage (kV), carried through untouched
    float32  det_x, det_y   detector hit position (mm)
    uint32   pulse_delta    pulses since the previous event
    uint32   multiplicity   ions recorded on this pulse

Events are held column-wise in :class:`IonEvents` so that 10^6-ion files stay
cheap; indexing a single row yields an :class:`IonEvent`.
"""

from __future__ import annotations

import logging
import re
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Mapping, Sequence

import numpy as np

from ._io import atomic_write_bytes
from .errors import ParseError, RangeValidationError

log = logging.getLogger(__name__)

RECORD_SIZE = 44
UNRANGED = -1

FLOAT_FIELDS = ("x", "y", "z", "mz", "tof", "v_dc", "v_pulse", "det_x", "det_y")
INT_FIELDS = ("pulse_delta", "multiplicity")
FIELDS = FLOAT_FIELDS + INT_FIELDS

EPOS_DTYPE = np.dtype([(f, ">f4") for f in FLOAT_FIELDS] + [(f, ">u4") for f in INT_FIELDS])
NATIVE_DTYPE = EPOS_DTYPE.newbyteorder("=")
assert EPOS_DTYPE.itemsize == RECORD_SIZE

# Monoisotopic masses used for composition sanity checks (Da).
ISOTOPE_MASS = {"Nb": 92.906, "N": 14.003, "Al": 26.982, "O": 15.999}

ELEMENTS = frozenset(
    """H He Li Be B C N O F Ne Na Mg Al Si P S Cl Ar K Ca Sc Ti V Cr Mn Fe Co Ni
    Cu Zn Ga Ge As Se Br Kr Rb Sr Y Zr Nb Mo Tc Ru Rh Pd Ag Cd In Sn Sb Te I Xe
    Cs Ba La Ce Pr Nd Pm Sm Eu Gd Tb Dy Ho Er Tm Yb Lu Hf Ta W Re Os Ir Pt Au Hg
    Tl Pb Bi Po At Rn Fr Ra Ac Th Pa U Np Pu Am Cm Bk Cf Es Fm Md No Lr Rf Db Sg
    Bh Hs Mt Ds Rg Cn Nh Fl Mc Lv Ts Og""".split()
)

# Vendor RRNG per-range fields that carry no ranging information here.
_VENDOR_KEYS = {"vol", "color", "name"}


@dataclass(frozen=True)
class IonEvent:
    x: float
    y: float
    z: float
    mz: float
    tof: float
    v_dc: float
    det_x: float
    det_y: float
    pulse_delta: int
    multiplicity: int
    v_pulse: float = 0.0


class IonEvents:
    """Immutable column store of ion events in acquisition order."""

    __slots__ = ("_data",)

    def __init__(self, data: np.ndarray):
        if data.dtype != NATIVE_DTYPE:
            data = data.astype(NATIVE_DTYPE)
        data = np.ascontiguousarray(data)
        data.flags.writeable = False
        self._data = data

    @classmethod
    def empty(cls) -> "IonEvents":
        return cls(np.zeros(0, dtype=NATIVE_DTYPE))

    @classmethod
    def from_columns(cls, **columns) -> "IonEvents":
        """Build from per-field arrays; missing fields default to 0 (multiplicity 1)."""
        n = None
        for v in columns.values():
            n = len(v) if n is None else n
            if len(v) != n:
                raise ValueError("all columns must have equal length")
        unknown = set(columns) - set(FIELDS)
        if unknown:
            raise ValueError(f"unknown event fields: {sorted(unknown)}")
        data = np.zeros(n or 0, dtype=NATIVE_DTYPE)
        data["multiplicity"] = 1
        for name, values in columns.items():
            data[name] = values
        return cls(data)

    @classmethod
    def from_events(cls, events: Iterable[IonEvent]) -> "IonEvents":
        rows = [tuple(getattr(e, f) for f in FIELDS) for e in events]
        return cls(np.array(rows, dtype=NATIVE_DTYPE))

    @property
    def data(self) -> np.ndarray:
        return self._data

    def __len__(self) -> int:
        return len(self._data)

    def __getitem__(self, i):
        if isinstance(i, (int, np.integer)):
            row = self._data[i]
            kw = {f: float(row[f]) for f in FLOAT_FIELDS}
            kw.update({f: int(row[f]) for f in INT_FIELDS})
            return IonEvent(**kw)
        return IonEvents(self._data[i])

    def __iter__(self):
        for i in range(len(self)):
            yield self[i]

    def __getattr__(self, name):
        if name in FIELDS:
            return self._data[name]
        raise AttributeError(name)

    def positions(self) -> np.ndarray:
        return np.column_stack([self._data["x"], self._data["y"], self._data["z"]]).astype(np.float64)

    def detector(self) -> np.ndarray:
        return np.column_stack([self._data["det_x"], self._data["det_y"]]).astype(np.float64)

    def __eq__(self, other):
        if not isinstance(other, IonEvents):
            return NotImplemented
        return self._data.tobytes() == other._data.tobytes()

    def __repr__(self):
        return f"IonEvents(n={len(self)})"


def parse_epos(raw: bytes | bytearray | memoryview) -> IonEvents:
    """Decode an EPOS byte string into events, in file order."""
    raw = memoryview(raw).cast("B")
    n, rem = divmod(len(raw), RECORD_SIZE)
    if rem:
        raise ParseError(f"truncated EPOS record at byte offset {n * RECORD_SIZE} "
                         f"({rem} trailing bytes of a {RECORD_SIZE}-byte record)")
    data = np.frombuffer(raw, dtype=EPOS_DTYPE, count=n)
    finite = np.ones(n, dtype=bool)
    for f in FLOAT_FIELDS:
        finite &= np.isfinite(data[f])
    if not finite.all():
        bad = int(np.flatnonzero(~finite)[0])
        raise ParseError(f"non-finite float in EPOS record {bad} (byte offset {bad * RECORD_SIZE})")
    return IonEvents(data)


def read_epos(path: str | Path) -> IonEvents:
    return parse_epos(Path(path).read_bytes())


def epos_bytes(events: IonEvents) -> bytes:
    return events.data.astype(EPOS_DTYPE).tobytes()


def write_epos(path: str | Path, events: IonEvents) -> None:
    atomic_write_bytes(path, epos_bytes(events))


# ---------------------------------------------------------------------------
# ranging


@dataclass(frozen=True)
class SpeciesRange:
    name: str
    mz_low: float
    mz_high: float
    composition: Mapping[str, int]
    pair_tag: str | None = None

    def __post_init__(self):
        if not self.mz_low < self.mz_high:
            raise RangeValidationError(
                f"range {self.name!r}: mz_low {self.mz_low} must be < mz_high {self.mz_high}")
        object.__setattr__(self, "composition", dict(self.composition))

    def contains(self, mz: float) -> bool:
        return self.mz_low <= mz < self.mz_high

    def nominal_mass(self) -> float | None:
        """Sum of built-in isotope masses, or None when an element is not tabulated."""
        try:
            return sum(ISOTOPE_MASS[el] * n for el, n in self.composition.items())
        except KeyError:
            return None

    def __hash__(self):
        return hash((self.name, self.mz_low, self.mz_high, tuple(self.composition.items()), self.pair_tag))


def formula(composition: Mapping[str, int]) -> str:
    return "".join(el if n == 1 else f"{el}{n}" for el, n in composition.items())


@dataclass(frozen=True)
class RangeTable:
    ranges: tuple[SpeciesRange, ...] = ()
    elements: tuple[str, ...] = ()
    _lows: np.ndarray = field(init=False, repr=False, compare=False)
    _highs: np.ndarray = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        ranges = tuple(sorted(self.ranges, key=lambda r: r.mz_low))
        for a, b in zip(ranges, ranges[1:]):
            if a.mz_high > b.mz_low:
                raise RangeValidationError(
                    f"overlapping ranges {a.name!r} [{a.mz_low}, {a.mz_high}) and "
                    f"{b.name!r} [{b.mz_low}, {b.mz_high})")
        elements = tuple(self.elements)
        if not elements:
            seen: dict[str, None] = {}
            for r in ranges:
                seen.update(dict.fromkeys(r.composition))
            elements = tuple(seen)
        for r in ranges:
            missing = set(r.composition) - set(elements)
            if missing:
                raise RangeValidationError(f"range {r.name!r} uses undeclared elements {sorted(missing)}")
        object.__setattr__(self, "ranges", ranges)
        object.__setattr__(self, "elements", elements)
        object.__setattr__(self, "_lows", np.array([r.mz_low for r in ranges], dtype=np.float64))
        object.__setattr__(self, "_highs", np.array([r.mz_high for r in ranges], dtype=np.float64))

    def __len__(self):
        return len(self.ranges)

    @property
    def names(self) -> list[str]:
        return [r.name for r in self.ranges]

    @property
    def tags(self) -> list[str | None]:
        return [r.pair_tag for r in self.ranges]

    def indices_with_tag(self, tag: str) -> np.ndarray:
        return np.array([i for i, r in enumerate(self.ranges) if r.pair_tag == tag], dtype=np.int64)

    def index_of(self, name: str) -> int:
        for i, r in enumerate(self.ranges):
            if r.name == name:
                return i
        raise KeyError(name)

    def composition_matrix(self, elements: Sequence[str] | None = None) -> np.ndarray:
        """(n_ranges, n_elements) atom counts per molecular species."""
        elements = list(self.elements if elements is None else elements)
        out = np.zeros((len(self.ranges), len(elements)), dtype=np.int64)
        for i, r in enumerate(self.ranges):
            for j, el in enumerate(elements):
                out[i, j] = r.composition.get(el, 0)
        return out

    def lookup(self, mz) -> np.ndarray:
        """Vectorised half-open window lookup; UNRANGED where nothing matches."""
        mz = np.asarray(mz, dtype=np.float64)
        if not self.ranges:
            return np.full(mz.shape, UNRANGED, dtype=np.int64)
        flat = np.atleast_1d(mz).ravel()
        idx = np.searchsorted(self._lows, flat, side="right") - 1
        hit = idx >= 0
        hit[hit] &= flat[hit] < self._highs[idx[hit]]
        return np.where(hit, idx, UNRANGED).astype(np.int64).reshape(mz.shape)


def assign_species(event, table: RangeTable):
    """Species index of the range covering ``event.mz`` or UNRANGED.

    ``event`` may be a single :class:`IonEvent` (returns int) or an
    :class:`IonEvents` column store (returns an int64 array).
    """
    if isinstance(event, IonEvents):
        return table.lookup(event.mz)
    return int(table.lookup(np.float64(event.mz)))


_SECTION = re.compile(r"^\[(\w+)\]$")
_ION = re.compile(r"^ion(\d+)$", re.IGNORECASE)
_RANGE = re.compile(r"^range(\d+)$", re.IGNORECASE)


def parse_range_file(text: str) -> RangeTable:
    """Parse the simplified RRNG dialect.

    ``[Ions]`` declares ``Ion<i>=<Symbol>``; ``[Ranges]`` declares
    ``Range<i>=<low> <high> <El>:<n> ... [tag=<TAG>]``.  ``#`` starts a
    comment.  Vendor fields (Vol, Color, Name) and unknown keys are skipped
    with a logged warning.
    """
    section = None
    declared: list[str] = []
    raw_ranges: list[tuple[int, str]] = []
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        m = _SECTION.match(line)
        if m:
            section = m.group(1).lower()
            if section not in ("ions", "ranges"):
                log.warning("line %d: ignoring unknown section [%s]", lineno, m.group(1))
            continue
        if "=" not in line:
            raise ParseError(f"line {lineno}: expected key=value, got {line!r}")
        key, value = (s.strip() for s in line.split("=", 1))
        if section == "ions":
            if _ION.match(key):
                if value not in ELEMENTS:
                    raise RangeValidationError(f"line {lineno}: unknown element symbol {value!r}")
                if value not in declared:
                    declared.append(value)
            elif key.lower() != "number":
                log.warning("line %d: ignoring unknown key %r in [Ions]", lineno, key)
        elif section == "ranges":
            if _RANGE.match(key):
                raw_ranges.append((lineno, value))
            elif key.lower() != "number":
                log.warning("line %d: ignoring unknown key %r in [Ranges]", lineno, key)
        elif section is None:
            log.warning("line %d: ignoring key %r outside any section", lineno, key)

    allowed = set(declared) if declared else ELEMENTS
    ranges = [_parse_range_line(lineno, value, allowed) for lineno, value in raw_ranges]
    return RangeTable(tuple(ranges), tuple(declared))


def _parse_range_line(lineno: int, value: str, allowed) -> SpeciesRange:
    tokens = value.split()
    if len(tokens) < 3:
        raise RangeValidationError(f"line {lineno}: range needs low, high and a composition")
    try:
        low, high = float(tokens[0]), float(tokens[1])
    except ValueError:
        raise RangeValidationError(f"line {lineno}: non-numeric range bounds {tokens[:2]}") from None
    composition: dict[str, int] = {}
    tag = None
    for tok in tokens[2:]:
        if "=" in tok:
            k, v = tok.split("=", 1)
            if k.lower() == "tag":
                tag = v
            else:
                log.warning("line %d: ignoring unknown range key %r", lineno, k)
            continue
        if ":" not in tok:
            raise RangeValidationError(f"line {lineno}: malformed composition token {tok!r}")
        el, n = tok.split(":", 1)
        if el.lower() in _VENDOR_KEYS:
            log.warning("line %d: ignoring vendor field %r", lineno, el)
            continue
        if el not in ELEMENTS or el not in allowed:
            raise RangeValidationError(f"line {lineno}: unknown element symbol {el!r}")
        try:
            count = int(n)
        except ValueError:
            raise RangeValidationError(f"line {lineno}: non-integer atom count {tok!r}") from None
        if count < 1:
            raise RangeValidationError(f"line {lineno}: atom count must be >= 1 in {tok!r}")
        if el in composition:
            raise RangeValidationError(f"line {lineno}: element {el!r} repeated")
        composition[el] = count
    if not composition:
        raise RangeValidationError(f"line {lineno}: range has empty composition")
    if not np.isfinite(low) or not np.isfinite(high):
        raise RangeValidationError(f"line {lineno}: non-finite range bounds")
    if not low < high:
        raise RangeValidationError(f"line {lineno}: mz_low {low} must be < mz_high {high}")
    return SpeciesRange(formula(composition), low, high, composition, tag)


def read_range_file(path: str | Path) -> RangeTable:
    return parse_range_file(Path(path).read_text())


def format_range_file(table: RangeTable) -> str:
    lines = ["[Ions]", f"Number={len(table.elements)}"]
    lines += [f"Ion{i}={el}" for i, el in enumerate(table.elements, 1)]
    lines += ["[Ranges]", f"Number={len(table.ranges)}"]
    for i, r in enumerate(table.ranges, 1):
        comp = " ".join(f"{el}:{n}" for el, n in r.composition.items())
        tag = f" tag={r.pair_tag}" if r.pair_tag else ""
        lines.append(f"Range{i}={r.mz_low!r} {r.mz_high!r} {comp}{tag}")
    return "\n".join(lines) + "\n"
