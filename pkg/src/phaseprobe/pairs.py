"""Double-hit pair extraction and detector pair-separation statistics.

Multi-hit events are recovered from EPOS pulse bookkeeping: an event with
``pulse_delta == 0`` arrived on the same pulse as its predecessor.  Only
exact-2 groups whose multiplicity field agrees are kept by default.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field, replace
from itertools import combinations
from typing import Sequence

import numpy as np

from .apt_ingest import UNRANGED, IonEvent, IonEvents, RangeTable
from .errors import AnalysisError, CalibrationError

log = logging.getLogger(__name__)

FEATURE_COLUMNS = ("real_sep_A", "stoich_flag", "mid_x_nm", "mid_y_nm", "mid_z_nm")
PAIR_CSV_HEADER = ("pulse_index", "tag_a", "tag_b", "det_sep_mm", "real_sep_A",
                   "mid_x_nm", "mid_y_nm", "mid_z_nm")


@dataclass(frozen=True, eq=False)
class DoubleHits:
    """Same-pulse index pairs into an event sequence."""

    index: np.ndarray          # (n, 2) event indices, a < b
    pulse_index: np.ndarray    # (n,) cumulative pulse number of the group
    n_inconsistent: int = 0    # groups skipped for multiplicity/size mismatch
    n_higher: int = 0          # consistent groups of size >= 3

    def __len__(self):
        return len(self.index)

    def __iter__(self):
        return (tuple(int(v) for v in row) for row in self.index)


def extract_double_hits(events: IonEvents, include_higher: bool = False) -> DoubleHits:
    """Group events by pulse and emit one index pair per double hit.

    With ``include_higher`` every unordered pair of a consistent group of size
    >= 3 is emitted as well.  Groups whose multiplicity field disagrees with
    their size are counted in ``n_inconsistent`` and skipped.
    """
    n = len(events)
    empty = DoubleHits(np.zeros((0, 2), np.int64), np.zeros(0, np.int64))
    if n == 0:
        return empty
    pd = events.pulse_delta.astype(np.int64)
    mult = events.multiplicity.astype(np.int64)
    is_start = pd != 0
    is_start[0] = True
    starts = np.flatnonzero(is_start)
    sizes = np.diff(np.append(starts, n))
    gid = np.cumsum(is_start) - 1
    pulse = np.cumsum(pd)[starts]

    # followers may repeat the group multiplicity or carry 0 (vendor convention)
    follower_bad = ~is_start & (mult != 0) & (mult != sizes[gid])
    bad_followers = np.bincount(gid[follower_bad], minlength=len(starts))
    ok = (mult[starts] == sizes) & (bad_followers == 0)
    n_inconsistent = int((~ok).sum())
    if n_inconsistent:
        log.warning("skipped %d pulse groups with inconsistent multiplicity", n_inconsistent)

    two = ok & (sizes == 2)
    index = np.column_stack([starts[two], starts[two] + 1])
    pulses = pulse[two]
    higher = np.flatnonzero(ok & (sizes >= 3))
    if include_higher and len(higher):
        extra = [(starts[g] + i, starts[g] + j, pulse[g])
                 for g in higher for i, j in combinations(range(sizes[g]), 2)]
        extra = np.array(extra, dtype=np.int64)
        index = np.vstack([index, extra[:, :2]])
        pulses = np.concatenate([pulses, extra[:, 2]])
        order = np.lexsort((index[:, 1], index[:, 0]))
        index, pulses = index[order], pulses[order]
    return DoubleHits(index.astype(np.int64).reshape(-1, 2), pulses.astype(np.int64),
                      n_inconsistent, len(higher))


def pair_separation(a: IonEvent, b: IonEvent) -> float:
    """Euclidean detector distance between two hits (mm)."""
    return float(np.hypot(float(a.det_x) - float(b.det_x), float(a.det_y) - float(b.det_y)))


def pair_separations(events: IonEvents, index: np.ndarray) -> np.ndarray:
    index = np.asarray(index, dtype=np.int64).reshape(-1, 2)
    dx = events.det_x[index[:, 0]].astype(np.float64) - events.det_x[index[:, 1]]
    dy = events.det_y[index[:, 0]].astype(np.float64) - events.det_y[index[:, 1]]
    return np.hypot(dx, dy)


@dataclass(frozen=True, eq=False)
class Pairs:
    """Column store of double-hit pairs (one row per pair)."""

    index: np.ndarray
    pulse_index: np.ndarray
    species: np.ndarray        # (n, 2) species indices, UNRANGED allowed
    det_sep: np.ndarray        # mm
    mid: np.ndarray            # (n, 3) nm
    scale: float = 1.0         # Angstrom per detector mm
    tag_names: tuple = field(default=(), compare=False)

    def __len__(self):
        return len(self.index)

    @property
    def real_sep(self) -> np.ndarray:
        return self.det_sep * self.scale

    @property
    def mid_z(self) -> np.ndarray:
        return self.mid[:, 2]

    def tags(self) -> np.ndarray:
        """(n, 2) object array of pair tags (None for untagged/unranged)."""
        lut = np.array(list(self.tag_names) + [None], dtype=object)
        sp = np.where(self.species == UNRANGED, len(self.tag_names), self.species)
        return lut[sp] if len(self) else np.zeros((0, 2), dtype=object)

    def subset(self, mask_or_index) -> "Pairs":
        s = mask_or_index
        return replace(self, index=self.index[s], pulse_index=self.pulse_index[s],
                       species=self.species[s], det_sep=self.det_sep[s], mid=self.mid[s])

    def with_scale(self, scale: float) -> "Pairs":
        return replace(self, scale=float(scale))


def make_pairs(events: IonEvents, hits: DoubleHits, table: RangeTable | None = None,
               species: np.ndarray | None = None, scale: float = 1.0) -> Pairs:
    """Materialise separations, midpoints and species for extracted double hits."""
    index = np.asarray(hits.index, dtype=np.int64).reshape(-1, 2)
    if species is None:
        species = table.lookup(events.mz) if table is not None else np.full(len(events), UNRANGED)
    species = np.asarray(species, dtype=np.int64)
    pos = events.positions()
    mid = 0.5 * (pos[index[:, 0]] + pos[index[:, 1]])
    tag_names = tuple(table.tags) if table is not None else ()
    return Pairs(index=index, pulse_index=np.asarray(hits.pulse_index, dtype=np.int64),
                 species=species[index], det_sep=pair_separations(events, index),
                 mid=mid, scale=float(scale), tag_names=tag_names)


@dataclass(frozen=True)
class Roi:
    """Region of interest in detector space (disc or rectangle, mm) and z (nm)."""

    z_range: tuple[float, float] = (-np.inf, np.inf)
    disc: tuple[float, float, float] | None = None           # cx, cy, radius
    rect: tuple[float, float, float, float] | None = None    # xmin, xmax, ymin, ymax

    def __post_init__(self):
        if not self.z_range[0] < self.z_range[1]:
            raise ValueError(f"z range must satisfy z_min < z_max, got {self.z_range}")
        if self.disc is not None and self.rect is not None:
            raise ValueError("ROI takes either a disc or a rectangle, not both")
        if self.disc is not None and not self.disc[2] > 0:
            raise ValueError("disc radius must be > 0")
        if self.rect is not None and not (self.rect[0] < self.rect[1] and self.rect[2] < self.rect[3]):
            raise ValueError(f"rectangle bounds not well ordered: {self.rect}")

    def contains(self, det_x, det_y, z) -> np.ndarray:
        det_x, det_y, z = (np.asarray(v, dtype=np.float64) for v in (det_x, det_y, z))
        keep = (z >= self.z_range[0]) & (z <= self.z_range[1])
        if self.disc is not None:
            cx, cy, r = self.disc
            keep &= (det_x - cx) ** 2 + (det_y - cy) ** 2 <= r * r
        elif self.rect is not None:
            x0, x1, y0, y1 = self.rect
            keep &= (det_x >= x0) & (det_x <= x1) & (det_y >= y0) & (det_y <= y1)
        return keep


def apply_roi(pairs: Pairs, events: IonEvents, roi: Roi) -> Pairs:
    """Keep pairs whose two members both fall inside ``roi``."""
    inside = roi.contains(events.det_x, events.det_y, events.z)
    keep = inside[pairs.index[:, 0]] & inside[pairs.index[:, 1]]
    return pairs.subset(keep)


def calibrate_scale(reference, reference_median: float = 2.77) -> float:
    """Angstrom-per-mm scale mapping the reference median separation onto ``reference_median``."""
    det = reference.det_sep if isinstance(reference, Pairs) else np.asarray(reference, dtype=np.float64)
    if det.size == 0:
        raise CalibrationError("calibration needs at least one reference pair")
    med = float(np.median(det))
    if med == 0:
        raise CalibrationError("median reference detector separation is zero")
    return float(reference_median) / med


def filter_homopairs(pairs: Pairs, tag: str) -> Pairs:
    """Pairs whose two members both carry ``tag``."""
    tags = pairs.tags()
    if not len(pairs):
        return pairs
    return pairs.subset((tags[:, 0] == tag) & (tags[:, 1] == tag))


def count_mixed(pairs: Pairs, tag_a: str, tag_b: str) -> int:
    tags = pairs.tags()
    if not len(pairs):
        return 0
    return int((((tags[:, 0] == tag_a) & (tags[:, 1] == tag_b))
                | ((tags[:, 0] == tag_b) & (tags[:, 1] == tag_a))).sum())


@dataclass(frozen=True, eq=False)
class FeatureMatrix:
    """Standardised [real_sep, stoichiometry flag, midpoint xyz] rows, delta first."""

    values: np.ndarray
    mean: np.ndarray
    std: np.ndarray
    columns: tuple = FEATURE_COLUMNS

    @property
    def flags(self) -> np.ndarray:
        return self.values[:, 1]

    def destandardize(self, values: np.ndarray | None = None) -> np.ndarray:
        values = self.values if values is None else values
        return values * self.std + self.mean


def build_feature_matrix(delta_pairs: Pairs, epsilon_pairs: Pairs) -> FeatureMatrix:
    def raw(p: Pairs, flag: float):
        return np.column_stack([p.real_sep, np.full(len(p), flag), p.mid])

    rows = np.vstack([raw(delta_pairs, 0.0), raw(epsilon_pairs, 1.0)])
    if len(rows) < 2:
        raise AnalysisError(f"feature matrix needs at least 2 rows, got {len(rows)}")
    if not np.isfinite(rows).all():
        raise AnalysisError("non-finite entries in feature matrix")
    mean = rows.mean(axis=0)
    std = rows.std(axis=0)
    std[std == 0] = 1.0
    mean[1], std[1] = 0.0, 1.0  # flag column stays 0/1
    return FeatureMatrix((rows - mean) / std, mean, std)


def pair_rows(pairs: Pairs) -> list[tuple]:
    """Rows for the pairs CSV export."""
    tags = pairs.tags()
    real = pairs.real_sep
    return [(int(pairs.pulse_index[i]), tags[i, 0] or "", tags[i, 1] or "",
             float(pairs.det_sep[i]), float(real[i]),
             float(pairs.mid[i, 0]), float(pairs.mid[i, 1]), float(pairs.mid[i, 2]))
            for i in range(len(pairs))]


def concat_pairs(parts: Sequence[Pairs]) -> Pairs:
    first = parts[0]
    return replace(first,
                   index=np.vstack([p.index for p in parts]),
                   pulse_index=np.concatenate([p.pulse_index for p in parts]),
                   species=np.vstack([p.species for p in parts]),
                   det_sep=np.concatenate([p.det_sep for p in parts]),
                   mid=np.vstack([p.mid for p in parts]))
