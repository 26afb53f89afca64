"""Voxelised concentration maps and 1D depth profiles over ranged APT ions.

Molecular ions are decomposed into their elements (an NbN ion adds one Nb
and one N atom).  Detected composition is reported as-is; the optional
per-element detection efficiencies (detected counts are divided by them)
only exist for what-if corrections such as nitrogen undercounting.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable, Mapping, Sequence

import numpy as np

from .apt_ingest import UNRANGED, RangeTable

AXES = {"x": 0, "y": 1, "z": 2}


def _positions(events_or_xyz) -> np.ndarray:
    if hasattr(events_or_xyz, "positions"):
        return events_or_xyz.positions()
    return np.asarray(events_or_xyz, dtype=np.float64).reshape(-1, 3)


def _inverse_efficiency(elements, efficiency) -> np.ndarray:
    efficiency = efficiency or {}
    eff = np.array([float(efficiency.get(el, 1.0)) for el in elements])
    if np.any(~(eff > 0)):
        raise ValueError("detection efficiencies must be > 0")
    return 1.0 / eff


@dataclass(frozen=True, eq=False)
class VoxelGrid:
    origin: np.ndarray        # (3,) nm, lower corner
    voxel_size: float         # nm
    dims: tuple               # voxels per axis
    counts: np.ndarray        # (nx, ny, nz, n_species) ion counts
    n_dropped: int = 0        # ranged ions outside the grid
    n_unranged: int = 0

    @property
    def total(self) -> int:
        return int(self.counts.sum())

    def merge(self, other: "VoxelGrid") -> "VoxelGrid":
        if (self.dims != other.dims or self.voxel_size != other.voxel_size
                or not np.array_equal(self.origin, other.origin)):
            raise ValueError("cannot merge grids with different geometry")
        return VoxelGrid(self.origin, self.voxel_size, self.dims, self.counts + other.counts,
                         self.n_dropped + other.n_dropped, self.n_unranged + other.n_unranged)

    def element_counts(self, table: RangeTable, elements: Iterable[str],
                       efficiency: Mapping[str, float] | None = None) -> np.ndarray:
        """Atom counts per voxel summed over ``elements`` (molecular ions decomposed)."""
        elements = list(elements)
        comp = table.composition_matrix(elements).astype(np.float64)
        weights = comp @ _inverse_efficiency(elements, efficiency)
        return self.counts @ weights

    def rows(self):
        """Sparse (ix, iy, iz, species, count) rows for non-empty cells."""
        nz = np.argwhere(self.counts > 0)
        return [(int(a), int(b), int(c), int(s), int(self.counts[a, b, c, s])) for a, b, c, s in nz]


def grid_bounds(positions: np.ndarray, voxel_size: float) -> tuple[np.ndarray, tuple]:
    if len(positions) == 0:
        return np.zeros(3), (1, 1, 1)
    origin = np.floor(positions.min(axis=0) / voxel_size) * voxel_size
    dims = tuple(int(d) for d in np.floor((positions.max(axis=0) - origin) / voxel_size) + 1)
    return origin, dims


def voxelize(events, species: np.ndarray, voxel_size: float = 1.0, n_species: int | None = None,
             origin: Sequence[float] | None = None, dims: Sequence[int] | None = None) -> VoxelGrid:
    """Bin ranged ions into a regular grid of per-species counts.

    Without explicit ``origin``/``dims`` the grid is snapped to multiples of
    ``voxel_size`` and covers every ranged ion.
    """
    if not voxel_size > 0:
        raise ValueError("voxel_size must be > 0")
    pos = _positions(events)
    species = np.asarray(species, dtype=np.int64)
    if n_species is None:
        n_species = int(species.max()) + 1 if species.size and species.max() >= 0 else 0
    ranged = species != UNRANGED
    pos, sp = pos[ranged], species[ranged]
    if origin is None or dims is None:
        o, d = grid_bounds(pos, voxel_size)
        origin = o if origin is None else origin
        dims = d if dims is None else dims
    origin = np.asarray(origin, dtype=np.float64)
    dims = tuple(int(v) for v in dims)
    idx = np.floor((pos - origin) / voxel_size).astype(np.int64)
    inside = np.all((idx >= 0) & (idx < np.array(dims)), axis=1)
    idx, sp = idx[inside], sp[inside]
    flat = np.ravel_multi_index((idx[:, 0], idx[:, 1], idx[:, 2], sp), dims + (n_species,))
    counts = np.bincount(flat, minlength=int(np.prod(dims)) * n_species)
    counts = counts.reshape(dims + (n_species,))
    return VoxelGrid(origin, float(voxel_size), dims, counts,
                     int((~inside).sum()), int((~ranged).sum()))


@dataclass(frozen=True, eq=False)
class RatioMap:
    ratio: np.ndarray         # NaN where masked
    mask: np.ndarray          # True where the denominator is below threshold
    numerator: np.ndarray
    denominator: np.ndarray
    axis: str
    origin: np.ndarray        # (2,) nm of the two remaining axes
    voxel_size: float
    threshold: float

    @property
    def unmasked(self) -> np.ndarray:
        return self.ratio[~self.mask]

    def pooled(self) -> float:
        """Ratio of summed counts over the unmasked area."""
        den = self.denominator[~self.mask].sum()
        return float(self.numerator[~self.mask].sum() / den) if den else float("nan")

    def header(self) -> dict:
        return {"axis": self.axis, "origin_nm": [float(v) for v in self.origin],
                "voxel_size_nm": self.voxel_size, "shape": list(self.ratio.shape),
                "mask_threshold": self.threshold,
                "n_masked": int(self.mask.sum()), "pooled_ratio": self.pooled(),
                "mask": self.mask.astype(int).tolist()}


def ratio_map_2d(grid: VoxelGrid, table: RangeTable, numerator: Iterable[str] = ("Nb",),
                 denominator: Iterable[str] = ("N",), axis: str = "z",
                 threshold: float = 10.0, efficiency: Mapping[str, float] | None = None) -> RatioMap:
    """Project element counts along ``axis`` and take their ratio per column."""
    if axis not in AXES:
        raise ValueError(f"axis must be one of x, y, z; got {axis!r}")
    ax = AXES[axis]
    num = grid.element_counts(table, numerator, efficiency).sum(axis=ax)
    den = grid.element_counts(table, denominator, efficiency).sum(axis=ax)
    mask = den < threshold
    with np.errstate(divide="ignore", invalid="ignore"):
        ratio = np.where(mask, np.nan, num / np.where(den == 0, 1, den))
    keep = [i for i in range(3) if i != ax]
    return RatioMap(ratio, mask, num, den, axis, grid.origin[keep], grid.voxel_size, threshold)


@dataclass(frozen=True, eq=False)
class DepthProfile:
    edges: np.ndarray
    elements: tuple
    atoms: np.ndarray         # (n_bins, n_elements) atom counts
    ions: np.ndarray          # (n_bins, n_species) ranged ion counts

    @property
    def centers(self) -> np.ndarray:
        return 0.5 * (self.edges[:-1] + self.edges[1:])

    @property
    def totals(self) -> np.ndarray:
        return self.atoms.sum(axis=1)

    @property
    def mask(self) -> np.ndarray:
        return self.totals == 0

    @property
    def fractions(self) -> np.ndarray:
        """Atomic fractions per bin (NaN rows for empty bins)."""
        tot = self.totals[:, None].astype(np.float64)
        with np.errstate(divide="ignore", invalid="ignore"):
            return np.where(tot > 0, self.atoms / np.where(tot == 0, 1, tot), np.nan)

    def fraction(self, element: str) -> np.ndarray:
        return self.fractions[:, self.elements.index(element)]

    def peak(self, element: str) -> tuple[float, float]:
        """(bin centre, fraction) of the maximum of ``element``."""
        f = self.fraction(element)
        i = int(np.nanargmax(f))
        return float(self.centers[i]), float(f[i])


def depth_profile(events, species: np.ndarray, table: RangeTable, bin_width: float = 1.0,
                  origin: float | None = None, elements: Sequence[str] | None = None,
                  efficiency: Mapping[str, float] | None = None) -> DepthProfile:
    """Atomic fractions of ranged ions in z-bins of width ``bin_width``.

    Bin edges start at ``origin`` (default: lowest ranged z snapped down to a
    multiple of ``bin_width``) and extend to
    cover every ranged ion.
    """
    if not bin_width > 0:
        raise ValueError("bin_width must be > 0")
    z = _positions(events)[:, 2]
    species = np.asarray(species, dtype=np.int64)
    ranged = species != UNRANGED
    z, sp = z[ranged], species[ranged]
    elements = tuple(table.elements if elements is None else elements)
    if origin is None:
        origin = float(np.floor(z.min() / bin_width) * bin_width) if z.size else 0.0
    top = float(z.max()) if z.size else origin
    n_bins = max(1, int(np.floor((top - origin) / bin_width)) + 1)
    edges = origin + bin_width * np.arange(n_bins + 1)
    b = np.floor((z - origin) / bin_width).astype(np.int64)
    ok = (b >= 0) & (b < n_bins)
    n_species = len(table)
    ions = np.bincount(b[ok] * n_species + sp[ok], minlength=n_bins * n_species)
    ions = ions.reshape(n_bins, n_species)
    comp = table.composition_matrix(elements).astype(np.float64)
    comp *= _inverse_efficiency(elements, efficiency)[None, :]
    return DepthProfile(edges, elements, ions @ comp, ions)
