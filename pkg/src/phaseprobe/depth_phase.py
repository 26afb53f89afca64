"""Depth-resolved delta/epsilon homopair fractions along the analysis direction.

Bins are stored top electrode first (surface side), i.e. in order of
increasing z for a reconstruction whose z grows into the specimen.  Pass
``flip=True`` when the reconstruction's z axis points the other way.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import AnalysisError
from .pairs import Pairs
from .stats import binomial_ci, spearman_rho

INCREASING, DECREASING, FLAT = "INCREASING", "DECREASING", "FLAT"


@dataclass(frozen=True, eq=False)
class PhaseDepthBins:
    edges: np.ndarray          # bin edges in storage order (surface side first)
    n_delta: np.ndarray
    n_epsilon: np.ndarray
    frac_epsilon: np.ndarray   # NaN for empty bins
    ci_lo: np.ndarray
    ci_hi: np.ndarray
    level: float = 0.95

    @property
    def centers(self) -> np.ndarray:
        return 0.5 * (self.edges[:-1] + self.edges[1:])

    @property
    def n_total(self) -> np.ndarray:
        return self.n_delta + self.n_epsilon

    @property
    def occupied(self) -> np.ndarray:
        return self.n_total > 0

    @property
    def frac_delta(self) -> np.ndarray:
        return 1.0 - self.frac_epsilon

    def rows(self):
        return [(float(c), int(d), int(e), float(f), float(lo), float(hi))
                for c, d, e, f, lo, hi in zip(self.centers, self.n_delta, self.n_epsilon,
                                              self.frac_epsilon, self.ci_lo, self.ci_hi)]


def homopair_labels(pairs: Pairs, delta_tag: str = "R3", epsilon_tag: str = "R18"):
    """(mid_z, is_epsilon) for the homopairs of the two tags; other pairs dropped."""
    tags = pairs.tags()
    if not len(pairs):
        return np.zeros(0), np.zeros(0, dtype=bool)
    is_d = (tags[:, 0] == delta_tag) & (tags[:, 1] == delta_tag)
    is_e = (tags[:, 0] == epsilon_tag) & (tags[:, 1] == epsilon_tag)
    keep = is_d | is_e
    return pairs.mid_z[keep], is_e[keep]


def z_segment(mid_z, is_epsilon, n_bins: int = 20, edges=None, flip: bool = False,
              level: float = 0.95) -> PhaseDepthBins:
    """Bin homopairs by midpoint depth and compute epsilon fractions with Wilson CIs.

    ``edges`` (ascending z) overrides ``n_bins``; otherwise ``n_bins`` equal
    bins span the occupied z extent.  Pairs outside explicit edges are
    dropped.
    """
    z = np.asarray(mid_z, dtype=np.float64)
    eps = np.asarray(is_epsilon, dtype=bool)
    if z.shape != eps.shape:
        raise ValueError("mid_z and is_epsilon must have equal length")
    if edges is None:
        if n_bins < 1:
            raise ValueError("n_bins must be >= 1")
        if z.size == 0:
            raise AnalysisError("no pairs to segment")
        lo, hi = float(z.min()), float(z.max())
        if hi == lo:
            hi = lo + 1.0
        edges = np.linspace(lo, hi, n_bins + 1)
    edges = np.asarray(edges, dtype=np.float64)
    if edges.ndim != 1 or len(edges) < 2 or np.any(np.diff(edges) <= 0):
        raise ValueError("edges must be strictly increasing with at least 2 entries")
    nb = len(edges) - 1
    b = np.searchsorted(edges, z, side="right") - 1
    b[z == edges[-1]] = nb - 1
    ok = (b >= 0) & (b < nb)
    n_e = np.bincount(b[ok & eps], minlength=nb)
    n_d = np.bincount(b[ok & ~eps], minlength=nb)
    if flip:
        edges, n_e, n_d = edges[::-1], n_e[::-1], n_d[::-1]
    n = n_d + n_e
    frac = np.full(nb, np.nan)
    lo = np.full(nb, np.nan)
    hi = np.full(nb, np.nan)
    for i in np.flatnonzero(n):
        frac[i] = n_e[i] / n[i]
        lo[i], hi[i] = binomial_ci(int(n_e[i]), int(n[i]), level)
    return PhaseDepthBins(edges, n_d, n_e, frac, lo, hi, level)


@dataclass(frozen=True)
class TrendSummary:
    rho: float
    direction: str
    tied: bool
    n_bins: int


def trend_summary(bins: PhaseDepthBins) -> TrendSummary:
    """Spearman correlation of delta fraction with bin index from substrate to surface."""
    occ = np.flatnonzero(bins.occupied)
    if len(occ) < 3:
        raise AnalysisError(f"trend needs >= 3 occupied bins, got {len(occ)}")
    # storage order is surface first, so substrate->surface index is reversed
    index = (len(bins.n_total) - 1 - occ).astype(np.float64)
    rho, tied = spearman_rho(index, bins.frac_delta[occ])
    direction = INCREASING if rho > 0 else DECREASING if rho < 0 else FLAT
    return TrendSummary(rho, direction, tied, len(occ))
