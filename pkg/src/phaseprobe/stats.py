"""Distribution statistics: Gaussian KDE, Mann-Whitney U, boxplot summaries, Wilson intervals."""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from functools import lru_cache
from statistics import NormalDist

import numpy as np

from .errors import AnalysisError

log = logging.getLogger(__name__)

EXACT_MAX_N = 12
_SQRT_2PI = math.sqrt(2.0 * math.pi)


def _as_samples(values, name="samples") -> np.ndarray:
    x = np.asarray(values, dtype=np.float64).ravel()
    if x.size == 0:
        raise AnalysisError(f"{name} must be non-empty")
    if not np.isfinite(x).all():
        raise AnalysisError(f"{name} contains non-finite values")
    return x


def silverman_bandwidth(samples) -> float:
    """0.9 * min(sd, IQR/1.34) * n^(-1/5), with a tiny fallback for zero spread."""
    x = _as_samples(samples)
    n = x.size
    sd = float(x.std(ddof=1)) if n > 1 else 0.0
    q75, q25 = np.percentile(x, [75, 25])
    iqr = float(q75 - q25) / 1.34
    spreads = [s for s in (sd, iqr) if s > 0]
    if not spreads:
        h = 1e-3 * abs(float(x.mean())) + 1e-12
        log.warning("zero sample spread; KDE bandwidth falls back to %g", h)
        return h
    return 0.9 * min(spreads) * n ** -0.2


@dataclass(frozen=True, eq=False)
class KDE:
    samples: np.ndarray
    bandwidth: float

    def __call__(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=np.float64)
        flat = x.ravel()
        out = np.empty(flat.shape)
        h = self.bandwidth
        step = max(1, 2_000_000 // max(1, self.samples.size))
        for s in range(0, flat.size, step):
            u = (flat[s:s + step, None] - self.samples[None, :]) / h
            out[s:s + step] = np.exp(-0.5 * u * u).sum(axis=1)
        out /= self.samples.size * h * _SQRT_2PI
        return out.reshape(x.shape)

    def grid(self, n: int = 512, pad: float = 3.0) -> tuple[np.ndarray, np.ndarray]:
        """Evaluate on ``n`` points spanning the samples padded by ``pad`` bandwidths."""
        lo = self.samples.min() - pad * self.bandwidth
        hi = self.samples.max() + pad * self.bandwidth
        xs = np.linspace(lo, hi, n)
        return xs, self(xs)


def kde(samples, bandwidth: float | str = "auto") -> KDE:
    x = _as_samples(samples)
    if isinstance(bandwidth, str):
        if bandwidth.lower() != "auto":
            raise ValueError(f"unknown bandwidth rule {bandwidth!r}")
        h = silverman_bandwidth(x)
    else:
        h = float(bandwidth)
        if not h > 0:
            raise ValueError("bandwidth must be > 0")
    return KDE(x, h)


def rankdata(values) -> np.ndarray:
    """1-based ranks with ties given their mean rank."""
    x = np.asarray(values, dtype=np.float64)
    order = np.argsort(x, kind="mergesort")
    xs = x[order]
    new_run = np.concatenate([[True], xs[1:] != xs[:-1]])
    run_id = np.cumsum(new_run) - 1
    starts = np.flatnonzero(new_run)
    ends = np.append(starts[1:], xs.size)
    mean_rank = 0.5 * (starts + ends + 1)     # average of (start+1 .. end)
    ranks = np.empty(x.size)
    ranks[order] = mean_rank[run_id]
    return ranks


def _tie_sizes(values) -> np.ndarray:
    _, counts = np.unique(values, return_counts=True)
    return counts


@lru_cache(maxsize=None)
def _u_counts(m: int, n: int) -> tuple[int, ...]:
    """Number of arrangements giving U = 0..m*n for sample sizes m, n (no ties)."""
    if m == 0 or n == 0:
        return (1,)
    # U(m, n) = U(m-1, n) shifted by n (largest value in sample a) + U(m, n-1)
    left = _u_counts(m - 1, n)
    right = _u_counts(m, n - 1)
    out = [0] * (m * n + 1)
    for u, c in enumerate(left):
        out[u + n] += c
    for u, c in enumerate(right):
        out[u] += c
    return tuple(out)


def exact_u_pvalue(u: float, m: int, n: int) -> float:
    """Two-sided exact p: share of labelings with |U - mn/2| >= observed."""
    counts = _u_counts(m, n)
    dev = abs(2 * u - m * n)
    hits = sum(c for k, c in enumerate(counts) if abs(2 * k - m * n) >= dev)
    return hits / math.comb(m + n, m)


@dataclass(frozen=True)
class UTestResult:
    U: float
    z: float
    p: float
    method: str
    n_a: int = 0
    n_b: int = 0


def mann_whitney_u(a, b) -> UTestResult:
    """Two-sided Mann-Whitney U test of ``a`` against ``b``.

    U counts pairs with a_i > b_j (ties count 1/2), so ``z < 0`` when ``a``
    tends to be smaller.  Exact enumeration is used for n_a + n_b <= 12
    without ties; otherwise the normal approximation with tie-corrected
    variance and continuity correction.
    """
    a = _as_samples(a, "a")
    b = _as_samples(b, "b")
    na, nb = a.size, b.size
    n = na + nb
    pooled = np.concatenate([a, b])
    ranks = rankdata(pooled)
    u = float(ranks[:na].sum() - na * (na + 1) / 2.0)
    mean = na * nb / 2.0
    ties = _tie_sizes(pooled)
    tie_term = float((ties ** 3 - ties).sum())
    var = na * nb / 12.0 * ((n + 1) - (tie_term / (n * (n - 1)) if n > 1 else 0.0))
    d = u - mean
    if var <= 0 or d == 0:
        z = 0.0
    else:
        z = math.copysign(max(abs(d) - 0.5, 0.0), d) / math.sqrt(var)
    if n <= EXACT_MAX_N and tie_term == 0:
        return UTestResult(u, z, exact_u_pvalue(u, na, nb), "exact", na, nb)
    p = 1.0 if var <= 0 else min(1.0, math.erfc(abs(z) / math.sqrt(2.0)))
    return UTestResult(u, z, p, "normal-approximation", na, nb)


@dataclass(frozen=True)
class BoxStats:
    median: float
    q1: float
    q3: float
    whisker_low: float
    whisker_high: float
    outliers: list = field(default_factory=list)
    n: int = 0


def boxplot_stats(samples, whis: float = 1.5) -> BoxStats:
    """Tukey boxplot summary; quartiles by linear interpolation of order statistics."""
    x = np.sort(_as_samples(samples))
    q1, med, q3 = (float(v) for v in np.percentile(x, [25, 50, 75]))
    iqr = q3 - q1
    lo_fence, hi_fence = q1 - whis * iqr, q3 + whis * iqr
    inside = x[(x >= lo_fence) & (x <= hi_fence)]
    outliers = [float(v) for v in x[(x < lo_fence) | (x > hi_fence)]]
    return BoxStats(med, q1, q3, float(inside.min()), float(inside.max()), outliers, int(x.size))


def binomial_ci(k: int, n: int, level: float = 0.95) -> tuple[float, float]:
    """Wilson score interval for k successes out of n."""
    if n < 1 or not 0 <= k <= n:
        raise ValueError(f"need 0 <= k <= n and n >= 1, got k={k}, n={n}")
    z = NormalDist().inv_cdf(0.5 + level / 2.0)
    p = k / n
    denom = 1.0 + z * z / n
    center = (p + z * z / (2 * n)) / denom
    half = z * math.sqrt(p * (1 - p) / n + z * z / (4 * n * n)) / denom
    lo = 0.0 if k == 0 else max(0.0, center - half)
    hi = 1.0 if k == n else min(1.0, center + half)
    return lo, hi


def spearman_rho(x, y) -> tuple[float, bool]:
    """Spearman rank correlation; returns (0.0, True) when either ranking is constant."""
    rx, ry = rankdata(x), rankdata(y)
    rx -= rx.mean()
    ry -= ry.mean()
    denom = math.sqrt(float((rx * rx).sum() * (ry * ry).sum()))
    if denom == 0:
        return 0.0, True
    return float((rx * ry).sum() / denom), False
