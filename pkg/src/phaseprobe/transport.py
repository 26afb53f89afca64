"""Junction transport: R*A product fits and SIS I-V characterisation.

Units: bias in mV, current in pA, resistance in MOhm, area in um^2.
1 mV / 1 MOhm = 1 nA = 1000 pA.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.signal import savgol_filter

from .errors import AnalysisError

PA_PER_MV_PER_MOHM = 1000.0


@dataclass(frozen=True)
class RAFit:
    ra: float                 # MOhm um^2
    stderr: float
    n: int
    log_space: bool = False

    def as_dict(self):
        return {"ra_MOhm_um2": self.ra, "stderr": self.stderr, "n": self.n, "log_space": self.log_space}


def fit_ra(areas, resistances, log_space: bool = False) -> RAFit:
    """Fit R = C / A.

    Default is unweighted least squares of R against 1/A through the origin,
    C = sum(R/A) / sum(1/A^2); the standard error treats the residual
    scatter as proportional to R.  ``log_space`` instead averages log(R*A).
    """
    a = np.asarray(areas, dtype=np.float64)
    r = np.asarray(resistances, dtype=np.float64)
    if a.shape != r.shape:
        raise ValueError("areas and resistances must have equal length")
    n = a.size
    if n < 2:
        raise AnalysisError(f"R*A fit needs >= 2 points, got {n}")
    if np.any(a <= 0) or np.any(r <= 0):
        raise AnalysisError("areas and resistances must be positive")
    if log_space:
        logs = np.log(r * a)
        c = float(np.exp(logs.mean()))
        se = float(c * logs.std(ddof=1) / math.sqrt(n))
        return RAFit(c, se, n, True)
    x = 1.0 / a
    sxx = float((x * x).sum())
    c = float((r * x).sum() / sxx)
    resid = r - c * x
    # junction-to-junction scatter is multiplicative, so residuals are pooled
    # relative to the fitted R and scaled back per point
    fit = c * x
    s2 = float(((resid / fit) ** 2).sum()) / (n - 1)
    var = s2 * float((x * x * fit * fit).sum()) / (sxx * sxx)
    return RAFit(c, math.sqrt(var), n)


@dataclass(frozen=True, eq=False)
class IVTrace:
    bias: np.ndarray          # mV, strictly increasing
    current: np.ndarray       # pA

    def __post_init__(self):
        v = np.asarray(self.bias, dtype=np.float64)
        i = np.asarray(self.current, dtype=np.float64)
        if v.shape != i.shape or v.ndim != 1:
            raise ValueError("bias and current must be equal-length 1-D arrays")
        if not (np.isfinite(v).all() and np.isfinite(i).all()):
            raise AnalysisError("I-V trace contains non-finite values")
        if np.any(np.diff(v) <= 0):
            raise AnalysisError("bias must be strictly increasing")
        object.__setattr__(self, "bias", v)
        object.__setattr__(self, "current", i)


@dataclass(frozen=True)
class IVConfig:
    high_bias: float = 6.0        # |V| >= this is the normal-state branch (mV)
    subgap: float = 1.0           # |V| <= this is the subgap fit band (mV)
    sg_window: int = 7            # Savitzky-Golay window (points)
    sg_order: int = 2
    onset_lo: float = 0.05
    onset_hi: float = 0.95
    noise_factor: float = 5.0
    min_gap_contrast: float = 0.01  # peak dI/dV must exceed the normal slope by this fraction


@dataclass(frozen=True)
class IVSummary:
    gap_voltage: float
    onset_range: tuple
    rn: float                     # MOhm
    subgap_r: float               # MOhm
    jc: float                     # pA/um^2; a detection bound when no supercurrent
    supercurrent_detected: bool
    zero_bias_current: float      # pA
    noise_floor: float            # pA

    def as_dict(self):
        return {"gap_voltage_mV": self.gap_voltage,
                "onset_range_mV": list(self.onset_range),
                "Rn_MOhm": self.rn, "subgap_R_MOhm": self.subgap_r,
                "Jc_pA_per_um2": self.jc, "Jc_is_bound": not self.supercurrent_detected,
                "supercurrent_detected": self.supercurrent_detected,
                "zero_bias_current_pA": self.zero_bias_current, "noise_floor_pA": self.noise_floor}


def _linfit(v, i):
    slope, intercept = np.polyfit(v, i, 1)
    return float(slope), float(intercept)


def _rising_edge(v, f, k, lo, hi):
    """Span where ``f`` climbs from ``lo`` to ``hi`` around index ``k``.

    Walks down from ``k`` to the last sample below ``lo`` and up to the first
    sample at or above ``hi``; crossings are linearly interpolated.
    """
    def cross(j, level):
        f0, f1 = f[j], f[j + 1]
        return float(v[j] + (level - f0) * (v[j + 1] - v[j]) / (f1 - f0)) if f1 != f0 else float(v[j])

    j = k
    while j >= 0 and f[j] >= lo:
        j -= 1
    start = float(v[0]) if j < 0 else (cross(j, lo) if j + 1 < len(f) else float(v[j]))
    j = max(k, 0)
    while j < len(f) and f[j] < hi:
        j += 1
    stop = float("nan") if j == len(f) else (float(v[0]) if j == 0 else cross(j - 1, hi))
    return start, stop


def analyze_iv(trace: IVTrace, area: float, config: IVConfig = IVConfig()) -> IVSummary:
    """Normal resistance, gap voltage, onset span, subgap resistance and Jc.

    The gap is the bias of maximum smoothed dI/dV on the positive branch
    (refined by a parabola through the three top points); a trace whose
    conductance never rises ``min_gap_contrast`` above the normal-state slope
    has no gap and reports NaN gap and onset.  The onset span
    is where the excess current over the subgap line climbs from 5% to 95%
    of the way to the normal-state line, searched outward from the gap on
    the smoothed current.
    """
    v, i = trace.bias, trace.current
    hi_band = np.abs(v) >= config.high_bias
    pos_hi = v >= config.high_bias
    neg_hi = v <= -config.high_bias
    sub = np.abs(v) <= config.subgap
    if not pos_hi.any() or not neg_hi.any():
        raise AnalysisError(f"sweep must extend beyond +-{config.high_bias} mV")
    if hi_band.sum() < 2 or sub.sum() < 2:
        raise AnalysisError("normal-state or subgap fit band is empty")

    slope_n, _ = _linfit(v[hi_band], i[hi_band])
    if slope_n <= 0:
        raise AnalysisError("normal-state slope is not positive")
    rn = PA_PER_MV_PER_MOHM / slope_n
    slope_s, icept_s = _linfit(v[sub], i[sub])
    resid = i[sub] - (slope_s * v[sub] + icept_s)
    noise = 1.4826 * float(np.median(np.abs(resid - np.median(resid))))
    subgap_r = PA_PER_MV_PER_MOHM / slope_s if slope_s > 0 else float("inf")

    window = min(config.sg_window, len(v) - (1 - len(v) % 2))
    step = float(np.median(np.diff(v)))
    didv = savgol_filter(i, window, config.sg_order, deriv=1, delta=step)
    pos = np.flatnonzero(v > 0)
    if len(pos) < 3:
        raise AnalysisError("positive branch too short")
    k = pos[int(np.argmax(didv[pos]))]
    gap = float(v[k])
    has_gap = didv[k] > slope_n * (1.0 + config.min_gap_contrast)
    if not has_gap:
        gap = float("nan")
    elif 0 < k < len(v) - 1:
        a, b, c = didv[k - 1], didv[k], didv[k + 1]
        den = a - 2 * b + c
        if den < 0:
            gap = float(v[k] + 0.5 * (a - c) / den * (v[k + 1] - v[k - 1]) / 2)

    # fraction of the way from the subgap line to the positive normal-state line,
    # on the smoothed current so noise near zero bias cannot fake a crossing
    smooth = savgol_filter(i, window, config.sg_order)
    sp, ip = _linfit(v[pos_hi], i[pos_hi])
    vp = v[pos]
    base = slope_s * vp + icept_s
    top = sp * vp + ip
    with np.errstate(divide="ignore", invalid="ignore"):
        frac = (smooth[pos] - base) / (top - base)
    frac = np.where(top - base > 0, frac, 0.0)
    onset = (float("nan"), float("nan"))
    if has_gap:
        onset = _rising_edge(vp, frac, k - pos[0], config.onset_lo, config.onset_hi)

    i0 = float(np.interp(0.0, v, i))
    detected = abs(i0) > config.noise_factor * noise
    jc = abs(i0) / area if detected else config.noise_factor * noise / area
    return IVSummary(gap, onset, rn, subgap_r, jc, bool(detected), i0, noise)
