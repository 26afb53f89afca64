"""TEM lattice-fringe analysis: windowed FFT, spot-filtered inverse FFT,
line profiles, envelopes, d-spacing estimation and k-means window clustering.

Frequencies are in cycles/nm throughout; positions along profiles in nm.
"""

from __future__ import annotations

import io
import json
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Sequence

import numpy as np

from ._io import atomic_write_bytes, atomic_write_text
from .cluster import kmeans, relabel_by_order
from .errors import AnalysisError, InputError, NoFringeError
from .stats import BoxStats, boxplot_stats

WINDOW_NM = 4.5
DEFAULT_CLIP = (0.10, 0.30)


@dataclass(frozen=True, eq=False)
class GrayImage:
    pixels: np.ndarray        # (height, width)
    pixel_scale: float        # nm per px

    def __post_init__(self):
        px = np.asarray(self.pixels, dtype=np.float64)
        if px.ndim != 2:
            raise ValueError("image must be 2-D")
        if not self.pixel_scale > 0:
            raise ValueError("pixel_scale must be > 0")
        if not np.isfinite(px).all():
            raise ValueError("image contains non-finite intensities")
        object.__setattr__(self, "pixels", px)

    @property
    def height(self) -> int:
        return self.pixels.shape[0]

    @property
    def width(self) -> int:
        return self.pixels.shape[1]


def _sidecar_path(path: Path) -> Path:
    return path.with_suffix(".json")


def write_raw_image(image: GrayImage, path: str | Path) -> None:
    """Little-endian float32 pixels plus a JSON sidecar with the geometry."""
    path = Path(path)
    atomic_write_bytes(path, image.pixels.astype("<f4").tobytes())
    meta = {"width": image.width, "height": image.height, "pixel_scale": image.pixel_scale,
            "dtype": "float32", "byteorder": "little"}
    atomic_write_text(_sidecar_path(path), json.dumps(meta, indent=2, sort_keys=True) + "\n")


def read_image(path: str | Path, pixel_scale: float | None = None) -> GrayImage:
    """Read a 16-bit grayscale PNG or a raw float32 image with JSON sidecar."""
    path = Path(path)
    sidecar = _sidecar_path(path)
    meta = json.loads(sidecar.read_text()) if sidecar.exists() else {}
    scale = pixel_scale if pixel_scale is not None else meta.get("pixel_scale")
    if scale is None:
        raise InputError(f"{path}: pixel_scale missing (no sidecar and none configured)")
    if path.suffix.lower() == ".png":
        from PIL import Image

        with Image.open(path) as im:
            px = np.asarray(im, dtype=np.float64)
        if px.ndim == 3:
            raise InputError(f"{path}: expected a single-channel grayscale PNG")
        return GrayImage(px, float(scale))
    if not meta:
        raise InputError(f"{path}: raw image needs a JSON sidecar at {sidecar}")
    w, h = int(meta["width"]), int(meta["height"])
    dtype = np.dtype("<f4" if meta.get("byteorder", "little") == "little" else ">f4")
    raw = path.read_bytes()
    if len(raw) != w * h * 4:
        raise InputError(f"{path}: expected {w * h * 4} bytes for {w}x{h} float32, got {len(raw)}")
    return GrayImage(np.frombuffer(raw, dtype=dtype).reshape(h, w), float(scale))


def write_png16(image: GrayImage, path: str | Path) -> None:
    from PIL import Image

    px = image.pixels
    lo, hi = px.min(), px.max()
    scaled = np.zeros_like(px) if hi == lo else (px - lo) / (hi - lo) * 65535.0
    buf = io.BytesIO()
    Image.fromarray(np.round(scaled).astype(np.uint16)).save(buf, format="PNG")
    atomic_write_bytes(path, buf.getvalue())


# ---------------------------------------------------------------------------
# windows


@dataclass(frozen=True)
class FringeWindow:
    x0: int
    y0: int
    size: int

    def crop(self, image: GrayImage) -> np.ndarray:
        return image.pixels[self.y0:self.y0 + self.size, self.x0:self.x0 + self.size]


def next_pow2(n: float) -> int:
    return 1 << max(0, int(np.ceil(np.log2(max(n, 1)))))


def window_side_px(pixel_scale: float, side_nm: float = WINDOW_NM) -> int:
    """Smallest power-of-two side covering ``side_nm``."""
    return next_pow2(side_nm / pixel_scale - 1e-9)


def _check_fits(image: GrayImage, size: int):
    if size > image.width or size > image.height:
        raise AnalysisError(f"window of {size} px does not fit a {image.width}x{image.height} image")


def random_windows(image: GrayImage, n: int, size: int, seed: int) -> list[FringeWindow]:
    _check_fits(image, size)
    rng = np.random.default_rng(seed)
    xs = rng.integers(0, image.width - size + 1, n)
    ys = rng.integers(0, image.height - size + 1, n)
    return [FringeWindow(int(x), int(y), size) for x, y in zip(xs, ys)]


def grid_windows(image: GrayImage, size: int) -> list[FringeWindow]:
    """Non-overlapping tiling, row-major."""
    _check_fits(image, size)
    return [FringeWindow(x, y, size)
            for y in range(0, image.height - size + 1, size)
            for x in range(0, image.width - size + 1, size)]


# ---------------------------------------------------------------------------
# spectra


@dataclass(frozen=True, eq=False)
class Spectrum2D:
    data: np.ndarray          # centred (fftshift) complex coefficients, N x N
    pixel_scale: float
    shape: tuple              # original window shape before padding

    @property
    def size(self) -> int:
        return self.data.shape[0]

    @property
    def freqs(self) -> np.ndarray:
        return np.fft.fftshift(np.fft.fftfreq(self.size, d=self.pixel_scale))

    def radius(self) -> np.ndarray:
        f = self.freqs
        return np.hypot(f[None, :], f[:, None])

    @property
    def magnitude(self) -> np.ndarray:
        return np.abs(self.data)


def fft2(window, pixel_scale: float = 1.0) -> Spectrum2D:
    """Zero-pad to a power-of-two square and transform; DC sits at index N//2."""
    w = np.asarray(window, dtype=np.float64)
    n = next_pow2(max(w.shape))
    padded = np.zeros((n, n))
    padded[:w.shape[0], :w.shape[1]] = w
    return Spectrum2D(np.fft.fftshift(np.fft.fft2(padded)), float(pixel_scale), w.shape)


def _mirror(n: int) -> np.ndarray:
    # centred index k <-> frequency k - n//2; negation maps k -> (n - k) % n
    return (n - np.arange(n)) % n


def spot_mask(spectrum: Spectrum2D, spots: Sequence[tuple[float, float, float]]) -> np.ndarray:
    """Boolean mask of discs ``(fx, fy, radius)`` in cycles/nm."""
    f = spectrum.freqs
    fx, fy = f[None, :], f[:, None]
    mask = np.zeros(spectrum.data.shape, dtype=bool)
    for cx, cy, r in spots:
        mask |= (fx - cx) ** 2 + (fy - cy) ** 2 <= r * r
    return mask


def band_mask(spectrum: Spectrum2D, d_range=DEFAULT_CLIP) -> np.ndarray:
    """Annulus passing spatial frequencies 1/d_max..1/d_min."""
    r = spectrum.radius()
    return (r >= 1.0 / d_range[1]) & (r <= 1.0 / d_range[0])


def symmetric_spots(spots) -> list[tuple[float, float, float]]:
    """Add the conjugate partner of every spot."""
    out = []
    for fx, fy, r in spots:
        out += [(fx, fy, r), (-fx, -fy, r)]
    return out


def spot_filter_ifft(spectrum: Spectrum2D, spots=None, mask: np.ndarray | None = None) -> np.ndarray:
    """Inverse transform of the masked spectrum, cropped to the original window.

    ``spots`` are ``(fx, fy, radius)`` discs; ``mask`` a boolean array on the
    centred grid.  With neither, the full spectrum passes.  The mask must be
    symmetric under frequency negation so that the output is real.
    """
    if mask is None:
        mask = np.ones(spectrum.data.shape, dtype=bool) if spots is None else spot_mask(spectrum, spots)
    mask = np.asarray(mask, dtype=bool)
    m = _mirror(spectrum.size)
    if not np.array_equal(mask, mask[np.ix_(m, m)]):
        raise ValueError("spot mask is not symmetric under frequency negation")
    out = np.fft.ifft2(np.fft.ifftshift(spectrum.data * mask))
    h, w = spectrum.shape
    return out.real[:h, :w].copy()


def dominant_frequency(spectrum: Spectrum2D, d_range=DEFAULT_CLIP) -> tuple[float, float]:
    """(fx, fy) of the strongest coefficient inside the d-range annulus."""
    mag = np.where(band_mask(spectrum, d_range), spectrum.magnitude, -1.0)
    iy, ix = np.unravel_index(int(np.argmax(mag)), mag.shape)
    f = spectrum.freqs
    fx, fy = float(f[ix]), float(f[iy])
    # keep a canonical half-plane so direction does not flip between windows
    if fx < 0 or (fx == 0 and fy < 0):
        fx, fy = -fx, -fy
    return fx, fy


def dominant_direction(spectrum: Spectrum2D, d_range=DEFAULT_CLIP) -> np.ndarray:
    """Unit vector (x, y) along the dominant wave vector, i.e. across the fringes."""
    fx, fy = dominant_frequency(spectrum, d_range)
    norm = np.hypot(fx, fy)
    if norm == 0:
        return np.array([1.0, 0.0])
    return np.array([fx, fy]) / norm


# ---------------------------------------------------------------------------
# profiles


@dataclass(frozen=True, eq=False)
class LineProfile:
    positions: np.ndarray     # nm
    values: np.ndarray

    @property
    def spacing(self) -> float:
        return float(self.positions[1] - self.positions[0]) if len(self.positions) > 1 else 1.0


@dataclass(frozen=True, eq=False)
class SpectrumProfile:
    freqs: np.ndarray         # cycles/nm, ascending from 0
    magnitude: np.ndarray


def bilinear(img: np.ndarray, x: np.ndarray, y: np.ndarray) -> np.ndarray:
    """Sample ``img`` at fractional (x=column, y=row), clamped to the border."""
    h, w = img.shape
    x = np.clip(x, 0, w - 1)
    y = np.clip(y, 0, h - 1)
    x0 = np.minimum(np.floor(x).astype(int), w - 2) if w > 1 else np.zeros(len(x), int)
    y0 = np.minimum(np.floor(y).astype(int), h - 2) if h > 1 else np.zeros(len(y), int)
    tx, ty = x - x0, y - y0
    x1, y1 = np.minimum(x0 + 1, w - 1), np.minimum(y0 + 1, h - 1)
    top = img[y0, x0] * (1 - tx) + img[y0, x1] * tx
    bottom = img[y1, x0] * (1 - tx) + img[y1, x1] * tx
    return top * (1 - ty) + bottom * ty


def _line_extent(shape, center, direction) -> float:
    """Half-length (px) of the chord through ``center`` along ``direction`` inside the image."""
    h, w = shape
    half = np.inf
    for c, d, hi in ((center[0], direction[0], w - 1), (center[1], direction[1], h - 1)):
        if abs(d) > 1e-12:
            half = min(half, (hi - c) / abs(d), c / abs(d))
    return float(half)


def line_profile(window, direction, pixel_scale: float = 1.0, offset: float = 0.0) -> LineProfile:
    """Bilinear samples at 1 px spacing along a line through the window centre.

    ``offset`` shifts the line perpendicular to ``direction`` (px).
    """
    img = np.asarray(window, dtype=np.float64)
    d = np.asarray(direction, dtype=np.float64)
    if abs(np.hypot(*d) - 1.0) > 1e-6:
        raise ValueError("direction must be a unit vector")
    h, w = img.shape
    perp = np.array([-d[1], d[0]])
    center = np.array([(w - 1) / 2.0, (h - 1) / 2.0]) + offset * perp
    half = _line_extent((h, w), center, d)
    n = int(np.floor(half)) if np.isfinite(half) else 0
    t = np.arange(-n, n + 1, dtype=np.float64)
    values = bilinear(img, center[0] + t * d[0], center[1] + t * d[1])
    return LineProfile(t * pixel_scale, values)


def profile_spectrum(values, spacing: float, pad_factor: int = 4) -> SpectrumProfile:
    """Hann-windowed, zero-padded magnitude spectrum of a mean-removed profile."""
    v = np.asarray(values, dtype=np.float64)
    v = (v - v.mean()) * np.hanning(len(v))
    n = next_pow2(len(v)) * pad_factor
    return SpectrumProfile(np.fft.rfftfreq(n, d=spacing), np.abs(np.fft.rfft(v, n)))


def band_spectrum(window, direction, pixel_scale: float, pad_factor: int = 4,
                  min_length: int = 16) -> SpectrumProfile:
    """Mean magnitude spectrum over every parallel line crossing the window."""
    img = np.asarray(window, dtype=np.float64)
    h, w = img.shape
    reach = int(np.floor(0.5 * np.hypot(h - 1, w - 1)))
    spectra = []
    for off in range(-reach, reach + 1):
        prof = line_profile(img, direction, pixel_scale, offset=off)
        if len(prof.values) >= min_length:
            spectra.append(profile_spectrum(prof.values, pixel_scale, pad_factor))
    if not spectra:
        raise AnalysisError("window too small for line profiles")
    # lines of different length have different padded grids; keep the longest grid
    longest = max(spectra, key=lambda s: len(s.freqs))
    mags = [np.interp(longest.freqs, s.freqs, s.magnitude) for s in spectra]
    return SpectrumProfile(longest.freqs, np.mean(mags, axis=0))


def spectrum_line_profile(spectrum: Spectrum2D, direction) -> SpectrumProfile:
    """|F| sampled along a ray from DC (the FFT-pattern profile path)."""
    d = np.asarray(direction, dtype=np.float64)
    n = spectrum.size
    c = n // 2
    t = np.arange(0, c)
    mag = bilinear(spectrum.magnitude, c + t * d[0], c + t * d[1])
    return SpectrumProfile(t / (n * spectrum.pixel_scale), mag)


# ---------------------------------------------------------------------------
# envelopes


@dataclass(frozen=True, eq=False)
class Envelope:
    smoothed: np.ndarray
    upper: np.ndarray
    features: np.ndarray

    @property
    def energy(self) -> float:
        return float(np.mean(self.upper ** 2))


def moving_average(values, window: int) -> np.ndarray:
    v = np.asarray(values, dtype=np.float64)
    if window < 1 or window % 2 == 0:
        raise ValueError("smoothing window must be odd and >= 1")
    if len(v) < window:
        raise AnalysisError(f"profile of length {len(v)} is shorter than smoothing window {window}")
    half = window // 2
    padded = np.pad(v, half, mode="reflect") if half and len(v) > 1 else v
    return np.convolve(padded, np.ones(window) / window, mode="valid")


def envelope(values, smooth: int = 3, n_features: int = 64) -> Envelope:
    """Moving-average smoothing, then the upper envelope through local maxima.

    The envelope linearly interpolates between local maxima and never dips
    below the smoothed profile; it is resampled to ``n_features`` points.
    """
    if isinstance(values, LineProfile):
        values = values.values
    s = moving_average(values, smooth)
    n = len(s)
    left = np.concatenate([[True], s[1:] >= s[:-1]])
    right = np.concatenate([s[:-1] >= s[1:], [True]])
    peaks = np.flatnonzero(left & right)
    upper = np.interp(np.arange(n), peaks, s[peaks])
    upper = np.maximum(upper, s)
    feats = np.interp(np.linspace(0, n - 1, n_features), np.arange(n), upper)
    return Envelope(s, upper, feats)


# ---------------------------------------------------------------------------
# d-spacing


@dataclass(frozen=True)
class DEstimate:
    d: float                  # nm
    frequency: float          # cycles/nm
    amplitude: float
    ratio: float              # peak / median magnitude


def _parabolic_peak(mag: np.ndarray, k: int) -> tuple[float, float]:
    if 0 < k < len(mag) - 1:
        a, b, c = mag[k - 1], mag[k], mag[k + 1]
        den = a - 2 * b + c
        if den < 0:
            delta = 0.5 * (a - c) / den
            return k + delta, b - 0.25 * (a - c) * delta
    return float(k), float(mag[k])


def estimate_d(profile, min_ratio: float = 3.0, f_band: tuple[float, float] | None = None,
               pad_factor: int = 4) -> DEstimate:
    """Lattice spacing from the dominant non-DC peak of a profile spectrum.

    ``profile`` is a :class:`LineProfile` (transformed here) or a
    :class:`SpectrumProfile`.  The peak must reach ``min_ratio`` times the
    median magnitude of the searched band, else :class:`NoFringeError`.
    """
    if isinstance(profile, LineProfile):
        if len(profile.values) < 4:
            raise NoFringeError("profile too short")
        spec = profile_spectrum(profile.values, profile.spacing, pad_factor)
        lowest = 1.5 / (len(profile.values) * profile.spacing)
    else:
        spec = profile
        lowest = 0.0
    f, mag = spec.freqs, spec.magnitude
    sel = f > max(lowest, f[1] if len(f) > 1 else 0.0)
    if f_band is not None:
        sel &= (f >= f_band[0]) & (f <= f_band[1])
    idx = np.flatnonzero(sel)
    if len(idx) < 3:
        raise NoFringeError("no spectral support in the searched band")
    med = float(np.median(mag[idx]))
    k = int(idx[np.argmax(mag[idx])])
    pos, amp = _parabolic_peak(mag, k)
    ratio = amp / med if med > 0 else np.inf
    if not ratio >= min_ratio:
        raise NoFringeError(f"dominant peak only {ratio:.2f}x the spectral median")
    df = f[1] - f[0]
    freq = float(f[0] + pos * df)
    return DEstimate(1.0 / freq, freq, float(amp), float(ratio))


# ---------------------------------------------------------------------------
# per-window pipeline and clustering


@dataclass(frozen=True, eq=False)
class DSpacingSample:
    window_id: int
    x0: int
    y0: int
    d: float
    amplitude: float
    envelope: np.ndarray      # resampled upper envelope
    envelope_energy: float
    label: int = -1
    direction: tuple = (1.0, 0.0)


def analyze_window(window: np.ndarray, pixel_scale: float, window_id: int = 0, x0: int = 0, y0: int = 0,
                   spots=None, d_range=DEFAULT_CLIP, smooth: int = 3, n_features: int = 64,
                   min_ratio: float = 3.0, path: str = "real", margin: float = 0.15) -> DSpacingSample:
    """Filter one window, take its line profile and envelope, and estimate d.

    Without ``spots`` a band-pass annulus over ``d_range`` is used.  The
    ``"real"`` path reads d from the filtered real-space line profiles; the
    ``"fft"`` path reads it from a ray through the FFT magnitude.

    The envelope shape skips ``margin`` of the profile at each end, where
    the band filter rings against the window border.  The energy is the
    mean squared analytic envelope of the filtered window, 2 * mean(f^2),
    which unlike the smoothed profile does not depend on the fringe period.
    """
    spec = fft2(window, pixel_scale)
    mask = spot_mask(spec, symmetric_spots(spots)) if spots else band_mask(spec, d_range)
    filtered = spot_filter_ifft(spec, mask=mask)
    direction = dominant_direction(spec, d_range)
    f_band = (1.0 / d_range[1], 1.0 / d_range[0])
    if path == "real":
        est = estimate_d(band_spectrum(filtered, direction, pixel_scale), min_ratio, f_band)
    elif path == "fft":
        est = estimate_d(spectrum_line_profile(spec, direction), min_ratio, f_band)
    else:
        raise ValueError(f"unknown profile path {path!r}")
    values = line_profile(filtered, direction, pixel_scale).values
    m = int(margin * len(values))
    env = envelope(values[m:len(values) - m], smooth, n_features)
    energy = 2.0 * float(np.mean(filtered * filtered))
    return DSpacingSample(window_id, x0, y0, est.d, est.amplitude, env.features, energy,
                          direction=(float(direction[0]), float(direction[1])))


def analyze_windows(image: GrayImage, windows: Sequence[FringeWindow], **kw):
    """Run :func:`analyze_window` on each window; returns (samples, rejected ids)."""
    samples, rejected = [], []
    for i, win in enumerate(windows):
        try:
            samples.append(analyze_window(win.crop(image), image.pixel_scale, i, win.x0, win.y0, **kw))
        except NoFringeError:
            rejected.append(i)
    return samples, rejected


def envelope_features(env: np.ndarray) -> np.ndarray:
    """Shift-invariant envelope shape: sorted values normalised by their mean."""
    env = np.sort(np.asarray(env, dtype=np.float64))
    m = env.mean()
    return env / m if m > 0 else env


@dataclass(frozen=True, eq=False)
class ClusterOutcome:
    samples: list             # accepted samples with labels
    rejected: list            # (window_id, reason)
    boxes: dict               # label -> BoxStats of d
    centroids: np.ndarray
    features: np.ndarray

    def medians(self) -> dict:
        return {k: b.median for k, b in self.boxes.items()}


def cluster_windows(samples: Sequence[DSpacingSample], k: int = 3, percentile: float = 20.0,
                    clip=DEFAULT_CLIP, seed: int = 0, envelope_weight: float = 0.5) -> ClusterOutcome:
    """Reject artefacts, then k-means on [d, envelope shape]; labels ordered by median d.

    A sample is rejected when its d lies outside ``clip`` or its envelope
    energy is strictly below the ``percentile``-th energy percentile.
    The standardised envelope block is scaled to ``envelope_weight`` times the
    root-total-variance of the standardised d column.
    """
    rejected = []
    kept = []
    for s in samples:
        if not clip[0] <= s.d <= clip[1]:
            rejected.append((s.window_id, "d outside clip range"))
        else:
            kept.append(s)
    if kept and percentile > 0:
        cut = np.percentile([s.envelope_energy for s in kept], percentile)
        survivors = []
        for s in kept:
            if s.envelope_energy < cut:
                rejected.append((s.window_id, "envelope energy below percentile"))
            else:
                survivors.append(s)
        kept = survivors
    if len(kept) < k:
        raise AnalysisError(f"only {len(kept)} windows survive filtering, need >= {k}")

    d = np.array([s.d for s in kept])
    env = np.array([envelope_features(s.envelope) for s in kept])
    raw = np.column_stack([d, env])
    mu, sd = raw.mean(axis=0), raw.std(axis=0)
    sd[sd == 0] = 1.0
    z = (raw - mu) / sd
    z[:, 1:] *= envelope_weight / np.sqrt(env.shape[1])
    res = kmeans(z, k, seed)
    labels = relabel_by_order(res.labels, d)
    out = [replace(s, label=int(l)) for s, l in zip(kept, labels)]
    boxes = {int(c): boxplot_stats(d[labels == c]) for c in np.unique(labels)}
    order = [int(np.flatnonzero(labels == c)[0]) for c in sorted(boxes)]
    centroids = np.array([res.centroids[res.labels[i]] for i in order])
    return ClusterOutcome(out, sorted(rejected), boxes, centroids, z)


def match_theory(medians: dict, theory: dict) -> dict:
    """Nearest theoretical plane for each cluster median: label -> (name, d_theory, delta)."""
    out = {}
    for label, med in medians.items():
        name, dt = min(theory.items(), key=lambda kv: abs(kv[1] - med))
        out[label] = (name, dt, med - dt)
    return out
