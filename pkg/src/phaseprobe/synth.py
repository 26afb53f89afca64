"""Seeded synthetic datasets with ground truth: APT specimens, lattice images,
I-V sweeps and R-vs-A sets.

Every generator draws from ``numpy.random.default_rng(seed)`` (PCG64 seeded
through SeedSequence), in a fixed order, so outputs are pure functions of
their arguments.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass, field
from typing import Sequence

import numpy as np
from scipy.special import ndtr

from .apt_ingest import ISOTOPE_MASS, IonEvents, RangeTable, SpeciesRange, formula
from .errors import AnalysisError
from .fringe import GrayImage
from .transport import PA_PER_MV_PER_MOHM, IVTrace

JUNCTION_AREAS = (1.8, 4.0, 8.0, 16.0, 25.0, 36.0, 49.0, 64.0)


def _species(comp: dict, half_width: float, tag=None) -> SpeciesRange:
    m = sum(ISOTOPE_MASS[el] * n for el, n in comp.items())
    return SpeciesRange(formula(comp), round(m - half_width, 3), round(m + half_width, 3), comp, tag)


def default_range_table() -> RangeTable:
    """Singly charged N, O, Al, AlN, Nb, NbN (R3) and Nb2N2 (R18) windows."""
    ranges = [
        _species({"N": 1}, 0.2), _species({"O": 1}, 0.2), _species({"Al": 1}, 0.2),
        _species({"Al": 1, "N": 1}, 0.2), _species({"Nb": 1}, 0.3),
        _species({"Nb": 1, "N": 1}, 0.5, "R3"), _species({"Nb": 2, "N": 2}, 0.5, "R18"),
    ]
    return RangeTable(tuple(ranges), ("Nb", "N", "Al", "O"))


@dataclass
class Layer:
    z_range: tuple            # nm
    mix: dict                 # species name -> relative ion weight
    n_ions: int               # single-hit ions in this layer


@dataclass
class PairPopulation:
    tag_a: str
    count: int
    median: float             # planted separation median (Angstrom)
    spread: float = 0.05      # lognormal sigma
    z_range: tuple = (0.0, 100.0)
    z_density: tuple = (1.0, 1.0)   # linear density at z_range ends
    tag_b: str | None = None  # defaults to tag_a (homopair)


@dataclass
class SpecimenSpec:
    layers: list
    populations: list = field(default_factory=list)
    magnification: float = 200.0      # Angstrom per detector mm
    half_width: float = 20.0          # specimen half-width in x, y (nm)
    det_per_nm: float = 1.0           # detector mm per nm of lateral position
    mz_jitter: float = 0.03           # Da
    mean_pulse_gap: float = 50.0
    seed: int = 0

    def __post_init__(self):
        spans = sorted(tuple(l.z_range) for l in self.layers)
        for (a0, a1), (b0, b1) in zip(spans, spans[1:]):
            if a1 > b0:
                raise ValueError(f"layers overlap: {(a0, a1)} and {(b0, b1)}")
        if not self.magnification > 0:
            raise ValueError("magnification must be > 0")
        for l in self.layers:
            if l.n_ions < 0:
                raise ValueError("layer ion counts must be >= 0")
        for p in self.populations:
            if p.count < 0:
                raise ValueError("population counts must be >= 0")

    def to_dict(self):
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "SpecimenSpec":
        d = dict(d)
        d["layers"] = [Layer(tuple(l["z_range"]), dict(l["mix"]), int(l["n_ions"])) for l in d.get("layers", [])]
        pops = []
        for p in d.get("populations", []):
            p = dict(p)
            for key in ("z_range", "z_density"):
                if key in p:
                    p[key] = tuple(p[key])
            pops.append(PairPopulation(**p))
        d["populations"] = pops
        return cls(**d)


def trilayer_spec(n_ions: int = 1_000_000, n_delta: int = 2000, n_epsilon: int = 100,
                  delta_median: float = 2.77, epsilon_median: float = 2.35, spread: float = 0.05,
                  seed: int = 0, oxygen_barrier: float = 0.08, oxygen_background: float = 0.01,
                  magnification: float = 200.0) -> SpecimenSpec:
    """NbN / AlN / NbN stack: electrodes at z 0-45 and 55-100 nm, barrier 48-52 nm.

    Electrode ions are a stoichiometric mix of Nb, N and NbN; the barrier is
    AlN with ``oxygen_barrier`` atomic O; both carry ``oxygen_background``
    elsewhere (as single-atom O ions, so ion and atomic fractions coincide
    in the barrier).
    """
    singles = max(0, n_ions - 2 * (n_delta + n_epsilon))
    thick = {"top": 45.0, "barrier": 4.0, "bottom": 45.0}
    total = sum(thick.values())
    # electrode: Nb, N, NbN ions in 1:1:2 weight -> 1.5 atoms per unit weight, Nb:N = 1
    o_e = oxygen_background
    electrode = {"Nb": 0.25, "N": 0.25, "NbN": 0.5, "O": 1.5 * o_e / (1.0 - o_e)}
    barrier = {"Al": 0.5 * (1 - oxygen_barrier), "N": 0.5 * (1 - oxygen_barrier), "O": oxygen_barrier}
    n_top = int(singles * thick["top"] / total)
    n_barrier = int(singles * thick["barrier"] / total)
    layers = [
        Layer((0.0, 45.0), electrode, n_top),
        Layer((48.0, 52.0), barrier, n_barrier),
        Layer((55.0, 100.0), electrode, singles - n_top - n_barrier),   # remainder keeps the total exact
    ]
    half = n_delta // 2
    pops = [
        PairPopulation("R3", n_delta - half, delta_median, spread, (0.0, 45.0)),
        PairPopulation("R3", half, delta_median, spread, (55.0, 100.0)),
        PairPopulation("R18", n_epsilon, epsilon_median, spread, (55.0, 100.0)),
    ]
    pops = [p for p in pops if p.count]
    return SpecimenSpec(layers, pops, magnification=magnification, seed=seed)


def linear_fraction_populations(n_total: int, f_surface: float = 0.005, f_substrate: float = 0.038,
                                z_range=(0.0, 100.0), delta_median: float = 2.77,
                                epsilon_median: float = 2.35, spread: float = 0.05):
    """Homopair populations whose epsilon fraction varies linearly with z.

    Low z is the surface side.  Total pair density is uniform in z.
    """
    mean_f = 0.5 * (f_surface + f_substrate)
    n_eps = int(round(n_total * mean_f))
    return [
        PairPopulation("R3", n_total - n_eps, delta_median, spread, tuple(z_range),
                       (1.0 - f_surface, 1.0 - f_substrate)),
        PairPopulation("R18", n_eps, epsilon_median, spread, tuple(z_range), (f_surface, f_substrate)),
    ]


def _linear_density(rng, n, z_range, density):
    """Sample z on [z0, z1] with density proportional to a linear ramp."""
    z0, z1 = z_range
    w0, w1 = density
    u = rng.random(n)
    if np.isclose(w0, w1):
        t = u
    else:
        # inverse CDF of p(t) ~ w0 + (w1 - w0) t on [0, 1]
        a = w1 - w0
        t = (-w0 + np.sqrt(w0 * w0 + a * (2 * w0 + a) * u)) / a
    return z0 + (z1 - z0) * t


@dataclass(frozen=True, eq=False)
class SpecimenTruth:
    species: np.ndarray       # planted species index per ion
    pair_index: np.ndarray    # (n_pairs, 2) event indices
    pair_tags: list           # (tag_a, tag_b) per pair
    pair_sep: np.ndarray      # planted real separation (Angstrom)
    pair_det_sep: np.ndarray  # planted detector separation (mm)
    magnification: float

    def to_dict(self):
        return {"magnification_A_per_mm": self.magnification,
                "species": self.species.tolist(),
                "pairs": [{"index": [int(a), int(b)], "tags": list(t), "sep_A": float(s), "det_sep_mm": float(d)}
                          for (a, b), t, s, d in zip(self.pair_index, self.pair_tags,
                                                     self.pair_sep, self.pair_det_sep)]}


def gen_apt_specimen(spec: SpecimenSpec, table: RangeTable | None = None):
    """Layered point cloud with planted same-pulse pairs.

    Returns ``(IonEvents, SpecimenTruth)``.  Pulse groups are ordered by z
    (evaporation order); pair members share a pulse (``pulse_delta = 0`` on
    the second ion) and both carry multiplicity 2.
    """
    table = table or default_range_table()
    rng = np.random.default_rng(spec.seed)
    names = table.names

    def draw_mz(sp):
        r = [table.ranges[s] for s in sp]
        lo = np.array([x.mz_low for x in r])
        hi = np.array([x.mz_high for x in r])
        nominal = np.array([x.nominal_mass() if x.nominal_mass() else 0.5 * (x.mz_low + x.mz_high) for x in r])
        mz = nominal + spec.mz_jitter * rng.standard_normal(len(sp))
        return np.clip(mz, lo, np.nextafter(hi, lo))

    # singles
    s_xyz, s_sp = [], []
    for layer in spec.layers:
        n = layer.n_ions
        keys = list(layer.mix)
        w = np.array([layer.mix[k] for k in keys], dtype=np.float64)
        sp_idx = np.array([names.index(k) for k in keys], dtype=np.int64)
        choice = rng.choice(len(keys), size=n, p=w / w.sum()) if n else np.zeros(0, np.int64)
        xy = rng.uniform(-spec.half_width, spec.half_width, (n, 2))
        z = rng.uniform(layer.z_range[0], layer.z_range[1], n)
        s_xyz.append(np.column_stack([xy, z]))
        s_sp.append(sp_idx[choice])
    s_xyz = np.vstack(s_xyz) if s_xyz else np.zeros((0, 3))
    s_sp = np.concatenate(s_sp) if s_sp else np.zeros(0, np.int64)

    # planted pairs
    p_xyz, p_sp, p_off, p_sep, p_tags = [], [], [], [], []
    for pop in spec.populations:
        n = pop.count
        tag_b = pop.tag_b or pop.tag_a
        ia, ib = table.indices_with_tag(pop.tag_a), table.indices_with_tag(tag_b)
        if not len(ia) or not len(ib):
            raise AnalysisError(f"no range carries tag {pop.tag_a!r}/{tag_b!r}")
        sep = pop.median * np.exp(pop.spread * rng.standard_normal(n))
        theta = rng.uniform(0, 2 * np.pi, n)
        det_sep = sep / spec.magnification
        xy = rng.uniform(-spec.half_width, spec.half_width, (n, 2))
        z = _linear_density(rng, n, pop.z_range, pop.z_density)
        p_xyz.append(np.column_stack([xy, z]))
        p_off.append(np.column_stack([det_sep * np.cos(theta), det_sep * np.sin(theta)]))
        p_sp.append(np.column_stack([np.full(n, ia[0]), np.full(n, ib[0])]))
        p_sep.append(sep)
        p_tags += [(pop.tag_a, tag_b)] * n
    p_xyz = np.vstack(p_xyz) if p_xyz else np.zeros((0, 3))
    p_off = np.vstack(p_off) if p_off else np.zeros((0, 2))
    p_sp = np.vstack(p_sp) if p_sp else np.zeros((0, 2), np.int64)
    p_sep = np.concatenate(p_sep) if p_sep else np.zeros(0)

    # order pulse groups by depth; random key breaks ties
    n_s, n_p = len(s_sp), len(p_sp)
    group_z = np.concatenate([s_xyz[:, 2], p_xyz[:, 2]])
    order = np.lexsort((rng.random(n_s + n_p), group_z))
    size = np.where(order < n_s, 1, 2)
    first = np.concatenate([[0], np.cumsum(size)[:-1]])
    n_ev = int(size.sum())

    xyz = np.zeros((n_ev, 3))
    det = np.zeros((n_ev, 2))
    species = np.zeros(n_ev, np.int64)
    mult = np.ones(n_ev, np.int64)
    pdelta = np.zeros(n_ev, np.int64)
    pdelta[first] = rng.geometric(1.0 / spec.mean_pulse_gap, len(first))

    is_s = order < n_s
    si = order[is_s]
    fs = first[is_s]
    xyz[fs] = s_xyz[si]
    species[fs] = s_sp[si]

    pi = order[~is_s] - n_s
    fp = first[~is_s]
    a_xyz = p_xyz[pi]
    b_xyz = a_xyz.copy()
    b_xyz[:, :2] += p_off[pi] / spec.det_per_nm
    xyz[fp], xyz[fp + 1] = a_xyz, b_xyz
    species[fp], species[fp + 1] = p_sp[pi, 0], p_sp[pi, 1]
    mult[fp] = mult[fp + 1] = 2
    det[:] = xyz[:, :2] * spec.det_per_nm
    # pair detector offset is exact in detector space
    det[fp + 1] = det[fp] + p_off[pi]

    mz = draw_mz(species)
    tof = 500.0 * np.sqrt(mz / 100.0)
    v_dc = 3.0 + 5.0 * (xyz[:, 2] - xyz[:, 2].min()) / max(np.ptp(xyz[:, 2]), 1e-9) if n_ev else np.zeros(0)
    events = IonEvents.from_columns(x=xyz[:, 0], y=xyz[:, 1], z=xyz[:, 2], mz=mz, tof=tof, v_dc=v_dc,
                                    det_x=det[:, 0], det_y=det[:, 1], pulse_delta=pdelta,
                                    multiplicity=mult)
    truth = SpecimenTruth(species, np.column_stack([fp, fp + 1]).astype(np.int64),
                          [p_tags[k] for k in pi], p_sep[pi], p_sep[pi] / spec.magnification,
                          spec.magnification)
    return events, truth


# ---------------------------------------------------------------------------
# lattice images


def _fringe_field(h, w, periods, pixel_scale, rng):
    yy, xx = np.mgrid[0:h, 0:w].astype(np.float64) * pixel_scale
    img = np.zeros((h, w))
    for d, angle, amp in periods:
        if not d > 2 * pixel_scale:
            raise ValueError(f"period {d} nm violates Nyquist for pixel_scale {pixel_scale} nm")
        th = np.deg2rad(angle)
        phase = rng.uniform(0, 2 * np.pi)
        img += amp * np.cos(2 * np.pi * (xx * np.cos(th) + yy * np.sin(th)) / d + phase)
    return img


def gen_lattice_image(periods: Sequence[tuple], noise: float, pixel_scale: float, size, seed: int = 0):
    """Sum of oriented cosines ``(d nm, angle deg, amplitude)`` plus Gaussian noise.

    Returns ``(GrayImage, truth)``; truth lists the periods and the dominant d.
    """
    h, w = (size, size) if np.isscalar(size) else size
    rng = np.random.default_rng(seed)
    img = _fringe_field(h, w, periods, pixel_scale, rng)
    img += noise * rng.standard_normal((h, w))
    dominant = max(periods, key=lambda p: p[2])[0] if periods and max(p[2] for p in periods) > 0 else None
    truth = {"periods": [list(map(float, p)) for p in periods], "dominant_d": dominant}
    return GrayImage(img, pixel_scale), truth


def gen_lattice_mosaic(tiles: Sequence[Sequence[tuple]], tile_px: int, cols: int, noise: float,
                       pixel_scale: float, seed: int = 0, labels: Sequence[str] | None = None):
    """Grid of independent fringe tiles (row-major) with per-tile truth."""
    rng = np.random.default_rng(seed)
    rows = -(-len(tiles) // cols)
    img = np.zeros((rows * tile_px, cols * tile_px))
    truth = []
    for k, periods in enumerate(tiles):
        r, c = divmod(k, cols)
        img[r * tile_px:(r + 1) * tile_px, c * tile_px:(c + 1) * tile_px] = \
            _fringe_field(tile_px, tile_px, periods, pixel_scale, rng)
        truth.append({"tile": k, "x0": c * tile_px, "y0": r * tile_px, "size": tile_px,
                      "periods": [list(map(float, p)) for p in periods],
                      "dominant_d": float(max(periods, key=lambda p: p[2])[0]),
                      "label": labels[k] if labels else None})
    img += noise * rng.standard_normal(img.shape)
    return GrayImage(img, pixel_scale), truth


def fringe_mixture_tiles(n_delta: int = 40, n_epsilon: int = 30, n_mixed: int = 30,
                         d_delta: float = 0.159, d_epsilon: float = 0.144, seed: int = 0):
    """Tile specs for a delta / epsilon / mixed-phase window population.

    Mixed tiles carry a dominant fringe at the mean of the two spacings
    overlaid with half-amplitude fringes of both pure phases, all sharing one
    random orientation per tile.  Returns ``(tiles, labels)``.
    """
    rng = np.random.default_rng(seed)
    d_mix = 0.5 * (d_delta + d_epsilon)
    tiles, labels = [], []
    kinds = ["delta"] * n_delta + ["epsilon"] * n_epsilon + ["mixed"] * n_mixed
    for kind in [kinds[i] for i in rng.permutation(len(kinds))]:
        angle = float(rng.uniform(0, 180))
        if kind == "delta":
            tiles.append([(d_delta, angle, 1.0)])
        elif kind == "epsilon":
            tiles.append([(d_epsilon, angle, 1.0)])
        else:
            tiles.append([(d_mix, angle, 1.0), (d_delta, angle, 0.5), (d_epsilon, angle, 0.5)])
        labels.append(kind)
    return tiles, labels


# ---------------------------------------------------------------------------
# transport


def gen_iv(gap: float = 4.5, rn: float = 9.0, smear: float = 0.3, leakage: float = 1e4,
           noise: float = 0.0, seed: int = 0, v_max: float = 10.0, step: float = 0.02,
           ic: float = 0.0) -> IVTrace:
    """Phenomenological SIS sweep.

    I(V) = V/leakage + (V/Rn - V/leakage) * Phi((|V| - gap) / smear), a
    Gaussian-CDF step, plus seeded white noise (pA).  ``ic`` adds a
    zero-bias supercurrent step (pA) at V = 0.
    """
    if not (gap > 0 and rn > 0 and smear > 0):
        raise ValueError("gap, rn and smear must be > 0")
    n = int(round(v_max / step))
    v = np.arange(-n, n + 1) * step
    step_fn = ndtr((np.abs(v) - gap) / smear)
    i = PA_PER_MV_PER_MOHM * (v / leakage + (v / rn - v / leakage) * step_fn)
    rng = np.random.default_rng(seed)
    if noise:
        i = i + noise * rng.standard_normal(v.size)
    if ic:
        i[n] += ic
    return IVTrace(v, i)


def gen_ra(c: float = 558.5, areas: Sequence[float] = JUNCTION_AREAS, noise: float = 0.0, seed: int = 0):
    """Resistances R_i = C / A_i * (1 + noise * N(0, 1)); returns (areas, resistances)."""
    if not c > 0:
        raise ValueError("C must be > 0")
    a = np.asarray(areas, dtype=np.float64)
    rng = np.random.default_rng(seed)
    r = c / a * (1.0 + noise * rng.standard_normal(a.size))
    return a, r
