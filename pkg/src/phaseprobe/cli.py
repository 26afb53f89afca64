"""Command-line entry point: ``phaseprobe <subcommand> --config <path> [--out <dir>] [--seed <n>]``.

Each subcommand reads one JSON config, writes its tables (CSV) and
structured results (JSON) into the output directory, and finishes with
``manifest.json`` listing inputs, outputs, the config hash and versions.

Exit codes: 0 success, 1 analysis error, 2 I/O or config error.

Seeds: every stochastic stage draws from
``SeedSequence([seed, STAGE_IDS[stage]])`` so that stages are independent
and each one is reproducible on its own.
"""

from __future__ import annotations

import argparse
import contextlib
import dataclasses
import json
import logging
import platform
import sys
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Callable

import numpy as np
import scipy

from . import __version__, synth
from ._io import (atomic_write_bytes, atomic_write_text, dumps_json, read_csv_columns,
                  sha256_bytes, sha256_file, write_csv, write_json)
from .apt_ingest import epos_bytes, format_range_file, read_epos, read_range_file
from .cluster import NOISE, dbscan, default_eps, pca
from .composition import depth_profile, ratio_map_2d, voxelize
from .depth_phase import homopair_labels, trend_summary, z_segment
from .errors import AnalysisError, ConfigError, InputError
from .fringe import (DEFAULT_CLIP, analyze_windows, cluster_windows, grid_windows, match_theory,
                     random_windows, read_image, window_side_px, write_raw_image)
from .pairs import (PAIR_CSV_HEADER, Roi, apply_roi, build_feature_matrix, calibrate_scale,
                    count_mixed, extract_double_hits, filter_homopairs, make_pairs, pair_rows)
from .stats import boxplot_stats, kde, mann_whitney_u
from .transport import IVConfig, IVTrace, analyze_iv, fit_ra

log = logging.getLogger("phaseprobe")

EXIT_OK, EXIT_ANALYSIS, EXIT_IO = 0, 1, 2

STAGE_IDS = {"apt": 1, "fringe_tiles": 2, "fringe_image": 3, "iv": 4, "ra": 5,
             "windows": 6, "kmeans": 7}


def stage_seed(seed: int, stage: str) -> int:
    """Independent 32-bit seed for one pipeline stage."""
    ss = np.random.SeedSequence([int(seed), STAGE_IDS[stage]])
    return int(ss.generate_state(1, np.uint32)[0])


# ---------------------------------------------------------------------------
# configs


def _tuple(v):
    return None if v is None else tuple(_tuple(x) if isinstance(x, list) else x for x in v)


def _coerce(cls, raw: dict) -> dict:
    """JSON lists become tuples; integers given for float fields become floats."""
    types = {f.name: str(f.type) for f in dataclasses.fields(cls)}
    out = {}
    for k, v in raw.items():
        if isinstance(v, list):
            v = _tuple(v)
        elif isinstance(v, int) and not isinstance(v, bool) and types.get(k, "").startswith("float"):
            v = float(v)
        out[k] = v
    return out


@dataclass(frozen=True)
class PairInputs:
    epos: str = ""
    range_file: str = ""
    scale: float | None = None            # Angstrom per detector mm; None -> calibrate
    reference_tag: str = "R3"
    reference_median: float = 2.77
    delta_tag: str = "R3"
    epsilon_tag: str = "R18"
    include_higher: bool = False
    roi: dict | None = None               # {"z_range": [lo, hi], "disc": [cx, cy, r]} or "rect"

    def paths(self):
        return {"epos": self.epos, "range_file": self.range_file}


@dataclass(frozen=True)
class PairsConfig(PairInputs):
    kde_points: int = 512
    kde_bandwidth: float | str = "auto"


@dataclass(frozen=True)
class ClusterConfig(PairInputs):
    n_components: int = 2
    eps: float | None = None              # None -> median 4-NN distance in PC space
    min_pts: int = 5
    k_neighbor: int = 4


@dataclass(frozen=True)
class ZsegConfig(PairInputs):
    n_bins: int = 20
    edges: tuple | None = None
    flip: bool = False
    level: float = 0.95


@dataclass(frozen=True)
class ConcmapConfig:
    epos: str = ""
    range_file: str = ""
    voxel_size: float = 1.0
    axis: str = "z"
    numerator: tuple = ("Nb",)
    denominator: tuple = ("N",)
    threshold: float = 10.0
    bin_width: float = 1.0
    elements: tuple | None = None
    efficiency: dict | None = None

    def paths(self):
        return {"epos": self.epos, "range_file": self.range_file}


@dataclass(frozen=True)
class FringeConfig:
    image: str = ""
    pixel_scale: float | None = None      # nm/px; None -> image sidecar
    window_nm: float = 4.5
    n_windows: int | None = None          # None -> non-overlapping grid
    k: int = 3
    percentile: float = 20.0
    clip: tuple = DEFAULT_CLIP
    spots: tuple | None = None
    smooth: int = 3
    min_ratio: float = 3.0
    profile_path: str = "real"
    envelope_weight: float = 0.5
    theory: dict | None = None            # plane name -> d (nm)

    def paths(self):
        return {"image": self.image}


@dataclass(frozen=True)
class IvConfig:
    iv: str = ""                          # CSV: bias_mV, current_pA
    area: float = 1.0                     # um^2
    high_bias: float = 6.0
    subgap: float = 1.0
    sg_window: int = 7
    sg_order: int = 2
    onset_lo: float = 0.05
    onset_hi: float = 0.95
    noise_factor: float = 5.0
    min_gap_contrast: float = 0.01

    def paths(self):
        return {"iv": self.iv}


@dataclass(frozen=True)
class RaConfig:
    ra: str = ""                          # CSV: area_um2, resistance_MOhm
    log_space: bool = False

    def paths(self):
        return {"ra": self.ra}


@dataclass(frozen=True)
class SynthLinearFraction:
    n_total: int = 20000
    f_surface: float = 0.005
    f_substrate: float = 0.038
    z_range: tuple = (0.0, 100.0)


@dataclass(frozen=True)
class SynthApt:
    n_ions: int = 1_000_000
    n_delta: int = 2000
    n_epsilon: int = 100
    delta_median: float = 2.77
    epsilon_median: float = 2.35
    spread: float = 0.05
    oxygen_barrier: float = 0.08
    oxygen_background: float = 0.01
    magnification: float = 200.0
    linear_fraction: SynthLinearFraction | None = None   # replaces the homopair populations

    def __post_init__(self):
        if isinstance(self.linear_fraction, dict):
            object.__setattr__(self, "linear_fraction",
                               _section(SynthLinearFraction, self.linear_fraction, "apt.linear_fraction"))


@dataclass(frozen=True)
class SynthFringe:
    n_delta: int = 40
    n_epsilon: int = 30
    n_mixed: int = 30
    d_delta: float = 0.159
    d_epsilon: float = 0.144
    noise: float = 0.1
    pixel_scale: float = 0.02
    cols: int = 10
    window_nm: float = 4.5


@dataclass(frozen=True)
class SynthIv:
    gap: float = 4.5
    rn: float = 9.0
    smear: float = 0.3
    leakage: float = 1e4
    noise: float = 0.0
    v_max: float = 10.0
    step: float = 0.02
    ic: float = 0.0


@dataclass(frozen=True)
class SynthRa:
    c: float = 558.5
    areas: tuple = synth.JUNCTION_AREAS
    noise: float = 0.0


def _section(cls, raw, name: str):
    if not isinstance(raw, dict):
        raise ConfigError(f"synth.{name} must be an object")
    unknown = sorted(set(raw) - {f.name for f in dataclasses.fields(cls)})
    if unknown:
        raise ConfigError(f"synth.{name}: unknown keys {', '.join(unknown)}")
    return cls(**_coerce(cls, raw))


@dataclass(frozen=True)
class SynthConfig:
    """Each present section (even ``{}``) is generated; absent or null sections are skipped."""

    apt: SynthApt | None = None
    fringe: SynthFringe | None = None
    iv: SynthIv | None = None
    ra: SynthRa | None = None

    def __post_init__(self):
        for name, cls in (("apt", SynthApt), ("fringe", SynthFringe), ("iv", SynthIv), ("ra", SynthRa)):
            v = getattr(self, name)
            if isinstance(v, dict):
                object.__setattr__(self, name, _section(cls, v, name))

    def paths(self):
        return {}


COMMON_KEYS = ("seed", "out", "command")


def parse_config(cls, raw: dict):
    """Build ``cls`` from a JSON object; unknown keys are a config error."""
    if not isinstance(raw, dict):
        raise ConfigError("config must be a JSON object")
    names = {f.name for f in dataclasses.fields(cls)}
    unknown = sorted(set(raw) - names - set(COMMON_KEYS))
    if unknown:
        raise ConfigError(f"unknown config keys: {', '.join(unknown)}")
    kw = _coerce(cls, {k: v for k, v in raw.items() if k in names})
    try:
        cfg = cls(**kw)
    except (TypeError, ValueError) as exc:
        raise ConfigError(str(exc)) from None
    for key, path in cfg.paths().items():
        if not path:
            raise ConfigError(f"config key {key!r} is required")
    return cfg


def config_hash(cfg, seed: int | None) -> str:
    """sha256 of the normalised config (defaults filled in, output dir excluded)."""
    body = {"config": dataclasses.asdict(cfg), "seed": seed, "type": type(cfg).__name__}
    return sha256_bytes(dumps_json(body).encode())


# ---------------------------------------------------------------------------
# run context


class StageError(Exception):
    def __init__(self, stage: str, exc: BaseException, code: int):
        super().__init__(f"{stage}: {exc}")
        self.stage, self.exc, self.code = stage, exc, code


@dataclass
class Run:
    command: str
    config: Any
    seed: int | None
    base: Path
    out: Path
    inputs: list = field(default_factory=list)
    outputs: list = field(default_factory=list)

    def path(self, rel: str) -> Path:
        p = Path(rel)
        return p if p.is_absolute() else self.base / p

    def require_seed(self) -> int:
        if self.seed is None:
            raise ConfigError(f"{self.command} is stochastic; set 'seed' in the config or pass --seed")
        return int(self.seed)

    def add_input(self, key: str, path: Path):
        try:
            shown = path.resolve().relative_to(self.base).as_posix()
        except ValueError:
            shown = str(path)
        self.inputs.append({"key": key, "path": shown, "bytes": path.stat().st_size,
                            "sha256": sha256_file(path)})

    def out_file(self, name: str) -> Path:
        self.outputs.append(name)
        return self.out / name

    @contextlib.contextmanager
    def stage(self, name: str):
        try:
            yield
        except StageError:
            raise
        except (InputError, OSError, UnicodeDecodeError) as exc:
            raise StageError(name, exc, EXIT_IO) from exc
        except (AnalysisError, ValueError, ArithmeticError) as exc:
            raise StageError(name, exc, EXIT_ANALYSIS) from exc

    def write_manifest(self):
        outputs = [{"name": n, "sha256": sha256_file(self.out / n)} for n in sorted(set(self.outputs))]
        versions = {"phaseprobe": __version__, "python": platform.python_version(),
                    "numpy": np.__version__, "scipy": scipy.__version__}
        manifest = {"command": self.command, "config": dataclasses.asdict(self.config),
                    "config_hash": config_hash(self.config, self.seed), "seed": self.seed,
                    "stage_seeds": ({k: stage_seed(self.seed, k) for k in STAGE_IDS}
                                    if self.seed is not None else None),
                    "inputs": self.inputs, "outputs": outputs, "versions": versions}
        write_json(self.out / "manifest.json", manifest)


# ---------------------------------------------------------------------------
# shared APT loading


def _roi(cfg: PairInputs) -> Roi | None:
    if cfg.roi is None:
        return None
    r = dict(cfg.roi)
    unknown = set(r) - {"z_range", "disc", "rect"}
    if unknown:
        raise ConfigError(f"unknown roi keys: {', '.join(sorted(unknown))}")
    z = tuple(r.get("z_range") or (-np.inf, np.inf))
    try:
        return Roi(z, _tuple(r.get("disc")), _tuple(r.get("rect")))
    except ValueError as exc:
        raise ConfigError(f"roi: {exc}") from None


def _load_apt(run: Run, cfg):
    with run.stage("ingest"):
        epos, rng_path = run.path(cfg.epos), run.path(cfg.range_file)
        events = read_epos(epos)
        table = read_range_file(rng_path)
        run.add_input("epos", epos)
        run.add_input("range_file", rng_path)
    return events, table


def _load_pairs(run: Run, cfg: PairInputs):
    """Events, double hits, scaled pairs (after ROI) and the summary counts."""
    roi = _roi(cfg)
    events, table = _load_apt(run, cfg)
    with run.stage("double_hits"):
        hits = extract_double_hits(events, include_higher=cfg.include_higher)
        pairs = make_pairs(events, hits, table)
        if roi is not None:
            pairs = apply_roi(pairs, events, roi)
    with run.stage("calibration"):
        if cfg.scale is not None:
            scale = float(cfg.scale)
        else:
            scale = calibrate_scale(filter_homopairs(pairs, cfg.reference_tag), cfg.reference_median)
        pairs = pairs.with_scale(scale)
    info = {"n_events": len(events), "n_pairs": len(pairs), "n_inconsistent": hits.n_inconsistent,
            "n_higher_groups": hits.n_higher, "scale_A_per_mm": scale,
            "scale_source": "config" if cfg.scale is not None else f"calibrated:{cfg.reference_tag}",
            "n_mixed": count_mixed(pairs, cfg.delta_tag, cfg.epsilon_tag)}
    return events, table, pairs, info


def _box(b):
    return dataclasses.asdict(b)


# ---------------------------------------------------------------------------
# commands


def cmd_pairs(run: Run):
    cfg: PairsConfig = run.config
    _, _, pairs, info = _load_pairs(run, cfg)
    with run.stage("pair_analysis"):
        delta = filter_homopairs(pairs, cfg.delta_tag)
        eps = filter_homopairs(pairs, cfg.epsilon_tag)
        info.update(n_delta=len(delta), n_epsilon=len(eps))
        if not len(delta) or not len(eps):
            raise AnalysisError(f"need both populations, got {len(delta)} {cfg.delta_tag} "
                                f"and {len(eps)} {cfg.epsilon_tag} homopairs")
    write_csv(run.out_file("pairs.csv"), PAIR_CSV_HEADER, pair_rows(pairs))
    with run.stage("statistics"):
        d_sep, e_sep = delta.real_sep, eps.real_sep
        boxes = {"delta": _box(boxplot_stats(d_sep)), "epsilon": _box(boxplot_stats(e_sep)),
                 "tags": {"delta": cfg.delta_tag, "epsilon": cfg.epsilon_tag}, "summary": info}
        u = mann_whitney_u(e_sep, d_sep)
        kd, ke = kde(d_sep, cfg.kde_bandwidth), kde(e_sep, cfg.kde_bandwidth)
        lo = min(d_sep.min() - 3 * kd.bandwidth, e_sep.min() - 3 * ke.bandwidth)
        hi = max(d_sep.max() + 3 * kd.bandwidth, e_sep.max() + 3 * ke.bandwidth)
        xs = np.linspace(lo, hi, cfg.kde_points)
        dens_d, dens_e = kd(xs), ke(xs)
    write_json(run.out_file("boxplot.json"), boxes)
    write_json(run.out_file("utest.json"),
               {"a": cfg.epsilon_tag, "b": cfg.delta_tag, **dataclasses.asdict(u),
                "median_a_A": float(np.median(e_sep)), "median_b_A": float(np.median(d_sep)),
                "convention": "U counts a > b; z < 0 means a is shorter"})
    write_csv(run.out_file("kde_delta.csv"), ("real_sep_A", "density"), zip(xs, dens_d))
    write_csv(run.out_file("kde_epsilon.csv"), ("real_sep_A", "density"), zip(xs, dens_e))
    write_json(run.out_file("kde_bandwidth.json"), {"delta": kd.bandwidth, "epsilon": ke.bandwidth})


def cmd_cluster(run: Run):
    cfg: ClusterConfig = run.config
    _, _, pairs, info = _load_pairs(run, cfg)
    with run.stage("feature_matrix"):
        delta = filter_homopairs(pairs, cfg.delta_tag)
        eps = filter_homopairs(pairs, cfg.epsilon_tag)
        fm = build_feature_matrix(delta, eps)
    with run.stage("pca"):
        res = pca(fm.values, cfg.n_components)
    with run.stage("dbscan"):
        eps_val = float(cfg.eps) if cfg.eps is not None else default_eps(res.scores, cfg.k_neighbor)
        labels = dbscan(res.scores, eps_val, cfg.min_pts)
    n_clusters = int(labels.max()) + 1 if (labels != NOISE).any() else 0
    write_json(run.out_file("pca.json"), {
        "columns": list(fm.columns), "feature_mean": fm.mean, "feature_std": fm.std,
        "components": res.components, "eigenvalues": res.eigenvalues,
        "explained_variance_ratio": res.explained_variance_ratio, "mean": res.mean,
        "dbscan": {"eps": eps_val, "eps_source": "config" if cfg.eps is not None
                   else f"median {cfg.k_neighbor}-NN distance", "min_pts": cfg.min_pts,
                   "n_clusters": n_clusters, "n_noise": int((labels == NOISE).sum())},
        "summary": {**info, "n_delta": len(delta), "n_epsilon": len(eps)}})
    pulses = np.concatenate([delta.pulse_index, eps.pulse_index])
    header = ("row", "pulse_index", "flag") + tuple(f"pc{i + 1}" for i in range(cfg.n_components)) + ("label",)
    rows = ((i, int(pulses[i]), int(fm.flags[i]), *res.scores[i], int(labels[i])) for i in range(len(labels)))
    write_csv(run.out_file("dbscan_labels.csv"), header, rows)


def cmd_zseg(run: Run):
    cfg: ZsegConfig = run.config
    _, _, pairs, info = _load_pairs(run, cfg)
    with run.stage("z_segment"):
        z, is_eps = homopair_labels(pairs, cfg.delta_tag, cfg.epsilon_tag)
        bins = z_segment(z, is_eps, cfg.n_bins, cfg.edges, cfg.flip, cfg.level)
        trend = trend_summary(bins)
    write_csv(run.out_file("zseg.csv"),
              ("bin_center_nm", "n_delta", "n_epsilon", "frac_epsilon", "ci_lo", "ci_hi"), bins.rows())
    write_json(run.out_file("zseg_summary.json"), {
        "trend": dataclasses.asdict(trend), "edges_nm": bins.edges, "level": bins.level,
        "order": "surface side first", "n_homopairs": int(len(z)), "summary": info})


def cmd_concmap(run: Run):
    cfg: ConcmapConfig = run.config
    events, table = _load_apt(run, cfg)
    with run.stage("ranging"):
        species = table.lookup(events.mz)
    with run.stage("voxelize"):
        grid = voxelize(events, species, cfg.voxel_size, n_species=len(table))
        rmap = ratio_map_2d(grid, table, cfg.numerator, cfg.denominator, cfg.axis,
                            cfg.threshold, cfg.efficiency)
    with run.stage("depth_profile"):
        prof = depth_profile(events, species, table, cfg.bin_width, elements=cfg.elements,
                             efficiency=cfg.efficiency)
    names = table.names
    write_csv(run.out_file("voxels.csv"), ("ix", "iy", "iz", "species", "count"),
              ((a, b, c, names[s], n) for a, b, c, s, n in grid.rows()))
    # matrix form: one row per index of the first remaining axis; masked cells are empty
    ncol = rmap.ratio.shape[1]
    cols = ("i",) + tuple(f"j{j}" for j in range(ncol))
    write_csv(run.out_file("ratio_map.csv"), cols,
              ((i, *(None if m else v for v, m in zip(row, mrow)))
               for i, (row, mrow) in enumerate(zip(rmap.ratio, rmap.mask))))
    write_csv(run.out_file("ratio_counts.csv"), ("i", "j", "numerator", "denominator"),
              ((i, j, rmap.numerator[i, j], rmap.denominator[i, j])
               for i in range(rmap.ratio.shape[0]) for j in range(ncol)))
    header = rmap.header()
    header.update(numerator=list(cfg.numerator), denominator=list(cfg.denominator),
                  n_unranged=grid.n_unranged, n_dropped=grid.n_dropped,
                  unmasked_mean=float(np.mean(rmap.unmasked)) if rmap.unmasked.size else None)
    write_json(run.out_file("ratio_map.json"), header)
    fr = prof.fractions
    cols = ("z_center_nm", "total_atoms") + tuple(f"n_{e}" for e in prof.elements) + tuple(f"x_{e}" for e in prof.elements)
    write_csv(run.out_file("depth_profile.csv"), cols,
              ((c, t, *a, *f) for c, t, a, f in zip(prof.centers, prof.totals, prof.atoms, fr)))
    peaks = {e: dict(zip(("z_nm", "fraction"), prof.peak(e))) for e in prof.elements
             if np.isfinite(prof.fraction(e)).any()}
    write_json(run.out_file("depth_profile.json"), {"bin_width_nm": cfg.bin_width, "edges_nm": prof.edges,
                                                   "elements": list(prof.elements), "peaks": peaks})


def cmd_fringe(run: Run):
    cfg: FringeConfig = run.config
    with run.stage("ingest"):
        path = run.path(cfg.image)
        image = read_image(path, cfg.pixel_scale)
        run.add_input("image", path)
    seed = run.require_seed()
    with run.stage("windows"):
        side = window_side_px(image.pixel_scale, cfg.window_nm)
        if cfg.n_windows is None:
            windows = grid_windows(image, side)
        else:
            windows = random_windows(image, int(cfg.n_windows), side, stage_seed(seed, "windows"))
    with run.stage("fft_filter"):
        spots = [tuple(s) for s in cfg.spots] if cfg.spots else None
        samples, no_fringe = analyze_windows(image, windows, spots=spots, d_range=cfg.clip,
                                             smooth=cfg.smooth, min_ratio=cfg.min_ratio,
                                             path=cfg.profile_path)
    with run.stage("cluster"):
        out = cluster_windows(samples, cfg.k, cfg.percentile, cfg.clip, stage_seed(seed, "kmeans"),
                              cfg.envelope_weight)
    reasons = {wid: r for wid, r in out.rejected}
    reasons.update({wid: "no fringe" for wid in no_fringe})
    by_id = {s.window_id: s for s in samples}
    labelled = {s.window_id: s.label for s in out.samples}
    rows = []
    for wid, win in enumerate(windows):
        s = by_id.get(wid)
        rows.append((wid, win.x0, win.y0, win.size,
                     s.d if s else None, s.amplitude if s else None, s.envelope_energy if s else None,
                     labelled.get(wid), reasons.get(wid, "")))
    write_csv(run.out_file("fringe_windows.csv"),
              ("window_id", "x0", "y0", "size_px", "d_nm", "amplitude", "envelope_energy",
               "cluster", "rejected"), rows)
    summary = {"n_windows": len(windows), "window_px": side, "pixel_scale_nm": image.pixel_scale,
               "n_no_fringe": len(no_fringe), "n_rejected": len(reasons),
               "n_clustered": len(out.samples),
               "clusters": {str(k): _box(b) for k, b in out.boxes.items()},
               "medians_nm": {str(k): v for k, v in out.medians().items()}}
    if cfg.theory:
        summary["theory_match"] = {str(k): {"plane": n, "d_theory_nm": d, "delta_nm": dd}
                                   for k, (n, d, dd) in match_theory(out.medians(), cfg.theory).items()}
    write_json(run.out_file("fringe_summary.json"), summary)


def _csv_columns(run: Run, key: str, rel: str, needed):
    path = run.path(rel)
    try:
        cols = read_csv_columns(path)
    except ValueError as exc:
        raise InputError(str(exc)) from None
    missing = [c for c in needed if c not in cols]
    if missing:
        raise InputError(f"{path}: missing columns {', '.join(missing)}")
    run.add_input(key, path)
    return [cols[c] for c in needed]


def cmd_iv(run: Run):
    cfg: IvConfig = run.config
    with run.stage("ingest"):
        v, i = _csv_columns(run, "iv", cfg.iv, ("bias_mV", "current_pA"))
    with run.stage("iv_analysis"):
        if not cfg.area > 0:
            raise ConfigError("area must be > 0")
        ivc = IVConfig(cfg.high_bias, cfg.subgap, cfg.sg_window, cfg.sg_order,
                       cfg.onset_lo, cfg.onset_hi, cfg.noise_factor, cfg.min_gap_contrast)
        summary = analyze_iv(IVTrace(v, i), cfg.area, ivc)
    write_json(run.out_file("iv_summary.json"), {**summary.as_dict(), "area_um2": cfg.area})


def cmd_ra(run: Run):
    cfg: RaConfig = run.config
    with run.stage("ingest"):
        a, r = _csv_columns(run, "ra", cfg.ra, ("area_um2", "resistance_MOhm"))
    with run.stage("ra_fit"):
        fit = fit_ra(a, r, cfg.log_space)
    write_json(run.out_file("ra_fit.json"), fit.as_dict())


def cmd_synth(run: Run):
    cfg: SynthConfig = run.config
    seed = run.require_seed()
    truth = {}
    if cfg.apt is not None:
        a = cfg.apt
        with run.stage("synth_apt"):
            lf = a.linear_fraction
            n_delta, n_eps = (lf.n_total, 0) if lf else (a.n_delta, a.n_epsilon)
            spec = synth.trilayer_spec(a.n_ions, n_delta, n_eps, a.delta_median, a.epsilon_median,
                                       a.spread, stage_seed(seed, "apt"), a.oxygen_barrier,
                                       a.oxygen_background, a.magnification)
            if lf:
                pops = synth.linear_fraction_populations(lf.n_total, lf.f_surface, lf.f_substrate,
                                                         lf.z_range, a.delta_median,
                                                         a.epsilon_median, a.spread)
                spec = dataclasses.replace(spec, populations=pops)
            table = synth.default_range_table()
            events, t = synth.gen_apt_specimen(spec, table)
        atomic_write_bytes(run.out_file("specimen.epos"), epos_bytes(events))
        atomic_write_text(run.out_file("ranges.rrng"), format_range_file(table))
        write_json(run.out_file("specimen_truth.json"), {"spec": spec.to_dict(), **t.to_dict()})
        truth["apt"] = {"n_events": len(events), "n_pairs": len(t.pair_index)}
    if cfg.fringe is not None:
        f = cfg.fringe
        with run.stage("synth_fringe"):
            tile_px = window_side_px(f.pixel_scale, f.window_nm)
            tiles, labels = synth.fringe_mixture_tiles(f.n_delta, f.n_epsilon, f.n_mixed, f.d_delta,
                                                       f.d_epsilon, stage_seed(seed, "fringe_tiles"))
            image, tile_truth = synth.gen_lattice_mosaic(tiles, tile_px, f.cols, f.noise, f.pixel_scale,
                                                         stage_seed(seed, "fringe_image"), labels)
        write_raw_image(image, run.out_file("lattice.raw"))
        run.outputs.append("lattice.json")
        write_json(run.out_file("lattice_truth.json"), {"tile_px": tile_px, "tiles": tile_truth})
        truth["fringe"] = {"n_tiles": len(tiles), "tile_px": tile_px}
    if cfg.iv is not None:
        with run.stage("synth_iv"):
            trace = synth.gen_iv(seed=stage_seed(seed, "iv"), **dataclasses.asdict(cfg.iv))
        write_csv(run.out_file("iv.csv"), ("bias_mV", "current_pA"), zip(trace.bias, trace.current))
        truth["iv"] = dataclasses.asdict(cfg.iv)
    if cfg.ra is not None:
        with run.stage("synth_ra"):
            areas, r = synth.gen_ra(cfg.ra.c, cfg.ra.areas, cfg.ra.noise, stage_seed(seed, "ra"))
        write_csv(run.out_file("ra.csv"), ("area_um2", "resistance_MOhm"), zip(areas, r))
        truth["ra"] = dataclasses.asdict(cfg.ra)
    write_json(run.out_file("synth_truth.json"), truth)


COMMANDS: dict[str, tuple[type, Callable[[Run], None], str]] = {
    "pairs": (PairsConfig, cmd_pairs, "double-hit pair separations, boxplots, U test, KDE"),
    "cluster": (ClusterConfig, cmd_cluster, "PCA + DBSCAN over the pair feature matrix"),
    "zseg": (ZsegConfig, cmd_zseg, "depth-resolved delta/epsilon homopair fractions"),
    "concmap": (ConcmapConfig, cmd_concmap, "voxel ratio maps and 1D depth profiles"),
    "fringe": (FringeConfig, cmd_fringe, "lattice-fringe d-spacings and window clustering"),
    "iv": (IvConfig, cmd_iv, "SIS I-V characterisation"),
    "ra": (RaConfig, cmd_ra, "R*A product fit"),
    "synth": (SynthConfig, cmd_synth, "seeded synthetic datasets with ground truth"),
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="phaseprobe", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"phaseprobe {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)
    for name, (_, _, help_text) in COMMANDS.items():
        p = sub.add_parser(name, help=help_text)
        p.add_argument("--config", required=True, help="JSON config file")
        p.add_argument("--out", help="output directory (overrides config 'out')")
        p.add_argument("--seed", type=int, help="master seed (overrides config 'seed')")
        p.add_argument("-v", "--verbose", action="store_true")
    return parser


def _load_run(args) -> Run:
    cfg_path = Path(args.config)
    try:
        raw = json.loads(cfg_path.read_text())
    except FileNotFoundError:
        raise ConfigError(f"config file not found: {cfg_path}") from None
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{cfg_path}: invalid JSON ({exc})") from None
    cls, _, _ = COMMANDS[args.command]
    cfg = parse_config(cls, raw)
    if raw.get("command") not in (None, args.command):
        raise ConfigError(f"config is for {raw['command']!r}, not {args.command!r}")
    seed = args.seed if args.seed is not None else raw.get("seed")
    if seed is not None and (not isinstance(seed, int) or isinstance(seed, bool) or seed < 0):
        raise ConfigError(f"seed must be a non-negative integer, got {seed!r}")
    base = cfg_path.resolve().parent
    out = Path(args.out) if args.out else base / raw.get("out", "out")
    run = Run(args.command, cfg, seed, base, out)
    missing = [run.path(p) for p in cfg.paths().values() if not run.path(p).is_file()]
    if missing:
        raise InputError(f"input file not found: {missing[0]}")
    return run


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        run = _load_run(args)
    except (InputError, OSError) as exc:
        print(f"phaseprobe {args.command}: config: {exc}", file=sys.stderr)
        return EXIT_IO
    try:
        run.out.mkdir(parents=True, exist_ok=True)
        _, func, _ = COMMANDS[args.command]
        func(run)
        with run.stage("manifest"):
            run.write_manifest()
    except StageError as exc:
        print(f"phaseprobe {args.command}: {exc.stage} stage failed: {exc.exc}", file=sys.stderr)
        return exc.code
    except (InputError, OSError) as exc:
        print(f"phaseprobe {args.command}: {exc}", file=sys.stderr)
        return EXIT_IO
    except AnalysisError as exc:
        print(f"phaseprobe {args.command}: {exc}", file=sys.stderr)
        return EXIT_ANALYSIS
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
