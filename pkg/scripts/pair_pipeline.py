"""Oracle specimen -> EPOS -> double hits -> medians and U test, with timing."""

import argparse
import tempfile
import time
from pathlib import Path

import numpy as np

from phaseprobe.apt_ingest import format_range_file, read_epos, read_range_file, write_epos
from phaseprobe.pairs import calibrate_scale, extract_double_hits, filter_homopairs, make_pairs
from phaseprobe.stats import boxplot_stats, mann_whitney_u
from phaseprobe.synth import default_range_table, gen_apt_specimen, trilayer_spec


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--n-ions", type=int, default=1_000_000)
    ap.add_argument("--n-delta", type=int, default=2000)
    ap.add_argument("--n-epsilon", type=int, default=100)
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--calibrate", action="store_true", help="scale from the R3 median instead of the planted magnification")
    args = ap.parse_args()

    spec = trilayer_spec(args.n_ions, args.n_delta, args.n_epsilon, seed=args.seed)
    table = default_range_table()
    t0 = time.perf_counter()
    events, _ = gen_apt_specimen(spec, table)
    print(f"generated {len(events)} events in {time.perf_counter() - t0:.2f}s")

    with tempfile.TemporaryDirectory() as tmp:
        epos, rng = Path(tmp) / "s.epos", Path(tmp) / "r.rrng"
        write_epos(epos, events)
        rng.write_text(format_range_file(table))
        t0 = time.perf_counter()
        ev, tab = read_epos(epos), read_range_file(rng)
        pairs = make_pairs(ev, extract_double_hits(ev), tab)
        scale = calibrate_scale(filter_homopairs(pairs, "R3")) if args.calibrate else spec.magnification
        pairs = pairs.with_scale(scale)
        d = filter_homopairs(pairs, "R3").real_sep
        e = filter_homopairs(pairs, "R18").real_sep
        u = mann_whitney_u(e, d)
        elapsed = time.perf_counter() - t0

    for name, x in (("R3R3", d), ("R18R18", e)):
        b = boxplot_stats(x)
        print(f"{name:7s} n={b.n:5d} median={b.median:.4f} A  IQR=[{b.q1:.4f}, {b.q3:.4f}]")
    print(f"scale={scale:.3f} A/mm  U={u.U:.1f} z={u.z:.3f} p={u.p:.3e} ({u.method})")
    print(f"pipeline runtime {elapsed:.2f}s")


if __name__ == "__main__":
    main()
