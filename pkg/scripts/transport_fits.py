"""R*A Monte Carlo and I-V characterisation on planted traces."""

import argparse

import numpy as np

from phaseprobe.synth import JUNCTION_AREAS, gen_iv, gen_ra
from phaseprobe.transport import analyze_iv, fit_ra


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--c", type=float, default=558.5)
    ap.add_argument("--noise", type=float, default=0.02)
    ap.add_argument("--seeds", type=int, default=500)
    ap.add_argument("--iv-noise", type=float, default=5.0)
    args = ap.parse_args()

    fits = [fit_ra(*gen_ra(args.c, JUNCTION_AREAS, args.noise, seed=s)) for s in range(args.seeds)]
    c = np.array([f.ra for f in fits])
    se = np.array([f.stderr for f in fits])
    print(f"C: mean {c.mean():.2f} (planted {args.c}), seed spread {c.std(ddof=1):.2f}, mean stderr {se.mean():.2f}")
    print(f"|C - planted| <= 3 stderr in {np.mean(np.abs(c - args.c) <= 3 * se):.1%} of seeds")

    for smear in (0.3, 0.1):
        s = analyze_iv(gen_iv(smear=smear, noise=args.iv_noise, seed=1), area=64.0)
        lo, hi = s.onset_range
        print(f"smear {smear}: gap {s.gap_voltage:.3f} mV, onset {lo:.2f}-{hi:.2f} mV, Rn {s.rn:.3f} MOhm, "
              f"subgap R {s.subgap_r:.0f} MOhm, Jc bound {s.jc:.3f} pA/um^2, supercurrent {s.supercurrent_detected}")
    s = analyze_iv(gen_iv(noise=2.0, ic=1.9 * 64.0, seed=2), area=64.0)
    print(f"planted 121.6 pA step: detected {s.supercurrent_detected}, Jc {s.jc:.3f} pA/um^2")


if __name__ == "__main__":
    main()
