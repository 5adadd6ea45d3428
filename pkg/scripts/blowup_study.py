"""Continuation towards the critical exponent for a peaked K, with per-member diagnostics.

    python scripts/blowup_study.py --kmax 256 --taus 0.5,0.4,0.3,0.2,0.15,0.1,0.07,0.05
"""
import argparse

import numpy as np

from fracnirenberg.solver import SolverConfig, blowup_diagnostics, continuation, family_rows, write_family_csv


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--n", type=int, default=2)
    ap.add_argument("--sigma", type=float, default=0.5)
    ap.add_argument("--K", default="bump:north,1.0,0.5")
    ap.add_argument("--kmax", type=int, default=256)
    ap.add_argument("--taus", default="0.5,0.4,0.3,0.2,0.15,0.1,0.07,0.05")
    ap.add_argument("--csv", default=None, help="optional family.csv path")
    args = ap.parse_args()

    cfg = SolverConfig(args.n, args.sigma, args.K, kmax=args.kmax)
    fam = continuation(cfg, [float(t) for t in args.taus.split(",")])
    diags = [blowup_diagnostics(r, cfg) for r in fam]
    print(f"{'tau':>6} {'peaks':>5} {'m':>10} {'misfit':>8} {'tau*m^2':>8} {'wbar':>4} {'crit norm':>9}")
    for r, d in zip(fam, diags):
        top = d.peaks[0] if d.peaks else None
        m = top["height"] if top else np.nan
        mis = top["profile_misfit"] if top else np.nan
        tm2 = d.tau_times_m2 if d.tau_times_m2 is not None else np.nan
        print(f"{r.tau:6.3f} {len(d.peaks):5d} {m:10.3f} {mis:8.4f} {tm2:8.3f} {d.wbar_critical_points:4d} "
              f"{r.critical_norm:9.4f}")
    if fam.failure is not None:
        print("continuation stopped:", fam.failure)
    if args.csv:
        write_family_csv(args.csv, family_rows(fam, diags))


if __name__ == "__main__":
    main()
