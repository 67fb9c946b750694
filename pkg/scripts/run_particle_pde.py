"""Particle histogram against the kinetic grid solution, plus the conservation ledger."""

import argparse

from chaosflock.experiments import conservation_experiment, particle_pde_consistency


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--n", type=int, default=4096)
    ap.add_argument("--nx", type=int, default=256)
    ap.add_argument("--nv", type=int, default=128)
    ap.add_argument("--t-end", type=float, default=0.5)
    args = ap.parse_args()
    cons = conservation_experiment(args.nx, args.nv)
    print(f"mass drift/unit time {cons['mass_drift_rate']:.3e}  momentum drift {cons['momentum_drift']:.3e}  "
          f"v-support {cons['vsupport']:.4f} (limit {cons['vsupport_limit']:.4f})")
    res = particle_pde_consistency(args.n, args.nx, args.nv, args.t_end)
    print(f"W1 {res.w1:.4f}  threshold {res.threshold:.4f}  (rate {res.rate_at_n:.4f}, cell {res.cell_diameter:.4f}, "
          f"slope {res.rate_slope:.3f})  {'PASS' if res.ok else 'FAIL'}")


if __name__ == "__main__":
    main()
