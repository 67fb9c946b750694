"""Max recorded speed over many seeds against the V_m + 2 V_m dt limit."""

import argparse

import numpy as np

from chaosflock.experiments import speed_bound_experiment


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--seeds", type=int, default=64)
    ap.add_argument("--n", type=int, default=32)
    ap.add_argument("--d", type=int, default=2)
    ap.add_argument("--sigma", type=float, default=0.1)
    ap.add_argument("--steps", type=int, default=10_000)
    ap.add_argument("--dt", type=float, default=1e-3)
    ap.add_argument("--threads", type=int, default=1)
    args = ap.parse_args()
    res = speed_bound_experiment(args.seeds, args.n, args.d, args.sigma, 1.0, args.dt, args.steps,
                                 threads=args.threads)
    print(f"limit {res.limit:.6f}")
    print(f"max speed: max {res.max_speeds.max():.6f}, median {np.median(res.max_speeds):.6f}")
    print("PASS" if res.ok else "FAIL")


if __name__ == "__main__":
    main()
