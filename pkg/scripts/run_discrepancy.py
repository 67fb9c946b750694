"""Decay of the boundary discrepancy functional with the sample size."""

import argparse

from chaosflock.experiments import discrepancy_experiment


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--ladder", type=int, nargs="+", default=[32, 64, 128, 256, 512, 1024])
    ap.add_argument("--reps", type=int, default=16)
    ap.add_argument("--u-points", type=int, default=64)
    args = ap.parse_args()
    fit = discrepancy_experiment(tuple(args.ladder), args.reps, u_points=args.u_points)
    for n, m, s in zip(fit.ns, fit.means, fit.stderrs):
        print(f"N={n:5d}  mean sup {m:.5f} +- {s:.5f}")
    print(f"fitted exponent {fit.slope:.3f} +- {fit.stderr:.3f}")


if __name__ == "__main__":
    main()
