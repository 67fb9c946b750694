"""Propagation-of-chaos sweep over N with the rate fit and the predicted slopes."""

import argparse
import json

from chaosflock.experiments import chaos_setup, run_chaos


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--ladder", type=int, nargs="+", default=[64, 128, 256, 512, 1024])
    ap.add_argument("--replicas", type=int, default=32)
    ap.add_argument("--horizon", type=float, default=1.0)
    ap.add_argument("--proxy-size", type=int, default=8192)
    ap.add_argument("--sigma", type=float, nargs="+", default=[0.1])
    ap.add_argument("--threads", type=int, default=1)
    args = ap.parse_args()
    for sigma in args.sigma:
        exp = chaos_setup(args.ladder, args.replicas, args.horizon, args.proxy_size, sigma)
        res = run_chaos(exp, threads=args.threads)
        print(f"sigma = {sigma}")
        print(f"{'N':>6s} {'coupling':>10s} {'stderr':>9s} {'sampling':>10s} {'fg(n=2)':>9s}")
        for r in res.rows:
            print(f"{r['N']:6d} {r['mean_coupling_error']:10.5f} {r['stderr']:9.5f} {r['w1_to_target']:10.5f} "
                  f"{r['fg_prediction']:9.5f}")
        print(json.dumps(res.summary(), indent=2))


if __name__ == "__main__":
    main()
