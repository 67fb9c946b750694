"""Sample the H2 conditions for ball and cone families and print the required constants."""

import argparse
import math

import numpy as np

from chaosflock.geometry import FixedBall, ThetaFamily, VariableBall, VisionCone, verify_h2


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--samples", type=int, default=100_000)
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args()
    families = []
    for d in (2, 3):
        families.append((f"FixedBall d={d}", ThetaFamily(FixedBall(0.5, d))))
        families.append((f"VariableBall d={d}", ThetaFamily(VariableBall.tanh(0.3, 1.0, 1.0, d))))
        cone = VisionCone(1.0, math.pi / 4, d)
        families.append((f"VisionCone d={d}", ThetaFamily(cone)))
        families.append((f"VisionCone d={d} (no segment)", ThetaFamily(cone, include_segment=False)))
    print(f"{'family':34s} {'C':>6s} {'ratio(ii)':>10s} {'C(iii)':>8s} {'C(iv)':>8s} {'violations':>10s}")
    for name, fam in families:
        rep = verify_h2(fam, args.samples, args.seed)
        print(f"{name:34s} {rep.constant:6.3f} {rep.max_ratio_ii:10.3f} {rep.required_constant_iii:8.3f} "
              f"{rep.required_constant_iv:8.3f} {len(rep.violations):10d}")
    # slow agent next to a fast one: the pair the axial segment exists for
    for d in (2, 3):
        v = np.zeros((1, d))
        w = np.zeros((1, d))
        v[0, 0], w[0, 0] = 0.9, 1.1
        cone = VisionCone(1.0, math.pi / 4, d)
        for seg in (True, False):
            rep = verify_h2(ThetaFamily(cone, include_segment=seg), args.samples, args.seed, pairs=(v, w))
            print(f"targeted pair d={d} segment={seg}: {len(rep.violations)} violations, "
                  f"C(iii) {rep.required_constant_iii:.3f}, C(iv) {rep.required_constant_iv:.3f}")


if __name__ == "__main__":
    main()
