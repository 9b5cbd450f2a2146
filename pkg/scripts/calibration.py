"""Null calibration: FPR at fixed alphas and p-value uniformity on unwatermarked text."""
import argparse
import time

import numpy as np

from vow import calibration, voprf
from vow.watermark import WatermarkParams


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--samples", type=int, default=100_000)
    ap.add_argument("--length", type=int, default=255)
    ap.add_argument("--workers", type=int, default=1)
    ap.add_argument("--seed", type=int, default=6)
    ap.add_argument("--partitions", type=int, default=100)
    args = ap.parse_args()

    kp = voprf.setup(f"calibration:{args.seed}".encode())
    params = WatermarkParams()
    t0 = time.perf_counter()
    rep = calibration.calibrate(kp.sk, params, args.samples, args.length,
                                rng=np.random.default_rng(args.seed), workers=args.workers)
    print(rep.to_text(), end="")
    print(f"elapsed_min {(time.perf_counter() - t0) / 60:.1f}")
    if args.partitions:
        pr = calibration.pseudorandomness(params, args.partitions, rng=np.random.default_rng(args.seed))
        print(pr.to_text(), end="")


if __name__ == "__main__":
    main()
