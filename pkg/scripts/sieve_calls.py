"""IsGreen predicate calls made by the top-k sieve, against k, delta and vocabulary size."""
import argparse

import numpy as np

from vow.sampler import select_topk_watermarked


def mean_calls(rng, n_vocab, k, delta, trials):
    out = []
    for _ in range(trials):
        logits = rng.standard_normal(n_vocab)
        green = rng.random(n_vocab) < 0.5
        out.append(select_topk_watermarked(logits, k, delta, lambda t: bool(green[t])).calls)
    return float(np.mean(out))


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--trials", type=int, default=100)
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args()
    rng = np.random.default_rng(args.seed)

    print(f"{'N':>7} {'k':>4} {'delta':>5} {'calls':>8} {'calls/k':>7}")
    for k in (10, 20, 50, 100):
        for delta in (1.0, 2.0, 2.5, 3.0, 4.0):
            c = mean_calls(rng, 10_000, k, delta, args.trials)
            print(f"{10_000:>7} {k:>4} {delta:>5} {c:>8.1f} {c / k:>7.3f}")
    for n_vocab in (32_000, 128_000, 150_000):
        c = mean_calls(rng, n_vocab, 50, 2.5, max(10, args.trials // 5))
        print(f"{n_vocab:>7} {50:>4} {2.5:>5} {c:>8.1f} {c / 50:>7.3f}  full scan / sieve = {n_vocab / c:.0f}x")


if __name__ == "__main__":
    main()
