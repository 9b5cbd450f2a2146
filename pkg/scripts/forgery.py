"""Cache-replay forgery against a key the attacker never sees."""
import argparse
import time

import numpy as np

from vow import attack, protocol, voprf
from vow.model import SyntheticModel
from vow.watermark import MemoOracle, WatermarkParams


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--corpus-tokens", type=int, default=10**6)
    ap.add_argument("--doc-length", type=int, default=10_000)
    ap.add_argument("--vocab", type=int, default=10_000)
    ap.add_argument("--delta-prime", type=float, default=4.0)
    ap.add_argument("--L", type=int, default=300)
    ap.add_argument("--alpha", type=float, default=1e-2)
    ap.add_argument("--trials", type=int, default=500)
    ap.add_argument("--seed", type=int, default=9)
    ap.add_argument("--save-cache")
    args = ap.parse_args()

    kp = voprf.setup(f"forgery:{args.seed}".encode())
    params = WatermarkParams()
    rng = np.random.default_rng(args.seed)
    model = SyntheticModel(seed=args.seed, vocab_size=args.vocab)
    memo = MemoOracle(kp.sk, params)
    t0 = time.perf_counter()
    corpus = attack.watermarked_corpus(model, memo, params, args.corpus_tokens, args.doc_length, rng)
    cache = attack.build_cache(corpus, params, memo.batch)
    print(f"corpus_build_s       {time.perf_counter() - t0:.0f}")
    if args.save_cache:
        cache.save(args.save_cache)
    transport = protocol.LocalTransport(kp)

    def detect(tokens):
        return protocol.client_detect(transport, kp.pk, tokens, params, args.alpha, rng=rng)

    rep = attack.forge(model, cache, params, detect, rng, args.delta_prime, args.L, args.alpha, args.trials)
    print(rep.to_text(), end="")


if __name__ == "__main__":
    main()
