"""Wire bytes per detection session, from closed form and from a live loopback session."""
import argparse

import numpy as np

from vow import protocol, voprf
from vow.watermark import WatermarkParams


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--bytes-per-token", type=float, default=4.7)
    args = ap.parse_args()

    kp = voprf.setup(b"comm-overhead")
    params = WatermarkParams()
    rng = np.random.default_rng(0)
    print(f"{'n':>6} {'request':>8} {'response':>9} {'measured':>9} {'ratio':>6} {'ratio(v2)':>9}")
    with protocol.running_server(kp) as srv:
        for n in (1, 10, 100, 150, 500, 1000, 5000):
            tokens = rng.permutation(100_000)[: n + params.h].tolist()
            rep = protocol.client_detect(srv.endpoint, kp.pk, tokens, params, 1e-5, rng=rng)
            o = protocol.measure_overhead(n, args.bytes_per_token)
            v2 = protocol.measure_overhead(n, args.bytes_per_token, per_input_proofs=True)
            measured = rep.transcript["request_bytes"] + rep.transcript["response_bytes"]
            print(f"{n:>6} {o.request_bytes:>8} {o.response_bytes:>9} {measured:>9} {o.ratio:>6.2f} {v2.ratio:>9.2f}")


if __name__ == "__main__":
    main()
