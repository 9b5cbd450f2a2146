"""Command-line front end.

Settings resolve as: command-line flag, then ``VOW_*`` environment variable,
then the ``key = value`` file named by ``--config`` / ``VOW_CONFIG``, then
built-in defaults.

``detect`` exit codes: 0 watermarked, 2 not watermarked, 3 unverified,
4 transport failure.  Any other error exits 1.
"""
from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, fields
from fractions import Fraction
from pathlib import Path

import numpy as np

from . import attack, calibration, protocol, voprf
from .detector import InsufficientTokens, Verdict, dedup_ngrams
from .model import SyntheticModel, generate, ingest_tokens, write_tokens
from .watermark import MemoOracle, WatermarkParams

EXIT_OK = 0
EXIT_ERROR = 1
EXIT_NOT_WATERMARKED = 2
EXIT_UNVERIFIED = 3
EXIT_TRANSPORT = 4

log = logging.getLogger("vow")


@dataclass
class Config:
    key: str = "vow.key"
    pub: str = "vow.pub"
    h: int = 4
    gamma: str = "1/2"
    delta: float = 2.5
    int_width: int = 64
    k: int = 50
    top_p: float = 1.0
    temp: float = 1.0
    alpha: float | None = None
    addr: str = "127.0.0.1:7878"
    seed: int | None = None
    strategy: str = "multinomial"
    vocab: int = 10_000
    zipf: float = 1.0
    noise: float = 1.0
    model_seed: int = 0
    fault: str = "none"

    @property
    def params(self) -> WatermarkParams:
        return WatermarkParams(h=self.h, gamma=Fraction(self.gamma), delta=self.delta, int_width=self.int_width)

    @property
    def model(self) -> SyntheticModel:
        return SyntheticModel(seed=self.model_seed, vocab_size=self.vocab, zipf_exponent=self.zipf,
                              noise_scale=self.noise, context_width=self.h)

    def rng(self) -> np.random.Generator:
        return np.random.default_rng(self.seed)

    def validate(self) -> None:
        self.params  # noqa: B018 - raises on bad watermark params
        if self.strategy not in ("multinomial", "topk"):
            raise ValueError(f"unknown strategy {self.strategy!r}")
        if not 1 <= self.k <= self.vocab:
            raise ValueError("k must lie in [1, vocab]")
        if not 0 < self.top_p <= 1 or not self.temp > 0:
            raise ValueError("need 0 < top_p <= 1 and temp > 0")
        if self.alpha is not None and not 0 < self.alpha < 1:
            raise ValueError("alpha must lie in (0, 1)")
        protocol.Fault(self.fault)
        self.model  # noqa: B018


_TYPES = {f.name: f.type for f in fields(Config)}


def _coerce(name: str, raw: str):
    kind = _TYPES[name]
    if "int" in kind and "float" not in kind:
        return int(raw)
    if "float" in kind:
        return float(raw)
    return raw


def read_config_file(path: str | Path) -> dict:
    out = {}
    for lineno, line in enumerate(Path(path).read_text().splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        key, sep, value = line.partition("=")
        key = key.strip().replace("-", "_")
        if not sep or key not in _TYPES:
            raise ValueError(f"{path}:{lineno}: unknown setting {key!r}")
        out[key] = _coerce(key, value.strip())
    return out


def resolve_config(args: argparse.Namespace, env=None) -> Config:
    env = os.environ if env is None else env
    merged: dict = {}
    cfg_path = getattr(args, "config", None) or env.get("VOW_CONFIG")
    if cfg_path:
        merged.update(read_config_file(cfg_path))
    for name in _TYPES:
        raw = env.get(f"VOW_{name.upper()}")
        if raw is not None:
            merged[name] = _coerce(name, raw)
    for name in _TYPES:
        val = getattr(args, name, None)
        if val is not None:
            merged[name] = val
    cfg = Config(**merged)
    cfg.validate()
    return cfg


def _effective(cfg: Config) -> dict:
    return asdict(cfg)


# -- subcommands --------------------------------------------------------------

def cmd_keygen(args, cfg: Config) -> int:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    seed = None if cfg.seed is None else f"vow-keygen:{cfg.seed}".encode()
    kp = voprf.setup(seed)
    sk_path, pk_path = out / Path(cfg.key).name, out / Path(cfg.pub).name
    voprf.write_keys(kp, sk_path, pk_path, force=args.force)
    print(json.dumps({"secret_key": str(sk_path), "public_key": str(pk_path), "pk": kp.pk.hex()}))
    return EXIT_OK


def _generate_doc(job):
    sk, params, model, length, seed, opts = job
    oracle = MemoOracle(sk, params)
    res = generate(model, oracle, params, length, np.random.default_rng(seed), **opts)
    greens = unique = 0
    if len(res.tokens) > params.h:
        recs = dedup_ngrams(res.tokens, params.h)
        greens, unique = sum(oracle.batch([r.encoded for r in recs])), len(recs)
    return res.tokens, res.trials, res.calls, greens, unique


def cmd_generate(args, cfg: Config) -> int:
    kp = voprf.load_secret_key(cfg.key)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    opts = dict(strategy=cfg.strategy, k=cfg.k, top_p=cfg.top_p, temperature=cfg.temp)
    # one seed per document keeps output independent of the worker count
    seeds = cfg.rng().integers(0, 2**63, size=args.count)
    jobs = [(kp.sk, cfg.params, cfg.model, args.length, int(s), opts) for s in seeds]
    if args.workers > 1:
        with ProcessPoolExecutor(args.workers) as pool:
            results = list(pool.map(_generate_doc, jobs))
    else:
        results = [_generate_doc(j) for j in jobs]
    trials, calls, greens, unique = [], [], 0, 0
    for i, (tokens, t, c, g, u) in enumerate(results):
        write_tokens(out / f"doc_{i:05d}.json", tokens)
        trials += t
        calls += c
        greens += g
        unique += u
    stats = {
        "documents": args.count,
        "tokens_per_document": args.length,
        "mean_trials": float(np.mean(trials)) if trials else None,
        "mean_calls": float(np.mean(calls)) if calls else None,
        "mean_calls_per_k": float(np.mean(calls)) / cfg.k if calls else None,
        "green_fraction": greens / unique if unique else None,
        "config": _effective(cfg),
    }
    print(json.dumps(stats, indent=2))
    return EXIT_OK


def cmd_serve(args, cfg: Config) -> int:
    kp = voprf.load_secret_key(cfg.key)
    srv = protocol.DetectionServer(protocol.parse_endpoint(cfg.addr), kp, fault=cfg.fault,
                                   max_batch=args.max_batch)
    host, port = srv.endpoint
    print(json.dumps({"listening": f"{host}:{port}", "pk": kp.pk.hex(), "fault": cfg.fault}), flush=True)
    try:
        srv.serve_forever()
    except KeyboardInterrupt:
        pass
    finally:
        srv.server_close()
    return EXIT_OK


def cmd_detect(args, cfg: Config) -> int:
    if cfg.alpha is None:
        raise ValueError("detect needs an explicit --alpha")
    pk = voprf.load_public_key(cfg.pub)
    tokens = ingest_tokens(args.tokens)
    rng = None if cfg.seed is None else np.random.default_rng(cfg.seed)
    try:
        report = protocol.client_detect(cfg.addr, pk, tokens, cfg.params, cfg.alpha, rng=rng)
    except protocol.TransportError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_TRANSPORT
    doc = json.loads(report.to_json())
    doc["config"] = _effective(cfg)
    print(json.dumps(doc, indent=2, sort_keys=True))
    return {Verdict.WATERMARKED: EXIT_OK, Verdict.NOT_WATERMARKED: EXIT_NOT_WATERMARKED,
            Verdict.UNVERIFIED: EXIT_UNVERIFIED}[report.verdict]


def cmd_calibrate(args, cfg: Config) -> int:
    kp = voprf.load_secret_key(cfg.key)
    alphas = args.alphas or ([cfg.alpha] if cfg.alpha else [1e-2, 1e-3])
    model = SyntheticModel(seed=cfg.model_seed, vocab_size=cfg.vocab, zipf_exponent=0.0, noise_scale=0.0)
    rep = calibration.calibrate(kp.sk, cfg.params, args.samples, args.length, model, cfg.rng(), alphas,
                                workers=args.workers)
    ks = rep.ks_pit()
    doc = {
        "samples": rep.samples,
        "ecdf": rep.ecdf(),
        "fpr": [{"alpha": r.alpha, "rejections": r.rejections, "fpr": r.fpr, "attained_size": r.expected_size,
                 "ci99": [r.ci_low, r.ci_high], "within_ci": r.within_ci} for r in rep.rows],
        "ks_pit": {"D": float(ks.statistic), "p": float(ks.pvalue),
                   "critical_1pct": rep.ks_critical(rep.samples)},
        "config": _effective(cfg),
    }
    if args.partitions:
        pr = calibration.pseudorandomness(cfg.params, args.partitions, args.partition_vocab, cfg.rng())
        doc["pseudorandomness"] = {"partitions": args.partitions, "vocab": args.partition_vocab,
                                   "ks_D": float(pr.ks.statistic), "critical_1pct": pr.ks_critical,
                                   "mean_green_fraction": float(pr.green_fractions.mean())}
    print(json.dumps(doc, indent=2))
    return EXIT_OK


def cmd_attack_cost(args, cfg: Config) -> int:
    params = attack.AttackCostParams(L=args.L, alpha=cfg.alpha or 1e-5, gamma=Fraction(cfg.gamma), s=args.s,
                                     M=args.M, bytes_per_entry=args.bytes_per_entry)
    print(attack.attack_cost(params).to_text(), end="")
    return EXIT_OK


def cmd_forge(args, cfg: Config) -> int:
    kp = voprf.load_secret_key(cfg.key)
    params, model, rng = cfg.params, cfg.model, cfg.rng()
    alpha = cfg.alpha or 1e-2
    oracle = MemoOracle(kp.sk, params)
    docs = attack.watermarked_corpus(model, oracle, params, args.corpus_tokens, args.doc_length, rng)
    cache = attack.build_cache(docs, params, oracle.batch)
    transport = protocol.LocalTransport(kp)

    def detect(tokens):
        return protocol.client_detect(transport, kp.pk, tokens, params, alpha)

    rep = attack.forge(model, cache, params, detect, rng, delta_prime=args.delta_prime, length=args.L,
                       alpha=alpha, trials=args.trials)
    print(rep.to_text(), end="")
    print(f"{'config':<20} {json.dumps(_effective(cfg), sort_keys=True)}")
    return EXIT_OK


# -- parser ----------------------------------------------------------------------

class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_ERROR, f"{self.prog}: error: {message}\n")


def _gamma(text: str) -> str:
    value = Fraction(text)
    if not 0 < value < 1:
        raise argparse.ArgumentTypeError("gamma must lie in (0, 1)")
    return f"{value.numerator}/{value.denominator}"


def build_parser() -> argparse.ArgumentParser:
    common = _Parser(add_help=False)
    g = common.add_argument_group("shared settings")
    g.add_argument("--config")
    g.add_argument("--key")
    g.add_argument("--pub")
    g.add_argument("--h", type=int)
    g.add_argument("--gamma", type=_gamma, help="green ratio as NUM/DEN")
    g.add_argument("--delta", type=float)
    g.add_argument("--k", type=int)
    g.add_argument("--top-p", dest="top_p", type=float)
    g.add_argument("--temp", type=float)
    g.add_argument("--alpha", type=float)
    g.add_argument("--addr")
    g.add_argument("--seed", type=int)
    g.add_argument("--strategy", choices=["multinomial", "topk"])
    g.add_argument("--vocab", type=int)
    g.add_argument("--zipf", type=float)
    g.add_argument("--noise", type=float)
    g.add_argument("--model-seed", dest="model_seed", type=int)
    g.add_argument("--fault", choices=[f.value for f in protocol.Fault])
    g.add_argument("-v", "--verbose", action="store_true")

    p = _Parser(prog="vow", description="Verifiable oblivious watermarking")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    s = sub.add_parser("keygen", parents=[common])
    s.add_argument("--out", default=".")
    s.add_argument("--force", action="store_true")
    s.set_defaults(func=cmd_keygen)

    s = sub.add_parser("generate", parents=[common])
    s.add_argument("--length", type=int, default=200)
    s.add_argument("--count", type=int, default=1)
    s.add_argument("--out", default="corpus")
    s.add_argument("--workers", type=int, default=1)
    s.set_defaults(func=cmd_generate)

    s = sub.add_parser("serve", parents=[common])
    s.add_argument("--max-batch", type=int, default=protocol.DEFAULT_MAX_BATCH)
    s.set_defaults(func=cmd_serve)

    s = sub.add_parser("detect", parents=[common])
    s.add_argument("tokens", help="token file (JSON integer arrays, one per line)")
    s.set_defaults(func=cmd_detect)

    s = sub.add_parser("calibrate", parents=[common])
    s.add_argument("--samples", type=int, default=1000)
    s.add_argument("--length", type=int, default=255)
    s.add_argument("--alphas", type=float, nargs="+")
    s.add_argument("--partitions", type=int, default=0, help="IsGreen chi-squared partitions (0 = skip)")
    s.add_argument("--partition-vocab", type=int, default=2000)
    s.add_argument("--workers", type=int, default=1)
    s.set_defaults(func=cmd_calibrate)

    s = sub.add_parser("attack-cost", parents=[common])
    s.add_argument("--L", type=int, default=300)
    s.add_argument("--s", type=float, default=0.4)
    s.add_argument("--M", type=float, default=1e12)
    s.add_argument("--bytes-per-entry", type=float, default=20)
    s.set_defaults(func=cmd_attack_cost)

    s = sub.add_parser("forge", parents=[common])
    s.add_argument("--corpus-tokens", type=int, default=100_000)
    s.add_argument("--doc-length", type=int, default=10_000)
    s.add_argument("--delta-prime", type=float, default=4.0)
    s.add_argument("--L", type=int, default=300)
    s.add_argument("--trials", type=int, default=100)
    s.set_defaults(func=cmd_forge)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(asctime)s %(name)s %(message)s")
    try:
        cfg = resolve_config(args)
        return args.func(args, cfg)
    except InsufficientTokens as exc:
        print(f"error: insufficient tokens: {exc}", file=sys.stderr)
    except FileExistsError as exc:
        print(f"error: {exc}", file=sys.stderr)
    except (ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
    return EXIT_ERROR


if __name__ == "__main__":
    sys.exit(main())
