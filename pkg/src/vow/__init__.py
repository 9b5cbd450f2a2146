"""Verifiable oblivious green/red watermarking over a ristretto255 VOPRF."""
from .detector import DetectionReport, InsufficientTokens, Verdict, binom_sf_exact, dedup_ngrams
from .voprf import KeyPair, VerificationError, setup
from .watermark import WatermarkParams

__all__ = [
    "DetectionReport",
    "InsufficientTokens",
    "KeyPair",
    "Verdict",
    "VerificationError",
    "WatermarkParams",
    "binom_sf_exact",
    "dedup_ngrams",
    "setup",
]

__version__ = "0.1.0"
