"""Oblivious detection over a small binary protocol.

Messages (all integers big-endian)::

    request   "VOWD" | version:1 | n:4 | n x 32-byte blinded elements
    response  "VOWD" | version:1 | n:4 | n x 32-byte evaluated elements | proof
    error     "VOWE" | version:1 | code:4

Version 1 carries one 64-byte batch proof, version 2 one proof per element.
On a stream each message is preceded by a 4-byte length, and a connection may
carry any number of request/response exchanges.
"""
from __future__ import annotations

import enum
import hashlib
import json
import logging
import socket
import socketserver
import struct
import threading
import time
from contextlib import contextmanager
from dataclasses import asdict, dataclass, field
from typing import Callable, Iterator, Sequence

from . import group, voprf
from .detector import DetectionReport, dedup_ngrams, score
from .watermark import WatermarkParams, color_verdict

log = logging.getLogger(__name__)

MAGIC = b"VOWD"
ERROR_MAGIC = b"VOWE"
VERSION_BATCH = 1
VERSION_PER_INPUT = 2
HEADER_BYTES = 9
ELEMENT_BYTES = group.ELEMENT_BYTES
DEFAULT_MAX_BATCH = 2**16
MAX_FRAME = HEADER_BYTES + DEFAULT_MAX_BATCH * (ELEMENT_BYTES + voprf.PROOF_BYTES) + 64
_LEN = struct.Struct(">I")


class ErrorCode(enum.IntEnum):
    MALFORMED = 1
    OVERSIZED = 2
    UNSUPPORTED_VERSION = 3
    INTERNAL = 4


class Fault(str, enum.Enum):
    NONE = "none"
    FLIP_ELEMENT = "flip-element"
    WRONG_KEY = "wrong-key"
    DROP_PROOF = "drop-proof"


class ProtocolError(ValueError):
    """A message that does not parse, or a well-formed error frame."""

    def __init__(self, msg: str, code: ErrorCode = ErrorCode.MALFORMED):
        super().__init__(msg)
        self.code = code


class TransportError(OSError):
    pass


# -- wire format ---------------------------------------------------------------

def request_length(n: int) -> int:
    return HEADER_BYTES + ELEMENT_BYTES * n


def response_length(n: int, version: int = VERSION_BATCH) -> int:
    proofs = n if version == VERSION_PER_INPUT else 1
    return HEADER_BYTES + ELEMENT_BYTES * n + voprf.PROOF_BYTES * proofs


def _header(magic: bytes, version: int, n: int) -> bytes:
    return magic + bytes([version]) + n.to_bytes(4, "big")


@dataclass(frozen=True)
class DetectRequest:
    blinded: tuple[bytes, ...]
    version: int = VERSION_BATCH

    def to_bytes(self) -> bytes:
        if not self.blinded:
            raise ProtocolError("request must carry at least one element")
        return _header(MAGIC, self.version, len(self.blinded)) + b"".join(self.blinded)

    @classmethod
    def from_bytes(cls, data: bytes, max_batch: int = DEFAULT_MAX_BATCH) -> "DetectRequest":
        version, n = _parse_header(data)
        if n > max_batch:
            raise ProtocolError(f"batch of {n} exceeds limit {max_batch}", ErrorCode.OVERSIZED)
        if len(data) != request_length(n):
            raise ProtocolError(f"request length {len(data)} does not match count {n}")
        return cls(_split(data[HEADER_BYTES:], n), version)


@dataclass(frozen=True)
class DetectResponse:
    evaluated: tuple[bytes, ...]
    proof: bytes
    version: int = VERSION_BATCH

    def to_bytes(self) -> bytes:
        return _header(MAGIC, self.version, len(self.evaluated)) + b"".join(self.evaluated) + self.proof

    @classmethod
    def from_bytes(cls, data: bytes) -> "DetectResponse":
        if data[:4] == ERROR_MAGIC:
            raise decode_error(data)
        version, n = _parse_header(data)
        if len(data) != response_length(n, version):
            raise ProtocolError(f"response length {len(data)} does not match count {n}")
        body = data[HEADER_BYTES:HEADER_BYTES + ELEMENT_BYTES * n]
        return cls(_split(body, n), data[HEADER_BYTES + ELEMENT_BYTES * n:], version)

    def proofs(self) -> voprf.DleqProof | list[voprf.DleqProof]:
        """Decode the proof bytes; raises GroupError on non-canonical scalars."""
        if self.version == VERSION_PER_INPUT:
            p = voprf.PROOF_BYTES
            return [voprf.DleqProof.from_bytes(self.proof[i:i + p]) for i in range(0, len(self.proof), p)]
        return voprf.DleqProof.from_bytes(self.proof)


def _parse_header(data: bytes) -> tuple[int, int]:
    if len(data) < HEADER_BYTES or data[:4] != MAGIC:
        raise ProtocolError("bad magic or short message")
    version = data[4]
    if version not in (VERSION_BATCH, VERSION_PER_INPUT):
        raise ProtocolError(f"unsupported version {version}", ErrorCode.UNSUPPORTED_VERSION)
    n = int.from_bytes(data[5:9], "big")
    if n < 1:
        raise ProtocolError("element count must be at least 1")
    return version, n


def _split(body: bytes, n: int) -> tuple[bytes, ...]:
    return tuple(body[i * ELEMENT_BYTES:(i + 1) * ELEMENT_BYTES] for i in range(n))


def encode_error(code: ErrorCode) -> bytes:
    return ERROR_MAGIC + bytes([VERSION_BATCH]) + int(code).to_bytes(4, "big")


def decode_error(data: bytes) -> ProtocolError:
    if len(data) != HEADER_BYTES:
        return ProtocolError("malformed error frame")
    try:
        code = ErrorCode(int.from_bytes(data[5:9], "big"))
    except ValueError:
        return ProtocolError("unknown error code")
    return ProtocolError(f"server reported {code.name.lower()}", code)


# -- stream framing ------------------------------------------------------------

def send_frame(sock: socket.socket, payload: bytes) -> None:
    sock.sendall(_LEN.pack(len(payload)) + payload)


def _recv_exact(sock: socket.socket, n: int) -> bytes:
    buf = bytearray()
    while len(buf) < n:
        chunk = sock.recv(min(n - len(buf), 1 << 20))
        if not chunk:
            raise EOFError("connection closed mid-frame" if buf else "connection closed")
        buf += chunk
    return bytes(buf)


def recv_frame(sock: socket.socket, limit: int = MAX_FRAME) -> bytes:
    (size,) = _LEN.unpack(_recv_exact(sock, 4))
    if size > limit:
        raise ProtocolError(f"frame of {size} bytes exceeds limit", ErrorCode.OVERSIZED)
    return _recv_exact(sock, size)


# -- server --------------------------------------------------------------------

def handle_request(
    keypair: voprf.KeyPair,
    data: bytes,
    fault: Fault | str = Fault.NONE,
    max_batch: int = DEFAULT_MAX_BATCH,
    rng=None,
) -> bytes:
    """Turn one request message into one response (or error) message."""
    fault = Fault(fault)
    try:
        req = DetectRequest.from_bytes(data, max_batch)
        for b in req.blinded:
            group.decode_element(b)
    except ProtocolError as exc:
        return encode_error(exc.code)
    except group.GroupError:
        return encode_error(ErrorCode.MALFORMED)

    per_input = req.version == VERSION_PER_INPUT
    signer = keypair
    if fault is Fault.WRONG_KEY:
        signer = voprf.setup(b"wrong-key:" + keypair.pk)
    evaluated, proof = voprf.blind_evaluate_batch(signer, req.blinded, per_input_proofs=per_input, rng=rng)
    if fault is Fault.FLIP_ELEMENT:
        # still a valid group element, so only the proof can catch it
        i = len(evaluated) // 2
        evaluated[i] = group.add(evaluated[i], group.GENERATOR)
    if fault is Fault.DROP_PROOF:
        proof_bytes = b""
    elif per_input:
        proof_bytes = b"".join(p.to_bytes() for p in proof)
    else:
        proof_bytes = proof.to_bytes()
    return DetectResponse(tuple(evaluated), proof_bytes, req.version).to_bytes()


class _Handler(socketserver.BaseRequestHandler):
    def handle(self):
        srv: DetectionServer = self.server  # type: ignore[assignment]
        sock = self.request
        while True:
            try:
                data = recv_frame(sock, srv.frame_limit)
            except EOFError:
                return
            except ProtocolError as exc:
                send_frame(sock, encode_error(exc.code))
                return
            except OSError:
                return
            t0 = time.perf_counter()
            try:
                reply = handle_request(srv.keypair, data, srv.fault, srv.max_batch)
            except Exception:  # pragma: no cover - defensive
                log.exception("internal error")
                reply = encode_error(ErrorCode.INTERNAL)
            n = int.from_bytes(data[5:9], "big") if len(data) >= HEADER_BYTES else 0
            log.info("n=%d %.1f ms", n, 1e3 * (time.perf_counter() - t0))
            try:
                send_frame(sock, reply)
            except OSError:
                return


class DetectionServer(socketserver.ThreadingTCPServer):
    daemon_threads = True
    allow_reuse_address = True

    def __init__(self, address, keypair: voprf.KeyPair, fault: Fault | str = Fault.NONE,
                 max_batch: int = DEFAULT_MAX_BATCH):
        self.keypair = keypair
        self.fault = Fault(fault)
        self.max_batch = max_batch
        self.frame_limit = HEADER_BYTES + max_batch * ELEMENT_BYTES
        super().__init__(address, _Handler)

    @property
    def endpoint(self) -> tuple[str, int]:
        host, port = self.server_address[:2]
        return host, port


def parse_endpoint(addr: str | tuple[str, int]) -> tuple[str, int]:
    if isinstance(addr, tuple):
        return addr
    host, sep, port = addr.rpartition(":")
    if not sep:
        raise ValueError(f"address {addr!r} is not host:port")
    return host or "127.0.0.1", int(port)


@contextmanager
def running_server(keypair: voprf.KeyPair, addr="127.0.0.1:0", **kw) -> Iterator[DetectionServer]:
    """Serve in a background thread for the duration of the block."""
    srv = DetectionServer(parse_endpoint(addr), keypair, **kw)
    thread = threading.Thread(target=srv.serve_forever, daemon=True)
    thread.start()
    try:
        yield srv
    finally:
        srv.shutdown()
        srv.server_close()
        thread.join()


# -- client --------------------------------------------------------------------

class Connection:
    """Keep-alive client connection; ``roundtrip`` sends one message, returns one."""

    def __init__(self, endpoint, timeout: float = 60.0):
        self.endpoint = parse_endpoint(endpoint)
        try:
            self.sock = socket.create_connection(self.endpoint, timeout=timeout)
        except OSError as exc:
            raise TransportError(f"cannot connect to {self.endpoint[0]}:{self.endpoint[1]}: {exc}") from exc

    def roundtrip(self, payload: bytes) -> bytes:
        try:
            send_frame(self.sock, payload)
            return recv_frame(self.sock)
        except (OSError, EOFError) as exc:
            raise TransportError(f"transport failure: {exc}") from exc

    def close(self):
        self.sock.close()

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()


class LocalTransport:
    """In-process stand-in for :class:`Connection` (no sockets)."""

    def __init__(self, keypair: voprf.KeyPair, fault: Fault | str = Fault.NONE,
                 max_batch: int = DEFAULT_MAX_BATCH):
        self.keypair, self.fault, self.max_batch = keypair, Fault(fault), max_batch

    def roundtrip(self, payload: bytes) -> bytes:
        return handle_request(self.keypair, payload, self.fault, self.max_batch)

    def close(self):
        pass

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        pass


@dataclass
class SessionTranscript:
    request_sha256: str
    response_sha256: str
    pk: str
    timestamp: float
    outcome: str
    n: int = 0
    request_bytes: int = 0
    response_bytes: int = 0
    chunks: int = 0

    def digest(self) -> str:
        return hashlib.sha256(json.dumps(asdict(self), sort_keys=True).encode()).hexdigest()


class _Hasher:
    """Hash of a sequence of messages, each prefixed with its length."""

    def __init__(self):
        self.h = hashlib.sha256()
        self.total = 0

    def update(self, msg: bytes):
        self.h.update(_LEN.pack(len(msg)) + msg)
        self.total += len(msg)

    def hexdigest(self):
        return self.h.hexdigest()


class Unverified(Exception):
    def __init__(self, reason: str):
        super().__init__(reason)
        self.reason = reason


@dataclass
class EvaluationResult:
    outputs: list[bytes] | None
    transcript: SessionTranscript
    error: str | None = None

    @property
    def verified(self) -> bool:
        return self.outputs is not None


def oblivious_evaluate(
    transport,
    pk: bytes,
    inputs: Sequence[bytes],
    rng=None,
    chunk: int = DEFAULT_MAX_BATCH,
    per_input_proofs: bool = False,
) -> EvaluationResult:
    """Blind, send, verify and finalize ``inputs`` over ``transport``.

    Response problems (bad framing, count mismatch, failed proof, error
    frames) are reported as an unverified result.  Transport failures raise
    :class:`TransportError`.
    """
    if not inputs:
        raise ValueError("nothing to evaluate")
    version = VERSION_PER_INPUT if per_input_proofs else VERSION_BATCH
    req_hash, resp_hash = _Hasher(), _Hasher()
    outputs: list[bytes] = []
    error = None
    chunks = 0
    for start in range(0, len(inputs), chunk):
        states = [voprf.blind(x, rng) for x in inputs[start:start + chunk]]
        req = DetectRequest(tuple(s.blinded for s in states), version).to_bytes()
        req_hash.update(req)
        resp = transport.roundtrip(req)
        resp_hash.update(resp)
        chunks += 1
        try:
            outputs.extend(_verify_chunk(pk, states, resp, version))
        except Unverified as exc:
            error = exc.reason
            break
    transcript = SessionTranscript(
        request_sha256=req_hash.hexdigest(), response_sha256=resp_hash.hexdigest(), pk=pk.hex(),
        timestamp=time.time(), outcome="verified" if error is None else f"unverified: {error}",
        n=len(inputs), request_bytes=req_hash.total, response_bytes=resp_hash.total, chunks=chunks)
    return EvaluationResult(outputs if error is None else None, transcript, error)


def _verify_chunk(pk, states, resp: bytes, version: int) -> list[bytes]:
    try:
        parsed = DetectResponse.from_bytes(resp)
    except ProtocolError as exc:
        raise Unverified(f"malformed response: {exc}") from None
    if parsed.version != version:
        raise Unverified("response version does not match request")
    if len(parsed.evaluated) != len(states):
        raise Unverified("count mismatch")
    try:
        proofs = parsed.proofs()
    except group.GroupError as exc:
        raise Unverified(f"malformed proof: {exc}") from None
    try:
        return voprf.verify_and_finalize(pk, states, list(parsed.evaluated), proofs)
    except voprf.VerificationError as exc:
        raise Unverified(f"proof rejected: {exc}") from None
    except group.GroupError as exc:
        raise Unverified(f"proof rejected: {exc}") from None


def client_detect(
    endpoint,
    pk: bytes,
    tokens: Sequence[int],
    params: WatermarkParams,
    alpha: float,
    rng=None,
    chunk: int = DEFAULT_MAX_BATCH,
    per_input_proofs: bool = False,
) -> DetectionReport:
    """Run the full detection session against ``endpoint``.

    ``endpoint`` is ``host:port``, a ``(host, port)`` tuple, or any object with
    a ``roundtrip(bytes) -> bytes`` method.
    """
    records = dedup_ngrams(tokens, params.h)
    inputs = [r.encoded for r in records]
    owned = not hasattr(endpoint, "roundtrip")
    transport = Connection(endpoint) if owned else endpoint
    try:
        res = oblivious_evaluate(transport, pk, inputs, rng, chunk, per_input_proofs)
    finally:
        if owned:
            transport.close()
    evidence = asdict(res.transcript)
    digest = res.transcript.digest()
    if not res.verified:
        return DetectionReport(n_unique=len(records), g_green=None, p_value=None, params=params,
                               verified=False, alpha=alpha, transcript_hash=digest,
                               error=res.error, transcript=evidence)
    greens = [color_verdict(y, params.gamma, params.int_width).is_green for y in res.outputs]
    return score(greens, params, alpha, transcript_hash=digest, transcript=evidence)


def protocol_oracle(transport, pk: bytes, params: WatermarkParams, rng=None) -> Callable[[Sequence[bytes]], list[bool]]:
    """Batch color classifier backed by the protocol; raises on unverified sessions."""

    def classify(inputs: Sequence[bytes]) -> list[bool]:
        res = oblivious_evaluate(transport, pk, list(inputs), rng)
        if not res.verified:
            raise voprf.VerificationError(res.error)
        return [color_verdict(y, params.gamma, params.int_width).is_green for y in res.outputs]

    return classify


# -- communication accounting ---------------------------------------------------

@dataclass(frozen=True)
class Overhead:
    n: int
    request_bytes: int
    response_bytes: int
    text_bytes: float
    per_input_proofs: bool = False

    @property
    def total_bytes(self) -> int:
        return self.request_bytes + self.response_bytes

    @property
    def framing_bytes(self) -> int:
        return 2 * HEADER_BYTES

    @property
    def ratio(self) -> float:
        return self.total_bytes / self.text_bytes


def measure_overhead(n: int, bytes_per_token: float = 4.7, per_input_proofs: bool = False) -> Overhead:
    """Protocol bytes for ``n`` unique n-grams against ``n * bytes_per_token`` of text."""
    if n < 1:
        raise ValueError("n must be at least 1")
    version = VERSION_PER_INPUT if per_input_proofs else VERSION_BATCH
    return Overhead(n, request_length(n), response_length(n, version), n * bytes_per_token, per_input_proofs)
