"""Protocol message schema and byte-exact wire encoding.

Frame layout (all multi-byte integers big-endian unless noted):

    magic "FVG1" | session_id (8) | round (4) | sender_role (1)
    | variant_tag (1) | payload_len (4) | payload

Ciphertext vectors encode as a 4-byte count followed by length-prefixed
big-endian big integers. Plaintext reals are 64-bit little-endian IEEE
floats. Matrix-shaped payloads carry explicit (rows, cols) headers so a
receiver never has to infer shapes from context.
"""

import struct
from dataclasses import dataclass, fields
from typing import List, Optional, Tuple

import numpy as np

from ..paillier import Ciphertext, PublicKey, int_from_lp_bytes, int_to_lp_bytes

MAGIC = b"FVG1"
HEADER = struct.Struct(">4s8sIBBI")  # magic, session, round, sender, tag, payload_len

# roles
PASSIVE, ACTIVE, SERVER = 0, 1, 2
ROLE_NAMES = {PASSIVE: "A", ACTIVE: "B", SERVER: "C"}

# EncShare / PlainSum kinds
KIND_FORWARD = 0
KIND_HIDDEN_GRAD = 1

# MaskedEncGrad / MaskedPlainGrad matrix ids
MAT_SELF = 0
MAT_NEIGH = 1
MAT_HIDDEN = 2

# EncPartialLoss which
LOSS_PARTIAL_A = 0
LOSS_TOTAL = 1


class WireError(ValueError):
    """Malformed frame or payload."""


@dataclass
class Envelope:
    session_id: bytes
    round: int
    sender: int


@dataclass
class PubKeyDist(Envelope):
    n: int
    key_id: bytes


@dataclass
class NeighborCount(Envelope):
    counts: np.ndarray  # per aligned node, u32


@dataclass
class EncShare(Envelope):
    layer: int
    kind: int
    role: int
    rows: int
    cols: int
    cts: List[Ciphertext]


@dataclass
class PlainSum(Envelope):
    layer: int
    kind: int
    rows: int
    cols: int
    values: np.ndarray


@dataclass
class EncPartialLoss(Envelope):
    layer: int
    which: int
    ct: Ciphertext


@dataclass
class EncUpstreamGrad(Envelope):
    layer: int
    rows: int
    cols: int
    support: np.ndarray  # row indices that may be non-zero
    cts: List[Ciphertext]


@dataclass
class MaskedEncGrad(Envelope):
    layer: int
    matrix: int
    role: int
    scale: int  # 1 = codec scale, 2 = one scalar product pending rescale
    rows: int
    cols: int
    cts: List[Ciphertext]


@dataclass
class MaskedPlainGrad(Envelope):
    layer: int
    matrix: int
    role: int
    rows: int
    cols: int
    values: np.ndarray


_TAGS = {
    PubKeyDist: 1,
    NeighborCount: 2,
    EncShare: 3,
    PlainSum: 4,
    EncPartialLoss: 5,
    EncUpstreamGrad: 6,
    MaskedEncGrad: 7,
    MaskedPlainGrad: 8,
}
_BY_TAG = {tag: cls for cls, tag in _TAGS.items()}


def _pack_cts(cts: List[Ciphertext]) -> bytes:
    out = [struct.pack(">I", len(cts))]
    out.extend(int_to_lp_bytes(ct.value) for ct in cts)
    return b"".join(out)


def _unpack_cts(buf: bytes, offset: int, pk: PublicKey) -> Tuple[List[Ciphertext], int]:
    (count,) = struct.unpack_from(">I", buf, offset)
    offset += 4
    cts = []
    for _ in range(count):
        value, offset = int_from_lp_bytes(buf, offset)
        cts.append(Ciphertext(value, pk.key_id, pk))
    return cts, offset


def _pack_f64(values: np.ndarray) -> bytes:
    flat = np.ascontiguousarray(values, dtype="<f8").ravel()
    return struct.pack(">I", flat.size) + flat.tobytes()


def _unpack_f64(buf: bytes, offset: int) -> Tuple[np.ndarray, int]:
    (count,) = struct.unpack_from(">I", buf, offset)
    offset += 4
    end = offset + 8 * count
    if len(buf) < end:
        raise WireError("truncated float vector")
    return np.frombuffer(buf[offset:end], dtype="<f8").copy(), end


def _pack_u32s(values: np.ndarray) -> bytes:
    flat = np.ascontiguousarray(values, dtype=">u4").ravel()
    return struct.pack(">I", flat.size) + flat.tobytes()


def _unpack_u32s(buf: bytes, offset: int) -> Tuple[np.ndarray, int]:
    (count,) = struct.unpack_from(">I", buf, offset)
    offset += 4
    end = offset + 4 * count
    if len(buf) < end:
        raise WireError("truncated u32 vector")
    return np.frombuffer(buf[offset:end], dtype=">u4").astype(np.int64), end


def encode_message(msg: Envelope) -> bytes:
    tag = _TAGS.get(type(msg))
    if tag is None:
        raise WireError(f"unknown message type {type(msg).__name__}")
    if isinstance(msg, PubKeyDist):
        payload = int_to_lp_bytes(msg.n) + msg.key_id
    elif isinstance(msg, NeighborCount):
        payload = _pack_u32s(msg.counts)
    elif isinstance(msg, EncShare):
        payload = struct.pack(">BBBII", msg.layer, msg.kind, msg.role, msg.rows, msg.cols)
        payload += _pack_cts(msg.cts)
    elif isinstance(msg, PlainSum):
        payload = struct.pack(">BBII", msg.layer, msg.kind, msg.rows, msg.cols)
        payload += _pack_f64(msg.values)
    elif isinstance(msg, EncPartialLoss):
        payload = struct.pack(">BB", msg.layer, msg.which) + int_to_lp_bytes(msg.ct.value)
    elif isinstance(msg, EncUpstreamGrad):
        payload = struct.pack(">BII", msg.layer, msg.rows, msg.cols)
        payload += _pack_u32s(msg.support) + _pack_cts(msg.cts)
    elif isinstance(msg, MaskedEncGrad):
        payload = struct.pack(
            ">BBBBII", msg.layer, msg.matrix, msg.role, msg.scale, msg.rows, msg.cols
        )
        payload += _pack_cts(msg.cts)
    elif isinstance(msg, MaskedPlainGrad):
        payload = struct.pack(">BBBII", msg.layer, msg.matrix, msg.role, msg.rows, msg.cols)
        payload += _pack_f64(msg.values)
    else:  # pragma: no cover
        raise WireError(f"no encoder for {type(msg).__name__}")
    header = HEADER.pack(MAGIC, msg.session_id, msg.round, msg.sender, tag, len(payload))
    return header + payload


def decode_message(frame: bytes, pk: Optional[PublicKey] = None) -> Envelope:
    if len(frame) < HEADER.size:
        raise WireError("frame shorter than header")
    magic, session_id, rnd, sender, tag, payload_len = HEADER.unpack_from(frame, 0)
    if magic != MAGIC:
        raise WireError(f"bad magic {magic!r}")
    payload = frame[HEADER.size :]
    if len(payload) != payload_len:
        raise WireError(f"payload length mismatch: {len(payload)} != {payload_len}")
    cls = _BY_TAG.get(tag)
    if cls is None:
        raise WireError(f"unknown variant tag {tag}")
    env = dict(session_id=session_id, round=rnd, sender=sender)

    if cls is PubKeyDist:
        n, off = int_from_lp_bytes(payload, 0)
        key_id = payload[off : off + 8]
        if len(key_id) != 8:
            raise WireError("truncated key id")
        return PubKeyDist(n=n, key_id=key_id, **env)

    if cls is not PubKeyDist and cls in (EncShare, EncPartialLoss, EncUpstreamGrad, MaskedEncGrad):
        if pk is None:
            raise WireError(f"{cls.__name__} needs a public key to decode ciphertexts")

    if cls is NeighborCount:
        counts, _ = _unpack_u32s(payload, 0)
        return NeighborCount(counts=counts, **env)
    if cls is EncShare:
        layer, kind, role, rows, cols = struct.unpack_from(">BBBII", payload, 0)
        cts, _ = _unpack_cts(payload, 11, pk)
        return EncShare(layer=layer, kind=kind, role=role, rows=rows, cols=cols, cts=cts, **env)
    if cls is PlainSum:
        layer, kind, rows, cols = struct.unpack_from(">BBII", payload, 0)
        values, _ = _unpack_f64(payload, 10)
        return PlainSum(layer=layer, kind=kind, rows=rows, cols=cols, values=values, **env)
    if cls is EncPartialLoss:
        layer, which = struct.unpack_from(">BB", payload, 0)
        value, _ = int_from_lp_bytes(payload, 2)
        ct = Ciphertext(value, pk.key_id, pk)
        return EncPartialLoss(layer=layer, which=which, ct=ct, **env)
    if cls is EncUpstreamGrad:
        layer, rows, cols = struct.unpack_from(">BII", payload, 0)
        support, off = _unpack_u32s(payload, 9)
        cts, _ = _unpack_cts(payload, off, pk)
        return EncUpstreamGrad(layer=layer, rows=rows, cols=cols, support=support, cts=cts, **env)
    if cls is MaskedEncGrad:
        layer, matrix, role, scale, rows, cols = struct.unpack_from(">BBBBII", payload, 0)
        cts, _ = _unpack_cts(payload, 12, pk)
        return MaskedEncGrad(
            layer=layer, matrix=matrix, role=role, scale=scale, rows=rows, cols=cols, cts=cts, **env
        )
    if cls is MaskedPlainGrad:
        layer, matrix, role, rows, cols = struct.unpack_from(">BBBII", payload, 0)
        values, _ = _unpack_f64(payload, 11)
        return MaskedPlainGrad(
            layer=layer, matrix=matrix, role=role, rows=rows, cols=cols, values=values, **env
        )
    raise WireError(f"no decoder for tag {tag}")  # pragma: no cover


def message_fields(msg: Envelope) -> dict:
    return {f.name: getattr(msg, f.name) for f in fields(msg)}
