import random

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from fedvgcn.paillier import encrypt
from fedvgcn.protocol.messages import (
    ACTIVE,
    HEADER,
    KIND_FORWARD,
    KIND_HIDDEN_GRAD,
    LOSS_PARTIAL_A,
    LOSS_TOTAL,
    MAGIC,
    MAT_HIDDEN,
    MAT_NEIGH,
    MAT_SELF,
    PASSIVE,
    SERVER,
    EncPartialLoss,
    EncShare,
    EncUpstreamGrad,
    MaskedEncGrad,
    MaskedPlainGrad,
    NeighborCount,
    PlainSum,
    PubKeyDist,
    WireError,
    decode_message,
    encode_message,
)

SID = b"\x01\x02\x03\x04\x05\x06\x07\x08"


def cts_fixture(pk, values):
    rng = random.Random(0)
    return [encrypt(pk, v, rng) for v in values]


def all_variants(pk):
    cts = cts_fixture(pk, [1, 2, 3])
    return [
        PubKeyDist(SID, 1, SERVER, n=pk.n, key_id=pk.key_id),
        NeighborCount(SID, 2, PASSIVE, counts=np.array([0, 3, 1, 2])),
        EncShare(
            SID, 3, ACTIVE, layer=1, kind=KIND_FORWARD, role=ACTIVE, rows=1, cols=3, cts=cts
        ),
        PlainSum(
            SID, 4, SERVER, layer=2, kind=KIND_FORWARD, rows=1, cols=3,
            values=np.array([0.5, -1.25, 3e9]),
        ),
        EncPartialLoss(SID, 5, PASSIVE, layer=0, which=LOSS_PARTIAL_A, ct=cts[0]),
        EncUpstreamGrad(
            SID, 6, ACTIVE, layer=2, rows=3, cols=1,
            support=np.array([0, 2, 5]), cts=cts,
        ),
        MaskedEncGrad(
            SID, 7, PASSIVE, layer=1, matrix=MAT_NEIGH, role=PASSIVE, scale=3,
            rows=3, cols=1, cts=cts,
        ),
        MaskedPlainGrad(
            SID, 8, SERVER, layer=0, matrix=MAT_SELF, role=ACTIVE, rows=1, cols=2,
            values=np.array([1.0, -2.0]),
        ),
    ]


class TestRoundtrip:
    def test_every_variant(self, keypair_512):
        pk, _ = keypair_512
        for msg in all_variants(pk):
            frame = encode_message(msg)
            back = decode_message(frame, pk=pk)
            assert type(back) is type(msg)
            assert back.session_id == msg.session_id
            assert back.round == msg.round
            assert back.sender == msg.sender
            for name in ("layer", "kind", "role", "which", "matrix", "scale", "rows", "cols"):
                if hasattr(msg, name):
                    assert getattr(back, name) == getattr(msg, name), name
            if hasattr(msg, "cts"):
                assert [c.value for c in back.cts] == [c.value for c in msg.cts]
            if hasattr(msg, "ct"):
                assert back.ct.value == msg.ct.value
            if hasattr(msg, "values"):
                np.testing.assert_array_equal(back.values, msg.values.ravel())
            if hasattr(msg, "counts"):
                np.testing.assert_array_equal(back.counts, msg.counts)
            if hasattr(msg, "support"):
                np.testing.assert_array_equal(back.support, msg.support)

    def test_frame_layout(self, keypair_512):
        pk, _ = keypair_512
        msg = PlainSum(SID, 9, SERVER, layer=1, kind=0, rows=1, cols=1, values=np.array([1.0]))
        frame = encode_message(msg)
        assert frame[:4] == MAGIC
        assert frame[4:12] == SID
        assert int.from_bytes(frame[12:16], "big") == 9
        assert frame[16] == SERVER
        payload_len = int.from_bytes(frame[18:22], "big")
        assert len(frame) == HEADER.size + payload_len

    def test_reals_are_little_endian_f64(self):
        msg = PlainSum(SID, 1, SERVER, layer=0, kind=0, rows=1, cols=1, values=np.array([1.5]))
        frame = encode_message(msg)
        import struct

        assert struct.pack("<d", 1.5) in frame

    def test_bad_magic_rejected(self, keypair_512):
        pk, _ = keypair_512
        frame = bytearray(encode_message(all_variants(pk)[0]))
        frame[0] = ord(b"X")
        with pytest.raises(WireError):
            decode_message(bytes(frame), pk=pk)

    def test_truncated_payload_rejected(self, keypair_512):
        pk, _ = keypair_512
        frame = encode_message(all_variants(pk)[2])
        with pytest.raises(WireError):
            decode_message(frame[:-3], pk=pk)

    def test_ciphertext_message_needs_key(self, keypair_512):
        pk, _ = keypair_512
        frame = encode_message(all_variants(pk)[2])
        with pytest.raises(WireError):
            decode_message(frame, pk=None)

    @given(
        st.lists(st.floats(allow_nan=False, allow_infinity=False, width=64), max_size=6),
        st.integers(min_value=0, max_value=2**32 - 1),
    )
    @settings(max_examples=60, deadline=None)
    def test_plain_sum_roundtrip_property(self, values, rnd):
        arr = np.asarray(values, dtype=float)
        msg = PlainSum(SID, rnd, PASSIVE, layer=3, kind=1, rows=1, cols=len(values), values=arr)
        back = decode_message(encode_message(msg))
        np.testing.assert_array_equal(back.values, arr)
