import os
import subprocess
import sys

import pytest

from fedvgcn import _modmath


def test_powmod_matches_builtin():
    for base, exp, mod in ((2, 10, 1000), (12345, 678, 99991), (3, 0, 7)):
        assert _modmath.powmod(base, exp, mod) == pow(base, exp, mod)


def test_negative_exponent():
    assert _modmath.powmod(3, -1, 7) == pow(3, -1, 7)
    assert _modmath.powmod(10, -2, 97) == pow(10, -2, 97)


def test_invert():
    assert _modmath.invert(3, 7) * 3 % 7 == 1
    assert _modmath.invert(12345, 99991) * 12345 % 99991 == 1


def test_next_prime_small_values():
    assert _modmath.next_prime(1) == 2
    assert _modmath.next_prime(2) == 3
    assert _modmath.next_prime(13) == 17
    assert _modmath.next_prime(2**31) == 2**31 + 11


_CROSS_SCRIPT = """
import random
from fedvgcn import _modmath
from fedvgcn.paillier import keygen, encrypt, decrypt
assert _modmath.BACKEND == "python", _modmath.BACKEND
pk, sk = keygen(512, random.Random(7), test_mode=True)
ct = encrypt(pk, 123456789, random.Random(42))
assert decrypt(sk, ct) == 123456789
print(pk.n)
print(ct.value)
"""


@pytest.mark.skipif(not _modmath.USING_GMPY2, reason="cross-backend check needs gmpy2 active")
def test_pure_backend_produces_identical_keys_and_ciphertexts(keypair_512):
    """Keygen and encryption are bit-identical across backends for the same seeds."""
    import random

    from fedvgcn.paillier import encrypt

    env = dict(os.environ, FEDVGCN_PURE_PYTHON="1")
    out = subprocess.run(
        [sys.executable, "-c", _CROSS_SCRIPT], capture_output=True, text=True, env=env
    )
    assert out.returncode == 0, out.stderr
    pure_n, pure_ct = (int(line) for line in out.stdout.split())
    pk, _ = keypair_512
    assert pk.n == pure_n
    assert encrypt(pk, 123456789, random.Random(42)).value == pure_ct
