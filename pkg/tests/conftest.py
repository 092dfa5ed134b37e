import random

import pytest

from fedvgcn.codec import FixedPointCodec
from fedvgcn.paillier import keygen


@pytest.fixture(scope="session")
def keypair_512():
    return keygen(512, random.Random(7), test_mode=True)


@pytest.fixture(scope="session")
def keypair_1024():
    return keygen(1024, random.Random(13))


@pytest.fixture(scope="session")
def codec_512(keypair_512):
    pk, _ = keypair_512
    return FixedPointCodec(pk.n)
