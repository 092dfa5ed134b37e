"""Compare the gmpy2-backed modular kernels against the pure-Python fallback.

Usage: python benchmarks/bench_backends.py [--rounds N]

The backend is fixed at import time, so this script measures the current
process's backend and then re-executes itself with FEDVGCN_PURE_PYTHON=1 to
collect the fallback numbers, printing both side by side.
"""

import argparse
import json
import os
import random
import subprocess
import sys
import time

from fedvgcn import _modmath
from fedvgcn.codec import FixedPointCodec
from fedvgcn.paillier import ObfuscatorPool, add_ct, decrypt, encrypt, keygen, mul_scalar_signed


def measure(rounds: int) -> dict:
    timings = {}

    t0 = time.time()
    pk, sk = keygen(512, random.Random(7), test_mode=True)
    timings["keygen_512_ms"] = (time.time() - t0) * 1e3

    codec = FixedPointCodec(pk.n)
    rng = random.Random(1)
    plains = [rng.randrange(pk.n) for _ in range(rounds)]

    t0 = time.time()
    cts = [encrypt(pk, m, rng) for m in plains]
    timings["encrypt_us"] = (time.time() - t0) / rounds * 1e6

    pool = ObfuscatorPool(pk, random.Random(2), size=128)
    t0 = time.time()
    pooled = [encrypt(pk, m, rng, obfuscator=pool.draw(rng)) for m in plains]
    timings["encrypt_pooled_us"] = (time.time() - t0) / rounds * 1e6

    t0 = time.time()
    for ct, m in zip(cts, plains):
        assert decrypt(sk, ct) == m
    timings["decrypt_us"] = (time.time() - t0) / rounds * 1e6

    t0 = time.time()
    for x, y in zip(cts, pooled):
        add_ct(x, y)
    timings["add_ct_us"] = (time.time() - t0) / rounds * 1e6

    scalar = codec.to_signed(codec.encode(0.37))
    t0 = time.time()
    for ct in cts:
        mul_scalar_signed(ct, scalar)
    timings["mul_scalar_us"] = (time.time() - t0) / rounds * 1e6
    return timings


def main() -> int:
    parser = argparse.ArgumentParser()
    parser.add_argument("--rounds", type=int, default=300)
    parser.add_argument("--emit-json", action="store_true", help=argparse.SUPPRESS)
    args = parser.parse_args()

    mine = measure(args.rounds)
    if args.emit_json:
        print(json.dumps(mine))
        return 0

    print(f"active backend: {_modmath.BACKEND}")
    other = None
    if _modmath.USING_GMPY2:
        env = dict(os.environ, FEDVGCN_PURE_PYTHON="1")
        out = subprocess.run(
            [sys.executable, __file__, "--rounds", str(args.rounds), "--emit-json"],
            capture_output=True, text=True, env=env,
        )
        if out.returncode == 0:
            other = json.loads(out.stdout)
        else:
            print("(pure-python pass failed:", out.stderr.strip()[:200], ")")

    header = f"{'operation':24s} {'gmpy2':>12s} {'python':>12s} {'speedup':>9s}"
    print(header)
    print("-" * len(header))
    for key, value in mine.items():
        unit = "ms" if key.endswith("_ms") else "us"
        label = key.rsplit("_", 1)[0]
        if other:
            ratio = other[key] / value if value else float("inf")
            print(f"{label:24s} {value:10.1f}{unit} {other[key]:10.1f}{unit} {ratio:8.1f}x")
        else:
            print(f"{label:24s} {value:10.1f}{unit} {'-':>12s} {'-':>9s}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
