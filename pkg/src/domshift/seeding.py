"""Seed derivation: every random stream descends from one integer.

``derive_seed(seed, "shifter", "zero-shot")`` hashes the component names
together with the top-level seed (SHA-256, first 8 bytes, big-endian), so
adding a new component never perturbs the streams of existing ones.
"""

import hashlib

import numpy as np


def derive_seed(seed: int, *names) -> int:
    key = ":".join([str(int(seed))] + [str(n) for n in names]).encode()
    return int.from_bytes(hashlib.sha256(key).digest()[:8], "big") >> 1


def rng_for(seed: int, *names) -> np.random.Generator:
    return np.random.default_rng(derive_seed(seed, *names))
