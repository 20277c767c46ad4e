"""Child-seed derivation.

``derive_seed(master, name, index)`` is the first 8 bytes (big-endian) of
``sha256(f"{master}/{name}/{index}")``. Every random stream in the package is
seeded this way from one master seed, so no wall-clock entropy is ever used.
"""
import hashlib

import numpy as np


def derive_seed(master, name, index=0):
    key = f"{int(master)}/{name}/{int(index)}".encode()
    return int.from_bytes(hashlib.sha256(key).digest()[:8], "big")


def rng_for(master, name, index=0):
    return np.random.Generator(np.random.PCG64(derive_seed(master, name, index)))
