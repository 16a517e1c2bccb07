"""Named, reproducible seed streams fanned out from one master seed."""

import hashlib

import numpy as np


def seed_for(master_seed, name):
    """Derive a stable 63-bit sub-seed for a named stream.

    Uses sha256 so the fan-out is identical across platforms and Python
    hash randomization.
    """
    digest = hashlib.sha256(f"{int(master_seed)}:{name}".encode()).digest()
    return int.from_bytes(digest[:8], "big") >> 1


def rng_for(master_seed, name):
    """Generator for a named stream; independent streams per name."""
    return np.random.default_rng(seed_for(master_seed, name))
