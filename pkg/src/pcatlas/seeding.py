import hashlib

import numpy as np


def derive_seed(seed: int, tag: str) -> int:
    """Derive an independent 63-bit sub-seed from a parent seed and a stage tag."""
    digest = hashlib.blake2b(f"{int(seed)}:{tag}".encode(), digest_size=8).digest()
    return int.from_bytes(digest, "little") >> 1


def make_rng(seed: int) -> np.random.Generator:
    # Philox is counter-based, so streams do not depend on thread layout.
    return np.random.Generator(np.random.Philox(int(seed)))
