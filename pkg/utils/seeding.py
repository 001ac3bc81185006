"""
Seed derivation
Replication seeds are hashed from (master seed, scenario id, replication)
"""
import hashlib

import numpy as np


def derive_seed(master_seed: int, scenario_id: str, rep: int) -> int:
    """
    Derive a 64-bit seed for one replication

    Args:
        master_seed: run-level seed
        scenario_id: stable text id of the scenario (including n when it varies)
        rep: replication index

    Returns:
        Unsigned 64-bit integer, identical on every platform
    """
    digest = hashlib.blake2b(
        f"{int(master_seed)}|{scenario_id}|{int(rep)}".encode('utf-8'),
        digest_size=8,
    ).digest()
    return int.from_bytes(digest, 'little')


def make_rng(seed: int) -> np.random.Generator:
    """Counter-based generator for a derived seed"""
    return np.random.Generator(np.random.Philox(int(seed) % (1 << 64)))


def spawn_seeds(seed: int, count: int) -> list:
    """Independent child seeds for sub-tasks of one replication"""
    return [derive_seed(seed, 'child', i) for i in range(count)]
