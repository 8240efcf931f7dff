"""Named random sub-streams hanging off a single u64 run seed."""
from __future__ import annotations

import hashlib
import zlib

import numpy as np

U64 = (1 << 64) - 1


def check_seed(seed: int) -> int:
    seed = int(seed)
    if not 0 <= seed <= U64:
        raise ValueError("seed must be an unsigned 64-bit integer")
    return seed


def substream(seed: int, name: str, *index: int) -> np.random.Generator:
    """Independent generator for ``(seed, name, *index)``.

    Different names or indices give statistically independent streams, and
    the mapping is stable because it goes through ``SeedSequence``.
    """
    tag = zlib.crc32(name.encode("utf-8"))
    ss = np.random.SeedSequence(entropy=check_seed(seed), spawn_key=(tag, *map(int, index)))
    return np.random.Generator(np.random.PCG64(ss))


def derive_seed(seed: int, name: str, *index: int) -> int:
    """A fresh u64 seed drawn from a named sub-stream."""
    return int(substream(seed, name, *index).integers(0, U64, dtype=np.uint64, endpoint=True))


def master_seed(seed: int) -> bytes:
    """32-byte PRC master seed for the ``key`` sub-stream of ``seed``."""
    return hashlib.sha256(b"keygen" + check_seed(seed).to_bytes(8, "little")).digest()
