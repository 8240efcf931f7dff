"""Keyed pseudorandom streams for key derivation.

Output is BLAKE2b in counter mode keyed by the 32-byte master seed, so key
material is bit-exact across platforms and numpy versions.
"""
from __future__ import annotations

import hashlib
import struct

import numpy as np

_BLOCK = 64


class KeyedStream:
    """Deterministic byte stream for ``(master_seed, frame_index, purpose, retry)``."""

    def __init__(self, master_seed: bytes, frame_index: int, purpose: str, retry: int = 0):
        if len(master_seed) != 32:
            raise ValueError("master seed must be 32 bytes")
        tag = purpose.encode("ascii")
        if len(tag) > 16:
            raise ValueError("purpose tag longer than 16 bytes")
        self._key = bytes(master_seed)
        self._person = tag.ljust(16, b"\0")
        self._prefix = struct.pack("<II", frame_index, retry)
        self._counter = 0
        self._buf = b""
        self._words: list[int] = []

    def _block(self) -> bytes:
        h = hashlib.blake2b(
            self._prefix + struct.pack("<Q", self._counter),
            key=self._key,
            person=self._person,
            digest_size=_BLOCK,
        )
        self._counter += 1
        return h.digest()

    def read(self, nbytes: int) -> bytes:
        while len(self._buf) < nbytes:
            self._buf += self._block()
        out, self._buf = self._buf[:nbytes], self._buf[nbytes:]
        return out

    def bits(self, n: int) -> np.ndarray:
        raw = np.frombuffer(self.read((n + 7) // 8), dtype=np.uint8)
        return np.unpackbits(raw, bitorder="little")[:n].copy()

    def _word(self) -> int:
        if not self._words:
            self._words = list(struct.unpack("<16I", self.read(_BLOCK)))
        return self._words.pop()

    def randbelow(self, bound: int) -> int:
        """Uniform integer in [0, bound) by rejection on 32-bit words."""
        if not 0 < bound <= 1 << 32:
            raise ValueError("bound out of range")
        limit = (1 << 32) - ((1 << 32) % bound)
        while True:
            w = self._word()
            if w < limit:
                return w % bound

    def shuffle(self, items: list) -> None:
        for i in range(len(items) - 1, 0, -1):
            j = self.randbelow(i + 1)
            items[i], items[j] = items[j], items[i]
