"""Non-blind baseline: ChaCha20 keystream over a bit-repetition code.

Each generated video gets its own stream key; template bits are the keystream
XOR the message repeated to fill every frame. Extraction has to scan a
database of every video ever generated and try all frame alignments.
"""
from __future__ import annotations

import hashlib
import struct
from dataclasses import dataclass, field

import numpy as np
from cryptography.hazmat.primitives.ciphers import Cipher, algorithms


def keystream_bits(key: bytes, frame: int, nbits: int) -> np.ndarray:
    """ChaCha20 keystream bits for one frame; the frame index sits in the nonce."""
    if len(key) != 32:
        raise ValueError("stream key must be 32 bytes")
    nonce = struct.pack("<QQ", 0, frame)
    enc = Cipher(algorithms.ChaCha20(key, nonce), mode=None).encryptor()
    raw = enc.update(bytes((nbits + 7) // 8))
    return np.unpackbits(np.frombuffer(raw, dtype=np.uint8), bitorder="little")[:nbits]


def stream_key(seed: int) -> bytes:
    return hashlib.sha256(b"stream" + int(seed).to_bytes(8, "little")).digest()


def repetition_layout(msg_len: int, f_l: int, n: int) -> np.ndarray:
    """Message bit index carried by each of the f_l * n template positions."""
    if msg_len < 1 or msg_len > f_l * n:
        raise ValueError("message length must be in [1, f_l * n]")
    return (np.arange(f_l * n) % msg_len).reshape(f_l, n)


def baseline_encode(key: bytes, m: np.ndarray, f_l: int, n: int) -> np.ndarray:
    m = np.asarray(m, dtype=np.uint8)
    ks = np.stack([keystream_bits(key, i, n) for i in range(f_l)])
    return ks ^ m[repetition_layout(len(m), f_l, n)]


def baseline_decode(key: bytes, bits: np.ndarray, msg_len: int) -> np.ndarray:
    """Majority vote over every repetition of each message bit; ties give 1."""
    bits = np.asarray(bits, dtype=np.uint8)
    f_l, n = bits.shape
    ks = np.stack([keystream_bits(key, i, n) for i in range(f_l)])
    plain = (bits ^ ks).ravel()
    layout = repetition_layout(msg_len, f_l, n).ravel()
    ones = np.bincount(layout, weights=plain, minlength=msg_len)
    reps = np.bincount(layout, minlength=msg_len)
    return (2 * ones >= reps).astype(np.uint8)


def majority_accuracy(p: float, reps: int) -> float:
    """Probability a majority of ``reps`` copies survives i.i.d. flips at rate ``p`` (ties count half)."""
    from scipy.stats import binom

    k = np.arange(reps + 1)
    pmf = binom.pmf(k, reps, p)  # k = number of flipped copies
    good = pmf[2 * k < reps].sum()
    tie = pmf[2 * k == reps].sum()
    return float(good + 0.5 * tie)


@dataclass(frozen=True)
class Record:
    seed: int
    message: np.ndarray


@dataclass
class NonblindDB:
    f_l: int
    n: int
    records: list[Record] = field(default_factory=list)
    alignments: int = 0  # instrumentation: frame-pair comparisons performed

    def add(self, seed: int, message: np.ndarray) -> None:
        self.records.append(Record(int(seed), np.asarray(message, dtype=np.uint8)))

    def template(self, rec: Record) -> np.ndarray:
        return baseline_encode(stream_key(rec.seed), rec.message, self.f_l, self.n)


def nonblind_extract(db: NonblindDB, bits: np.ndarray) -> tuple[int, np.ndarray]:
    """Best-matching record for observed per-frame template bits.

    Every stored template is regenerated from its seed, then each observed
    frame is compared against each template frame (f_obs * f_l alignments);
    a record scores the sum over observed frames of its best agreement.
    """
    if not db.records:
        raise ValueError("empty database")
    obs = 2.0 * np.asarray(bits, dtype=np.float32) - 1.0
    best, best_score = -1, -np.inf
    for r, rec in enumerate(db.records):
        tmpl = 2.0 * db.template(rec).astype(np.float32) - 1.0
        agree = obs @ tmpl.T  # (f_obs, f_l)
        db.alignments += agree.size
        score = float(agree.max(axis=1).sum())
        if score > best_score:
            best, best_score = r, score
    return best, db.records[best].message.copy()
