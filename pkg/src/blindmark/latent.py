"""Template-to-noise sign modulation and sign-based message recovery.

Latents are float32 arrays shaped (f_l, c_l, h_l, w_l); template bits are
uint8 arrays shaped (f_l, n) with n = c_l * h_l * w_l.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .prc import KeySet, derive_key, prc_decode, prc_encode
from .seeds import substream

MODES = ("identical", "distinct")


@dataclass(frozen=True, eq=False)
class Message:
    bits: np.ndarray  # (f_l, M) uint8
    mode: str = "distinct"

    def __post_init__(self):
        bits = np.asarray(self.bits, dtype=np.uint8)
        if bits.ndim != 2:
            raise ValueError("message bits must be 2-D (f_l, M)")
        if self.mode not in MODES:
            raise ValueError(f"mode must be one of {MODES}")
        if bits.size and np.any(bits > 1):
            raise ValueError("message bits must be 0/1")
        if self.mode == "identical" and len(bits) > 1 and np.any(bits != bits[0]):
            raise ValueError("identical-mode rows must be equal")
        object.__setattr__(self, "bits", bits)

    @property
    def f_l(self) -> int:
        return self.bits.shape[0]

    @property
    def msg_len(self) -> int:
        return self.bits.shape[1]

    @classmethod
    def identical(cls, row: np.ndarray, f_l: int) -> "Message":
        row = np.asarray(row, dtype=np.uint8)
        return cls(np.tile(row, (f_l, 1)), "identical")

    @classmethod
    def random(cls, rng: np.random.Generator, f_l: int, msg_len: int, mode: str = "distinct") -> "Message":
        if mode == "identical":
            return cls.identical(rng.integers(0, 2, msg_len, dtype=np.uint8), f_l)
        return cls(rng.integers(0, 2, (f_l, msg_len), dtype=np.uint8), mode)

    def __eq__(self, other):
        return isinstance(other, Message) and self.mode == other.mode and np.array_equal(self.bits, other.bits)


def _flat(dims) -> tuple[int, int]:
    f_l, c_l, h_l, w_l = (int(d) for d in dims)
    if min(c_l, h_l, w_l) < 1 or f_l < 0:
        raise ValueError(f"invalid latent dims {dims}")
    return f_l, c_l * h_l * w_l


def sample_gaussian_latent(dims, seed: int) -> np.ndarray:
    _flat(dims)
    rng = substream(seed, "latent")
    return rng.standard_normal(tuple(dims), dtype=np.float32)


def encode_message(keyset: KeySet, message: Message, seed: int) -> np.ndarray:
    if message.f_l > keyset.f_max:
        raise ValueError(f"message has {message.f_l} groups but the key set supports {keyset.f_max}")
    p = keyset.params
    rows = np.zeros((message.f_l, p.n), dtype=np.uint8)
    for i in range(message.f_l):
        rand = substream(seed, "encode", i).integers(0, 2, p.rand_len, dtype=np.uint8)
        rows[i] = prc_encode(derive_key(keyset, i), message.bits[i], rand)
    return rows


def embed_template(tp: np.ndarray, z0: np.ndarray) -> np.ndarray:
    """Force the sign of each latent element to its template bit, keep magnitudes."""
    tp = np.asarray(tp, dtype=np.uint8)
    f_l, n = _flat(z0.shape)
    if tp.shape != (f_l, n):
        raise ValueError(f"template shape {tp.shape} does not match latent {(f_l, n)}")
    sign = (2.0 * tp.astype(np.float32) - 1.0).reshape(z0.shape)
    return sign * np.abs(z0)


def extract_signs(z: np.ndarray) -> np.ndarray:
    """Bit 1 where the element is >= 0 (exact zeros count as positive)."""
    z = np.asarray(z)
    f_l, n = _flat(z.shape)
    return (z >= 0).reshape(f_l, n).astype(np.uint8)


def decode_message(keyset: KeySet, tp_hat: np.ndarray) -> tuple[Message, list[bool]]:
    tp_hat = np.asarray(tp_hat, dtype=np.uint8)
    p = keyset.params
    if tp_hat.shape[0] > keyset.f_max:
        raise ValueError("more template rows than keys")
    rows = np.zeros((tp_hat.shape[0], p.msg_len), dtype=np.uint8)
    statuses = []
    for i, row in enumerate(tp_hat):
        ok, rows[i] = prc_decode(derive_key(keyset, i), row)
        statuses.append(ok)
    # Decoded rows need not agree, so the result is always tagged distinct.
    return Message(rows, "distinct"), statuses


def majority_combine(m_hat: Message, statuses, mode: str = "identical") -> np.ndarray:
    """Per-bit vote over successfully decoded rows (all rows if none decoded); ties give 1."""
    if mode != "identical":
        raise ValueError("majority combining only applies to identical-mode messages")
    statuses = np.asarray(statuses, dtype=bool)
    if statuses.shape != (m_hat.f_l,):
        raise ValueError("one status per row required")
    if m_hat.f_l == 0:
        raise ValueError("nothing to combine")
    rows = m_hat.bits[statuses] if statuses.any() else m_hat.bits
    ones = rows.sum(axis=0, dtype=np.int64)
    return (2 * ones >= len(rows)).astype(np.uint8)
