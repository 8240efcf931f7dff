"""Pseudorandom error-correcting code over GF(2).

A key is a sparse parity-check matrix (``t`` ones per row), a generator
spanning its null space under a key-derived random basis, and a one-time pad.
Encoding is randomized: ``rand_len`` fresh bits are drawn per call and
prepended to the message, so equal messages map to unrelated codewords.
"""
from __future__ import annotations

import functools
import math
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sparse

from . import gf2
from .prf import KeyedStream

MAX_RETRIES = 8


class KeyDerivationError(RuntimeError):
    pass


@dataclass(frozen=True)
class PrcParams:
    n: int = 1024
    msg_len: int = 64
    rand_len: int = 32
    sparsity: int = 3
    slack: int = 8
    bp_iters: int = 10
    channel_p: float = 0.2
    detect_z: float = 5.0

    def __post_init__(self):
        if self.msg_len + self.rand_len + self.slack >= self.n:
            raise ValueError("msg_len + rand_len + slack must be < n")
        if self.sparsity < 2 or self.sparsity > self.n:
            raise ValueError("sparsity must be in [2, n]")
        if self.bp_iters < 1:
            raise ValueError("bp_iters must be >= 1")
        if not 0.0 < self.channel_p < 0.5:
            raise ValueError("channel_p must be in (0, 0.5)")
        if min(self.msg_len, self.rand_len, self.slack) < 0:
            raise ValueError("lengths must be non-negative")

    @property
    def num_checks(self) -> int:
        return self.n - self.msg_len - self.rand_len - self.slack

    @property
    def info_len(self) -> int:
        return self.rand_len + self.msg_len


@dataclass(frozen=True, eq=False)
class PrcKey:
    frame_index: int
    params: PrcParams
    checks: np.ndarray  # (num_checks, t) sorted column indices
    generator: np.ndarray  # (n, k) uint8
    otp: np.ndarray  # (n,) uint8
    free_cols: np.ndarray  # (k,) information positions of the null-space basis
    solver: np.ndarray  # (k, k) uint8; u = solver @ x[free_cols]
    _incidence: sparse.csr_matrix = field(repr=False, default=None)

    @property
    def k(self) -> int:
        return self.generator.shape[1]

    @property
    def incidence(self) -> sparse.csr_matrix:
        """(n, edges) variable-to-edge incidence for belief propagation."""
        return self._incidence

    def fingerprint(self) -> bytes:
        parts = [self.checks.astype("<u4").tobytes(), self.otp.tobytes(), self.generator.tobytes()]
        return b"".join(parts)


@dataclass(frozen=True)
class KeySet:
    params: PrcParams
    master_seed: bytes
    f_max: int = 16

    def __post_init__(self):
        if len(self.master_seed) != 32:
            raise ValueError("master seed must be 32 bytes")
        if self.f_max < 1:
            raise ValueError("f_max must be >= 1")

    def key(self, i: int) -> PrcKey:
        return derive_key(self, i)

    def keys(self) -> list[PrcKey]:
        return [derive_key(self, i) for i in range(self.f_max)]


def _sample_checks(stream: KeyedStream, n: int, num_checks: int, t: int) -> np.ndarray:
    """Rows of ``t`` distinct columns with column degrees differing by at most one.

    Sockets (one per edge) are dealt to columns as evenly as possible, shuffled,
    then cut into rows; rows with a repeated column swap sockets with random
    other rows until every row is distinct. A second round of swaps removes
    the short codewords flagged by ``short_codeword_columns``.
    """
    total = num_checks * t
    order = list(range(n))
    stream.shuffle(order)
    base, extra = divmod(total, n)
    sockets: list[int] = []
    for rank_, col in enumerate(order):
        sockets.extend([col] * (base + (1 if rank_ < extra else 0)))
    stream.shuffle(sockets)
    rows = [sockets[i * t:(i + 1) * t] for i in range(num_checks)]

    def bad(row: list[int]) -> bool:
        return len(set(row)) < t

    for _ in range(100 * num_checks):
        dup = [i for i, row in enumerate(rows) if bad(row)]
        if not dup:
            break
        for i in dup:
            row = rows[i]
            a = next(pos for pos in range(1, t) if row[pos] in row[:pos])
            j = stream.randbelow(num_checks)
            b = stream.randbelow(t)
            other = rows[j]
            if j == i or row[a] in other or other[b] in row:
                continue
            row[a], other[b] = other[b], row[a]
    else:
        raise KeyDerivationError("could not repair parity-check rows")

    # Degree-preserving swaps move offending columns until no short codeword remains.
    for _ in range(4 * n):
        offenders = short_codeword_columns(rows, n)
        if not offenders:
            break
        col = offenders[0]
        i = next(r for r, row in enumerate(rows) if col in row)
        j = stream.randbelow(num_checks)
        b = stream.randbelow(t)
        row, other = rows[i], rows[j]
        if j == i or col in other or other[b] in row:
            continue
        row[row.index(col)], other[b] = other[b], col
    return np.sort(np.array(rows, dtype=np.int64), axis=1)


def short_codeword_columns(checks, n: int) -> list[int]:
    """Columns taking part in an obvious low-weight null-space vector.

    Two columns with the same check set form a weight-2 codeword, and a cycle
    among degree-2 columns (viewed as edges between their two checks) closes
    into a codeword of the cycle's length. Either leaves small error patterns
    ambiguous to the decoder. Cycles are only reported when the degree-2
    columns could form a forest at all, i.e. there are fewer of them than checks.
    """
    cols: dict[int, list[int]] = {}
    for r, row in enumerate(checks):
        for c in row:
            cols.setdefault(int(c), []).append(r)
    seen: dict[tuple, int] = {}
    bad = []
    for c in sorted(cols):
        sig = tuple(sorted(cols[c]))
        if sig in seen:
            bad.append(c)
        else:
            seen[sig] = c
    deg2 = [c for c in sorted(cols) if len(cols[c]) == 2]
    if len(deg2) < len(checks):
        parent = list(range(len(checks)))

        def find(a: int) -> int:
            while parent[a] != a:
                parent[a] = parent[parent[a]]
                a = parent[a]
            return a

        for c in deg2:
            a, b = find(cols[c][0]), find(cols[c][1])
            if a == b:
                bad.append(c)
            else:
                parent[a] = b
    return bad


def has_short_codewords(checks, n: int) -> bool:
    return bool(short_codeword_columns(checks, n))


def _build_key(keyset: KeySet, i: int) -> PrcKey:
    p = keyset.params
    for retry in range(MAX_RETRIES + 1):
        stream = KeyedStream(keyset.master_seed, i, "checks", retry)
        checks = _sample_checks(stream, p.n, p.num_checks, p.sparsity)
        if has_short_codewords(checks, p.n):
            continue  # the repair budget ran out
        rank, basis, free = gf2.nullspace(gf2.sparse_to_packed(checks, p.n), p.n)
        k = p.n - rank
        if k >= p.info_len:
            break
    else:
        raise KeyDerivationError(f"no usable parity checks for frame {i} after {MAX_RETRIES} retries")

    mix_stream = KeyedStream(keyset.master_seed, i, "basis", retry)
    while True:
        mix = mix_stream.bits(k * k).reshape(k, k)
        solver = gf2.inverse(mix)
        if solver is not None:
            break
    generator = gf2.matvec(basis, mix)
    otp = KeyedStream(keyset.master_seed, i, "otp", retry).bits(p.n)

    edges = checks.size
    incidence = sparse.csr_matrix(
        (np.ones(edges), (checks.ravel(), np.arange(edges))), shape=(p.n, edges)
    )
    for arr in (checks, generator, otp, free, solver):
        arr.setflags(write=False)
    return PrcKey(i, p, checks, generator, otp, free, solver, incidence)


@functools.lru_cache(maxsize=1024)
def _cached_key(params: PrcParams, master_seed: bytes, i: int) -> PrcKey:
    return _build_key(KeySet(params, master_seed, i + 1), i)


def derive_key(keyset: KeySet, i: int) -> PrcKey:
    if not 0 <= i < keyset.f_max:
        raise IndexError(f"frame index {i} outside [0, {keyset.f_max})")
    return _cached_key(keyset.params, keyset.master_seed, i)


def _check_len(bits: np.ndarray, n: int) -> np.ndarray:
    bits = np.asarray(bits, dtype=np.uint8)
    if bits.shape[-1] != n:
        raise ValueError(f"expected {n} bits, got {bits.shape[-1]}")
    return bits


def prc_encode(key: PrcKey, message: np.ndarray, randomness: np.ndarray) -> np.ndarray:
    p = key.params
    message = np.asarray(message, dtype=np.uint8)
    randomness = np.asarray(randomness, dtype=np.uint8)
    if message.shape != (p.msg_len,):
        raise ValueError(f"message must have {p.msg_len} bits")
    if randomness.shape != (p.rand_len,):
        raise ValueError(f"randomness must have {p.rand_len} bits")
    u = np.concatenate([randomness, message])
    return gf2.matvec(key.generator[:, : p.info_len], u) ^ key.otp


def satisfied_checks(key: PrcKey, bits: np.ndarray) -> np.ndarray:
    """Number of satisfied parity checks of ``bits ^ otp``; accepts a batch."""
    x = _check_len(bits, key.params.n) ^ key.otp
    parity = np.bitwise_xor.reduce(x[..., key.checks], axis=-1)
    return (parity == 0).sum(axis=-1)


def prc_detect(key: PrcKey, bits: np.ndarray) -> float | np.ndarray:
    c = key.params.num_checks
    s = satisfied_checks(key, bits)
    z = (s - c / 2) / math.sqrt(c / 4)
    return float(z) if np.ndim(z) == 0 else z


def belief_propagation(key: PrcKey, llr: np.ndarray, iters: int) -> tuple[np.ndarray, np.ndarray]:
    """Sum-product decoding on the key's parity checks.

    ``llr`` is (batch, n), positive favouring bit 0. Returns hard decisions
    (batch, n) and a per-row flag that all checks were satisfied. Rows stop
    iterating as soon as they reach a codeword.
    """
    llr = np.atleast_2d(np.asarray(llr, dtype=np.float64))
    batch = llr.shape[0]
    checks = key.checks
    num_checks, t = checks.shape
    flat = checks.ravel()
    incidence = key.incidence

    hard = llr < 0
    done = np.zeros(batch, dtype=bool)
    active = np.arange(batch)
    m_cv = np.zeros((batch, flat.size))
    lim = 1.0 - 1e-12
    for _ in range(iters + 1):
        post = llr[active] + (incidence @ m_cv[active].T).T
        h = post < 0
        hard[active] = h
        ok = ~np.bitwise_xor.reduce(h[:, checks], axis=-1).any(axis=-1)
        done[active[ok]] = True
        active = active[~ok]
        if active.size == 0:
            break
        post = post[~ok]
        m_vc = post[:, flat] - m_cv[active]
        th = np.tanh(np.clip(m_vc, -40.0, 40.0) * 0.5).reshape(active.size, num_checks, t)
        left = np.ones_like(th)
        right = np.ones_like(th)
        for a in range(1, t):
            left[..., a] = left[..., a - 1] * th[..., a - 1]
            right[..., t - 1 - a] = right[..., t - a] * th[..., t - a]
        prod = np.clip(left * right, -lim, lim)
        m_cv[active] = (2.0 * np.arctanh(prod)).reshape(active.size, -1)
    return hard.astype(np.uint8), done


def recover_info(key: PrcKey, x: np.ndarray) -> np.ndarray:
    """Information vector ``u`` of codeword(s) ``x`` (pad already removed)."""
    x = np.atleast_2d(x)
    return gf2.matvec(key.solver, x[:, key.free_cols].T).T


def prc_decode_batch(key: PrcKey, bits: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Decode a (batch, n) array; returns (ok flags, (batch, msg_len) bits)."""
    p = key.params
    y = np.atleast_2d(_check_len(bits, p.n)) ^ key.otp
    strength = math.log((1 - p.channel_p) / p.channel_p)
    llr = strength * (1.0 - 2.0 * y)
    hard, converged = belief_propagation(key, llr, p.bp_iters)
    u = recover_info(key, hard)
    pad_clean = ~u[:, p.info_len:].any(axis=1)
    return converged & pad_clean, u[:, p.rand_len:p.info_len].copy()


def prc_decode(key: PrcKey, bits: np.ndarray) -> tuple[bool, np.ndarray]:
    ok, m_hat = prc_decode_batch(key, bits)
    return bool(ok[0]), m_hat[0]


def detect_index(keyset: KeySet, bits: np.ndarray) -> tuple[int, float, bool]:
    """Best-matching frame key for an n-bit row; ties go to the smallest index."""
    bits = _check_len(bits, keyset.params.n)
    scores = np.array([prc_detect(key, bits) for key in keyset.keys()])
    best = int(np.argmax(scores))
    z = float(scores[best])
    return best, z, z >= keyset.params.detect_z
