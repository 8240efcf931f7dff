"""Bit-packed GF(2) linear algebra.

Rows are stored as little-endian packed ``uint64`` words: bit ``c`` of a row
lives in word ``c // 64`` at position ``c % 64``.
"""
from __future__ import annotations

import numpy as np

WORD = 64


def n_words(n: int) -> int:
    return (n + WORD - 1) // WORD


def pack_rows(bits: np.ndarray) -> np.ndarray:
    """Pack a (rows, n) 0/1 array into (rows, n_words(n)) uint64."""
    bits = np.atleast_2d(np.asarray(bits, dtype=np.uint8))
    rows, n = bits.shape
    padded = np.zeros((rows, n_words(n) * WORD), dtype=np.uint8)
    padded[:, :n] = bits
    return np.packbits(padded, axis=1, bitorder="little").view(np.uint64).copy()


def unpack_rows(words: np.ndarray, n: int) -> np.ndarray:
    words = np.ascontiguousarray(np.atleast_2d(words), dtype=np.uint64)
    as_bytes = words.view(np.uint8)
    return np.unpackbits(as_bytes, axis=1, bitorder="little")[:, :n]


def sparse_to_packed(rows: list[list[int]] | np.ndarray, n: int) -> np.ndarray:
    """Pack a list of column-index rows (one list per parity check)."""
    out = np.zeros((len(rows), n_words(n)), dtype=np.uint64)
    for i, cols in enumerate(rows):
        for c in cols:
            c = int(c)
            if not 0 <= c < n:
                raise ValueError(f"column index {c} out of range [0, {n})")
            out[i, c // WORD] ^= np.uint64(1) << np.uint64(c % WORD)
    return out


def rref(packed: np.ndarray, n: int) -> tuple[np.ndarray, list[int]]:
    """Gauss-Jordan elimination over GF(2).

    Returns the reduced matrix (rank rows, packed) and its pivot columns in
    ascending order.
    """
    a = np.array(packed, dtype=np.uint64, copy=True)
    m = a.shape[0]
    pivots: list[int] = []
    row = 0
    one = np.uint64(1)
    for col in range(n):
        if row == m:
            break
        w, b = divmod(col, WORD)
        colbits = (a[:, w] >> np.uint64(b)) & one
        below = np.flatnonzero(colbits[row:])
        if below.size == 0:
            continue
        p = row + below[0]
        if p != row:
            a[[row, p]] = a[[p, row]]
            colbits[[row, p]] = colbits[[p, row]]
        hit = colbits.astype(bool)
        hit[row] = False
        if hit.any():
            a[hit] ^= a[row]
        pivots.append(col)
        row += 1
    return a[:row], pivots


def nullspace(packed: np.ndarray, n: int) -> tuple[int, np.ndarray, np.ndarray]:
    """Null space of a packed GF(2) matrix.

    Returns ``(rank, basis, free_cols)`` where ``basis`` is an (n, n - rank)
    uint8 matrix whose columns span the null space and satisfy
    ``basis[free_cols] == I``.
    """
    reduced, pivots = rref(packed, n)
    rank = len(pivots)
    is_pivot = np.zeros(n, dtype=bool)
    is_pivot[pivots] = True
    free = np.flatnonzero(~is_pivot)
    basis = np.zeros((n, free.size), dtype=np.uint8)
    basis[free, np.arange(free.size)] = 1
    if rank:
        dense = unpack_rows(reduced, n)
        basis[pivots, :] = dense[:, free]
    return rank, basis, free


def inverse(mat: np.ndarray) -> np.ndarray | None:
    """Inverse of a square 0/1 matrix over GF(2), or None if singular."""
    mat = np.asarray(mat, dtype=np.uint8)
    k = mat.shape[0]
    aug = pack_rows(np.concatenate([mat, np.eye(k, dtype=np.uint8)], axis=1))
    reduced, pivots = rref(aug, 2 * k)
    if len(pivots) < k or pivots[k - 1] != k - 1:
        return None
    return unpack_rows(reduced, 2 * k)[:k, k:].copy()


def matvec(mat: np.ndarray, vecs: np.ndarray) -> np.ndarray:
    """``mat @ vecs`` mod 2 for 0/1 arrays; ``vecs`` may be 1-D or (k, batch)."""
    prod = np.asarray(mat, dtype=np.int32) @ np.asarray(vecs, dtype=np.int32)
    return (prod & 1).astype(np.uint8)
