"""Binary and text file formats: SKY1 key sets, SLT1 latents, SVD1 videos, message files."""
from __future__ import annotations

import struct
from pathlib import Path

import numpy as np

from .latent import MODES, Message
from .prc import KeySet, PrcParams


class FormatError(ValueError):
    """Malformed input; ``offset`` is the byte (or line) position of the problem."""

    def __init__(self, message: str, offset: int):
        super().__init__(f"{message} (at byte offset {offset})")
        self.offset = offset


def _f32(value: float) -> float:
    # Shortest decimal that survives a float32 round trip, e.g. 0.2 -> 0.2.
    return float(str(np.float32(value)))


def _magic(data: bytes, magic: bytes) -> None:
    if data[:4] != magic:
        raise FormatError(f"bad magic, expected {magic.decode()!r}", 0)


def _need(data: bytes, size: int) -> None:
    if len(data) < size:
        raise FormatError(f"truncated file: need {size} bytes, found {len(data)}", len(data))


# -- SKY1 -------------------------------------------------------------------

_SKY = struct.Struct("<4sIIIIIIIIff32s")


def keyset_to_bytes(keyset: KeySet) -> bytes:
    p = keyset.params
    return _SKY.pack(
        b"SKY1", 1, p.n, p.msg_len, p.rand_len, p.sparsity, p.slack, p.bp_iters,
        keyset.f_max, p.channel_p, p.detect_z, keyset.master_seed,
    )


def keyset_from_bytes(data: bytes) -> KeySet:
    _magic(data, b"SKY1")
    _need(data, _SKY.size)
    if len(data) != _SKY.size:
        raise FormatError("trailing bytes after key record", _SKY.size)
    _, version, n, m, r, t, slack, iters, f_max, cp, dz, seed = _SKY.unpack(data)
    if version != 1:
        raise FormatError(f"unsupported version {version}", 4)
    try:
        params = PrcParams(n, m, r, t, slack, iters, _f32(cp), _f32(dz))
        return KeySet(params, seed, f_max)
    except ValueError as exc:
        raise FormatError(f"invalid parameters: {exc}", 8) from None


# -- SLT1 -------------------------------------------------------------------

def latent_to_bytes(z: np.ndarray) -> bytes:
    if z.ndim != 4:
        raise ValueError("latent must be 4-D")
    head = struct.pack("<4s4I", b"SLT1", *z.shape)
    return head + np.ascontiguousarray(z, dtype="<f4").tobytes()


def latent_from_bytes(data: bytes) -> np.ndarray:
    _magic(data, b"SLT1")
    _need(data, 20)
    dims = struct.unpack_from("<4I", data, 4)
    if min(dims[1:]) == 0:
        raise FormatError(f"invalid latent dims {dims}", 4)
    size = 20 + 4 * int(np.prod(dims, dtype=np.int64))
    _need(data, size)
    if len(data) != size:
        raise FormatError("trailing bytes after latent values", size)
    return np.frombuffer(data, dtype="<f4", offset=20).reshape(dims).astype(np.float32)


# -- SVD1 -------------------------------------------------------------------

def video_to_bytes(video: np.ndarray) -> bytes:
    """``video`` is (f, h, w, c) uint8; stored channel-planar within each frame."""
    if video.ndim != 4 or video.dtype != np.uint8:
        raise ValueError("video must be a 4-D uint8 array")
    head = struct.pack("<4s4I", b"SVD1", *video.shape)
    return head + np.ascontiguousarray(video.transpose(0, 3, 1, 2)).tobytes()


def video_from_bytes(data: bytes) -> np.ndarray:
    _magic(data, b"SVD1")
    _need(data, 20)
    f, h, w, c = struct.unpack_from("<4I", data, 4)
    if min(h, w, c) == 0:
        raise FormatError(f"invalid video dims {(f, h, w, c)}", 4)
    size = 20 + f * h * w * c
    _need(data, size)
    if len(data) != size:
        raise FormatError("trailing bytes after video frames", size)
    planar = np.frombuffer(data, dtype=np.uint8, offset=20).reshape(f, c, h, w)
    return np.ascontiguousarray(planar.transpose(0, 2, 3, 1))


# -- message text -----------------------------------------------------------

def message_to_text(message: Message) -> str:
    if message.msg_len % 4:
        raise ValueError("message length must be a multiple of 4 bits for hex output")
    lines = [f"mode={message.mode}"]
    weights = np.array([8, 4, 2, 1], dtype=np.uint8)
    for row in message.bits:
        nibbles = row.reshape(-1, 4) @ weights
        lines.append("".join(f"{v:x}" for v in nibbles))
    return "\n".join(lines) + "\n"


def message_from_text(text: str) -> Message:
    lines = text.splitlines()
    if not lines or not lines[0].startswith("mode="):
        raise FormatError("missing 'mode=' header", 0)
    mode = lines[0][5:].strip()
    if mode not in MODES:
        raise FormatError(f"unknown mode {mode!r}", 5)
    offset = len(lines[0]) + 1
    rows = []
    for line in lines[1:]:
        row = line.strip()
        if not row:
            offset += len(line) + 1
            continue
        try:
            vals = [int(ch, 16) for ch in row]
        except ValueError:
            raise FormatError("non-hex character in message row", offset) from None
        if rows and len(vals) * 4 != rows[0].size:
            raise FormatError("message rows differ in length", offset)
        bits = ((np.array(vals, dtype=np.uint8)[:, None] >> np.arange(3, -1, -1)) & 1).ravel()
        rows.append(bits.astype(np.uint8))
        offset += len(line) + 1
    if not rows:
        raise FormatError("message file has no rows", offset)
    try:
        return Message(np.stack(rows), mode)
    except ValueError as exc:
        raise FormatError(str(exc), 0) from None


# -- path helpers -----------------------------------------------------------

def read_keyset(path) -> KeySet:
    return keyset_from_bytes(Path(path).read_bytes())


def write_keyset(path, keyset: KeySet) -> None:
    Path(path).write_bytes(keyset_to_bytes(keyset))


def read_video(path) -> np.ndarray:
    return video_from_bytes(Path(path).read_bytes())


def write_video(path, video: np.ndarray) -> None:
    Path(path).write_bytes(video_to_bytes(video))


def read_latent(path) -> np.ndarray:
    return latent_from_bytes(Path(path).read_bytes())


def write_latent(path, z: np.ndarray) -> None:
    Path(path).write_bytes(latent_to_bytes(z))


def read_message(path) -> Message:
    return message_from_text(Path(path).read_text(encoding="ascii"))


def write_message(path, message: Message) -> None:
    Path(path).write_text(message_to_text(message), encoding="ascii")
