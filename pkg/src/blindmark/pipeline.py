"""End-to-end embedding, disturbance and blind extraction."""
from __future__ import annotations

import re
from dataclasses import dataclass, field

import numpy as np

from .config import Geometry
from .flowseg import SegmentationConfig
from .latent import (Message, decode_message, embed_template, encode_message, extract_signs,
                     majority_combine, sample_gaussian_latent)
from .prc import KeySet
from .seeds import derive_seed, substream
from .sgo import GroupingMap, sgo_run
from .toysim import (CarrierBank, SceneSpec, apply_pixel_noise, encode_groups,
                     random_scene, render_content, toy_decode)

TEMPORAL_KINDS = ("drop", "insert", "swap", "clip")


# -- disturbances -----------------------------------------------------------

@dataclass(frozen=True)
class Disturbance:
    kind: str
    args: tuple = ()
    seed: int | None = None
    source: str = "content"  # insert only: content | duplicate

    def __post_init__(self):
        arity = {"drop": 1, "insert": 1, "swap": 1, "clip": 2, "gaussian": 1, "blur": 1, "quantize": 1}
        if self.kind not in arity:
            raise ValueError(f"unknown disturbance kind {self.kind!r}")
        if len(self.args) != arity[self.kind]:
            raise ValueError(f"{self.kind} takes {arity[self.kind]} argument(s)")
        if self.kind != "gaussian" and any(int(a) != a or a < 0 for a in self.args):
            raise ValueError(f"{self.kind} arguments must be non-negative integers")
        if self.source not in ("content", "duplicate"):
            raise ValueError("insert source must be 'content' or 'duplicate'")

    def __str__(self):
        parts = [f"{a:g}" if isinstance(a, float) else str(a) for a in self.args]
        if self.kind == "insert" and self.source != "content":
            parts.append(f"source={self.source}")
        if self.seed is not None:
            parts.append(f"seed={self.seed}")
        return f"{self.kind}({','.join(parts)})"


_TERM = re.compile(r"\s*([a-z]+)\s*\(([^()]*)\)\s*(,|$)")


def parse_disturbances(text: str) -> list[Disturbance]:
    """Parse ``"gaussian(5),drop(10,seed=3),insert(4,source=duplicate)"``."""
    out = []
    pos = 0
    text = text.strip()
    while pos < len(text):
        m = _TERM.match(text, pos)
        if not m:
            raise ValueError(f"cannot parse disturbance spec at character {pos}: {text[pos:]!r}")
        kind, body = m.group(1), m.group(2)
        args: list = []
        kw: dict = {}
        for item in filter(None, (s.strip() for s in body.split(","))):
            if "=" in item:
                k, v = (s.strip() for s in item.split("=", 1))
                kw[k] = v
            else:
                args.append(float(item))
        args = [int(a) if a == int(a) and kind != "gaussian" else a for a in args]
        unknown = set(kw) - {"seed", "source"}
        if unknown:
            raise ValueError(f"unknown option(s) {sorted(unknown)} for {kind}")
        seed = int(kw["seed"]) if "seed" in kw else None
        out.append(Disturbance(kind, tuple(args), seed, kw.get("source", "content")))
        pos = m.end()
    return out


@dataclass
class Disturbed:
    video: np.ndarray
    provenance: np.ndarray  # original frame index per output frame, -1 for inserted


def _apply_one(video, prov, d: Disturbance, seed: int, geometry: Geometry | None):
    f = len(video)
    rng = substream(seed, "disturb-op")
    if d.kind == "drop":
        k = d.args[0]
        if k > f:
            raise ValueError(f"cannot drop {k} of {f} frames")
        keep = np.sort(rng.choice(f, f - k, replace=False))
        return video[keep], prov[keep]
    if d.kind == "clip":
        start, length = d.args  # keep [start, start + length); the rest is clipped out
        if start + length > f:
            raise ValueError("clip range exceeds video length")
        return video[start:start + length], prov[start:start + length]
    if d.kind == "swap":
        k = d.args[0]
        if 2 * k > f:
            raise ValueError(f"cannot swap {k} disjoint pairs in {f} frames")
        picks = rng.choice(f, 2 * k, replace=False).reshape(k, 2)
        order = np.arange(f)
        order[picks[:, 0]], order[picks[:, 1]] = picks[:, 1], picks[:, 0]
        return video[order], prov[order]
    if d.kind == "insert":
        k = d.args[0]
        total = f + k
        slots = np.zeros(total, dtype=bool)
        slots[rng.choice(total, k, replace=False)] = True
        if d.source == "content":
            g = geometry or Geometry(h_l=video.shape[1] // 8, w_l=video.shape[2] // 8, channels=video.shape[3])
            foreign = render_content(random_scene(rng, g, frames=max(k, 1)))[:k]
        out = np.empty((total, *video.shape[1:]), dtype=video.dtype)
        new_prov = np.empty(total, dtype=np.int64)
        src = 0
        ins = 0
        for t in range(total):
            if slots[t]:
                if d.source == "content":
                    out[t] = foreign[ins]
                else:
                    out[t] = video[min(src, f - 1)] if src == 0 else video[src - 1]
                new_prov[t] = -1
                ins += 1
            else:
                out[t] = video[src]
                new_prov[t] = prov[src]
                src += 1
        return out, new_prov
    return apply_pixel_noise(video, d.kind, d.args[0], seed), prov


def disturb(video: np.ndarray, spec: list[Disturbance] | str, seed: int = 0,
            geometry: Geometry | None = None) -> Disturbed:
    """Apply disturbances left to right; ops without an explicit seed draw one from ``seed``."""
    if isinstance(spec, str):
        spec = parse_disturbances(spec)
    prov = np.arange(len(video))
    out = video
    for i, d in enumerate(spec):
        op_seed = d.seed if d.seed is not None else derive_seed(seed, "disturb", i)
        out, prov = _apply_one(out, prov, d, op_seed, geometry)
    return Disturbed(out, prov)


# -- embed / extract --------------------------------------------------------

@dataclass
class Embedded:
    video: np.ndarray
    latent: np.ndarray
    template: np.ndarray


def embed_video(keyset: KeySet, message: Message, scene: SceneSpec, carriers: CarrierBank,
                seed: int) -> Embedded:
    g = carriers.geometry
    if message.f_l != g.f_l or scene.frames != g.frames:
        raise ValueError("message rows and scene length must match the geometry")
    if keyset.params.n != g.n:
        raise ValueError(f"key set codeword length {keyset.params.n} != latent size {g.n}")
    scene.validate(g.d_t)
    tp = encode_message(keyset, message, seed)
    z0 = sample_gaussian_latent(g.latent_dims, seed)
    z = embed_template(tp, z0)
    # The denoiser/inversion pair is the identity on latents, so the signs go straight to pixels.
    video = toy_decode(extract_signs(z), scene, carriers)
    return Embedded(video, z, tp)


@dataclass(frozen=True)
class ExtractConfig:
    mode: str = "identical"  # message layout the extractor assumes
    sgo: str = "full"  # full | no_swdet | none
    seg: SegmentationConfig = field(default_factory=SegmentationConfig)


@dataclass
class Extraction:
    message: Message  # per-group decoded rows
    combined: np.ndarray | None  # majority row in identical mode
    statuses: list[bool]
    grouping: GroupingMap

    def payload(self) -> np.ndarray:
        """The recovered payload: combined row (identical) or all rows (distinct)."""
        return self.combined if self.combined is not None else self.message.bits

    def as_message(self) -> Message:
        if self.combined is not None:
            return Message.identical(self.combined, self.message.f_l)
        return self.message


def extract_blind(keyset: KeySet, video: np.ndarray, carriers: CarrierBank,
                  cfg: ExtractConfig = ExtractConfig()) -> Extraction:
    """Recover the message using only the global keys, the carriers and the video."""
    regrouped, gmap = sgo_run(video, keyset, carriers, cfg.seg, carriers.geometry.f_l, cfg.sgo)
    signs = encode_groups(regrouped, carriers)
    m_hat, statuses = decode_message(keyset, signs)
    combined = majority_combine(m_hat, statuses) if cfg.mode == "identical" else None
    return Extraction(m_hat, combined, statuses, gmap)


def bit_accuracy(m: np.ndarray, m_hat: np.ndarray) -> float:
    m = np.asarray(m, dtype=np.uint8)
    m_hat = np.asarray(m_hat, dtype=np.uint8)
    if m.shape != m_hat.shape:
        raise ValueError(f"shape mismatch {m.shape} vs {m_hat.shape}")
    if m.size == 0:
        raise ValueError("empty message")
    return float(np.mean(m == m_hat))


def message_accuracy(truth: Message, ext: Extraction) -> float:
    if ext.combined is not None:
        return bit_accuracy(truth.bits[0], ext.combined)
    return bit_accuracy(truth.bits, ext.message.bits)
