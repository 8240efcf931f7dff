"""Toy causal group codec, synthetic motion scenes and pixel noise channels.

Stands in for the diffusion model plus causal 3D VAE. Latent row ``i`` is
written into the ``d_t`` frames of group ``i`` as a small luminance residual,
modulated by one pseudorandom +-1 carrier per within-group position. Reading
back with the wrong grouping correlates against the wrong carriers, which is
what makes regrouping necessary.
"""
from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field

import cv2
import numpy as np

from .config import Geometry
from .seeds import derive_seed, substream

DEFAULT_CARRIER_SEED = 0x5EED


# -- scenes -----------------------------------------------------------------

@dataclass(frozen=True)
class Sprite:
    x: float
    y: float
    width: int
    height: int
    vx: float = 0.0
    vy: float = 0.0
    lum: float = 40.0


@dataclass(frozen=True)
class Clip:
    duration: int
    frequency: int = 4  # plaid cycles across the frame
    velocity: tuple[float, float] = (2.0, 0.0)
    sprites: tuple[Sprite, ...] = ()
    base: float = 128.0
    amplitude: float = 48.0
    phase: float = 0.0


@dataclass(frozen=True)
class SceneSpec:
    clips: tuple[Clip, ...]
    height: int
    width: int
    channels: int = 1
    alpha: float = 8.0
    lum_range: tuple[float, float] = (16.0, 239.0)

    @property
    def frames(self) -> int:
        return sum(c.duration for c in self.clips)

    def validate(self, d_t: int | None = None) -> None:
        lo, hi = self.lum_range
        if not lo <= hi:
            raise ValueError("lum_range must be ordered")
        if lo - self.alpha < 0 or hi + self.alpha > 255:
            raise ValueError("clamp violation: content range plus alpha leaves [0, 255]")
        if self.alpha < 0:
            raise ValueError("alpha must be non-negative")
        if not self.clips:
            raise ValueError("scene needs at least one clip")
        for clip in self.clips:
            if clip.duration < 1 or clip.frequency < 0:
                raise ValueError("clip duration must be positive and frequency non-negative")
            if d_t is not None and clip.duration < 2 * d_t:
                raise ValueError(f"clip of {clip.duration} frames is shorter than 2*d_t = {2 * d_t}")

    def to_json(self) -> str:
        return json.dumps(asdict(self), indent=2, sort_keys=True)

    @classmethod
    def from_dict(cls, doc: dict) -> "SceneSpec":
        clips = []
        for c in doc["clips"]:
            c = dict(c)
            c["velocity"] = tuple(c.get("velocity", (2.0, 0.0)))
            c["sprites"] = tuple(Sprite(**s) for s in c.get("sprites", ()))
            clips.append(Clip(**c))
        rest = {k: v for k, v in doc.items() if k != "clips"}
        if "lum_range" in rest:
            rest["lum_range"] = tuple(rest["lum_range"])
        return cls(clips=tuple(clips), **rest)

    @classmethod
    def from_json(cls, text: str) -> "SceneSpec":
        return cls.from_dict(json.loads(text))


def _plaid(clip: Clip, t: int, h: int, w: int) -> np.ndarray:
    vx, vy = clip.velocity
    xs = np.mod(np.arange(w, dtype=np.float64) - vx * t, w)
    ys = np.mod(np.arange(h, dtype=np.float64) - vy * t, h)
    u, v = np.meshgrid(xs / w, ys / h)
    k = clip.frequency
    k2 = max(1, k // 2)
    g = np.sin(2 * np.pi * (k * u + k2 * v) + clip.phase)
    g += np.sin(2 * np.pi * (k * v - k2 * u) + 1.7 * clip.phase)
    # A finer, weaker component gives the flow estimator texture at small scales.
    g += 0.5 * np.sin(2 * np.pi * (3 * k * u + k * v) + 0.3 * clip.phase)
    return clip.base + clip.amplitude * g / 2.5


def _draw_sprites(img: np.ndarray, sprites, t: int) -> None:
    h, w = img.shape
    for s in sprites:
        x0 = int(round(s.x + s.vx * t))
        y0 = int(round(s.y + s.vy * t))
        rows = np.mod(np.arange(y0, y0 + s.height), h)
        cols = np.mod(np.arange(x0, x0 + s.width), w)
        img[np.ix_(rows, cols)] += s.lum


def render_content(scene: SceneSpec) -> np.ndarray:
    """Render the scene as an (f, h, w, c) uint8 video with no watermark."""
    scene.validate()
    lo, hi = scene.lum_range
    frames = []
    for clip in scene.clips:
        for t in range(clip.duration):
            img = _plaid(clip, t, scene.height, scene.width)
            _draw_sprites(img, clip.sprites, t)
            frames.append(np.clip(np.rint(img), lo, hi))
    video = np.stack(frames).astype(np.uint8)
    return np.repeat(video[..., None], scene.channels, axis=3)


def random_scene(rng: np.random.Generator, geometry: Geometry, n_clips: int = 1,
                 frames: int | None = None, sprites: bool = True) -> SceneSpec:
    """A moving plaid scene, optionally split into clips with different motion."""
    total = geometry.frames if frames is None else frames
    cuts = np.sort(rng.choice(np.arange(2 * geometry.d_t, total - 2 * geometry.d_t + 1),
                              n_clips - 1, replace=False)) if n_clips > 1 else []
    bounds = [0, *cuts, total]
    clips = []
    for a, b in zip(bounds[:-1], bounds[1:]):
        speed = rng.uniform(1.0, 3.0)
        angle = rng.uniform(0, 2 * np.pi)
        sp = ()
        if sprites:
            sp = tuple(
                Sprite(
                    x=float(rng.integers(0, geometry.width)), y=float(rng.integers(0, geometry.height)),
                    width=int(rng.integers(8, 24)), height=int(rng.integers(8, 24)),
                    vx=float(rng.uniform(-2, 2)), vy=float(rng.uniform(-2, 2)),
                    lum=float(rng.choice([-1, 1]) * rng.uniform(20, 40)),
                )
                for _ in range(int(rng.integers(0, 3)))
            )
        clips.append(Clip(
            duration=int(b - a), frequency=int(rng.integers(3, 7)),
            velocity=(round(speed * math.cos(angle), 3), round(speed * math.sin(angle), 3)),
            sprites=sp, base=float(rng.uniform(110, 146)), amplitude=float(rng.uniform(30, 50)),
            phase=float(rng.uniform(0, 2 * np.pi)),
        ))
    return SceneSpec(tuple(clips), geometry.height, geometry.width, geometry.channels)


def flat_scene(geometry: Geometry, level: float = 128.0, alpha: float = 8.0) -> SceneSpec:
    clip = Clip(duration=geometry.frames, frequency=0, velocity=(0.0, 0.0), base=level, amplitude=0.0)
    return SceneSpec((clip,), geometry.height, geometry.width, geometry.channels, alpha)


# -- carriers ---------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class CarrierBank:
    """Per-position +-1 masks and the latent-channel layout inside each block."""

    geometry: Geometry
    seed: int
    masks: np.ndarray  # (d_t, h, w) int8
    owner: np.ndarray  # (d_s*d_s,) latent channel owning each within-block pixel
    _onehot: np.ndarray = field(repr=False, default=None)  # (d_s*d_s, c_l)

    @classmethod
    def derive(cls, geometry: Geometry, seed: int = DEFAULT_CARRIER_SEED) -> "CarrierBank":
        g = geometry
        rng = substream(seed, "carrier")
        slots = g.d_s * g.d_s
        q = slots // g.c_l
        perm = rng.permutation(slots)
        owner = np.empty(slots, dtype=np.int64)
        for c in range(g.c_l):
            owner[perm[c * q:(c + 1) * q]] = c
        # Balanced signs: each channel's q pixels in each block split half +1, half -1.
        half = np.array([1] * (q // 2) + [-1] * (q // 2), dtype=np.int8)
        vals = rng.permuted(np.broadcast_to(half, (g.d_t, g.h_l, g.w_l, g.c_l, q)).copy(), axis=-1)
        block = np.empty((g.d_t, g.h_l, g.w_l, slots), dtype=np.int8)
        for c in range(g.c_l):
            block[..., perm[c * q:(c + 1) * q]] = vals[..., c, :]
        masks = _blocks_to_pixels(block, g)
        onehot = np.zeros((slots, g.c_l), dtype=np.float32)
        onehot[np.arange(slots), owner] = 1.0
        for arr in (masks, owner, onehot):
            arr.setflags(write=False)
        return cls(g, seed, masks, owner, onehot)

    def pixel_signs(self, signs: np.ndarray) -> np.ndarray:
        """Spread (k, n) sign bits into (k, h, w) +-1 maps via the channel layout."""
        g = self.geometry
        pm = 2 * np.asarray(signs, dtype=np.int8) - 1
        lat = pm.reshape(-1, g.c_l, g.h_l, g.w_l).transpose(0, 2, 3, 1)  # (k, h_l, w_l, c_l)
        return _blocks_to_pixels(lat[..., self.owner], g)

    def cell_sums(self, est: np.ndarray) -> np.ndarray:
        """Sum a (k, h, w) map over each latent cell's pixel subset -> (k, n)."""
        g = self.geometry
        k = est.shape[0]
        blocks = est.reshape(k, g.h_l, g.d_s, g.w_l, g.d_s).transpose(0, 1, 3, 2, 4)
        blocks = blocks.reshape(k, g.h_l, g.w_l, g.d_s * g.d_s)
        per_channel = blocks @ self._onehot  # (k, h_l, w_l, c_l)
        return per_channel.transpose(0, 3, 1, 2).reshape(k, g.n)


def _blocks_to_pixels(block: np.ndarray, g: Geometry) -> np.ndarray:
    lead = block.shape[:-3]
    b = block.reshape(*lead, g.h_l, g.w_l, g.d_s, g.d_s)
    b = np.moveaxis(b, -2, -3)  # (..., h_l, d_s, w_l, d_s)
    return b.reshape(*lead, g.h_l * g.d_s, g.w_l * g.d_s)


# -- codec ------------------------------------------------------------------

def _check_video(video: np.ndarray, g: Geometry) -> None:
    if video.ndim != 4 or video.shape[1:3] != (g.height, g.width):
        raise ValueError(f"video dims {video.shape} do not match {g.height}x{g.width}")


def modulate(signs: np.ndarray, content: np.ndarray, carriers: CarrierBank, alpha: float) -> np.ndarray:
    """Add the watermark residual of ``signs`` (f_l, n) to ``content`` (f, h, w, c)."""
    g = carriers.geometry
    signs = np.asarray(signs, dtype=np.uint8)
    if signs.ndim != 2 or signs.shape[1] != g.n:
        raise ValueError(f"latent signs must be (f_l, {g.n})")
    _check_video(content, g)
    if content.shape[0] != signs.shape[0] * g.d_t:
        raise ValueError(f"content has {content.shape[0]} frames, expected {signs.shape[0] * g.d_t}")
    pix = carriers.pixel_signs(signs).astype(np.float32)  # (f_l, h, w)
    residual = alpha * pix[:, None] * carriers.masks[None].astype(np.float32)  # (f_l, d_t, h, w)
    residual = residual.reshape(-1, g.height, g.width, 1)
    out = np.rint(content.astype(np.float32) + residual)
    return np.clip(out, 0, 255).astype(np.uint8)


def toy_decode(signs: np.ndarray, scene: SceneSpec, carriers: CarrierBank) -> np.ndarray:
    """Latent sign rows to pixel frames; group ``i`` carries only row ``i``."""
    if scene.frames != len(signs) * carriers.geometry.d_t:
        raise ValueError("scene length must equal f_l * d_t")
    return modulate(signs, render_content(scene), carriers, scene.alpha)


def toy_encode_soft(frames: np.ndarray, carriers: CarrierBank) -> np.ndarray:
    """Correlation estimates (k, n) for ``k * d_t`` frames read as ``k`` groups."""
    g = carriers.geometry
    frames = np.asarray(frames)
    _check_video(frames, g)
    if frames.shape[0] == 0 or frames.shape[0] % g.d_t:
        raise ValueError(f"frame count {frames.shape[0]} is not a positive multiple of d_t={g.d_t}")
    lum = frames.astype(np.float32).mean(axis=3) - 128.0
    lum = lum.reshape(-1, g.d_t, g.height, g.width)
    est = np.einsum("kjyx,jyx->kyx", lum, carriers.masks.astype(np.float32))
    return carriers.cell_sums(est)


def toy_encode(frames: np.ndarray, carriers: CarrierBank) -> np.ndarray:
    """Latent sign rows for a window of ``d_t`` or ``2 * d_t`` frames (ties read as 1)."""
    d_t = carriers.geometry.d_t
    if len(frames) not in (d_t, 2 * d_t):
        raise ValueError(f"window must hold {d_t} or {2 * d_t} frames, got {len(frames)}")
    return (toy_encode_soft(frames, carriers) >= 0).astype(np.uint8)


def encode_groups(video: np.ndarray, carriers: CarrierBank) -> np.ndarray:
    """Sign rows of a whole, already grouped video (f_l * d_t frames)."""
    return (toy_encode_soft(video, carriers) >= 0).astype(np.uint8)


# -- noise ------------------------------------------------------------------

NOISE_KINDS = ("gaussian", "blur", "quantize")

# Gaussian sigmas on the default alpha=8 textured scenes, from calibrate_flip_rate sweeps:
CALIBRATION_SIGMA = 32.0  # p_hat ~ 0.027, the working noise level of the test suite
P10_SIGMA = 50.0  # p_hat ~ 0.10
INVERSION_SIGMA = 160.0  # p_hat ~ 0.355, the flip rate of real diffusion inversion


def apply_pixel_noise(video: np.ndarray, kind: str, level: float, seed: int = 0) -> np.ndarray:
    """gaussian(sigma), blur(box radius in px) or quantize(levels) on a uint8 video."""
    if kind == "gaussian":
        if level < 0:
            raise ValueError("sigma must be non-negative")
        if level == 0:
            return video.copy()
        noise = substream(seed, "noise").normal(0.0, level, video.shape)
        return np.clip(np.rint(video + noise), 0, 255).astype(np.uint8)
    if kind == "blur":
        radius = int(level)
        if radius < 0 or radius != level:
            raise ValueError("blur radius must be a non-negative integer")
        if radius == 0:
            return video.copy()
        size = 2 * radius + 1
        out = np.empty_like(video)
        for i, frame in enumerate(video):
            out[i] = cv2.blur(frame, (size, size), borderType=cv2.BORDER_REFLECT).reshape(frame.shape)
        return out
    if kind == "quantize":
        levels = int(level)
        if levels != level or not 2 <= levels <= 256:
            raise ValueError("quantize levels must be an integer in [2, 256]")
        step = 256 / levels
        return (np.floor(video / step) * step).astype(np.uint8)
    raise ValueError(f"unknown noise kind {kind!r}")


def flip_channel(bits: np.ndarray, p: float, seed: int) -> np.ndarray:
    if not 0.0 <= p <= 0.5:
        raise ValueError("flip probability must be in [0, 0.5]")
    bits = np.asarray(bits, dtype=np.uint8)
    flips = substream(seed, "flip").random(bits.shape) < p
    return bits ^ flips.astype(np.uint8)


@dataclass(frozen=True)
class FlipEstimate:
    p_hat: float
    low: float
    high: float
    bits: int


def calibrate_flip_rate(scene: SceneSpec, carriers: CarrierBank, kind: str | None, level: float,
                        trials: int, seed: int = 0) -> FlipEstimate:
    """Fraction of latent sign bits flipped through decode -> noise -> aligned encode.

    The interval is a Wilson 95% interval treating bits as independent.
    """
    if trials < 10:
        raise ValueError("need at least 10 trials")
    g = carriers.geometry
    f_l = scene.frames // g.d_t
    content = render_content(scene)
    flips = 0
    total = 0
    for trial in range(trials):
        signs = substream(seed, "calibrate", trial).integers(0, 2, (f_l, g.n), dtype=np.uint8)
        video = modulate(signs, content, carriers, scene.alpha)
        if kind is not None:
            video = apply_pixel_noise(video, kind, level, seed=derive_seed(seed, "calibrate-noise", trial))
        flips += int(np.count_nonzero(encode_groups(video, carriers) != signs))
        total += signs.size
    p = flips / total
    z = 1.959963984540054
    denom = 1 + z * z / total
    centre = (p + z * z / (2 * total)) / denom
    half = z * math.sqrt(p * (1 - p) / total + z * z / (4 * total * total)) / denom
    return FlipEstimate(p, max(0.0, centre - half), min(1.0, centre + half), total)
