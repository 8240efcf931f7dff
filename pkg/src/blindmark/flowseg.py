"""Optical-flow temporal segmentation.

Each adjacent frame pair gets four boundary features from bidirectional
Farneback flow: median flow magnitude, forward-backward inconsistency,
motion-compensated residual and the jump in median magnitude. Robust z-scores
of these are combined into a discontinuity score, smoothed, and cut by
hysteresis thresholding.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import cv2
import numpy as np
from scipy.ndimage import gaussian_filter1d


@dataclass(frozen=True)
class FlowParams:
    pyr_scale: float = 0.5
    levels: int = 3
    winsize: int = 15
    iterations: int = 3
    poly_n: int = 7
    poly_sigma: float = 1.5


@dataclass(frozen=True)
class SegmentationConfig:
    max_short_side: int = 288
    w_m: float = 0.35
    w_c: float = 0.30
    w_r: float = 0.25
    w_dm: float = 0.10
    sigma_s: float = 1.0
    score_hi: float = 3.0
    score_lo: float = 1.5
    mad_eps: float = 1e-9
    z_const: float = 0.6745
    flow: FlowParams = field(default_factory=FlowParams)

    def __post_init__(self):
        if not self.score_hi >= self.score_lo > 0:
            raise ValueError("need score_hi >= score_lo > 0")
        if self.sigma_s < 0:
            raise ValueError("sigma_s must be non-negative")


@dataclass(frozen=True)
class BoundaryFeatures:
    M: np.ndarray
    C: np.ndarray
    R: np.ndarray
    dM: np.ndarray

    def __len__(self):
        return len(self.M)

    def as_array(self) -> np.ndarray:
        return np.stack([self.M, self.C, self.R, self.dM], axis=1)


@dataclass(frozen=True)
class ScoreTable:
    zM: np.ndarray
    zC: np.ndarray
    zR: np.ndarray
    zdM: np.ndarray
    raw: np.ndarray
    score: np.ndarray


@dataclass(frozen=True)
class Segmentation:
    segments: list[tuple[int, int]]
    cuts: list[int]
    features: BoundaryFeatures | None
    scores: ScoreTable | None


def preprocess(frame: np.ndarray, max_short_side: int = 288) -> np.ndarray:
    frame = np.asarray(frame)
    if frame.ndim == 3 and frame.shape[2] == 1:
        frame = frame[..., 0]
    if frame.ndim == 3:
        rgb = frame[..., :3].astype(np.float64)
        gray = np.rint(rgb @ np.array([0.299, 0.587, 0.114])).clip(0, 255).astype(np.uint8)
    else:
        gray = frame.astype(np.uint8)
    h, w = gray.shape
    short = min(h, w)
    if short > max_short_side:
        scale = max_short_side / short
        size = (int(round(w * scale)), int(round(h * scale)))
        gray = cv2.resize(gray, size, interpolation=cv2.INTER_LINEAR)
    return gray


def dense_flow(a: np.ndarray, b: np.ndarray, params: FlowParams = FlowParams()) -> np.ndarray:
    """(h, w, 2) displacement (dx, dy) taking ``a`` to ``b``."""
    if a.shape != b.shape:
        raise ValueError(f"frame shapes differ: {a.shape} vs {b.shape}")
    return cv2.calcOpticalFlowFarneback(
        a, b, None, params.pyr_scale, params.levels, params.winsize,
        params.iterations, params.poly_n, params.poly_sigma, 0,
    )


def _grid(h: int, w: int) -> tuple[np.ndarray, np.ndarray]:
    ys, xs = np.mgrid[0:h, 0:w].astype(np.float32)
    return xs, ys


def _warp(img: np.ndarray, flow: np.ndarray, xs: np.ndarray, ys: np.ndarray) -> np.ndarray:
    return cv2.remap(img, xs + flow[..., 0], ys + flow[..., 1], cv2.INTER_LINEAR,
                     borderMode=cv2.BORDER_REPLICATE)


def pair_features(a: np.ndarray, b: np.ndarray, params: FlowParams = FlowParams()) -> tuple[float, float, float]:
    """(M, C, R) for one boundary between preprocessed frames ``a`` and ``b``."""
    fwd = dense_flow(a, b, params)
    bwd = dense_flow(b, a, params)
    xs, ys = _grid(*a.shape)
    m = float(np.median(np.hypot(fwd[..., 0], fwd[..., 1])))
    round_trip = fwd + _warp(bwd, fwd, xs, ys)
    c = float(np.median(np.hypot(round_trip[..., 0], round_trip[..., 1])))
    predicted = _warp(a.astype(np.float32), bwd, xs, ys)
    r = float(np.mean(np.abs(predicted - b.astype(np.float32))) / 255.0)
    return m, c, r


def boundary_features(video: np.ndarray, cfg: SegmentationConfig = SegmentationConfig()) -> BoundaryFeatures:
    if len(video) < 2:
        raise ValueError("need at least two frames")
    gray = [preprocess(f, cfg.max_short_side) for f in video]
    vals = np.array([pair_features(gray[t], gray[t + 1], cfg.flow) for t in range(len(gray) - 1)])
    m = vals[:, 0]
    dm = np.zeros_like(m)
    dm[1:] = np.abs(np.diff(m))
    return BoundaryFeatures(m, vals[:, 1], vals[:, 2], dm)


def robust_z(x: np.ndarray, cfg: SegmentationConfig = SegmentationConfig()) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    med = np.median(x)
    mad = np.median(np.abs(x - med))
    return cfg.z_const * (x - med) / (mad + cfg.mad_eps)


def discontinuity_scores(features: BoundaryFeatures, cfg: SegmentationConfig = SegmentationConfig()) -> ScoreTable:
    if len(features) < 2:
        raise ValueError("need at least two boundaries")
    zm, zc, zr, zdm = (robust_z(s, cfg) for s in (features.M, features.C, features.R, features.dM))
    raw = (cfg.w_m * np.abs(zm) + cfg.w_c * np.maximum(zc, 0)
           + cfg.w_r * np.maximum(zr, 0) + cfg.w_dm * np.maximum(zdm, 0))
    score = gaussian_filter1d(raw, cfg.sigma_s, mode="nearest") if cfg.sigma_s > 0 else raw.copy()
    return ScoreTable(zm, zc, zr, zdm, raw, score)


def hysteresis_cuts(scores: np.ndarray, score_hi: float, score_lo: float) -> list[int]:
    """Boundary index of each cut: argmax of every >= lo run that reaches hi."""
    if score_hi < score_lo:
        raise ValueError("score_hi must be >= score_lo")
    scores = np.asarray(scores, dtype=np.float64)
    cuts = []
    t = 0
    while t < len(scores):
        if scores[t] < score_lo:
            t += 1
            continue
        end = t
        while end < len(scores) and scores[end] >= score_lo:
            end += 1
        region = scores[t:end]
        if region.max() >= score_hi:
            cuts.append(t + int(np.argmax(region)))
        t = end
    return cuts


def cuts_to_segments(cuts: list[int], n_frames: int) -> list[tuple[int, int]]:
    starts = [0] + [c + 1 for c in cuts]
    ends = list(cuts) + [n_frames - 1]
    return list(zip(starts, ends))


def hysteresis_segments(scores: np.ndarray, score_hi: float, score_lo: float, n_frames: int) -> list[tuple[int, int]]:
    return cuts_to_segments(hysteresis_cuts(scores, score_hi, score_lo), n_frames)


def segment(video: np.ndarray, cfg: SegmentationConfig = SegmentationConfig()) -> Segmentation:
    n = len(video)
    if n < 3:
        # Fewer than two boundaries leaves nothing to normalise against.
        return Segmentation([(0, n - 1)] if n else [], [], None, None)
    feats = boundary_features(video, cfg)
    table = discontinuity_scores(feats, cfg)
    cuts = hysteresis_cuts(table.score, cfg.score_hi, cfg.score_lo)
    return Segmentation(cuts_to_segments(cuts, n), cuts, feats, table)
