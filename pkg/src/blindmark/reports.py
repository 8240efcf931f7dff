"""Robustness curves over the flip channel and the extraction-cost benchmark."""
from __future__ import annotations

import csv
import io
import math
import time
from dataclasses import dataclass, replace

import numpy as np

from . import gf2
from .baseline import NonblindDB, baseline_decode, baseline_encode, nonblind_extract, stream_key
from .config import Geometry
from .latent import Message
from .pipeline import ExtractConfig, embed_video, extract_blind
from .prc import KeySet, PrcParams, derive_key, prc_decode_batch, prc_detect
from .seeds import derive_seed, master_seed, substream
from .toysim import CarrierBank, random_scene


@dataclass(frozen=True)
class CurvePoint:
    p: float
    msg_len: int
    detect_tpr: float
    decode_success: float
    decode_bitacc: float
    baseline_bitacc: float
    trials: int


@dataclass(frozen=True)
class BenchRecord:
    N: int
    method: str
    seconds_mean: float
    seconds_std: float
    match_ops: int


def default_grid(step: float = 0.025, stop: float = 0.5) -> list[float]:
    return [round(x, 6) for x in np.arange(0.0, stop + step / 2, step)]


def parse_grid(text: str) -> list[float]:
    """``"0:0.5:0.025"`` (start:stop:step, inclusive) or a comma list."""
    if ":" in text:
        start, stop, step = (float(s) for s in text.split(":"))
        if step <= 0:
            raise ValueError("grid step must be positive")
        count = int(math.floor((stop - start) / step + 1e-9)) + 1
        return [round(start + i * step, 6) for i in range(count)]
    return [float(s) for s in text.split(",") if s.strip()]


def _curve_point(key, keyset_params: PrcParams, p: float, trials: int, seed: int,
                 f_l: int, baseline_reps_len: int) -> CurvePoint:
    P = keyset_params
    rng = substream(seed, "curve", int(round(p * 1e6)), P.msg_len)
    msgs = rng.integers(0, 2, (trials, P.msg_len), dtype=np.uint8)
    rand = rng.integers(0, 2, (trials, P.rand_len), dtype=np.uint8)
    u = np.concatenate([rand, msgs], axis=1)
    words = gf2.matvec(key.generator[:, : P.info_len], u.T).T ^ key.otp
    noisy = words ^ (rng.random(words.shape) < p).astype(np.uint8)

    tpr = float(np.mean(prc_detect(key, noisy) >= P.detect_z))
    ok, m_hat = prc_decode_batch(key, noisy)
    exact = ok & (m_hat == msgs).all(axis=1)
    acc = float(np.mean(m_hat == msgs))

    # The stream baseline spreads each message over a whole video template.
    base = []
    for trial in range(trials):
        skey = stream_key(derive_seed(seed, "curve-baseline", trial, P.msg_len))
        tmpl = baseline_encode(skey, msgs[trial], f_l, baseline_reps_len)
        flipped = tmpl ^ (rng.random(tmpl.shape) < p).astype(np.uint8)
        base.append(np.mean(baseline_decode(skey, flipped, P.msg_len) == msgs[trial]))
    return CurvePoint(p, P.msg_len, tpr, float(np.mean(exact)), acc, float(np.mean(base)), trials)


def robustness_curves(params: PrcParams, grid: list[float], trials: int = 200, seed: int = 0,
                      msg_lens=(64, 256), f_l: int = 16) -> list[CurvePoint]:
    """Detect / decode / baseline rates over the flip channel for each message length."""
    if any(not 0.0 <= p <= 0.5 for p in grid):
        raise ValueError("grid must lie in [0, 0.5]")
    if trials < 1:
        raise ValueError("trials must be positive")
    out = []
    for m in msg_lens:
        P = replace(params, msg_len=m)
        key = derive_key(KeySet(P, master_seed(seed), 1), 0)
        for p in grid:
            out.append(_curve_point(key, P, p, trials, seed, f_l, P.n))
    return out


def threshold(points: list[CurvePoint], metric: str, level: float = 0.95) -> float:
    """Largest grid p before the metric first drops below ``level``."""
    pts = sorted(points, key=lambda c: c.p)
    best = -1.0
    for c in pts:
        if getattr(c, metric) < level:
            break
        best = c.p
    return best


def _fmt(x) -> str:
    return f"{x:.6g}" if isinstance(x, float) else str(x)


def curves_csv(points: list[CurvePoint]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["p", "M", "detect_tpr", "decode_success", "decode_bitacc", "baseline_bitacc", "trials"])
    for c in points:
        w.writerow([_fmt(float(c.p)), c.msg_len, _fmt(c.detect_tpr), _fmt(c.decode_success),
                    _fmt(c.decode_bitacc), _fmt(c.baseline_bitacc), c.trials])
    return buf.getvalue()


# -- scalability ------------------------------------------------------------

def _time(fn, repetitions: int) -> tuple[float, float]:
    fn()  # warm caches (key derivation, cv2 buffers)
    samples = []
    for _ in range(repetitions):
        t0 = time.perf_counter()
        fn()
        samples.append(time.perf_counter() - t0)
    return float(np.mean(samples)), float(np.std(samples))


def bench_scalability(Ns: list[int], geometry: Geometry = Geometry(), params: PrcParams = PrcParams(),
                      repetitions: int = 3, seed: int = 0,
                      blind_repetitions: int | None = None) -> list[BenchRecord]:
    """Time one blind and one non-blind extraction against N stored videos.

    The blind extractor never sees the database, so N only changes the
    non-blind side. Both run in this thread; numpy is not parallelised here
    beyond what BLAS does for the small matmuls.
    """
    if list(Ns) != sorted(Ns) or not Ns or Ns[0] < 1:
        raise ValueError("N list must be ascending positive integers")
    g = geometry
    keyset = KeySet(params, master_seed(seed), g.f_l)
    carriers = CarrierBank.derive(g)
    rng = substream(seed, "bench")
    msg = Message.random(rng, g.f_l, params.msg_len, "identical")
    scene = random_scene(rng, g)
    video = embed_video(keyset, msg, scene, carriers, seed).video
    cfg = ExtractConfig()

    windows = []

    def blind():
        windows.append(extract_blind(keyset, video, carriers, cfg).grouping.windows)

    out = []
    for N in Ns:
        db = NonblindDB(g.f_l, g.n)
        for r in range(N):
            db.add(derive_seed(seed, "bench-record", r), rng.integers(0, 2, params.msg_len, dtype=np.uint8))
        target = db.records[N // 2]
        observed = db.template(target)
        db.alignments = 0
        runs = [0]

        def nonblind():
            nonblind_extract(db, observed)
            runs[0] += 1

        mean, std = _time(nonblind, repetitions)
        out.append(BenchRecord(N, "nonblind", mean, std, db.alignments // runs[0]))
        windows.clear()
        mean, std = _time(blind, blind_repetitions or repetitions)
        out.append(BenchRecord(N, "blind", mean, std, max(windows)))
    return out


def bench_csv(records: list[BenchRecord]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["N", "method", "seconds_mean", "seconds_std", "match_ops"])
    for r in records:
        w.writerow([r.N, r.method, _fmt(r.seconds_mean), _fmt(r.seconds_std), r.match_ops])
    return buf.getvalue()


@dataclass(frozen=True)
class LineFit:
    slope: float
    intercept: float
    r2: float


def fit_line(x, y) -> LineFit:
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    slope, intercept = np.polyfit(x, y, 1)
    resid = y - (slope * x + intercept)
    ss_tot = float(np.sum((y - y.mean()) ** 2))
    r2 = 1.0 - float(np.sum(resid ** 2)) / ss_tot if ss_tot > 0 else 1.0
    return LineFit(float(slope), float(intercept), r2)
