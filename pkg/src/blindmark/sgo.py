"""Segment Group-Ordering: recover causal grouping and frame order of a disturbed video.

The video is cut into motion-consistent segments, then each segment is
aligned by sliding a two-group window over it and asking the PRC keys which
groups they see. Once a segment is anchored, subsequent groups are followed
one window at a time; a failed follow re-anchors on the remainder. Runs too
short to ever show two consecutive groups are tried as a single group at every
distinct placement. Every claimed frame is then verified on its own, displaced
frames are walked to their true slot and unclaimed frames are slotted between
verified neighbours. Claimed frames are finally merged into ``f_l`` groups of
``d_t`` slots, with missing slots padded by repetition.
"""
from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field

import numpy as np

from .flowseg import SegmentationConfig, segment
from .prc import KeySet, derive_key, detect_index, prc_detect
from .toysim import CarrierBank, toy_encode

SGO_MODES = ("full", "no_swdet", "none")


class NoAlignmentError(RuntimeError):
    def __init__(self, message: str = "no watermark alignment found"):
        super().__init__(message)


@dataclass
class WindowCounter:
    """Counts window inversions; stops granting windows once ``limit`` is reached."""

    limit: int | None = None
    count: int = 0

    def take(self) -> bool:
        if self.limit is not None and self.count >= self.limit:
            return False
        self.count += 1
        return True


@dataclass(frozen=True)
class Detection:
    offset: int
    start_index: int
    z0: float
    z1: float


@dataclass
class SegmentRecord:
    start: int
    end: int
    kind: str  # "pair" | "single" | "frame" | "assumed" | "none"
    offset: int | None = None
    start_index: int | None = None
    z0: float | None = None
    z1: float | None = None
    conflict: bool = False


@dataclass(frozen=True)
class Claim:
    group: int
    pos: int
    source: int
    z: float
    order: int  # record index, earlier wins ties


@dataclass
class GroupingMap:
    f_l: int
    d_t: int
    slots: list[list[dict]]
    segments: list[SegmentRecord] = field(default_factory=list)
    windows: int = 0

    def frame_indices(self) -> np.ndarray:
        """(f_l, d_t) disturbed-video frame used for each slot."""
        out = np.empty((self.f_l, self.d_t), dtype=np.int64)
        for g, row in enumerate(self.slots):
            for p, entry in enumerate(row):
                out[g, p] = entry["source"] if "source" in entry else entry["pad_of"]
        return out

    @property
    def pad_count(self) -> int:
        return sum("source" not in e for row in self.slots for e in row)

    @property
    def missing_groups(self) -> list[int]:
        return [g for g, row in enumerate(self.slots) if all(e.get("missing") for e in row)]

    def is_identity(self) -> bool:
        expect = np.arange(self.f_l * self.d_t).reshape(self.f_l, self.d_t)
        return self.pad_count == 0 and np.array_equal(self.frame_indices(), expect)

    def to_json(self) -> str:
        doc = {
            "f_l": self.f_l,
            "d_t": self.d_t,
            "windows": self.windows,
            "slots": [
                {"group": g, "pos": p, **entry}
                for g, row in enumerate(self.slots) for p, entry in enumerate(row)
            ],
            "segments": [asdict(s) for s in self.segments],
        }
        return json.dumps(doc, indent=2, sort_keys=True)

    @classmethod
    def from_json(cls, text: str) -> "GroupingMap":
        doc = json.loads(text)
        f_l, d_t = doc["f_l"], doc["d_t"]
        slots = [[None] * d_t for _ in range(f_l)]
        for s in doc["slots"]:
            slots[s["group"]][s["pos"]] = {k: v for k, v in s.items() if k not in ("group", "pos")}
        if any(e is None for row in slots for e in row):
            raise ValueError("grouping map is missing slots")
        segs = [SegmentRecord(**s) for s in doc["segments"]]
        return cls(f_l, d_t, slots, segs, doc["windows"])


class _Aligner:
    """Per-video state shared by the alignment passes."""

    def __init__(self, video, keyset: KeySet, carriers: CarrierBank, f_l: int, counter: WindowCounter):
        self.video = video
        self.keyset = keyset
        self.carriers = carriers
        self.d_t = carriers.geometry.d_t
        self.f_l = min(f_l, keyset.f_max)
        self.counter = counter
        self.claims: list[Claim] = []
        self.records: list[SegmentRecord] = []

    def rows(self, idx) -> np.ndarray | None:
        if not self.counter.take():
            return None
        return toy_encode(self.video[np.asarray(idx)], self.carriers)

    def record(self, rec: SegmentRecord) -> int:
        self.records.append(rec)
        return len(self.records) - 1

    def claim(self, group: int, pos: int, source: int, z: float, order: int) -> None:
        if 0 <= group < self.f_l:
            self.claims.append(Claim(group, pos, int(source), z, order))

    # -- sliding detection ---------------------------------------------------

    def slide(self, run: np.ndarray) -> tuple[Detection | None, list[tuple]]:
        """Sliding two-group detection over ``run``.

        Also returns every accepted single row as ``(z, group, first, last, slot0)``:
        run positions ``first..last`` map to slots ``slot0 + s``.
        """
        d = self.d_t
        padded = np.concatenate([np.repeat(run[:1], d - 1), run, np.repeat(run[-1:], d)])
        singles = []
        for j in range(len(run)):
            rows = self.rows(padded[j:j + 2 * d])
            if rows is None:
                break
            hits = [detect_index(self.keyset, r) for r in rows]
            (i0, z0, ok0), (i1, z1, ok1) = hits
            if ok0 and ok1 and i1 == i0 + 1:
                return Detection(j, i0, z0, z1), singles
            for r, (idx, z, ok) in enumerate(hits):
                if ok:
                    lo = j - d + 1 + r * d  # run position of the row's first slot
                    singles.append((z, idx, max(lo, 0), min(lo + d, len(run)) - 1, idx * d - lo))
        return None, singles

    def claim_singles(self, run: np.ndarray, base: int, singles: list[tuple]) -> bool:
        """Greedy non-overlapping single-group claims, strongest first."""
        taken = np.zeros(len(run), dtype=bool)
        used = False
        for z, idx, first, last, slot0 in sorted(singles, key=lambda t: (-t[0], t[2])):
            if taken[first:last + 1].any():
                continue
            taken[first:last + 1] = True
            order = self.record(SegmentRecord(base + first, base + last, "single",
                                              first - (slot0 - idx * self.d_t), idx, z, None))
            for s in range(first, last + 1):
                slot = slot0 + s
                self.claim(slot // self.d_t, slot % self.d_t, run[s], z, order)
            used = True
        return used

    # -- single-group placements ---------------------------------------------

    def single(self, run: np.ndarray, base: int) -> None:
        """Try the short run at every placement inside one group, padding with neutral gray."""
        d = self.d_t
        gray = np.full((1, *self.video.shape[1:]), 128, dtype=self.video.dtype)
        best = None
        for o in range(d - len(run) + 1):
            if not self.counter.take():
                break
            window = np.concatenate([np.repeat(gray, o, axis=0), self.video[run],
                                     np.repeat(gray, d - len(run) - o, axis=0)])
            idx, z, ok = detect_index(self.keyset, toy_encode(window, self.carriers)[0])
            if ok and (best is None or z > best[2]):
                best = (o, idx, z)
        if best is None:
            self.record(SegmentRecord(base, base + len(run) - 1, "none"))
            return
        o, idx, z = best
        order = self.record(SegmentRecord(base, base + len(run) - 1, "single", o, idx, z, None))
        for s, src in enumerate(run):
            self.claim(idx, o + s, src, z, order)

    # -- per-frame refinement ------------------------------------------------

    def frame_z(self, source: int, group: int, pos: int) -> float | None:
        """Detection z of one frame read alone at (group, pos), the other slots gray."""
        if not self.counter.take():
            return None
        window = np.full((self.d_t, *self.video.shape[1:]), 128, dtype=self.video.dtype)
        window[pos] = self.video[source]
        return prc_detect(derive_key(self.keyset, group), toy_encode(window, self.carriers)[0])

    def refine(self) -> None:
        """Check each claimed frame on its own and walk displaced frames forward.

        Group-level windows tolerate a frame or two from the neighbouring group,
        so scattered drops leave frames one or more slots early. Within a
        record, frames keep their order: each frame is tried at its claimed
        slot, then at the next slots after the previous frame's verified one.
        Frames that verify nowhere keep their claim at zero weight.
        """
        d = self.d_t
        limit = self.f_l * d
        by_record: dict[int, list[Claim]] = {}
        for c in self.claims:
            by_record.setdefault(c.order, []).append(c)
        out = []
        exhausted = False
        for order in sorted(by_record):
            prev = -1
            for c in sorted(by_record[order], key=lambda c: c.source):
                want = c.group * d + c.pos
                if exhausted:
                    out.append(c)
                    continue
                lo = prev + 1 if prev >= 0 else max(want - d + 1, 0)
                tries = [want] if want > prev else []
                tries += [s for s in range(lo, min(lo + d + 1, limit)) if s != want]
                placed = None
                for s in tries:
                    z = self.frame_z(c.source, s // d, s % d)
                    if z is None:
                        exhausted = True
                        break
                    if z >= self.keyset.params.detect_z:
                        placed = (s, z)
                        break
                if placed is None:
                    out.append(Claim(c.group, c.pos, c.source, 0.0, c.order))
                    continue
                s, z = placed
                out.append(Claim(s // d, s % d, c.source, z, c.order))
                prev = s
        self.claims = out
        if not exhausted:
            self.fill(len(self.records))

    def fill(self, order: int) -> None:
        """Place unclaimed frames between the verified slots of their neighbours."""
        d = self.d_t
        claimed = {c.source for c in self.claims}
        verified = sorted((c.source, c.group * d + c.pos) for c in self.claims if c.z > 0)
        if not verified:
            return  # nothing anchored, so there is nothing to fill between
        sources = [v[0] for v in verified]
        rec = None
        for k in range(len(self.video)):
            if k in claimed:
                continue
            i = int(np.searchsorted(sources, k))
            lo = verified[i - 1][1] + 1 if i > 0 else 0
            hi = verified[i][1] if i < len(verified) else self.f_l * d
            for s in range(lo, min(hi, lo + 2 * d)):
                z = self.frame_z(k, s // d, s % d)
                if z is None:
                    return
                if z >= self.keyset.params.detect_z:
                    if rec is None:
                        rec = self.record(SegmentRecord(k, k, "frame"))
                    self.records[rec].end = k
                    self.claims.append(Claim(s // d, s % d, k, z, rec))
                    break

    # -- anchored alignment --------------------------------------------------

    def align(self, run: np.ndarray, base: int) -> None:
        """Align ``run`` (disturbed frame indices, starting at position ``base``)."""
        d = self.d_t
        pos = 0
        while pos < len(run):
            rest = run[pos:]
            # A lone frame can never show two consecutive groups.
            det, singles = self.slide(rest) if len(rest) > 1 else (None, [])
            if det is None:
                if len(rest) <= d:
                    self.single(rest, base + pos)
                elif not self.claim_singles(rest, base + pos, singles):
                    self.record(SegmentRecord(base + pos, base + len(run) - 1, "none"))
                return
            j, i0 = det.offset, det.start_index
            pre = j - d + 1
            if pre > 0:
                self.align(rest[:pre], base + pos)
            first = max(pre, 0)
            end = min(j + d, len(rest) - 1)
            order = self.record(SegmentRecord(base + pos + first, base + pos + end, "pair",
                                              j, i0, det.z0, det.z1))
            for s in range(first, end + 1):
                slot = (i0 + 1) * d + s - j - 1
                self.claim(slot // d, slot % d, rest[s], det.z0 if s <= j else det.z1, order)
            cursor = j + d + 1
            group = i0 + 2
            while cursor < len(rest) and group < self.f_l:
                chunk = rest[cursor:cursor + d]
                window = np.concatenate([chunk, np.repeat(chunk[-1:], d - len(chunk))])
                rows = self.rows(window)
                if rows is None:
                    return
                z = prc_detect(derive_key(self.keyset, group), rows[0])
                if z < self.keyset.params.detect_z:
                    break
                for s, src in enumerate(chunk):
                    self.claim(group, s, src, z, order)
                self.records[order].end = base + pos + cursor + len(chunk) - 1
                cursor += d
                group += 1
            pos += cursor


def sliding_window_detect(frames: np.ndarray, keyset: KeySet, carriers: CarrierBank,
                          counter: WindowCounter | None = None) -> Detection | None:
    """First offset whose window shows two accepted, consecutive group indices."""
    counter = counter or WindowCounter()
    al = _Aligner(frames, keyset, carriers, keyset.f_max, counter)
    return al.slide(np.arange(len(frames)))[0]


def regroup(claims: list[Claim], records: list[SegmentRecord], video: np.ndarray,
            f_l: int, d_t: int) -> tuple[np.ndarray, GroupingMap]:
    if not claims:
        raise NoAlignmentError()
    winner: dict[tuple[int, int], Claim] = {}
    contested: set[int] = set()
    for c in claims:
        key = (c.group, c.pos)
        cur = winner.get(key)
        if cur is None:
            winner[key] = c
            continue
        if cur.order != c.order:
            contested.update((cur.order, c.order))
        if c.z > cur.z or (c.z == cur.z and c.order < cur.order):
            winner[key] = c
    for k in contested:
        records[k].conflict = True

    slots: list[list[dict | None]] = [[None] * d_t for _ in range(f_l)]
    for (g, p), c in winner.items():
        slots[g][p] = {"source": c.source}

    filled = [g for g in range(f_l) if any(e is not None for e in slots[g])]
    for g in filled:
        have = [p for p in range(d_t) if slots[g][p] is not None]
        for p in range(d_t):
            if slots[g][p] is None:
                near = min(have, key=lambda q: (abs(q - p), q))
                slots[g][p] = {"pad_of": slots[g][near]["source"]}
    for g in range(f_l):
        if slots[g][0] is not None:
            continue
        donor = min(filled, key=lambda h: (abs(h - g), h))
        row = slots[donor]
        edge = row[-1] if donor < g else row[0]
        src = edge.get("source", edge.get("pad_of"))
        slots[g] = [{"pad_of": src, "missing": True} for _ in range(d_t)]

    gmap = GroupingMap(f_l, d_t, slots, records)
    return video[gmap.frame_indices().ravel()], gmap


def _naive(video: np.ndarray, f_l: int, d_t: int) -> tuple[np.ndarray, GroupingMap]:
    total = f_l * d_t
    slots = []
    for g in range(f_l):
        row = []
        for p in range(d_t):
            t = g * d_t + p
            row.append({"source": t} if t < len(video) else {"pad_of": len(video) - 1})
        slots.append(row)
    gmap = GroupingMap(f_l, d_t, slots, [SegmentRecord(0, len(video) - 1, "assumed", 0, 0)])
    idx = np.minimum(np.arange(total), len(video) - 1)
    return video[idx], gmap


def sgo_run(video: np.ndarray, keyset: KeySet, carriers: CarrierBank,
            seg_cfg: SegmentationConfig = SegmentationConfig(), f_l: int | None = None,
            mode: str = "full") -> tuple[np.ndarray, GroupingMap]:
    """Regroup ``video`` into ``f_l * d_t`` frames ordered by detected global index.

    ``mode`` selects ablations: ``no_swdet`` assumes every segment starts on a
    group boundary, ``none`` truncates or pads the video as-is.
    """
    if mode not in SGO_MODES:
        raise ValueError(f"mode must be one of {SGO_MODES}")
    d_t = carriers.geometry.d_t
    f_l = carriers.geometry.f_l if f_l is None else f_l
    if len(video) == 0:
        raise NoAlignmentError()
    if mode == "none":
        return _naive(video, f_l, d_t)

    counter = WindowCounter(limit=len(video) * d_t)
    al = _Aligner(video, keyset, carriers, f_l, counter)
    for start, end in segment(video, seg_cfg).segments:
        run = np.arange(start, end + 1)
        if mode == "full":
            al.align(run, start)
            continue
        head = run[:d_t]
        rows = al.rows(np.concatenate([head, np.repeat(head[-1:], d_t - len(head))]))
        if rows is None:
            break
        idx, z, ok = detect_index(keyset, rows[0])
        if not ok:
            al.record(SegmentRecord(start, end, "none"))
            continue
        order = al.record(SegmentRecord(start, end, "assumed", 0, idx, z, None))
        for s, src in enumerate(run):
            al.claim(idx + s // d_t, s % d_t, src, z, order)
    if mode == "full":
        al.refine()
    out, gmap = regroup(al.claims, al.records, video, f_l, d_t)
    gmap.windows = counter.count
    return out, gmap
