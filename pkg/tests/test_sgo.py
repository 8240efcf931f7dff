import numpy as np
import pytest

import blindmark.sgo as sgo
from blindmark.flowseg import segment
from blindmark.latent import Message, decode_message
from blindmark.pipeline import ExtractConfig, disturb, embed_video, extract_blind, message_accuracy
from blindmark.sgo import (Claim, GroupingMap, NoAlignmentError, SegmentRecord, WindowCounter, regroup,
                           sliding_window_detect)
from blindmark.toysim import CALIBRATION_SIGMA, encode_groups, random_scene, render_content
from oracles import boundary_correct, in_place


@pytest.fixture(scope="module")
def clean(keyset, geometry, carriers):
    rng = np.random.default_rng(77)
    msg = Message.random(rng, geometry.f_l, keyset.params.msg_len, "distinct")
    return msg, embed_video(keyset, msg, random_scene(rng, geometry), carriers, 77).video


def slot_hits(gmap: GroupingMap, provenance) -> np.ndarray:
    """Per disturbed frame: was it placed in its original slot?"""
    hit = np.zeros(len(provenance), dtype=bool)
    for g, row in enumerate(gmap.slots):
        for p, e in enumerate(row):
            src = e.get("source")
            if src is not None and provenance[src] == g * gmap.d_t + p:
                hit[src] = True
    return hit


# -- sliding window ---------------------------------------------------------

def test_slide_from_group_boundary(clean, keyset, carriers):
    det = sliding_window_detect(clean[1][20:], keyset, carriers)
    assert (det.offset, det.start_index) == (3, 5)
    assert min(det.z0, det.z1) >= keyset.params.detect_z


def test_slide_two_frames_into_group(clean, keyset, carriers):
    det = sliding_window_detect(clean[1][22:], keyset, carriers)
    assert det.offset == 1
    assert (det.start_index, det.start_index + 1) == (5, 6)


def test_slide_unwatermarked(keyset, geometry, carriers):
    for s in range(3):
        plain = render_content(random_scene(np.random.default_rng(s), geometry, frames=24))
        assert sliding_window_detect(plain, keyset, carriers) is None


def test_slide_respects_window_limit(clean, keyset, carriers):
    counter = WindowCounter(limit=2)
    assert sliding_window_detect(clean[1][20:], keyset, carriers, counter) is None
    assert counter.count == 2


# -- regroup ----------------------------------------------------------------

def test_regroup_conflicts_and_padding():
    video = np.arange(6, dtype=np.uint8).reshape(6, 1, 1, 1)
    records = [SegmentRecord(0, 1, "pair"), SegmentRecord(3, 4, "pair")]
    claims = [
        Claim(0, 0, 0, 5.0, 0), Claim(0, 1, 1, 5.0, 0),
        Claim(0, 1, 3, 7.0, 1),  # stronger claim on a taken slot
        Claim(2, 1, 4, 6.0, 1),
    ]
    out, gmap = regroup(claims, records, video, 3, 2)
    assert gmap.slots[0] == [{"source": 0}, {"source": 3}]
    assert gmap.slots[2] == [{"pad_of": 4}, {"source": 4}]
    # group 1 is equidistant from 0 and 2; the earlier group donates its last frame
    assert gmap.slots[1] == [{"pad_of": 3, "missing": True}] * 2
    assert gmap.missing_groups == [1]
    assert out.ravel().tolist() == [0, 3, 3, 3, 4, 4]
    assert records[0].conflict and records[1].conflict


def test_regroup_tie_prefers_earlier_segment():
    video = np.zeros((4, 1, 1, 1), np.uint8)
    recs = [SegmentRecord(0, 0, "single"), SegmentRecord(1, 1, "single")]
    _, gmap = regroup([Claim(0, 0, 1, 5.0, 1), Claim(0, 0, 0, 5.0, 0)], recs, video, 1, 2)
    assert gmap.slots[0][0] == {"source": 0}


def test_regroup_without_claims():
    with pytest.raises(NoAlignmentError, match="no watermark alignment found"):
        regroup([], [], np.zeros((4, 1, 1, 1), np.uint8), 1, 4)


# -- sgo_run ----------------------------------------------------------------

def test_identity_on_clean(clean, keyset, carriers):
    msg, video = clean
    out, gmap = sgo.sgo_run(video, keyset, carriers)
    assert gmap.is_identity() and gmap.pad_count == 0
    assert np.array_equal(out, video)
    truth, _ = decode_message(keyset, encode_groups(video, carriers))
    ext = extract_blind(keyset, video, carriers, ExtractConfig("distinct"))
    assert np.array_equal(ext.message.bits, truth.bits)
    assert np.array_equal(ext.message.bits, msg.bits)


def test_drop_one_full_group(clean, keyset, carriers):
    video = clean[1]
    prov = np.r_[0:20, 24:64]
    _, gmap = sgo.sgo_run(video[prov], keyset, carriers)
    assert gmap.missing_groups == [5]
    fi = gmap.frame_indices()
    for g in range(16):
        if g != 5:
            assert prov[fi[g]].tolist() == list(range(4 * g, 4 * g + 4))


def test_random_single_drops_land_in_place(clean, keyset, carriers):
    placed = total = 0
    for s in range(5):
        d = disturb(clean[1], "drop(30)", seed=s)
        _, gmap = sgo.sgo_run(d.video, keyset, carriers)
        placed += slot_hits(gmap, d.provenance).sum()
        total += len(d.video)
    assert placed >= 0.9 * total


def test_offset_soundness_at_calibration_noise(keyset, geometry, carriers, monkeypatch):
    log = []
    original = sgo._Aligner.slide

    def spy(self, run):
        det, singles = original(self, run)
        if det is not None:
            log.append((run.copy(), det))
        return det, singles

    monkeypatch.setattr(sgo._Aligner, "slide", spy)
    verdicts = []
    for s in range(5):
        rng = np.random.default_rng(300 + s)
        msg = Message.random(rng, geometry.f_l, keyset.params.msg_len, "distinct")
        video = embed_video(keyset, msg, random_scene(rng, geometry), carriers, s).video
        start = int(rng.integers(0, 31))
        for spec in ("drop(30)", "insert(30)", "swap(5)", f"clip({start},34)"):
            d = disturb(video, f"{spec},gaussian({CALIBRATION_SIGMA:g})", seed=s)
            mask = in_place(d.provenance)
            log.clear()
            try:
                sgo.sgo_run(d.video, keyset, carriers)
            except NoAlignmentError:
                pass
            verdicts += [boundary_correct(run, det, d.provenance, mask, geometry.d_t) for run, det in log]
    assert len(verdicts) >= 50, len(verdicts)
    assert 1 - np.mean(verdicts) <= 0.02


def test_window_budget_bounds(clean, keyset, carriers):
    for spec in ("", "drop(30)", "insert(30)", "swap(4)", "clip(9,34)"):
        video = disturb(clean[1], spec, seed=1).video if spec else clean[1]
        _, gmap = sgo.sgo_run(video, keyset, carriers)
        assert len(segment(video).segments) <= gmap.windows <= len(video) * carriers.geometry.d_t


def test_deterministic(clean, keyset, carriers):
    d = disturb(clean[1], "insert(10),drop(10)", seed=3).video
    a = sgo.sgo_run(d, keyset, carriers)
    b = sgo.sgo_run(d, keyset, carriers)
    assert a[1].to_json() == b[1].to_json() and np.array_equal(a[0], b[0])


def test_grouping_map_json_round_trip(clean, keyset, carriers):
    d = disturb(clean[1], "drop(12)", seed=4).video
    gmap = sgo.sgo_run(d, keyset, carriers)[1]
    back = GroupingMap.from_json(gmap.to_json())
    assert back.to_json() == gmap.to_json()
    assert np.array_equal(back.frame_indices(), gmap.frame_indices())
    assert np.all((gmap.frame_indices() >= 0) & (gmap.frame_indices() < len(d)))


def test_grouping_map_rejects_holes():
    gmap = GroupingMap(1, 2, [[{"source": 0}, {"source": 1}]])
    doc = gmap.to_json().replace('"pos": 1', '"pos": 0')
    with pytest.raises(ValueError):
        GroupingMap.from_json(doc)


def test_group_indices_increase_within_segments(clean, keyset, carriers):
    d = disturb(clean[1], "drop(20)", seed=5)
    gmap = sgo.sgo_run(d.video, keyset, carriers)[1]
    where = {}
    for g, row in enumerate(gmap.slots):
        for e in row:
            if "source" in e:
                where[e["source"]] = g
    for rec in gmap.segments:
        groups = [where[k] for k in range(rec.start, rec.end + 1) if k in where]
        assert groups == sorted(groups)


def test_unwatermarked_raises(keyset, geometry, carriers):
    plain = render_content(random_scene(np.random.default_rng(9), geometry))
    with pytest.raises(NoAlignmentError):
        sgo.sgo_run(plain, keyset, carriers)
    with pytest.raises(NoAlignmentError):
        sgo.sgo_run(plain[:0], keyset, carriers)


def test_naive_mode_pads_and_truncates(clean, keyset, carriers):
    video = clean[1]
    out, gmap = sgo.sgo_run(video[:50], keyset, carriers, mode="none")
    assert len(out) == 64 and gmap.pad_count == 14
    out, gmap = sgo.sgo_run(np.concatenate([video, video[:8]]), keyset, carriers, mode="none")
    assert np.array_equal(out, video) and gmap.windows == 0


def test_unknown_mode(clean, keyset, carriers):
    with pytest.raises(ValueError):
        sgo.sgo_run(clean[1], keyset, carriers, mode="fast")


def test_insertion_robustness_and_ablation(clean, keyset, carriers):
    msg, video = clean
    d = disturb(video, "insert(30)", seed=6).video
    base = message_accuracy(msg, extract_blind(keyset, video, carriers, ExtractConfig("distinct")))
    full = message_accuracy(msg, extract_blind(keyset, d, carriers, ExtractConfig("distinct")))
    naive = message_accuracy(msg, extract_blind(keyset, d, carriers, ExtractConfig("distinct", "none")))
    assert base - full <= 0.03
    assert naive <= 0.6
