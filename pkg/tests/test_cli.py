import json
import random

import numpy as np
import pytest

from blindmark import formats
from blindmark.cli import SEGMENT_COLUMNS, main
from blindmark.toysim import random_scene, render_content


@pytest.fixture(scope="module")
def work(tmp_path_factory):
    """keygen -> embed once; the files are shared by the read-only tests below."""
    d = tmp_path_factory.mktemp("cli")
    assert main(["keygen", "--out", str(d / "k.sky"), "--seed", "11"]) == 0
    assert main(["embed", "--key", str(d / "k.sky"), "--out", str(d / "v.svd"), "--seed", "12",
                 "--mode", "distinct", "--latent", str(d / "z.slt"), "--message-out", str(d / "m.txt"),
                 "--scene-out", str(d / "scene.json")]) == 0
    return d


def run_json(capsys, argv):
    code = main(argv)
    return code, json.loads(capsys.readouterr().out)


def test_keygen_embed_extract_round_trip(work, capsys):
    d = work
    code, report = run_json(capsys, ["extract", "--key", str(d / "k.sky"), "--video", str(d / "v.svd"),
                                     "--out", str(d / "got.txt"), "--truth", str(d / "m.txt"),
                                     "--mode", "distinct", "--map", str(d / "map.json")])
    assert code == 0 and report["bit_accuracy"] == 1.0
    assert report["groups_ok"] == report["groups"] == 16 and report["pads"] == 0
    assert formats.read_message(d / "got.txt") == formats.read_message(d / "m.txt")
    assert json.loads((d / "map.json").read_text())["f_l"] == 16


def test_identical_mode_round_trip(work, tmp_path, capsys):
    d = work
    assert main(["embed", "--key", str(d / "k.sky"), "--out", str(tmp_path / "v.svd"), "--seed", "3",
                 "--mode", "identical", "--message-out", str(tmp_path / "m.txt")]) == 0
    code, report = run_json(capsys, ["extract", "--key", str(d / "k.sky"), "--video", str(tmp_path / "v.svd"),
                                     "--out", str(tmp_path / "got.txt"), "--truth", str(tmp_path / "m.txt")])
    assert code == 0 and report["bit_accuracy"] == 1.0


def test_disturbed_extract(work, tmp_path, capsys):
    d = work
    out = tmp_path / "dv.svd"
    assert main(["disturb", "--video", str(d / "v.svd"), "--out", str(out), "--seed", "5",
                 "--disturb", "insert(30),gaussian(20)", "--provenance", str(tmp_path / "prov.json")]) == 0
    assert len(formats.read_video(out)) == 94
    assert len(json.loads((tmp_path / "prov.json").read_text())["provenance"]) == 94
    code, report = run_json(capsys, ["extract", "--key", str(d / "k.sky"), "--video", str(out),
                                     "--out", str(tmp_path / "got.txt"), "--truth", str(d / "m.txt"),
                                     "--mode", "distinct"])
    assert code == 0 and report["bit_accuracy"] >= 0.97 and report["windows"] <= 94 * 4


def test_detect_watermarked_and_plain(work, tmp_path, capsys):
    d = work
    code, doc = run_json(capsys, ["detect", "--key", str(d / "k.sky"), "--video", str(d / "v.svd")])
    assert code == 0 and doc["watermarked"] and doc["accepted"][0]["start_index"] == 0
    assert all(a["z0"] >= 5 for a in doc["accepted"])
    plain = render_content(random_scene(np.random.default_rng(1), formats_geometry()))
    formats.write_video(tmp_path / "plain.svd", plain)
    code, doc = run_json(capsys, ["detect", "--key", str(d / "k.sky"), "--video", str(tmp_path / "plain.svd")])
    assert code == 2 and doc == {"accepted": [], "watermarked": False}
    code = main(["extract", "--key", str(d / "k.sky"), "--video", str(tmp_path / "plain.svd"),
                 "--out", str(tmp_path / "x.txt")])
    assert code == 2 and not (tmp_path / "x.txt").exists()


def formats_geometry():
    from blindmark.config import Geometry

    return Geometry()


def test_malformed_magic_names_offset(work, tmp_path, capsys):
    bad = tmp_path / "bad.svd"
    bad.write_bytes(b"XXXX" + (work / "v.svd").read_bytes()[4:])
    code = main(["extract", "--key", str(work / "k.sky"), "--video", str(bad), "--out", str(tmp_path / "o")])
    assert code == 1 and "offset 0" in capsys.readouterr().err
    bad_key = tmp_path / "bad.sky"
    bad_key.write_bytes(b"SKY2" + (work / "k.sky").read_bytes()[4:])
    assert main(["detect", "--key", str(bad_key), "--video", str(work / "v.svd")]) == 1
    assert "offset 0" in capsys.readouterr().err


@pytest.mark.parametrize("argv", [[], ["frobnicate"], ["keygen"], ["keygen", "--out", "x", "--seed", "-1"],
                                  ["disturb", "--video", "v", "--out", "o", "--disturb", "drop("],
                                  ["curves", "--grid", "0:1:0"], ["bench", "--Ns", "a,b"]])
def test_usage_errors(argv, capsys):
    assert main(argv) == 1
    assert "error" in capsys.readouterr().err


def test_missing_file_is_usage_error(tmp_path, capsys):
    assert main(["segment", "--video", str(tmp_path / "nope.svd")]) == 1


def test_bad_disturbance_is_usage_error(work, tmp_path):
    assert main(["disturb", "--video", str(work / "v.svd"), "--out", str(tmp_path / "o"),
                 "--disturb", "drop(500)"]) == 1


def test_segment_csv(work, tmp_path, capsys):
    assert main(["segment", "--video", str(work / "v.svd"), "--out", str(tmp_path / "s.csv")]) == 0
    lines = (tmp_path / "s.csv").read_text().splitlines()
    assert lines[0].split(",") == SEGMENT_COLUMNS and len(lines) == 64
    assert capsys.readouterr().out.splitlines() == ["segment 0 63"]


def test_calibrate_curves_bench(work, tmp_path, capsys):
    assert main(["calibrate", "--levels", "0,32", "--trials", "10", "--out", str(tmp_path / "cal.csv")]) == 0
    rows = (tmp_path / "cal.csv").read_text().splitlines()
    assert rows[0] == "kind,level,p_hat,ci_low,ci_high,bits" and rows[1].startswith("gaussian,0,0,")
    assert main(["curves", "--grid", "0,0.45", "--trials", "4", "--msg-lens", "64",
                 "--out", str(tmp_path / "c.csv")]) == 0
    assert (tmp_path / "c.csv").read_text().splitlines()[0].startswith("p,M,detect_tpr")
    assert main(["bench", "--Ns", "1,2", "--repetitions", "1", "--out", str(tmp_path / "b.csv")]) == 0
    assert len((tmp_path / "b.csv").read_text().splitlines()) == 5


def test_outputs_are_byte_identical_across_runs(work, tmp_path):
    def produce(root):
        root.mkdir()
        main(["keygen", "--out", str(root / "k.sky"), "--seed", "99"])
        main(["embed", "--key", str(root / "k.sky"), "--out", str(root / "v.svd"), "--seed", "99",
              "--latent", str(root / "z.slt"), "--message-out", str(root / "m.txt")])
        main(["disturb", "--video", str(root / "v.svd"), "--out", str(root / "d.svd"), "--seed", "99",
              "--disturb", "drop(10),gaussian(10)"])
        main(["extract", "--key", str(root / "k.sky"), "--video", str(root / "d.svd"), "--out",
              str(root / "got.txt"), "--map", str(root / "map.json"), "--report", str(root / "r.json")])
        return {p.name: p.read_bytes() for p in sorted(root.iterdir())}

    a, b = produce(tmp_path / "a"), produce(tmp_path / "b")
    assert a == b and len(a) == 8


def test_written_files_round_trip(work):
    d = work
    for read, write, name in ((formats.read_keyset, formats.write_keyset, "k.sky"),
                              (formats.read_video, formats.write_video, "v.svd"),
                              (formats.read_latent, formats.write_latent, "z.slt"),
                              (formats.read_message, formats.write_message, "m.txt")):
        obj = read(d / name)
        copy = d / f"copy-{name}"
        write(copy, obj)
        assert copy.read_bytes() == (d / name).read_bytes()


def test_seed_accepts_hex_and_u64_max(tmp_path):
    assert main(["keygen", "--out", str(tmp_path / "k.sky"), "--seed", hex(2 ** 64 - 1)]) == 0
    assert main(["keygen", "--out", str(tmp_path / "k2.sky"), "--seed", str(2 ** 64)]) == 1


def test_scene_file_is_honoured(work, tmp_path):
    d = work
    seed = str(random.Random(0).getrandbits(32))
    assert main(["embed", "--key", str(d / "k.sky"), "--out", str(tmp_path / "v.svd"), "--seed", seed,
                 "--scene", str(d / "scene.json"), "--message", str(d / "m.txt")]) == 0
    assert formats.read_video(tmp_path / "v.svd").shape == formats.read_video(d / "v.svd").shape
    (tmp_path / "broken.json").write_text("{")
    assert main(["embed", "--key", str(d / "k.sky"), "--out", str(tmp_path / "w.svd"),
                 "--scene", str(tmp_path / "broken.json")]) == 1
