"""Command-line entry point: ``blindmark <command> [options]``.

Exit status is 0 on success, 1 on usage or file-format errors and 2 when no
watermark alignment is found.
"""
from __future__ import annotations

import argparse
import csv
import dataclasses
import io
import json
import logging
import sys
from pathlib import Path

from . import formats
from .config import Geometry, get_profile, PROFILES
from .flowseg import SegmentationConfig, boundary_features, discontinuity_scores, hysteresis_cuts, cuts_to_segments
from .latent import MODES, Message
from .pipeline import ExtractConfig, disturb, embed_video, extract_blind, message_accuracy, parse_disturbances
from .prc import KeySet
from .reports import bench_csv, bench_scalability, curves_csv, default_grid, parse_grid, robustness_curves
from .seeds import check_seed, derive_seed, master_seed, substream
from .sgo import SGO_MODES, NoAlignmentError, sgo_run
from .toysim import DEFAULT_CARRIER_SEED, NOISE_KINDS, CarrierBank, SceneSpec, calibrate_flip_rate, random_scene

log = logging.getLogger("blindmark")

EXIT_OK, EXIT_USAGE, EXIT_NO_ALIGNMENT = 0, 1, 2


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def _u64(text: str) -> int:
    try:
        return check_seed(int(text, 0))
    except ValueError as exc:
        raise argparse.ArgumentTypeError(str(exc)) from None


def _int_list(text: str) -> list[int]:
    try:
        return [int(float(s)) for s in text.split(",") if s.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected a comma-separated integer list, got {text!r}") from None


def _float_list(text: str) -> list[float]:
    try:
        return [float(s) for s in text.split(",") if s.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected a comma-separated number list, got {text!r}") from None


# -- shared plumbing --------------------------------------------------------

def _geometry(args) -> Geometry:
    return get_profile(args.profile).geometry


def _carriers(args) -> CarrierBank:
    return CarrierBank.derive(_geometry(args), args.carrier_seed)


def _load_key(args) -> KeySet:
    keyset = formats.read_keyset(args.key)
    g = _geometry(args)
    if keyset.params.n != g.n:
        raise UsageError(f"key codeword length {keyset.params.n} does not fit profile {args.profile!r} (n={g.n})")
    return keyset


def _seg_config(args) -> SegmentationConfig:
    overrides = {k: getattr(args, k) for k in ("score_hi", "score_lo", "sigma_s") if getattr(args, k) is not None}
    try:
        return dataclasses.replace(SegmentationConfig(), **overrides)
    except ValueError as exc:
        raise UsageError(str(exc)) from None


def _write_text(path, text: str) -> None:
    if path in (None, "-"):
        sys.stdout.write(text)
    else:
        Path(path).write_text(text)


# -- commands ---------------------------------------------------------------

def cmd_keygen(args) -> int:
    prof = get_profile(args.profile)
    overrides = {k: getattr(args, k) for k in ("detect_z", "bp_iters", "channel_p") if getattr(args, k) is not None}
    try:
        params = dataclasses.replace(prof.params, **overrides)
    except ValueError as exc:
        raise UsageError(str(exc)) from None
    keyset = KeySet(params, master_seed(args.seed), args.f_max or prof.geometry.f_l)
    formats.write_keyset(args.out, keyset)
    log.info("keygen: wrote %s (n=%d, M=%d, f_max=%d)", args.out, params.n, params.msg_len, keyset.f_max)
    return EXIT_OK


def cmd_embed(args) -> int:
    keyset = _load_key(args)
    g = _geometry(args)
    carriers = _carriers(args)
    if args.message:
        message = formats.read_message(args.message)
    else:
        message = Message.random(substream(args.seed, "message"), g.f_l, keyset.params.msg_len, args.mode)
    if args.scene:
        try:
            scene = SceneSpec.from_json(Path(args.scene).read_text())
        except (KeyError, TypeError, json.JSONDecodeError) as exc:
            raise UsageError(f"malformed scene file {args.scene}: {exc}") from None
    else:
        scene = random_scene(substream(args.seed, "scene"), g)
    try:
        emb = embed_video(keyset, message, scene, carriers, derive_seed(args.seed, "encode"))
    except ValueError as exc:
        raise UsageError(str(exc)) from None
    formats.write_video(args.out, emb.video)
    if args.latent:
        formats.write_latent(args.latent, emb.latent)
    if args.message_out:
        formats.write_message(args.message_out, message)
    if args.scene_out:
        Path(args.scene_out).write_text(scene.to_json())
    log.info("embed: wrote %s (%d frames, mode=%s)", args.out, len(emb.video), message.mode)
    return EXIT_OK


def cmd_disturb(args) -> int:
    video = formats.read_video(args.video)
    try:
        spec = parse_disturbances(args.disturb)
        out = disturb(video, spec, seed=derive_seed(args.seed, "disturb"))
    except ValueError as exc:
        raise UsageError(str(exc)) from None
    formats.write_video(args.out, out.video)
    if args.provenance:
        Path(args.provenance).write_text(json.dumps({"provenance": out.provenance.tolist()}) + "\n")
    log.info("disturb: %s -> %d frames", ",".join(map(str, spec)) or "(none)", len(out.video))
    return EXIT_OK


def cmd_extract(args) -> int:
    keyset = _load_key(args)
    carriers = _carriers(args)
    video = formats.read_video(args.video)
    truth = formats.read_message(args.truth) if args.truth else None
    cfg = ExtractConfig(mode=args.mode, sgo=args.sgo, seg=_seg_config(args))
    try:
        ext = extract_blind(keyset, video, carriers, cfg)
    except NoAlignmentError as exc:
        log.error("extract: %s", exc)
        return EXIT_NO_ALIGNMENT
    formats.write_message(args.out, ext.as_message())
    if args.map:
        Path(args.map).write_text(ext.grouping.to_json() + "\n")
    report = {
        "mode": args.mode,
        "sgo": args.sgo,
        "groups_ok": int(sum(ext.statuses)),
        "groups": len(ext.statuses),
        "pads": ext.grouping.pad_count,
        "windows": ext.grouping.windows,
    }
    if truth is not None:
        if truth.bits.shape != ext.message.bits.shape:
            raise UsageError(f"truth message shape {truth.bits.shape} != extracted {ext.message.bits.shape}")
        report["bit_accuracy"] = round(message_accuracy(truth, ext), 6)
    _write_text(args.report, json.dumps(report, sort_keys=True) + "\n")
    log.info("extract: %d/%d groups decoded", report["groups_ok"], report["groups"])
    return EXIT_OK


def cmd_detect(args) -> int:
    keyset = _load_key(args)
    carriers = _carriers(args)
    video = formats.read_video(args.video)
    accepted = []
    code = EXIT_OK
    try:
        _, gmap = sgo_run(video, keyset, carriers, _seg_config(args))
        for rec in gmap.segments:
            if rec.start_index is None:
                continue
            accepted.append({"start": rec.start, "end": rec.end, "kind": rec.kind,
                             "start_index": rec.start_index, "offset": rec.offset,
                             "z0": round(rec.z0, 6), "z1": None if rec.z1 is None else round(rec.z1, 6)})
    except NoAlignmentError:
        code = EXIT_NO_ALIGNMENT
    _write_text(args.out, json.dumps({"watermarked": bool(accepted), "accepted": accepted}, sort_keys=True) + "\n")
    log.info("detect: %d accepted detections", len(accepted))
    return code


SEGMENT_COLUMNS = ["boundary", "M", "C", "R", "dM", "zM", "zC", "zR", "zdM", "score", "cut"]


def cmd_segment(args) -> int:
    video = formats.read_video(args.video)
    cfg = _seg_config(args)
    if len(video) < 3:
        raise UsageError("segmentation needs at least three frames")
    feats = boundary_features(video, cfg)
    table = discontinuity_scores(feats, cfg)
    cuts = hysteresis_cuts(table.score, cfg.score_hi, cfg.score_lo)
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(SEGMENT_COLUMNS)
    cutset = set(cuts)
    for t in range(len(feats)):
        vals = [feats.M[t], feats.C[t], feats.R[t], feats.dM[t],
                table.zM[t], table.zC[t], table.zR[t], table.zdM[t], table.score[t]]
        w.writerow([t, *(f"{v:.6g}" for v in vals), int(t in cutset)])
    _write_text(args.out, buf.getvalue())
    for start, end in cuts_to_segments(cuts, len(video)):
        print(f"segment {start} {end}", file=sys.stderr if args.out in (None, "-") else sys.stdout)
    log.info("segment: %d cuts", len(cuts))
    return EXIT_OK


def cmd_curves(args) -> int:
    params = get_profile(args.profile).params
    grid = args.grid if args.grid is not None else default_grid()
    try:
        points = robustness_curves(params, grid, args.trials, args.seed, tuple(args.msg_lens))
    except ValueError as exc:
        raise UsageError(str(exc)) from None
    _write_text(args.out, curves_csv(points))
    log.info("curves: %d points", len(points))
    return EXIT_OK


def cmd_bench(args) -> int:
    prof = get_profile(args.profile)
    try:
        records = bench_scalability(args.Ns, prof.geometry, prof.params, args.repetitions, args.seed)
    except ValueError as exc:
        raise UsageError(str(exc)) from None
    _write_text(args.out, bench_csv(records))
    log.info("bench: %d records", len(records))
    return EXIT_OK


def cmd_calibrate(args) -> int:
    g = _geometry(args)
    carriers = _carriers(args)
    if args.scene:
        scene = SceneSpec.from_json(Path(args.scene).read_text())
    else:
        scene = random_scene(substream(args.seed, "scene"), g)
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["kind", "level", "p_hat", "ci_low", "ci_high", "bits"])
    for level in args.levels:
        try:
            est = calibrate_flip_rate(scene, carriers, args.kind, level, args.trials, args.seed)
        except ValueError as exc:
            raise UsageError(str(exc)) from None
        w.writerow([args.kind, f"{level:g}", f"{est.p_hat:.6g}", f"{est.low:.6g}", f"{est.high:.6g}", est.bits])
    _write_text(args.out, buf.getvalue())
    log.info("calibrate: %d levels", len(args.levels))
    return EXIT_OK


# -- parser -----------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    common = _Parser(add_help=False)
    common.add_argument("--seed", type=_u64, default=0, help="u64 run seed (default 0)")
    common.add_argument("--profile", choices=sorted(PROFILES), default="desk")
    common.add_argument("--carrier-seed", type=_u64, default=DEFAULT_CARRIER_SEED)
    common.add_argument("-v", "--verbose", action="store_true")

    seg = _Parser(add_help=False)
    seg.add_argument("--score-hi", type=float, default=None)
    seg.add_argument("--score-lo", type=float, default=None)
    seg.add_argument("--sigma-s", type=float, default=None)

    parser = _Parser(prog="blindmark", description="Blind frame-group watermarking toolkit.")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("keygen", parents=[common], help="write a SKY1 key file")
    p.add_argument("--out", required=True)
    p.add_argument("--f-max", type=int, default=None)
    p.add_argument("--detect-z", type=float, default=None)
    p.add_argument("--bp-iters", type=int, default=None)
    p.add_argument("--channel-p", type=float, default=None)
    p.set_defaults(func=cmd_keygen)

    p = sub.add_parser("embed", parents=[common], help="render a watermarked SVD1 video")
    p.add_argument("--key", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--message", help="message file to embed (random if omitted)")
    p.add_argument("--mode", choices=MODES, default="identical", help="layout of a random message")
    p.add_argument("--scene", help="SceneSpec JSON (random if omitted)")
    p.add_argument("--latent", help="write the ground-truth SLT1 latent here")
    p.add_argument("--message-out", help="write the embedded message here")
    p.add_argument("--scene-out", help="write the scene JSON here")
    p.set_defaults(func=cmd_embed)

    p = sub.add_parser("disturb", parents=[common], help="apply a disturbance spec")
    p.add_argument("--video", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--disturb", required=True, help='e.g. "gaussian(8),drop(30),insert(4,source=duplicate)"')
    p.add_argument("--provenance", help="write per-frame source indices as JSON")
    p.set_defaults(func=cmd_disturb)

    p = sub.add_parser("extract", parents=[common, seg], help="blind message extraction")
    p.add_argument("--key", required=True)
    p.add_argument("--video", required=True)
    p.add_argument("--out", required=True, help="extracted message file")
    p.add_argument("--map", help="write the GroupingMap JSON here")
    p.add_argument("--truth", help="message file to score against")
    p.add_argument("--report", default="-", help="JSON report path (stdout by default)")
    p.add_argument("--mode", choices=MODES, default="identical")
    p.add_argument("--sgo", choices=SGO_MODES, default="full")
    p.set_defaults(func=cmd_extract)

    p = sub.add_parser("detect", parents=[common, seg], help="presence-only detection")
    p.add_argument("--key", required=True)
    p.add_argument("--video", required=True)
    p.add_argument("--out", default="-")
    p.set_defaults(func=cmd_detect)

    p = sub.add_parser("segment", parents=[common, seg], help="optical-flow boundary table")
    p.add_argument("--video", required=True)
    p.add_argument("--out", default="-")
    p.set_defaults(func=cmd_segment)

    p = sub.add_parser("curves", parents=[common], help="detect/decode robustness curves CSV")
    p.add_argument("--grid", type=parse_grid, default=None, help='"start:stop:step" or a comma list')
    p.add_argument("--trials", type=int, default=200)
    p.add_argument("--msg-lens", type=_int_list, default=[64, 256])
    p.add_argument("--out", default="-")
    p.set_defaults(func=cmd_curves)

    p = sub.add_parser("bench", parents=[common], help="blind vs non-blind extraction timing CSV")
    p.add_argument("--Ns", type=_int_list, default=[100, 1000, 10000])
    p.add_argument("--repetitions", type=int, default=3)
    p.add_argument("--out", default="-")
    p.set_defaults(func=cmd_bench)

    p = sub.add_parser("calibrate", parents=[common], help="latent flip rate per noise level")
    p.add_argument("--kind", choices=NOISE_KINDS, default="gaussian")
    p.add_argument("--levels", type=_float_list, default=[0, 10, 20, 40, 80, 160])
    p.add_argument("--trials", type=int, default=10)
    p.add_argument("--scene")
    p.add_argument("--out", default="-")
    p.set_defaults(func=cmd_calibrate)
    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except UsageError as exc:
        print(f"blindmark: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(name)s: %(message)s", stream=sys.stderr)
    try:
        return args.func(args)
    except formats.FormatError as exc:
        print(f"blindmark: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (UsageError, OSError, ValueError) as exc:
        print(f"blindmark: error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
