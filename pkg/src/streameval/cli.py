"""Command-line pipeline: interpolate -> simulate -> baseline-sv -> evaluate -> report.

Each stage reads and writes plain JSON/JSON-Lines files so intermediate
artifacts stay inspectable, and every output is accompanied by a
`<output>.manifest.json` recording the command line, config snapshot, input
digests, seed, and tool version. All randomness derives from --seed.

Scene-level fan-out is capped by the ASAP_STREAM_THREADS environment
variable (default 1, serial).
"""

from __future__ import annotations

import argparse
import csv
import dataclasses
import hashlib
import json
import os
import sys
import time
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

from . import __version__
from .baseline import KalmanConfig, sv_pipeline
from .data import (
    FrameDetections,
    TdbEntry,
    TemporalDatabase,
    ValidationError,
    _box_from_json,
    _box_to_json,
    _iter_jsonl,
    group_by_scene,
    load_detections,
    load_runtime_profile,
    load_scene_annotations,
    write_detections,
    write_scene_annotations,
)
from .interp import InterpolationConfig, extend_annotations
from .metrics import MetricReport, collect_pairs, evaluate_pairs, match_recent
from .stream_sim import PredictionStream, SimConfig, StreamRecord, simulate_stream
from .synth import gen_scene, oracle_detector, scene_spec_from_dict

EXIT_OK = 0
EXIT_VALIDATION = 1
EXIT_IO = 2


class _UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    # argparse exits 2 on bad flags by default; the CLI contract is exit 1
    def error(self, message):
        raise _UsageError(message)


def _thread_count() -> int:
    try:
        return max(1, int(os.environ.get("ASAP_STREAM_THREADS", "1")))
    except ValueError:
        return 1


def _map_scenes(fn, items):
    workers = _thread_count()
    if workers == 1 or len(items) <= 1:
        return [fn(item) for item in items]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(fn, items))


def _sha256(path: str) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def _write_manifest(out_path: str, args, inputs: list[str], config: dict) -> None:
    manifest = {
        "command": [sys.argv[0] if sys.argv else "streameval", *map(str, args._argv)],
        "config": config,
        "inputs": {p: _sha256(p) for p in inputs},
        "seed": getattr(args, "seed", None),
        "version": __version__,
        "wall_clock_utc": time.strftime("%Y-%m-%dT%H:%M:%SZ", time.gmtime()),
    }
    with open(f"{out_path}.manifest.json", "w", encoding="utf-8") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
        fh.write("\n")


def _info(args, msg: str) -> None:
    if not args.quiet:
        print(msg, file=sys.stderr)


def _load_config(path: str | None) -> dict:
    if not path:
        return {}
    with open(path, "r", encoding="utf-8") as fh:
        obj = json.load(fh)
    if not isinstance(obj, dict):
        raise ValidationError("--config must contain a JSON object")
    return obj


def _pick(cli_value, config: dict, key: str, default):
    """CLI flag wins over config file, config file over the default."""
    if cli_value is not None:
        return cli_value
    return config.get(key, default)


# --------------------------------------------------------------------------
# subcommands
# --------------------------------------------------------------------------


def _cmd_synth(args) -> int:
    with open(args.spec, "r", encoding="utf-8") as fh:
        spec_obj = json.load(fh)
    spec, noise, keyframe_every = scene_spec_from_dict(spec_obj)
    seed = args.seed if args.seed is not None else spec.seed
    frames = gen_scene(spec, keyframe_every=keyframe_every)
    outputs = oracle_detector(frames, noise, seed=seed)
    write_scene_annotations(args.out_gt, frames)
    write_detections(args.out_det, [outputs[f.timestamp_us] for f in frames])
    for out in (args.out_gt, args.out_det):
        _write_manifest(out, args, [args.spec], {"spec": spec_obj, "seed": seed})
    _info(args, f"wrote {len(frames)} frames to {args.out_gt} and {args.out_det}")
    return EXIT_OK


def _cmd_interpolate(args) -> int:
    config = _load_config(args.config)
    cfg = InterpolationConfig(
        clean_iou_threshold=_pick(args.clean_iou, config, "clean_iou_threshold", 0.1),
        min_db_score=_pick(args.min_db_score, config, "min_db_score", 0.3),
        target_rate_hz=_pick(args.rate, config, "target_rate_hz", 12.0),
    )
    frames = load_scene_annotations(args.gt)
    db_by_scene: dict[str, TemporalDatabase] = {}
    inputs = [args.gt]
    if args.tdb:
        inputs.append(args.tdb)
        for scene_id, dets in group_by_scene(load_detections(args.tdb)).items():
            db_by_scene[scene_id] = TemporalDatabase(
                [TdbEntry(d.source_timestamp_us, d.boxes) for d in dets]
            )

    def one_scene(item):
        scene_id, scene_frames = item
        keyframes = [f for f in scene_frames if f.is_keyframe]
        return extend_annotations(keyframes, db_by_scene.get(scene_id), cfg)

    scenes = list(group_by_scene(frames).items())
    dense = [f for result in _map_scenes(one_scene, scenes) for f in result]
    write_scene_annotations(args.out, dense)
    _write_manifest(args.out, args, inputs, dataclasses.asdict(cfg))
    _info(args, f"wrote {len(dense)} dense frames to {args.out}")
    return EXIT_OK


def _cmd_simulate(args) -> int:
    config = _load_config(args.config)
    cfg = SimConfig(
        seed=args.seed if args.seed is not None else int(config.get("seed", 0)),
        contention_factor=_pick(args.contention, config, "contention_factor", 1.0),
        input_frame_interval=_pick(
            args.input_frame_interval, config, "input_frame_interval", 1
        ),
    )
    profile = load_runtime_profile(args.profile)
    gt_by_scene = group_by_scene(load_scene_annotations(args.gt))
    det_by_scene = group_by_scene(load_detections(args.det))
    unknown = set(det_by_scene) - set(gt_by_scene)
    if unknown:
        raise ValidationError(f"scene mismatch: detections for unknown scenes {sorted(unknown)}")

    def one_scene(scene_id):
        frames = [f.timestamp_us for f in gt_by_scene[scene_id]]
        outputs = {d.source_timestamp_us: d for d in det_by_scene.get(scene_id, [])}
        return simulate_stream(frames, outputs, profile, cfg)

    scene_ids = sorted(gt_by_scene)
    streams = _map_scenes(one_scene, scene_ids)
    with open(args.out, "w", encoding="utf-8") as fh:
        for stream in streams:
            for rec in stream.records:
                obj = {
                    "scene_id": rec.detections.scene_id,
                    "completion_us": rec.completion_us,
                    "source_us": rec.source_us,
                    "boxes": [_box_to_json(b, with_score=True) for b in rec.detections.boxes],
                }
                fh.write(json.dumps(obj, separators=(",", ":")))
                fh.write("\n")
    _write_manifest(
        args.out,
        args,
        [args.gt, args.det, args.profile],
        {"seed": cfg.seed, "contention_factor": cfg.contention_factor,
         "input_frame_interval": cfg.input_frame_interval, "profile": profile.name},
    )
    total = sum(len(s) for s in streams)
    _info(args, f"wrote {total} stream records to {args.out}")
    return EXIT_OK


def _load_streams_by_scene(path) -> dict[str, PredictionStream]:
    """Group a stream file's records per scene and validate each scene's order."""
    records_by_scene: dict[str, list[StreamRecord]] = {}
    for lineno, obj in _iter_jsonl(path):
        where = f"{path}:{lineno}"
        try:
            det = FrameDetections(
                scene_id=str(obj["scene_id"]),
                source_timestamp_us=int(obj["source_us"]),
                boxes=[_box_from_json(b, with_score=True, where=where) for b in obj["boxes"]],
            )
            rec = StreamRecord(int(obj["completion_us"]), int(obj["source_us"]), det)
        except KeyError as exc:
            raise ValidationError(f"{where}: missing field {exc.args[0]!r}") from None
        records_by_scene.setdefault(det.scene_id, []).append(rec)
    return {sid: PredictionStream(recs) for sid, recs in records_by_scene.items()}


def _cmd_baseline_sv(args) -> int:
    config = _load_config(args.config)
    kcfg = KalmanConfig(
        process_noise_pos=float(config.get("process_noise_pos", 0.5)),
        process_noise_vel=float(config.get("process_noise_vel", 0.5)),
        meas_noise_pos=float(config.get("meas_noise_pos", 0.5)),
        meas_noise_vel=float(config.get("meas_noise_vel", 1.0)),
        assoc_iou_threshold=float(config.get("assoc_iou_threshold", 0.1)),
        max_coast_us=int(config.get("max_coast_us", 1_000_000)),
    )
    gt_by_scene = group_by_scene(load_scene_annotations(args.gt))
    streams = _load_streams_by_scene(args.stream)
    unknown = set(streams) - set(gt_by_scene)
    if unknown:
        raise ValidationError(f"scene mismatch: stream for unknown scenes {sorted(unknown)}")

    with open(args.out, "w", encoding="utf-8") as fh:
        for scene_id in sorted(streams):
            stream = streams[scene_id]
            eval_ts = [f.timestamp_us for f in gt_by_scene[scene_id]]
            fn = sv_pipeline(stream, eval_ts, kcfg, scene_id=scene_id)
            # refinements grouped under the record that theta-matches them
            refined_by_record: dict[int, list] = {i: [] for i in range(len(stream))}
            for t in eval_ts:
                m = match_recent(stream, t)
                if m.matched_record_index is None:
                    continue
                refined_by_record[m.matched_record_index].append(
                    {"eval_us": t, "boxes": [_box_to_json(b, True) for b in fn(t).boxes]}
                )
            for i, rec in enumerate(stream.records):
                obj = {
                    "scene_id": scene_id,
                    "completion_us": rec.completion_us,
                    "source_us": rec.source_us,
                    "boxes": [_box_to_json(b, True) for b in rec.detections.boxes],
                    "refined": refined_by_record[i],
                }
                fh.write(json.dumps(obj, separators=(",", ":")))
                fh.write("\n")
    _write_manifest(args.out, args, [args.stream, args.gt], dataclasses.asdict(kcfg))
    _info(args, f"wrote refined stream to {args.out}")
    return EXIT_OK


def _load_sv_refinements(path) -> dict[str, dict[int, list]]:
    """eval timestamp -> refined boxes, per scene, from a baseline-sv file."""
    out: dict[str, dict[int, list]] = {}
    for lineno, obj in _iter_jsonl(path):
        where = f"{path}:{lineno}"
        scene = str(obj.get("scene_id"))
        for entry in obj.get("refined", []):
            boxes = [
                _box_from_json(b, with_score=True, where=where) for b in entry["boxes"]
            ]
            out.setdefault(scene, {})[int(entry["eval_us"])] = boxes
    return out


def _cmd_evaluate(args) -> int:
    gt_by_scene = group_by_scene(load_scene_annotations(args.gt))
    streams = _load_streams_by_scene(args.stream)
    unknown = set(streams) - set(gt_by_scene)
    if unknown:
        raise ValidationError(f"scene mismatch: stream for unknown scenes {sorted(unknown)}")
    offline: dict[tuple[str, int], FrameDetections] = {}
    inputs = [args.gt, args.stream]
    if args.offline:
        inputs.append(args.offline)
        for det in load_detections(args.offline):
            offline[(det.scene_id, det.source_timestamp_us)] = det

    sv = _load_sv_refinements(args.sv) if args.sv else None
    if args.sv:
        inputs.append(args.sv)

    # simulation provenance (profile, seed, contention) travels in the
    # stream's manifest sidecar when the stream came from `simulate`
    sim_meta = {}
    stream_manifest = Path(f"{args.stream}.manifest.json")
    if stream_manifest.exists():
        try:
            echo = json.loads(stream_manifest.read_text()).get("config", {})
        except json.JSONDecodeError:
            echo = {}
        for key in ("profile", "contention_factor", "seed"):
            if key in echo:
                sim_meta["sim_seed" if key == "seed" else key] = echo[key]

    def one_scene(scene_id):
        frames = gt_by_scene[scene_id]
        stream = streams.get(scene_id, PredictionStream([]))
        predictions_fn = None
        if sv is not None:
            by_ts = sv.get(scene_id, {})

            def predictions_fn(t, _by_ts=by_ts, _sid=scene_id, _stream=stream):
                boxes = _by_ts.get(t)
                if boxes is None:
                    # empty only before the first completion; a covered
                    # timestamp missing from the sv file means the stages
                    # were run against different ground truth
                    if match_recent(_stream, t).matched_record_index is not None:
                        raise ValidationError(
                            f"sv file does not cover eval timestamp {t} of scene {_sid!r}"
                        )
                    boxes = []
                return FrameDetections(_sid, t, boxes)

        return collect_pairs(frames, stream, predictions_fn)

    scene_ids = sorted(gt_by_scene)
    pair_lists = _map_scenes(one_scene, scene_ids)
    pairs = [p for lst in pair_lists for p in lst]
    gt_all = [f for sid in scene_ids for f in gt_by_scene[sid]]
    report = evaluate_pairs(
        pairs,
        offline_outputs=offline if args.offline else None,
        gt_frames_for_ave=gt_all,
        metadata={
            "scenes": scene_ids,
            "gt": Path(args.gt).name,
            "stream": Path(args.stream).name,
            "sv": bool(args.sv),
            "seed": args.seed,
            **sim_meta,
        },
    )
    with open(args.out, "w", encoding="utf-8") as fh:
        json.dump(report.to_dict(), fh, indent=2)
        fh.write("\n")
    if args.csv:
        _write_report_csv(args.csv, report)
    _write_manifest(args.out, args, inputs, {"sv": bool(args.sv)})
    _info(args, f"mAP-S={report.map_s:.4f} NDS-S={report.nds_s:.4f} -> {args.out}")
    return EXIT_OK


def _write_report_csv(path, report: MetricReport) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["class", "threshold_m", "ap"])
        for (cls, thr), ap in sorted(report.per_class_ap.items()):
            writer.writerow([cls, f"{thr:g}", f"{ap:.6f}"])
        writer.writerow([])
        writer.writerow(["summary", "metric", "value"])
        for name in ("map_s", "nds_s", "ate_s", "ase_s", "aoe_s", "aae_s", "ave_offline"):
            writer.writerow(["summary", name, f"{getattr(report, name):.6f}"])


def _cmd_report(args) -> int:
    if not args.reports:
        raise ValidationError("no reports given")
    reports = []
    for path in args.reports:
        with open(path, "r", encoding="utf-8") as fh:
            reports.append((path, MetricReport.from_dict(json.load(fh))))

    if args.compare:
        if len(reports) != 2:
            raise ValidationError("--compare takes exactly two reports")
        (pa, ra), (pb, rb) = reports
        with open(args.out, "w", newline="", encoding="utf-8") as fh:
            writer = csv.writer(fh)
            writer.writerow(["metric", Path(pa).name, Path(pb).name, "delta"])
            for name in ("map_s", "nds_s"):
                a, b = getattr(ra, name), getattr(rb, name)
                writer.writerow([name, f"{a:.6f}", f"{b:.6f}", f"{b - a:.6f}"])
    else:
        with open(args.out, "w", newline="", encoding="utf-8") as fh:
            writer = csv.writer(fh)
            writer.writerow(["report", "contention", "metric", "value"])
            metric_names = ("map_s", "nds_s", "ate_s", "ase_s", "aoe_s", "aae_s", "ave_offline")
            for path, rep in reports:
                contention = rep.metadata.get("contention_factor", "")
                for name in metric_names:
                    writer.writerow(
                        [Path(path).name, contention, name, f"{getattr(rep, name):.6f}"]
                    )
            # pivot of the two headline metrics across contention factors
            for name in ("map_s", "nds_s"):
                for path, rep in reports:
                    writer.writerow(
                        ["PIVOT", rep.metadata.get("contention_factor", ""), name,
                         f"{getattr(rep, name):.6f}"]
                    )
    _write_manifest(args.out, args, list(args.reports), {"compare": bool(args.compare)})
    _info(args, f"wrote {args.out}")
    return EXIT_OK


# --------------------------------------------------------------------------
# parser
# --------------------------------------------------------------------------


def _build_parser() -> _Parser:
    parser = _Parser(prog="streameval", description=__doc__)
    parser.add_argument("--seed", type=int, default=None, help="seed for all randomness")
    parser.add_argument("--config", default=None, help="JSON file of config overrides")
    parser.add_argument("--quiet", action="store_true", help="suppress progress output")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="generate a synthetic scene and oracle detections")
    p.add_argument("--spec", required=True)
    p.add_argument("--out-gt", required=True)
    p.add_argument("--out-det", required=True)
    p.set_defaults(fn=_cmd_synth)

    p = sub.add_parser("interpolate", help="densify keyframe annotations")
    p.add_argument("--gt", required=True, help="keyframe annotations (.gt.jsonl)")
    p.add_argument("--tdb", default=None, help="temporal database (.tdb.jsonl)")
    p.add_argument("--rate", type=float, default=None, help="target rate in Hz (default 12)")
    p.add_argument("--clean-iou", type=float, default=None, help="auto-clean IoU threshold")
    p.add_argument("--min-db-score", type=float, default=None, help="database score cutoff")
    p.add_argument("--out", required=True)
    p.set_defaults(fn=_cmd_interpolate)

    p = sub.add_parser("simulate", help="simulate the prediction stream under latency")
    p.add_argument("--det", required=True, help="per-frame detector outputs (.det.jsonl)")
    p.add_argument("--gt", required=True, help="dense annotations giving the input clock")
    p.add_argument("--profile", required=True, help="runtime profile JSON")
    p.add_argument("--contention", type=float, default=None, help="runtime slowdown factor")
    p.add_argument("--input-frame-interval", type=int, default=None)
    p.add_argument("--out", required=True)
    p.set_defaults(fn=_cmd_simulate)

    p = sub.add_parser("baseline-sv", help="velocity-based updating over a stream")
    p.add_argument("--stream", required=True)
    p.add_argument("--gt", required=True, help="dense annotations giving eval timestamps")
    p.add_argument("--out", required=True)
    p.set_defaults(fn=_cmd_baseline_sv)

    p = sub.add_parser("evaluate", help="streaming evaluation of a prediction stream")
    p.add_argument("--gt", required=True)
    p.add_argument("--stream", required=True)
    p.add_argument("--offline", default=None, help="raw detector outputs for velocity error")
    p.add_argument("--sv", default=None, help="baseline-sv output to evaluate instead of raw")
    p.add_argument("--out", required=True, help="report JSON path")
    p.add_argument("--csv", default=None, help="optional CSV table path")
    p.set_defaults(fn=_cmd_evaluate)

    p = sub.add_parser("report", help="tabulate or compare evaluation reports")
    p.add_argument("reports", nargs="*", help="report JSON files")
    p.add_argument("--compare", action="store_true", help="diff two reports")
    p.add_argument("--out", required=True)
    p.set_defaults(fn=_cmd_report)

    return parser


def run(argv: list[str] | None = None) -> int:
    """Entry point; returns the process exit code."""
    argv = list(sys.argv[1:]) if argv is None else list(argv)
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
    except _UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        parser.print_usage(sys.stderr)
        return EXIT_VALIDATION
    args._argv = argv
    try:
        return args.fn(args)
    except ValidationError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    except OSError as exc:
        print(f"i/o error: {exc}", file=sys.stderr)
        return EXIT_IO
    except json.JSONDecodeError as exc:
        print(f"error: malformed JSON: {exc}", file=sys.stderr)
        return EXIT_VALIDATION


def main() -> None:
    sys.exit(run())


if __name__ == "__main__":
    main()
