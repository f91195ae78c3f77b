"""Command-line entry point: one binary, verb-style subcommands.

Machine-readable payloads (summaries, reports, errors) go to stdout as
JSON; progress and human-readable tables go to stderr. Exit code 0 means
every input was processed. Output files are written through a temp path
and renamed, so failed runs leave no partial outputs.
"""

from __future__ import annotations

import json
import os
import sys

import click
import numpy as np

from . import ingest
from .aggregate import AggregationStrategy, aggregate_sweeps, strategy_for_class
from .config import PipelineConfig, default_taxonomy, load_config
from .metrics import evaluate_detections, map2d
from .pipeline import annotate_scene
from .prior import load_expert_records
from .refine import apply_velocities, assign_track_ids, associate, refine_scores
from .score import tune_alpha as tune_alpha_op

THREADS_ENV = "CUBOIDLIFT_THREADS"


def _fail(message: str, kind: str = "input_error") -> None:
    click.echo(json.dumps({"error": {"kind": kind, "message": message}}))
    sys.exit(1)


def _load_config_arg(path) -> PipelineConfig:
    if path is None:
        return PipelineConfig()
    try:
        return load_config(path)
    except (OSError, ValueError, KeyError, json.JSONDecodeError) as e:
        _fail(f"config: {e}")


def _resolve_threads(flag, config: PipelineConfig) -> int:
    if flag is not None:
        return flag
    env = os.environ.get(THREADS_ENV)
    if env is not None:
        try:
            return int(env)
        except ValueError:
            _fail(f"bad {THREADS_ENV} value {env!r}")
    return config.threads


def _atomic_write(path, write_fn) -> None:
    tmp = f"{path}.tmp.{os.getpid()}"
    try:
        write_fn(tmp)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.remove(tmp)
        raise


@click.group()
def main():
    """Lift 2D detections into 3D cuboids on LiDAR, score and evaluate them."""


@main.command()
@click.option("--scene", "scene_path", required=True, type=click.Path())
@click.option("--detections", "det_path", required=True, type=click.Path())
@click.option("--expert", "expert_path", type=click.Path(), default=None)
@click.option("--config", "config_path", type=click.Path(), default=None)
@click.option("--out", "out_path", required=True, type=click.Path())
@click.option("--threads", type=int, default=None, help="worker threads, 0 = auto")
@click.option("--seed", type=int, default=None)
def annotate(scene_path, det_path, expert_path, config_path, out_path, threads, seed):
    """Generate scored 3D cuboid annotations for a scene."""
    config = _load_config_arg(config_path)
    try:
        scene = ingest.load_scene(scene_path, stride=config.sweep_stride)
        detections = ingest.load_detections(det_path, config.taxonomy)
        expert_index = load_expert_records(expert_path) if expert_path else None
    except (OSError, ingest.FormatError, ValueError, KeyError, json.JSONDecodeError) as e:
        _fail(str(e))

    n_threads = _resolve_threads(threads, config)
    try:
        frames, summary = annotate_scene(
            scene, detections, config, expert_index=expert_index, threads=n_threads
        )
    except (ValueError, KeyError) as e:
        _fail(str(e), kind="pipeline_error")

    flat = [a for frame in frames for a in frame]
    _atomic_write(out_path, lambda p: ingest.write_annotations(flat, p))
    if seed is not None:
        summary["seed"] = seed
    click.echo(json.dumps(summary))


@main.command("eval")
@click.option("--pred", "pred_path", required=True, type=click.Path())
@click.option("--gt", "gt_path", required=True, type=click.Path())
@click.option("--config", "config_path", type=click.Path(), default=None)
@click.option("--stratify", is_flag=True, default=False)
@click.option("--pred-2d", "pred2d_path", type=click.Path(), default=None)
@click.option("--gt-2d", "gt2d_path", type=click.Path(), default=None)
@click.option("--seed", type=int, default=None, hidden=True)  # accepted for interface parity
@click.option("--threads", type=int, default=None, hidden=True)
def eval_cmd(pred_path, gt_path, config_path, stratify, pred2d_path, gt2d_path, seed, threads):
    """nuScenes-style metrics over two annotation files."""
    config = _load_config_arg(config_path)
    try:
        preds = ingest.load_annotations(pred_path)
        gts = ingest.load_annotations(gt_path)
    except (OSError, ingest.FormatError) as e:
        _fail(str(e))
    report = evaluate_detections(preds, gts, stratify=stratify)
    if pred2d_path and gt2d_path:
        try:
            pred2d = ingest.load_detections(pred2d_path, config.taxonomy)
            gt2d = ingest.load_detections(gt2d_path, config.taxonomy)
        except (OSError, ingest.FormatError) as e:
            _fail(str(e))
        report.map2d = map2d(pred2d, gt2d)
    click.echo(json.dumps(report.to_json()))
    click.echo(report.format_table(), err=True)


@main.command()
@click.option("--spec", "spec_path", required=True, type=click.Path())
@click.option("--out", "out_dir", required=True, type=click.Path())
@click.option("--seed", type=int, default=None, help="overrides the spec seed")
@click.option("--threads", type=int, default=None, hidden=True)
def synth(spec_path, out_dir, seed, threads):
    """Generate a synthetic scene in the pipeline's own file formats."""
    from .prior import write_expert_records
    from .synth import generate_scene, random_scene_spec

    try:
        with open(spec_path) as f:
            doc = json.load(f)
    except (OSError, json.JSONDecodeError) as e:
        _fail(f"spec: {e}")
    allowed = {
        "seed",
        "n_objects",
        "n_sweeps",
        "classes",
        "noise_sigma",
        "points_per_object",
        "moving_fraction",
        "ego_speed",
    }
    unknown = set(doc) - allowed
    if unknown:
        _fail(f"spec: unknown key(s) {sorted(unknown)}")
    taxonomy = default_taxonomy()
    try:
        spec = random_scene_spec(
            seed=seed if seed is not None else int(doc.get("seed", 0)),
            taxonomy=taxonomy,
            n_objects=int(doc.get("n_objects", 8)),
            classes=doc.get("classes"),
            n_sweeps=int(doc.get("n_sweeps", 1)),
            noise_sigma=float(doc.get("noise_sigma", 0.0)),
            points_per_object=tuple(doc.get("points_per_object", (150, 250))),
            moving_fraction=float(doc.get("moving_fraction", 0.0)),
            ego_speed=float(doc.get("ego_speed", 0.0)),
        )
        built = generate_scene(spec)
    except ValueError as e:
        _fail(str(e), kind="spec_error")

    os.makedirs(out_dir, exist_ok=True)
    ingest.write_scene(built.scene, out_dir)
    ingest.write_detections(built.detections, os.path.join(out_dir, "detections.ndjson"))
    write_expert_records(built.expert_records, os.path.join(out_dir, "expert.ndjson"))
    ingest.write_annotations(built.gt_flat, os.path.join(out_dir, "gt.ndjson"))
    click.echo(
        json.dumps(
            {
                "scene": os.path.join(out_dir, "scene.json"),
                "detections": len(built.detections),
                "objects": len(spec.objects),
                "sweeps": len(built.scene.sweeps),
            }
        )
    )


@main.command("tune-alpha")
@click.option("--pred", "pred_path", required=True, type=click.Path())
@click.option("--gt", "gt_path", required=True, type=click.Path())
@click.option("--config", "config_path", type=click.Path(), default=None)
@click.option("--seed", type=int, default=None, hidden=True)
@click.option("--threads", type=int, default=None, hidden=True)
def tune_alpha(pred_path, gt_path, config_path, seed, threads):
    """Pick the score-fusion weight maximizing validation mAP3D.

    Predictions must carry the s2d/s3d fields written by annotate.
    """
    _load_config_arg(config_path)
    try:
        preds = ingest.load_annotations(pred_path)
        gts = ingest.load_annotations(gt_path)
        alpha = tune_alpha_op(preds, gts)
    except (OSError, ingest.FormatError, ValueError) as e:
        _fail(str(e))
    click.echo(json.dumps({"alpha": alpha}))


@main.command("aggregate-only")
@click.option("--scene", "scene_path", required=True, type=click.Path())
@click.option("--frame", "frame_id", required=True)
@click.option("--class", "class_label", default=None)
@click.option("--past", type=int, default=None)
@click.option("--future", type=int, default=None)
@click.option("--config", "config_path", type=click.Path(), default=None)
@click.option("--out", "out_path", required=True, type=click.Path())
@click.option("--seed", type=int, default=None, hidden=True)
@click.option("--threads", type=int, default=None, hidden=True)
def aggregate_only(scene_path, frame_id, class_label, past, future, config_path, out_path, seed, threads):
    """Write the ego-motion-compensated window around one frame."""
    config = _load_config_arg(config_path)
    try:
        scene = ingest.load_scene(scene_path, stride=config.sweep_stride)
    except (OSError, ingest.FormatError, json.JSONDecodeError, ValueError, KeyError) as e:
        _fail(str(e))
    index = {sw.frame_id: i for i, sw in enumerate(scene.sweeps)}
    if frame_id not in index:
        _fail(f"unknown frame {frame_id!r}")
    if class_label is not None:
        try:
            strat = strategy_for_class(config.taxonomy, class_label)
        except KeyError as e:
            _fail(str(e))
    else:
        strat = AggregationStrategy(past=past or 0, future=future or 0)
    pts = aggregate_sweeps(scene.sweeps, index[frame_id], strat)
    full = np.zeros((len(pts), 4), dtype=np.float32)
    full[:, :3] = pts
    full[:, 3] = 0.5
    _atomic_write(
        out_path, lambda p: ingest.write_sweep_points(full, p, stride=config.sweep_stride)
    )
    click.echo(json.dumps({"points": int(len(pts)), "past": strat.past, "future": strat.future}))


@main.command("track-only")
@click.option("--pred", "pred_path", required=True, type=click.Path())
@click.option("--scene", "scene_path", type=click.Path(), default=None)
@click.option("--config", "config_path", type=click.Path(), default=None)
@click.option("--out", "out_path", required=True, type=click.Path())
@click.option("--seed", type=int, default=None, hidden=True)
@click.option("--threads", type=int, default=None, hidden=True)
def track_only(pred_path, scene_path, config_path, out_path, seed, threads):
    """Track annotations across frames and refine their scores.

    Frames are ordered by first appearance in the file unless --scene
    supplies timestamps.
    """
    config = _load_config_arg(config_path)
    try:
        anns = ingest.load_annotations(pred_path)
    except (OSError, ingest.FormatError) as e:
        _fail(str(e))

    frame_order = []
    for a in anns:
        if a.frame_id not in frame_order:
            frame_order.append(a.frame_id)
    timestamps = list(range(0, len(frame_order) * 1_000_000, 1_000_000))
    if scene_path:
        try:
            scene = ingest.load_scene(scene_path, stride=config.sweep_stride)
        except (OSError, ingest.FormatError, json.JSONDecodeError, ValueError, KeyError) as e:
            _fail(str(e))
        ts_by_frame = {sw.frame_id: sw.timestamp for sw in scene.sweeps}
        missing = [f for f in frame_order if f not in ts_by_frame]
        if missing:
            _fail(f"annotations reference frames missing from the scene: {missing}")
        frame_order.sort(key=lambda f: ts_by_frame[f])
        timestamps = [ts_by_frame[f] for f in frame_order]

    frames = [[a for a in anns if a.frame_id == f] for f in frame_order]
    tracks = associate(frames, config.taxonomy)
    frames = refine_scores(tracks, frames)
    frames = apply_velocities(tracks, frames, timestamps)
    frames = assign_track_ids(tracks, frames)
    flat = [a for frame in frames for a in frame]
    _atomic_write(out_path, lambda p: ingest.write_annotations(flat, p))
    click.echo(json.dumps({"annotations": len(flat), "tracks": len(tracks)}))


if __name__ == "__main__":
    main()
