"""Load and persist pipeline data: sweeps, calibration, detections, annotations.

File formats (all distances meters, all angles radians, timestamps integer
microseconds):

* sweeps: raw little-endian float32 records, stride 4 (x, y, z, intensity)
  or 5 (x, y, z, intensity, ring; ring discarded). The stride comes from
  config and is never auto-sniffed.
* scene manifest: one JSON document with cameras (id, intrinsics,
  extrinsics ego<-camera), lidar extrinsics ego<-lidar, and an ordered
  sweep list (frame_id, timestamp, ego_pose as quaternion wxyz +
  translation xyz, relative file path).
* detections: NDJSON {frame_id, camera_id, class, box:[x1,y1,x2,y2],
  score, mask_rle?}. Masks are run-length encoded over row-major pixel
  order, counts starting with the run of zeros.
* annotations: NDJSON {frame_id, class, center:[x,y,z], dims:[l,w,h], yaw,
  score, track_id?, velocity?:[vx,vy], s2d?, s3d?}. The optional s2d/s3d
  fields preserve the fusion inputs so scores can be re-fused offline.
"""

from __future__ import annotations

import json
import math
import os
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .geom import Box2D, CameraIntrinsics, Cuboid3D, RigidTransform, rotmat_to_quat


class FormatError(ValueError):
    """Malformed input file; message names the file and, where known, the line."""


# ---------------------------------------------------------------------------
# Domain types


@dataclass(frozen=True)
class SweepFrame:
    """One timestamped LiDAR sweep with its poses."""

    frame_id: str
    timestamp: int  # microseconds
    points: np.ndarray  # (N, 4) float32: x, y, z, intensity
    ego_pose: RigidTransform  # world <- ego
    sensor_pose: RigidTransform  # ego <- lidar

    def lidar_to_world(self) -> RigidTransform:
        return self.ego_pose @ self.sensor_pose


@dataclass(frozen=True)
class Detection2D:
    frame_id: str
    camera_id: str
    class_label: str
    box: Box2D
    score: float
    mask: Optional[np.ndarray] = None  # (height, width) bool

    def __post_init__(self):
        if not (0.0 <= self.score <= 1.0):
            raise ValueError(f"score {self.score} outside [0, 1]")


@dataclass(frozen=True)
class ScoredAnnotation:
    frame_id: str
    cuboid: Cuboid3D  # world frame
    class_label: str
    score: float
    track_id: Optional[int] = None
    velocity: Optional[tuple] = None  # (vx, vy) m/s in BEV
    s2d: Optional[float] = None
    s3d: Optional[float] = None

    def __post_init__(self):
        if not (0.0 <= self.score <= 1.0):
            raise ValueError(f"score {self.score} outside [0, 1]")


@dataclass(frozen=True)
class ClassSpec:
    name: str
    avg_dims: tuple  # (l, w, h)
    aggregation: tuple  # (past, future)
    match_radius: float = 2.0


@dataclass(frozen=True)
class Taxonomy:
    classes: tuple

    def __post_init__(self):
        names = [c.name for c in self.classes]
        if len(set(names)) != len(names):
            raise ValueError("duplicate class names in taxonomy")
        for c in self.classes:
            if any(d <= 0 for d in c.avg_dims):
                raise ValueError(f"class {c.name}: avg_dims must be positive")
        object.__setattr__(self, "_by_name", {c.name: c for c in self.classes})

    def __contains__(self, name: str) -> bool:
        return name in self._by_name

    def get(self, name: str) -> ClassSpec:
        try:
            return self._by_name[name]
        except KeyError:
            raise KeyError(f"unknown class {name!r}") from None

    @property
    def names(self):
        return [c.name for c in self.classes]


@dataclass(frozen=True)
class CameraCalib:
    camera_id: str
    intrinsics: CameraIntrinsics
    extrinsics: RigidTransform  # ego <- camera


@dataclass(frozen=True)
class SensorRig:
    """Calibration block of a scene: cameras plus the lidar mount."""

    cameras: dict  # camera_id -> CameraCalib
    lidar_extrinsics: RigidTransform  # ego <- lidar

    def camera(self, camera_id: str) -> CameraCalib:
        try:
            return self.cameras[camera_id]
        except KeyError:
            raise KeyError(f"unknown camera id {camera_id!r}") from None


@dataclass(frozen=True)
class Scene:
    rig: SensorRig
    sweeps: list  # ordered SweepFrame list


# ---------------------------------------------------------------------------
# Run-length masks


def mask_to_rle(mask: np.ndarray) -> dict:
    """Encode a bool (height, width) mask; counts start with the run of zeros."""
    m = np.asarray(mask, dtype=bool)
    h, w = m.shape
    flat = m.reshape(-1)
    counts = []
    if flat.size == 0:
        return {"size": [h, w], "counts": []}
    # run boundaries over row-major order
    change = np.nonzero(flat[1:] != flat[:-1])[0] + 1
    starts = np.concatenate([[0], change])
    lengths = np.diff(np.concatenate([starts, [flat.size]]))
    if flat[0]:
        counts.append(0)
    counts.extend(int(v) for v in lengths)
    return {"size": [h, w], "counts": counts}


def rle_to_mask(rle: dict) -> np.ndarray:
    h, w = (int(v) for v in rle["size"])
    counts = rle["counts"]
    total = sum(counts)
    if total != h * w:
        raise FormatError(f"RLE counts sum to {total}, expected {h * w}")
    flat = np.zeros(h * w, dtype=bool)
    pos = 0
    val = False
    for c in counts:
        if val:
            flat[pos : pos + c] = True
        pos += c
        val = not val
    return flat.reshape(h, w)


# ---------------------------------------------------------------------------
# Sweeps


def load_sweep_points(path, stride: int = 5) -> np.ndarray:
    """Read raw float32 records; returns (N, 4) x/y/z/intensity.

    stride 5 carries a trailing ring index per record, which is dropped.
    """
    if stride not in (4, 5):
        raise ValueError("stride must be 4 or 5")
    raw = np.fromfile(path, dtype="<f4")
    if raw.size % stride != 0:
        raise FormatError(
            f"{path}: byte length not divisible by record stride {stride}"
        )
    pts = raw.reshape(-1, stride)[:, :4]
    if pts.size and not np.isfinite(pts[:, :3]).all():
        raise FormatError(f"{path}: non-finite coordinates")
    return np.ascontiguousarray(pts)


def write_sweep_points(points: np.ndarray, path, stride: int = 5) -> None:
    if stride not in (4, 5):
        raise ValueError("stride must be 4 or 5")
    pts = np.asarray(points, dtype="<f4").reshape(-1, 4)
    if stride == 5:
        out = np.zeros((pts.shape[0], 5), dtype="<f4")
        out[:, :4] = pts
    else:
        out = pts
    out.tofile(path)


def _pose_from_json(obj) -> RigidTransform:
    return RigidTransform.from_quat(obj["rotation"], obj["translation"])


def _pose_to_json(t: RigidTransform) -> dict:
    return {
        "rotation": [float(v) for v in rotmat_to_quat(t.rotation)],
        "translation": [float(v) for v in t.translation],
    }


def load_scene(manifest_path, stride: int = 5) -> Scene:
    """Parse a scene manifest and every sweep file it references."""
    with open(manifest_path) as f:
        doc = json.load(f)
    base = os.path.dirname(os.path.abspath(manifest_path))

    cameras = {}
    for cam in doc["cameras"]:
        intr = cam["intrinsics"]
        cameras[cam["id"]] = CameraCalib(
            camera_id=cam["id"],
            intrinsics=CameraIntrinsics(
                fx=float(intr["fx"]),
                fy=float(intr["fy"]),
                cx=float(intr["cx"]),
                cy=float(intr["cy"]),
                width=int(intr["width"]),
                height=int(intr["height"]),
            ),
            extrinsics=_pose_from_json(cam["extrinsics"]),
        )
    rig = SensorRig(cameras=cameras, lidar_extrinsics=_pose_from_json(doc["lidar"]))

    sweeps = []
    last_ts = None
    for entry in doc["sweeps"]:
        ts = int(entry["timestamp"])
        if last_ts is not None and ts <= last_ts:
            raise FormatError(f"{manifest_path}: sweep timestamps not strictly increasing")
        last_ts = ts
        pts = load_sweep_points(os.path.join(base, entry["file"]), stride=stride)
        sweeps.append(
            SweepFrame(
                frame_id=str(entry["frame_id"]),
                timestamp=ts,
                points=pts,
                ego_pose=_pose_from_json(entry["ego_pose"]),
                sensor_pose=rig.lidar_extrinsics,
            )
        )
    return Scene(rig=rig, sweeps=sweeps)


def write_scene(scene: Scene, out_dir, stride: int = 5, manifest_name="scene.json") -> str:
    """Write manifest + sweep binaries under out_dir; returns the manifest path."""
    os.makedirs(os.path.join(out_dir, "sweeps"), exist_ok=True)
    entries = []
    for i, sw in enumerate(scene.sweeps):
        rel = os.path.join("sweeps", f"{i:06d}.bin")
        write_sweep_points(sw.points, os.path.join(out_dir, rel), stride=stride)
        entries.append(
            {
                "frame_id": sw.frame_id,
                "timestamp": sw.timestamp,
                "ego_pose": _pose_to_json(sw.ego_pose),
                "file": rel,
            }
        )
    doc = {
        "cameras": [
            {
                "id": c.camera_id,
                "intrinsics": {
                    "fx": c.intrinsics.fx,
                    "fy": c.intrinsics.fy,
                    "cx": c.intrinsics.cx,
                    "cy": c.intrinsics.cy,
                    "width": c.intrinsics.width,
                    "height": c.intrinsics.height,
                },
                "extrinsics": _pose_to_json(c.extrinsics),
            }
            for c in scene.rig.cameras.values()
        ],
        "lidar": _pose_to_json(scene.rig.lidar_extrinsics),
        "sweeps": entries,
    }
    manifest = os.path.join(out_dir, manifest_name)
    with open(manifest, "w") as f:
        json.dump(doc, f, indent=1)
        f.write("\n")
    return manifest


# ---------------------------------------------------------------------------
# Detections


def load_detections(path, taxonomy: Taxonomy) -> list:
    """Parse NDJSON detections; errors cite the 1-based line number."""
    out = []
    with open(path) as f:
        for lineno, line in enumerate(f, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                rec = json.loads(line)
            except json.JSONDecodeError as e:
                raise FormatError(f"{path}:{lineno}: malformed JSON ({e.msg})") from None
            try:
                det = _detection_from_json(rec, taxonomy)
            except (KeyError, TypeError) as e:
                raise FormatError(f"{path}:{lineno}: missing or bad field ({e})") from None
            except ValueError as e:
                raise FormatError(f"{path}:{lineno}: {e}") from None
            out.append(det)
    return out


def _detection_from_json(rec: dict, taxonomy: Taxonomy) -> Detection2D:
    label = rec["class"]
    if label not in taxonomy:
        raise ValueError(f"unknown class {label!r}")
    score = float(rec["score"])
    if not (0.0 <= score <= 1.0):
        raise ValueError(f"score {score} outside [0, 1]")
    box_vals = [float(v) for v in rec["box"]]
    if any(not math.isfinite(v) for v in box_vals):
        raise ValueError("non-finite box coordinates")
    mask = rle_to_mask(rec["mask_rle"]) if rec.get("mask_rle") else None
    return Detection2D(
        frame_id=str(rec["frame_id"]),
        camera_id=str(rec["camera_id"]),
        class_label=label,
        box=Box2D(*box_vals),
        score=score,
        mask=mask,
    )


def write_detections(dets: list, path) -> None:
    with open(path, "w") as f:
        for d in dets:
            rec = {
                "frame_id": d.frame_id,
                "camera_id": d.camera_id,
                "class": d.class_label,
                "box": [d.box.x1, d.box.y1, d.box.x2, d.box.y2],
                "score": d.score,
            }
            if d.mask is not None:
                rec["mask_rle"] = mask_to_rle(d.mask)
            f.write(json.dumps(rec) + "\n")


# ---------------------------------------------------------------------------
# Annotations


def annotation_to_json(a: ScoredAnnotation) -> dict:
    rec = {
        "frame_id": a.frame_id,
        "class": a.class_label,
        "center": [float(v) for v in a.cuboid.center],
        "dims": [float(v) for v in a.cuboid.dims],
        "yaw": float(a.cuboid.yaw),
        "score": float(a.score),
    }
    if a.track_id is not None:
        rec["track_id"] = int(a.track_id)
    if a.velocity is not None:
        rec["velocity"] = [float(a.velocity[0]), float(a.velocity[1])]
    if a.s2d is not None:
        rec["s2d"] = float(a.s2d)
    if a.s3d is not None:
        rec["s3d"] = float(a.s3d)
    return rec


def annotation_from_json(rec: dict) -> ScoredAnnotation:
    vals = list(rec["center"]) + list(rec["dims"]) + [rec["yaw"], rec["score"]]
    if any(not math.isfinite(float(v)) for v in vals):
        raise ValueError("non-finite value in annotation")
    vel = rec.get("velocity")
    return ScoredAnnotation(
        frame_id=str(rec["frame_id"]),
        cuboid=Cuboid3D(np.array(rec["center"], dtype=float), tuple(rec["dims"]), float(rec["yaw"])),
        class_label=str(rec["class"]),
        score=float(rec["score"]),
        track_id=int(rec["track_id"]) if "track_id" in rec else None,
        velocity=(float(vel[0]), float(vel[1])) if vel is not None else None,
        s2d=float(rec["s2d"]) if "s2d" in rec else None,
        s3d=float(rec["s3d"]) if "s3d" in rec else None,
    )


def write_annotations(items: list, path) -> None:
    with open(path, "w") as f:
        for a in items:
            f.write(json.dumps(annotation_to_json(a)) + "\n")


def load_annotations(path) -> list:
    out = []
    with open(path) as f:
        for lineno, line in enumerate(f, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                rec = json.loads(line)
            except json.JSONDecodeError as e:
                raise FormatError(f"{path}:{lineno}: malformed JSON ({e.msg})") from None
            try:
                out.append(annotation_from_json(rec))
            except (KeyError, TypeError, ValueError) as e:
                raise FormatError(f"{path}:{lineno}: {e}") from None
    return out
