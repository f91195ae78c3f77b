"""Shared builders and independent naive reference implementations.

The naive oracles deliberately avoid the library's vectorized code paths:
containment uses face half-space tests on corner geometry, binning and
matching are plain Python loops.
"""

import math

import numpy as np
import pytest

from cuboidlift.config import PipelineConfig, default_taxonomy
from cuboidlift.geom import Box2D, Cuboid3D, cuboid_corners
from cuboidlift.search import SearchConfig
from cuboidlift.synth import random_scene_spec

CRITERION_CLASSES = [
    "car",
    "motorcycle",
    "bicycle",
    "adult",
    "adult",
    "traffic-cone",
    "traffic-cone",
]


@pytest.fixture(scope="session")
def taxonomy():
    return default_taxonomy()


@pytest.fixture(scope="session")
def default_config():
    return PipelineConfig()


@pytest.fixture(scope="session")
def fine_config():
    # finer translation grid used by the oracle round-trip checks
    return PipelineConfig(search=SearchConfig(trans_step=0.25))


def criterion_scene_spec(seed, taxonomy, sigma, points, inset, rmax=16.0):
    """The frozen scene family of the oracle round-trip acceptance check."""
    rng = np.random.default_rng(seed)
    n = int(rng.integers(5, 21))
    return random_scene_spec(
        seed=1000 + seed,
        taxonomy=taxonomy,
        n_objects=n,
        classes=CRITERION_CLASSES,
        n_sweeps=1,
        noise_sigma=sigma,
        points_per_object=points,
        surface_inset=inset,
        range_m=(7.0, rmax),
        angular_margin=0.025,
        min_objects=5,
        corner_views=True,
    )


# ---------------------------------------------------------------------------
# Naive reference implementations


def naive_point_in_cuboid(p, c: Cuboid3D) -> bool:
    """Half-space test against the three face-pair planes built from corners."""
    corners = cuboid_corners(c)
    center = corners.mean(axis=0)
    # outward axes from corner differences (see corner ordering)
    axes = [corners[0] - corners[1], corners[0] - corners[3], corners[4] - corners[0]]
    p = np.asarray(p, dtype=float)
    for axis in axes:
        n = np.linalg.norm(axis)
        u = axis / n
        d = float(np.dot(p - center, u))
        if abs(d) > n / 2.0:
            return False
    return True


def naive_coverage(points, c: Cuboid3D) -> float:
    pts = np.asarray(points, dtype=float).reshape(-1, 3)
    if len(pts) == 0:
        return 0.0
    return sum(1 for p in pts if naive_point_in_cuboid(p, c)) / len(pts)


def naive_occupancy(c: Cuboid3D, points, k: int) -> float:
    """Loop-based footprint binning, floor with inclusive last edge."""
    l, w, h = c.dims
    cells = set()
    cy, sy = math.cos(-c.yaw), math.sin(-c.yaw)
    for p in np.asarray(points, dtype=float).reshape(-1, 3):
        if not naive_point_in_cuboid(p, c):
            continue
        dx, dy, dz = p - c.center
        lx = cy * dx - sy * dy
        ly = sy * dx + cy * dy
        ix = math.floor((lx + l / 2.0) / l * k)
        iy = math.floor((ly + w / 2.0) / w * k)
        cells.add((min(ix, k - 1), min(iy, k - 1)))
    return len(cells) / float(k * k)


def naive_frustum_mask(points, det, rig) -> np.ndarray:
    """Per-point projection through geom primitives, plain loop."""
    from cuboidlift.frustum import camera_from_lidar
    from cuboidlift.geom import project_point

    cam = rig.camera(det.camera_id)
    t = camera_from_lidar(rig, det.camera_id)
    out = []
    for p in np.asarray(points, dtype=float)[:, :3]:
        uv = project_point(t.apply(p), cam.intrinsics)
        if uv is None:
            out.append(False)
            continue
        u, v = uv
        out.append(det.box.x1 <= u <= det.box.x2 and det.box.y1 <= v <= det.box.y2)
    return np.array(out, dtype=bool)


def naive_match(preds, gts, class_label, threshold):
    """Greedy matcher mirroring the documented tie rules, dict-based."""
    cls_preds = [(i, p) for i, p in enumerate(preds) if p.class_label == class_label]
    cls_gts = [(j, g) for j, g in enumerate(gts) if g.class_label == class_label]
    order = sorted(range(len(cls_preds)), key=lambda k: -cls_preds[k][1].score)
    taken = set()
    rows = []
    for k in order:
        pi, p = cls_preds[k]
        best = None
        best_d = None
        for j, g in cls_gts:
            if j in taken or g.frame_id != p.frame_id:
                continue
            d = math.hypot(
                p.cuboid.center[0] - g.cuboid.center[0],
                p.cuboid.center[1] - g.cuboid.center[1],
            )
            if d <= threshold and (best_d is None or d < best_d):
                best_d = d
                best = j
        if best is not None:
            taken.add(best)
            rows.append((p.score, True, pi, best))
        else:
            rows.append((p.score, False, pi, None))
    return rows, len(cls_gts)


def random_cuboid(rng, span=10.0, dim_range=(0.4, 5.0)) -> Cuboid3D:
    center = rng.uniform(-span, span, size=3)
    dims = tuple(rng.uniform(*dim_range, size=3))
    yaw = rng.uniform(-math.pi, math.pi)
    return Cuboid3D(center, dims, yaw)


def random_box(rng, span=100.0) -> Box2D:
    x1, x2 = sorted(rng.uniform(0, span, size=2))
    y1, y2 = sorted(rng.uniform(0, span, size=2))
    return Box2D(x1, y1, x2, y2)
