"""Pipeline configuration: defaults, JSON parsing, strict key validation."""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

from .ingest import ClassSpec, Taxonomy
from .score import ScoringConfig
from .search import SearchConfig

# Per-class defaults: average dimensions (l, w, h) in meters, the sweep
# aggregation window (past, future) that works best for the class, and the
# BEV association radius for tracking.
DEFAULT_CLASSES = (
    ("car", (4.6, 1.95, 1.7), (0, 0), 2.0),
    ("truck", (6.9, 2.5, 2.8), (1, 1), 2.0),
    ("trailer", (12.3, 2.9, 3.9), (2, 0), 2.0),
    ("bus", (11.0, 2.9, 3.5), (0, 0), 2.0),
    ("construction-vehicle", (6.4, 2.85, 3.2), (0, 0), 2.0),
    ("bicycle", (1.7, 0.6, 1.3), (0, 2), 2.0),
    ("motorcycle", (2.1, 0.77, 1.47), (1, 1), 2.0),
    ("emergency-vehicle", (6.5, 2.4, 2.7), (6, 0), 2.0),
    ("adult", (0.73, 0.67, 1.77), (1, 1), 2.0),
    ("child", (0.52, 0.5, 1.38), (6, 0), 2.0),
    ("police-officer", (0.73, 0.67, 1.77), (1, 1), 2.0),
    ("construction-worker", (0.73, 0.67, 1.77), (0, 2), 2.0),
    ("stroller", (0.8, 0.58, 1.03), (0, 10), 2.0),
    ("personal-mobility", (0.7, 0.4, 1.4), (1, 1), 2.0),
    ("pushable-pullable", (0.67, 0.6, 1.06), (0, 2), 2.0),
    ("debris", (0.7, 0.7, 0.5), (0, 0), 2.0),
    ("traffic-cone", (0.41, 0.41, 1.07), (0, 2), 2.0),
    ("barrier", (2.5, 0.62, 0.98), (0, 0), 2.0),
)


def default_taxonomy() -> Taxonomy:
    return Taxonomy(
        classes=tuple(
            ClassSpec(name=n, avg_dims=d, aggregation=a, match_radius=r)
            for n, d, a, r in DEFAULT_CLASSES
        )
    )


@dataclass(frozen=True)
class PipelineConfig:
    taxonomy: Taxonomy = field(default_factory=default_taxonomy)
    search: SearchConfig = field(default_factory=SearchConfig)
    scoring: ScoringConfig = field(default_factory=ScoringConfig)
    routing_threshold: float = 0.3
    sector_half_width: float = math.pi / 6.0
    sweep_stride: int = 5  # binary record stride, 4 or 5 floats
    threads: int = 0  # 0 = auto
    seed: int = 0

    def __post_init__(self):
        if self.sweep_stride not in (4, 5):
            raise ValueError("sweep_stride must be 4 or 5")
        if not (0.0 <= self.routing_threshold <= 1.0):
            raise ValueError("routing_threshold must be in [0, 1]")
        if not (0.0 < self.sector_half_width <= math.pi):
            raise ValueError("sector_half_width must be in (0, pi]")
        if self.threads < 0:
            raise ValueError("threads must be >= 0")


def _check_keys(obj: dict, allowed, where: str):
    unknown = set(obj) - set(allowed)
    if unknown:
        raise ValueError(f"unknown config key(s) in {where}: {sorted(unknown)}")


def _taxonomy_from_json(obj: dict) -> Taxonomy:
    _check_keys(obj, {"classes"}, "taxonomy")
    classes = []
    for entry in obj["classes"]:
        _check_keys(entry, {"name", "avg_dims", "aggregation", "match_radius"}, "taxonomy class")
        agg = entry.get("aggregation", {"past": 0, "future": 0})
        _check_keys(agg, {"past", "future"}, "aggregation")
        classes.append(
            ClassSpec(
                name=str(entry["name"]),
                avg_dims=tuple(float(v) for v in entry["avg_dims"]),
                aggregation=(int(agg.get("past", 0)), int(agg.get("future", 0))),
                match_radius=float(entry.get("match_radius", 2.0)),
            )
        )
    return Taxonomy(classes=tuple(classes))


def config_from_dict(doc: dict) -> PipelineConfig:
    _check_keys(
        doc,
        {
            "taxonomy",
            "search",
            "scoring",
            "routing_threshold",
            "sector_half_width",
            "sweep_stride",
            "threads",
            "seed",
        },
        "config",
    )
    taxonomy = _taxonomy_from_json(doc["taxonomy"]) if "taxonomy" in doc else default_taxonomy()

    search_doc = doc.get("search", {})
    _check_keys(search_doc, {"trans_step", "rot_step", "xy_range", "z_range"}, "search")
    search = SearchConfig(
        trans_step=float(search_doc.get("trans_step", 0.5)),
        rot_step=float(search_doc.get("rot_step", math.pi / 10.0)),
        xy_range=float(search_doc.get("xy_range", 2.0)),
        z_range=float(search_doc.get("z_range", 1.0)),
    )

    scoring_doc = doc.get("scoring", {})
    _check_keys(scoring_doc, {"grid_k", "alpha"}, "scoring")
    scoring = ScoringConfig(
        grid_k=int(scoring_doc.get("grid_k", 7)),
        alpha=float(scoring_doc.get("alpha", 0.5)),
    )

    return PipelineConfig(
        taxonomy=taxonomy,
        search=search,
        scoring=scoring,
        routing_threshold=float(doc.get("routing_threshold", 0.3)),
        sector_half_width=float(doc.get("sector_half_width", math.pi / 6.0)),
        sweep_stride=int(doc.get("sweep_stride", 5)),
        threads=int(doc.get("threads", 0)),
        seed=int(doc.get("seed", 0)),
    )


def load_config(path) -> PipelineConfig:
    with open(path) as f:
        doc = json.load(f)
    return config_from_dict(doc)
