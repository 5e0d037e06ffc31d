"""Deterministic synthetic pedestrian scenes with labelled anomalies.

A horizontal walkway band crosses the frame between grass margins, with a
wall strip at the top.  Normal agents walk left/right along the walkway
with small vertical jitter and bounce off the frame edges.  Three anomaly
types can be scheduled:

* ``unexpected_entity``: a detection of a class never seen in training
  appears in the category stream;
* ``overspeed``: an extra agent crosses the walkway at >= 3x the mean speed;
* ``prohibited_region``: an existing agent walks on the grass.

Frames inside any anomaly window are labelled 1.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

from .features import CategoryVector, SegmentationMap, Track
from .ingest import (
    AnomalyEvent,
    DatasetManifest,
    SequenceEntry,
    write_category_stream,
    write_labels,
    write_manifest,
    write_segmentation_maps,
    write_track_stream,
)

logger = logging.getLogger(__name__)

ANOMALY_TYPES = ("unexpected_entity", "overspeed", "prohibited_region")

COCO_CLASSES = (
    "person", "bicycle", "car", "motorcycle", "airplane", "bus", "train", "truck", "boat",
    "traffic_light", "fire_hydrant", "stop_sign", "parking_meter", "bench", "bird", "cat",
    "dog", "horse", "sheep", "cow", "elephant", "bear", "zebra", "giraffe", "backpack",
    "umbrella", "handbag", "tie", "suitcase", "frisbee", "skis", "snowboard", "sports_ball",
    "kite", "baseball_bat", "baseball_glove", "skateboard", "surfboard", "tennis_racket",
    "bottle", "wine_glass", "cup", "fork", "knife", "spoon", "bowl", "banana", "apple",
    "sandwich", "orange", "broccoli", "carrot", "hot_dog", "pizza", "donut", "cake", "chair",
    "couch", "potted_plant", "bed", "dining_table", "toilet", "tv", "laptop", "mouse",
    "remote", "keyboard", "cell_phone", "microwave", "oven", "toaster", "sink",
    "refrigerator", "book", "clock", "vase", "scissors", "teddy_bear", "hair_drier",
    "toothbrush",
)
REGION_CLASSES = ("walkway", "grass", "wall")
OBJECT_CLASSES = ("person",)
UNSEEN_ENTITIES = ("bicycle", "skateboard", "motorcycle")
OVERSPEED_FACTOR = 3.5


@dataclass(frozen=True)
class AnomalySpec:
    type: str
    start: int
    duration: int
    sequence: int = 0

    def __post_init__(self):
        if self.type not in ANOMALY_TYPES:
            raise ValueError(f"unknown anomaly type {self.type!r}; expected one of {ANOMALY_TYPES}")
        if self.duration < 1 or self.start < 0:
            raise ValueError(f"anomaly window must have start >= 0 and duration >= 1: {self}")


@dataclass(frozen=True)
class SceneConfig:
    name: str = "synthetic"
    frame_size: tuple[int, int] = (238, 158)  # (W, H)
    wall_height: int = 20
    walkway: tuple[int, int] = (70, 130)  # rows [top, bottom) of the walkway band
    frame_count: int = 250
    sequences: int = 1
    agents: tuple[int, int] = (4, 8)  # inclusive range per sequence
    speed_mean: float = 1.0
    speed_std: float = 0.2
    fps: float = 30.0
    anomalies: tuple[AnomalySpec, ...] = ()
    seed: int = 0
    train_sequences: int | None = None

    def __post_init__(self):
        object.__setattr__(self, "anomalies", tuple(
            a if isinstance(a, AnomalySpec) else AnomalySpec(**a) for a in self.anomalies
        ))
        w, h = self.frame_size
        top, bottom = self.walkway
        if bottom - top < 1:
            raise ValueError(f"degenerate walkway band {self.walkway}")
        if not (self.wall_height < top and bottom <= h - 1):
            raise ValueError(f"walkway {self.walkway} must lie below the wall and inside height {h}")
        if top - self.wall_height < 1 and h - bottom < 1:
            raise ValueError("layout leaves no grass region")
        if self.frame_count < 1 or self.sequences < 1:
            raise ValueError("frame_count and sequences must be >= 1")
        if self.speed_mean <= 0 or self.speed_std < 0:
            raise ValueError("speeds must be positive")
        if not 1 <= self.agents[0] <= self.agents[1]:
            raise ValueError(f"invalid agent range {self.agents}")
        for a in self.anomalies:
            if a.sequence >= self.sequences or a.start + a.duration > self.frame_count:
                raise ValueError(f"anomaly window {a} outside the generated frames")

    @property
    def abnormal_frames(self) -> int:
        """Number of frames covered by at least one anomaly window."""
        covered = {(a.sequence, t) for a in self.anomalies for t in range(a.start, a.start + a.duration)}
        return len(covered)


def desk_preset(seed: int = 0) -> SceneConfig:
    """500 test frames (2 x 250) with 10% abnormal; splits to 2000 training frames."""
    return SceneConfig(
        name="desk",
        frame_count=250,
        sequences=2,
        train_sequences=8,
        seed=seed,
        anomalies=(
            AnomalySpec("unexpected_entity", 30, 9, 0),
            AnomalySpec("overspeed", 100, 8, 0),
            AnomalySpec("prohibited_region", 180, 8, 0),
            AnomalySpec("prohibited_region", 40, 9, 1),
            AnomalySpec("unexpected_entity", 120, 8, 1),
            AnomalySpec("overspeed", 200, 8, 1),
        ),
    )


PRESETS = {"desk": desk_preset}


def split(config: SceneConfig) -> tuple[SceneConfig, SceneConfig]:
    """(train, test): train has no anomalies and its own seed."""
    n_train = config.train_sequences or config.sequences
    train = replace(
        config, name=f"{config.name}-train", anomalies=(), sequences=n_train,
        seed=config.seed + 7919,
    )
    test = replace(config, name=f"{config.name}-test")
    return train, test


@dataclass
class SimSequence:
    name: str
    tracks: list[list[Track]]
    categories: list[CategoryVector]
    labels: list[int]
    seg: SegmentationMap
    events: tuple[AnomalyEvent, ...] = ()


def region_map(config: SceneConfig) -> SegmentationMap:
    w, h = config.frame_size
    grid = np.full((h, w), REGION_CLASSES.index("grass"), dtype=np.int64)
    grid[:config.wall_height] = REGION_CLASSES.index("wall")
    top, bottom = config.walkway
    grid[top:bottom] = REGION_CLASSES.index("walkway")
    return SegmentationMap(grid, REGION_CLASSES, 0)


def _grass_rows(config: SceneConfig) -> tuple[float, float]:
    top, bottom = config.walkway
    h = config.frame_size[1]
    if h - bottom >= top - config.wall_height:
        return bottom + 1.0, h - 1.0
    return config.wall_height + 1.0, top - 1.0


def _r(x) -> float:
    return round(float(x), 3)


def _make_track(tid, x, foot_y, w, h, vx, vy) -> Track:
    box = (_r(x - w / 2), _r(foot_y - h), _r(x + w / 2), _r(foot_y))
    return Track(tid, box, 0, (_r(vx), _r(vy)))


def simulate_sequence(config: SceneConfig, index: int) -> SimSequence:
    rng = np.random.default_rng([config.seed, index])
    W, H = config.frame_size
    top, bottom = config.walkway
    n_agents = int(rng.integers(config.agents[0], config.agents[1] + 1))
    widths = rng.uniform(10, 14, n_agents)
    heights = rng.uniform(26, 34, n_agents)
    heights = np.minimum(heights, top - 1)
    xs = rng.uniform(widths / 2, W - widths / 2)
    lo, hi = top + 1.0, bottom - 1.0
    ys = rng.uniform(lo, hi, n_agents)
    speeds = np.abs(rng.normal(config.speed_mean, config.speed_std, n_agents))
    speeds = np.maximum(speeds, 0.3 * config.speed_mean)
    dirs = rng.choice([-1.0, 1.0], n_agents)
    benches = int(rng.integers(1, 3))

    windows = [a for a in config.anomalies if a.sequence == index]
    labels = [0] * config.frame_count
    for a in windows:
        for t in range(a.start, a.start + a.duration):
            labels[t] = 1

    grass_lo, grass_hi = _grass_rows(config)
    k_person = COCO_CLASSES.index("person")
    tracks, cats = [], []
    fast = {}  # anomaly -> (x, dir)
    for t in range(config.frame_count):
        frame_tracks = []
        vx = dirs * speeds * (1.0 + 0.05 * rng.standard_normal(n_agents))
        vy = 0.15 * rng.standard_normal(n_agents)
        xs = xs + vx
        # reflect at the frame edges
        left, right = widths / 2, W - widths / 2
        over = xs > right
        xs[over] = 2 * right[over] - xs[over]
        under = xs < left
        xs[under] = 2 * left[under] - xs[under]
        flip = over | under
        dirs[flip] *= -1
        vx[flip] *= -1
        ys = np.clip(ys + vy, lo, hi)
        on_grass = set()
        for a in windows:
            if a.type == "prohibited_region" and a.start <= t < a.start + a.duration:
                on_grass.add(0)
        for i in range(n_agents):
            foot = ys[i]
            if i in on_grass:
                foot = grass_lo + (grass_hi - grass_lo) * (ys[i] - lo) / max(hi - lo, 1e-9)
            frame_tracks.append(_make_track(i + 1, xs[i], foot, widths[i], heights[i], vx[i], vy[i]))
        for ai, a in enumerate(windows):
            if a.type != "overspeed" or not a.start <= t < a.start + a.duration:
                continue
            v = OVERSPEED_FACTOR * config.speed_mean
            if ai not in fast:
                d = 1.0 if rng.random() < 0.5 else -1.0
                fast[ai] = [12.0 if d > 0 else W - 12.0, d, rng.uniform(lo, hi)]
            x, d, fy = fast[ai]
            x += d * v
            if not 7.0 <= x <= W - 7.0:
                d = -d
                x += 2 * d * v
            fast[ai] = [x, d, fy]
            frame_tracks.append(_make_track(1000 + ai, x, fy, 12.0, 30.0, d * v, 0.0))
        counts = np.zeros(len(COCO_CLASSES))
        counts[k_person] = len(frame_tracks)
        counts[COCO_CLASSES.index("bench")] = benches
        counts[COCO_CLASSES.index("backpack")] = rng.binomial(n_agents, 0.3)
        counts[COCO_CLASSES.index("handbag")] = rng.binomial(n_agents, 0.15)
        for ai, a in enumerate(windows):
            if a.type == "unexpected_entity" and a.start <= t < a.start + a.duration:
                counts[COCO_CLASSES.index(UNSEEN_ENTITIES[ai % len(UNSEEN_ENTITIES)])] += 1
        tracks.append(frame_tracks)
        cats.append(CategoryVector(counts))
    events = tuple(AnomalyEvent(a.type, a.start, a.duration) for a in windows)
    return SimSequence(f"seq{index:02d}", tracks, cats, labels, region_map(config), events)


def simulate(config: SceneConfig) -> list[SimSequence]:
    return [simulate_sequence(config, i) for i in range(config.sequences)]


def generate(config: SceneConfig, out_dir) -> Path:
    """Write a dataset directory (manifest + per-sequence files); returns the manifest path."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    entries = []
    for seq in simulate(config):
        stem = seq.name
        write_track_stream(out / f"{stem}.tracks.jsonl", seq.tracks)
        write_category_stream(out / f"{stem}.categories.jsonl", seq.categories)
        write_segmentation_maps(out / f"{stem}.segmap", [seq.seg])
        write_labels(out / f"{stem}.labels", seq.labels)
        entries.append(SequenceEntry(
            name=stem,
            tracks=f"{stem}.tracks.jsonl",
            categories=f"{stem}.categories.jsonl",
            segmentation=f"{stem}.segmap",
            frames=config.frame_count,
            frame_size=tuple(config.frame_size),
            fps=config.fps,
            labels=f"{stem}.labels",
            events=seq.events,
        ))
    manifest = DatasetManifest(config.name, OBJECT_CLASSES, COCO_CLASSES, tuple(entries))
    path = write_manifest(out, manifest)
    logger.info("wrote %s (%d sequences x %d frames)", path, config.sequences, config.frame_count)
    return path


def generate_split(config: SceneConfig, out_dir) -> tuple[Path, Path]:
    """Write ``train/`` and ``test/`` datasets under ``out_dir``."""
    train, test = split(config)
    out = Path(out_dir)
    return generate(train, out / "train"), generate(test, out / "test")
