"""Spatial, temporal and group context mined from tracks and region maps.

* spatial: which region class each tracked object stands in (C x J counts),
  plus class co-occurrence of nearby object pairs.
* temporal: per-track trailing-window average speed; a frame is "overspeed"
  through the tracks whose lifetime maximum of that average exceeds a
  threshold calibrated on training data.
* group: order statistics of positions and speeds, and the total least
  squares residual of positions and of velocities as a crowd-sparsity cue.
"""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass, field
from typing import Iterable, Mapping, Sequence

import numpy as np

from .features import FeatureBlock, FeatureSchema, SegmentationMap, Track

GROUP_FIELDS = (
    "count",
    "x_min", "x_max", "x_median",
    "y_min", "y_max", "y_median",
    "speed_min", "speed_max", "speed_median",
    "position_residual", "velocity_residual",
    "present",
)
OVERSPEED_FIELDS = ("flagged", "max_speed")


@dataclass(frozen=True)
class ContextParams:
    window: int = 10
    speed_threshold: float = float("inf")
    radius_scale: float = 1.0
    speed_percentile: float = 99.5

    def __post_init__(self):
        if self.window < 1:
            raise ValueError(f"window must be >= 1, got {self.window}")
        if self.speed_threshold < 0:
            raise ValueError("speed threshold must be >= 0")
        if self.radius_scale < 0:
            raise ValueError("radius_scale must be >= 0")


# -- spatial ---------------------------------------------------------------

def region_of_point(seg: SegmentationMap, point) -> int | None:
    """Region class at ``point`` = (x, y) in pixels, or None outside the map.

    Cells are half-open: x in [0, width), y in [0, height).
    """
    x, y = point
    if not (0 <= x < seg.width and 0 <= y < seg.height):
        return None
    return int(seg.labels[int(np.floor(y)), int(np.floor(x))])


@dataclass(frozen=True)
class SpatialContext:
    occupancy: np.ndarray  # (C, J)
    adjacency: np.ndarray  # (J, J), symmetric
    out_of_bounds: int = 0

    def adjacency_upper(self) -> np.ndarray:
        iu = np.triu_indices(self.adjacency.shape[0])
        return self.adjacency[iu]


def spatial_context(
    seg: SegmentationMap,
    tracks: Sequence[Track],
    n_object_classes: int,
    radius_scale: float = 1.0,
) -> SpatialContext:
    """Count objects per (region class, object class) and nearby class pairs.

    Objects are placed by their foot point.  Two objects are adjacent when
    their box centers are within ``radius_scale`` times the mean of their
    box diagonals; each unordered pair counts once (in both symmetric cells
    when the classes differ).
    """
    occ = np.zeros((seg.class_count, n_object_classes), dtype=np.float64)
    adj = np.zeros((n_object_classes, n_object_classes), dtype=np.float64)
    oob = 0
    for tr in tracks:
        c = region_of_point(seg, tr.foot_point)
        if c is None:
            oob += 1
        else:
            occ[c, tr.object_class] += 1
    n = len(tracks)
    if n > 1:
        centers = np.array([tr.center for tr in tracks])
        diags = np.array([tr.diagonal for tr in tracks])
        classes = np.array([tr.object_class for tr in tracks])
        dist = np.hypot(*(centers[:, None, :] - centers[None, :, :]).transpose(2, 0, 1))
        reach = radius_scale * 0.5 * (diags[:, None] + diags[None, :])
        ii, jj = np.nonzero(np.triu(dist <= reach, k=1))
        for a, b in zip(classes[ii], classes[jj]):
            adj[a, b] += 1
            if a != b:
                adj[b, a] += 1
    return SpatialContext(occ, adj, oob)


# -- temporal --------------------------------------------------------------

def trailing_means(speeds: Sequence[float], window: int) -> np.ndarray:
    """Mean of the last ``min(window, i + 1)`` samples at every position i."""
    s = np.asarray(speeds, dtype=np.float64)
    if s.size == 0:
        return s
    csum = np.concatenate([[0.0], np.cumsum(s)])
    idx = np.arange(1, s.size + 1)
    lo = np.maximum(idx - window, 0)
    return (csum[idx] - csum[lo]) / (idx - lo)


def full_window_means(speeds: Sequence[float], window: int) -> np.ndarray:
    """Means of every complete run of ``window`` consecutive samples."""
    s = np.asarray(speeds, dtype=np.float64)
    if s.size < window:
        return np.zeros(0)
    csum = np.concatenate([[0.0], np.cumsum(s)])
    return (csum[window:] - csum[:-window]) / window


@dataclass(frozen=True)
class OverspeedSign:
    flagged_count: int = 0
    max_windowed_speed: float = 0.0

    def vector(self) -> np.ndarray:
        return np.array([self.flagged_count, self.max_windowed_speed], dtype=np.float64)


def temporal_context(
    history: Mapping[int, Sequence[float]],
    window: int,
    threshold: float,
    present: Iterable[int] | None = None,
) -> OverspeedSign:
    """Overspeed sign for one frame.

    ``history`` maps track id to that track's speed samples up to and
    including the current frame; ``present`` restricts to tracks visible now
    (default: every key).
    """
    if window < 1:
        raise ValueError("window must be >= 1")
    if threshold < 0:
        raise ValueError("threshold must be >= 0")
    ids = history.keys() if present is None else present
    flagged, top = 0, 0.0
    for i in ids:
        means = trailing_means(history.get(i, ()), window)
        if means.size == 0:
            continue
        m = float(means.max())
        top = max(top, m)
        if m > threshold:
            flagged += 1
    return OverspeedSign(flagged, top)


def _speed_vector(track: Track, prev: tuple[int, tuple[float, float]] | None, t: int):
    if track.velocity is not None:
        return track.velocity
    if prev is None:
        return None
    t0, (x0, y0) = prev
    x1, y1 = track.foot_point
    dt = t - t0
    return ((x1 - x0) / dt, (y1 - y0) / dt)


class TrackHistory:
    """Sequential per-sequence state for the overspeed sign.

    Keeps, per track, the last ``window`` speed samples and the running
    maximum of their trailing mean, so each frame costs O(tracks).
    """

    def __init__(self, window: int, threshold: float):
        if window < 1:
            raise ValueError("window must be >= 1")
        self.window = window
        self.threshold = threshold
        self._recent: dict[int, deque] = {}
        self._max: dict[int, float] = {}
        self._last_pos: dict[int, tuple[int, tuple[float, float]]] = {}
        self.speeds: dict[int, list[float]] = {}

    def update(self, t: int, tracks: Sequence[Track]):
        """Consume frame ``t``; returns (OverspeedSign, {id: velocity})."""
        velocities = {}
        flagged, top = 0, 0.0
        for tr in tracks:
            v = _speed_vector(tr, self._last_pos.get(tr.id), t)
            self._last_pos[tr.id] = (t, tr.foot_point)
            if v is not None:
                velocities[tr.id] = v
                speed = float(np.hypot(*v))
                self.speeds.setdefault(tr.id, []).append(speed)
                recent = self._recent.setdefault(tr.id, deque(maxlen=self.window))
                recent.append(speed)
                mean = sum(recent) / len(recent)
                self._max[tr.id] = max(self._max.get(tr.id, 0.0), mean)
            if tr.id in self._max:
                m = self._max[tr.id]
                top = max(top, m)
                if m > self.threshold:
                    flagged += 1
        return OverspeedSign(flagged, top), velocities


def sequence_speed_series(frames) -> dict[int, list[float]]:
    """Per-track speed samples over a whole sequence of FrameFeatures."""
    hist = TrackHistory(window=1, threshold=float("inf"))
    for f in frames:
        hist.update(f.frame, f.tracks)
    return hist.speeds


def calibrate_speed_threshold(train, window: int = 10, percentile: float = 99.5) -> float:
    """Percentile of all full-window trailing mean speeds in a training Dataset."""
    samples = []
    for seq in train.sequences:
        for speeds in sequence_speed_series(seq.frames).values():
            samples.append(full_window_means(speeds, window))
    samples = np.concatenate(samples) if samples else np.zeros(0)
    if samples.size == 0:
        raise ValueError(f"no track in the training data has {window} speed samples")
    return float(np.percentile(samples, percentile))


# -- group -----------------------------------------------------------------

def line_fit_residual(points) -> float:
    """Minimal sum of squared perpendicular distances to a line (TLS).

    Equals the smallest eigenvalue of the 2x2 scatter matrix of the centered
    points.
    """
    p = np.asarray(points, dtype=np.float64).reshape(-1, 2)
    if len(p) < 2:
        return 0.0
    d = p - p.mean(axis=0)
    scatter = d.T @ d
    return max(float(np.linalg.eigvalsh(scatter)[0]), 0.0)


@dataclass(frozen=True)
class GroupContext:
    count: int = 0
    x_stats: tuple[float, float, float] = (0.0, 0.0, 0.0)  # min, max, median
    y_stats: tuple[float, float, float] = (0.0, 0.0, 0.0)
    speed_stats: tuple[float, float, float] = (0.0, 0.0, 0.0)
    position_residual: float = 0.0
    velocity_residual: float = 0.0
    present: bool = False

    def vector(self) -> np.ndarray:
        return np.array(
            [self.count, *self.x_stats, *self.y_stats, *self.speed_stats,
             self.position_residual, self.velocity_residual, float(self.present)],
            dtype=np.float64,
        )


def _order_stats(values) -> tuple[float, float, float]:
    if len(values) == 0:
        return (0.0, 0.0, 0.0)
    a = np.asarray(values, dtype=np.float64)
    return (float(a.min()), float(a.max()), float(np.median(a)))


def group_context(tracks: Sequence[Track], velocities: Mapping[int, tuple] | None = None) -> GroupContext:
    """Crowd statistics over one frame's tracks.

    Velocities come from ``velocities`` (keyed by track id) when given,
    otherwise from the tracker-supplied ``Track.velocity``; tracks with no
    known velocity are left out of the speed and velocity terms.
    """
    if not tracks:
        return GroupContext()
    pos = np.array([tr.foot_point for tr in tracks])
    vel = []
    for tr in tracks:
        v = (velocities or {}).get(tr.id, tr.velocity)
        if v is not None:
            vel.append(v)
    vel = np.array(vel, dtype=np.float64).reshape(-1, 2)
    speeds = np.hypot(vel[:, 0], vel[:, 1])
    return GroupContext(
        count=len(tracks),
        x_stats=_order_stats(pos[:, 0]),
        y_stats=_order_stats(pos[:, 1]),
        speed_stats=_order_stats(speeds),
        position_residual=line_fit_residual(pos),
        velocity_residual=line_fit_residual(vel),
        present=True,
    )


# -- per-frame bundle ------------------------------------------------------

@dataclass(frozen=True)
class ContextFeatures:
    spatial: SpatialContext
    overspeed: OverspeedSign = field(default_factory=OverspeedSign)
    group: GroupContext = field(default_factory=GroupContext)

    def vectors(self) -> dict[str, np.ndarray]:
        """Flat vector per context block name, as referenced by schemas."""
        return {
            "spatial": self.spatial.occupancy.ravel(),
            "adjacency": self.spatial.adjacency_upper(),
            "overspeed": self.overspeed.vector(),
            "group": self.group.vector(),
        }


def mine_sequence(seq, n_object_classes: int, params: ContextParams) -> list[ContextFeatures]:
    """Context for every frame of a Sequence, in one sequential pass."""
    hist = TrackHistory(params.window, params.speed_threshold)
    out = []
    for f in seq.frames:
        sign, velocities = hist.update(f.frame, f.tracks)
        out.append(ContextFeatures(
            spatial=spatial_context(seq.seg_map(f), f.tracks, n_object_classes, params.radius_scale),
            overspeed=sign,
            group=group_context(f.tracks, velocities),
        ))
    return out


def context_schema_blocks(region_classes, object_classes) -> list[FeatureBlock]:
    j = len(object_classes)
    iu = np.triu_indices(j)
    return [
        FeatureBlock("spatial", "spatial", len(region_classes) * j,
                     tuple(f"{r}×{o}" for r in region_classes for o in object_classes)),
        FeatureBlock("adjacency", "spatial", len(iu[0]),
                     tuple(f"{object_classes[a]}~{object_classes[b]}" for a, b in zip(*iu))),
        FeatureBlock("overspeed", "temporal", len(OVERSPEED_FIELDS), OVERSPEED_FIELDS),
        FeatureBlock("group", "group", len(GROUP_FIELDS), GROUP_FIELDS),
    ]


CONTEXT_BLOCKS = ("spatial", "adjacency", "overspeed", "group")


def default_schema(dataset, context: bool = True, blocks: Sequence[str] | None = None) -> FeatureSchema:
    """Schema for a dataset: the category vector, then the context blocks.

    ``blocks`` selects a subset of block names (``"categories"`` plus the
    names in ``CONTEXT_BLOCKS``); ``context=False`` keeps categories only.
    """
    m = dataset.manifest
    all_blocks = [FeatureBlock("categories", "categories", len(m.category_classes), m.category_classes)]
    if context:
        all_blocks += context_schema_blocks(dataset.region_classes, m.object_classes)
    if blocks is not None:
        known = {b.name for b in all_blocks}
        unknown = set(blocks) - known
        if unknown:
            raise ValueError(f"unknown schema blocks {sorted(unknown)}; available: {sorted(known)}")
        all_blocks = [b for b in all_blocks if b.name in set(blocks)]
    return FeatureSchema(tuple(all_blocks))
