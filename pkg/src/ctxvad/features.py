"""Domain types for ingested per-frame features and the flat DAE input vector.

Upstream vision models produce three kinds of output per frame: a region
label grid, a list of tracked objects and a per-class detection vector.  The
types below hold those outputs; :func:`assemble` concatenates the category
vector with mined context blocks in the order declared by a
:class:`FeatureSchema`, and :class:`Normalizer` scales the result to [0, 1].
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Mapping, Sequence

import numpy as np

SOURCES = ("categories", "spatial", "temporal", "group")


class SchemaError(ValueError):
    """Raised when a feature block and its source data disagree."""


@dataclass(frozen=True)
class SegmentationMap:
    """Region-class label grid of shape (height, width)."""

    labels: np.ndarray
    class_names: tuple[str, ...]
    valid_from: int = 0

    def __post_init__(self):
        labels = np.asarray(self.labels)
        if labels.ndim != 2:
            raise ValueError(f"segmentation labels must be 2-D, got shape {labels.shape}")
        if not np.issubdtype(labels.dtype, np.integer):
            raise ValueError("segmentation labels must be integers")
        names = tuple(self.class_names)
        if len(set(names)) != len(names):
            raise ValueError(f"duplicate region class names: {names}")
        if labels.size and (labels.min() < 0 or labels.max() >= len(names)):
            raise ValueError(
                f"segmentation cell value out of range [0, {len(names)}): "
                f"min={labels.min()}, max={labels.max()}"
            )
        labels = labels.astype(np.int64, copy=True)
        labels.setflags(write=False)
        object.__setattr__(self, "labels", labels)
        object.__setattr__(self, "class_names", names)

    @property
    def height(self) -> int:
        return self.labels.shape[0]

    @property
    def width(self) -> int:
        return self.labels.shape[1]

    @property
    def class_count(self) -> int:
        return len(self.class_names)

    def __eq__(self, other):
        if not isinstance(other, SegmentationMap):
            return NotImplemented
        return (
            self.class_names == other.class_names
            and self.valid_from == other.valid_from
            and np.array_equal(self.labels, other.labels)
        )

    __hash__ = None


@dataclass(frozen=True)
class Track:
    """One tracked object in one frame.

    ``box`` is (x_min, y_min, x_max, y_max) in pixels.  ``velocity`` is in
    pixels/frame and may be ``None`` when the tracker does not report it.
    """

    id: int
    box: tuple[float, float, float, float]
    object_class: int = 0
    velocity: tuple[float, float] | None = None
    size: tuple[float, float] | None = None

    def __post_init__(self):
        box = tuple(float(c) for c in self.box)
        if len(box) != 4:
            raise ValueError(f"track {self.id}: box needs 4 coordinates, got {len(box)}")
        x0, y0, x1, y1 = box
        if x1 < x0 or y1 < y0:
            raise ValueError(f"track {self.id}: negative box extent {box}")
        extent = (x1 - x0, y1 - y0)
        if self.size is None:
            size = extent
        else:
            size = tuple(float(s) for s in self.size)
            if len(size) != 2 or min(size) < 0:
                raise ValueError(f"track {self.id}: invalid size {self.size}")
            if abs(size[0] - extent[0]) > 1e-6 or abs(size[1] - extent[1]) > 1e-6:
                raise ValueError(f"track {self.id}: size {size} disagrees with box {box}")
        object.__setattr__(self, "box", box)
        object.__setattr__(self, "size", size)
        if self.velocity is not None:
            v = tuple(float(c) for c in self.velocity)
            if len(v) != 2:
                raise ValueError(f"track {self.id}: velocity needs 2 components")
            object.__setattr__(self, "velocity", v)

    @property
    def foot_point(self) -> tuple[float, float]:
        """Bottom-center of the box, the ground-contact reference point."""
        x0, _, x1, y1 = self.box
        return (0.5 * (x0 + x1), y1)

    @property
    def center(self) -> tuple[float, float]:
        x0, y0, x1, y1 = self.box
        return (0.5 * (x0 + x1), 0.5 * (y0 + y1))

    @property
    def diagonal(self) -> float:
        return float(np.hypot(*self.size))


@dataclass(frozen=True)
class CategoryVector:
    """Per-class detection counts (or confidences) for one frame."""

    counts: np.ndarray

    def __post_init__(self):
        counts = np.array(self.counts, dtype=np.float64).reshape(-1)
        if not np.all(np.isfinite(counts)) or np.any(counts < 0):
            raise ValueError(f"category counts must be finite and >= 0, got {counts}")
        counts.setflags(write=False)
        object.__setattr__(self, "counts", counts)

    @classmethod
    def zeros(cls, k: int) -> "CategoryVector":
        return cls(np.zeros(k))

    def __len__(self):
        return len(self.counts)

    def __eq__(self, other):
        if not isinstance(other, CategoryVector):
            return NotImplemented
        return np.array_equal(self.counts, other.counts)

    __hash__ = None


@dataclass(frozen=True)
class FrameFeatures:
    frame: int
    tracks: tuple[Track, ...]
    categories: CategoryVector
    seg_ref: int = 0
    label: int | None = None

    def __post_init__(self):
        object.__setattr__(self, "tracks", tuple(self.tracks))
        if self.label not in (None, 0, 1):
            raise ValueError(f"frame {self.frame}: label must be 0, 1 or None, got {self.label}")


@dataclass(frozen=True)
class FeatureBlock:
    """A named slice of the input vector.

    ``labels`` optionally names every element, so that per-feature errors
    can be reported as ``"<block>:<label>"``.
    """

    name: str
    source: str
    length: int
    labels: tuple[str, ...] = ()

    def __post_init__(self):
        if self.source not in SOURCES:
            raise SchemaError(f"block {self.name!r}: unknown source {self.source!r}")
        if self.length < 0:
            raise SchemaError(f"block {self.name!r}: negative length {self.length}")
        object.__setattr__(self, "labels", tuple(self.labels))
        if self.labels and len(self.labels) != self.length:
            raise SchemaError(
                f"block {self.name!r}: {len(self.labels)} labels for length {self.length}"
            )

    def feature_names(self) -> list[str]:
        if self.labels:
            return [f"{self.name}:{label}" for label in self.labels]
        return [f"{self.name}[{i}]" for i in range(self.length)]


@dataclass(frozen=True)
class FeatureSchema:
    blocks: tuple[FeatureBlock, ...] = ()

    def __post_init__(self):
        blocks = tuple(self.blocks)
        names = [b.name for b in blocks]
        if len(set(names)) != len(names):
            raise SchemaError(f"duplicate block names in schema: {names}")
        object.__setattr__(self, "blocks", blocks)

    @property
    def total_dim(self) -> int:
        return sum(b.length for b in self.blocks)

    @property
    def uses_context(self) -> bool:
        return any(b.source != "categories" for b in self.blocks)

    def offsets(self) -> dict[str, slice]:
        out, start = {}, 0
        for b in self.blocks:
            out[b.name] = slice(start, start + b.length)
            start += b.length
        return out

    def feature_names(self) -> list[str]:
        return [name for b in self.blocks for name in b.feature_names()]

    def split(self, vector) -> dict[str, np.ndarray]:
        """Slice an assembled vector back into its blocks."""
        vector = np.asarray(vector)
        if vector.shape[-1] != self.total_dim:
            raise SchemaError(f"vector of length {vector.shape[-1]} for schema of dim {self.total_dim}")
        return {name: vector[..., sl] for name, sl in self.offsets().items()}

    def to_dict(self) -> dict:
        return {
            "blocks": [
                {"name": b.name, "source": b.source, "length": b.length, "labels": list(b.labels)}
                for b in self.blocks
            ]
        }

    @classmethod
    def from_dict(cls, d: Mapping) -> "FeatureSchema":
        return cls(tuple(
            FeatureBlock(b["name"], b["source"], int(b["length"]), tuple(b.get("labels", ())))
            for b in d["blocks"]
        ))


def assemble(context, categories: CategoryVector | None, schema: FeatureSchema) -> np.ndarray:
    """Concatenate source blocks into one flat vector, in schema order.

    ``context`` is a :class:`~ctxvad.context.ContextFeatures` or any mapping
    from block name to vector.  Category blocks read from ``categories``.
    """
    if context is None:
        blocks = {}
    elif hasattr(context, "vectors"):
        blocks = context.vectors()
    else:
        blocks = dict(context)
    parts = []
    for block in schema.blocks:
        if block.source == "categories":
            if categories is None:
                raise SchemaError(f"block {block.name!r}: no category vector supplied")
            data = categories.counts
        else:
            if block.name not in blocks:
                raise SchemaError(f"block {block.name!r}: no {block.source} data supplied")
            data = np.asarray(blocks[block.name], dtype=np.float64).reshape(-1)
        if len(data) != block.length:
            raise SchemaError(
                f"block {block.name!r}: expected length {block.length}, source has {len(data)}"
            )
        parts.append(np.asarray(data, dtype=np.float64))
    if not parts:
        return np.zeros(0)
    return np.concatenate(parts)


@dataclass(frozen=True)
class Normalizer:
    """Per-dimension min-max scaling learned from training vectors.

    ``upper`` is the clamp applied above; ``None`` leaves values past the
    training maximum unbounded so their size still counts at test time.
    """

    mins: np.ndarray
    maxs: np.ndarray
    upper: float | None = 1.0

    def __post_init__(self):
        mins = np.array(self.mins, dtype=np.float64).reshape(-1)
        maxs = np.array(self.maxs, dtype=np.float64).reshape(-1)
        if mins.shape != maxs.shape:
            raise ValueError("normalizer mins/maxs shape mismatch")
        if np.any(maxs < mins):
            raise ValueError("normalizer has max < min")
        mins.setflags(write=False)
        maxs.setflags(write=False)
        object.__setattr__(self, "mins", mins)
        object.__setattr__(self, "maxs", maxs)

    @property
    def dim(self) -> int:
        return len(self.mins)

    @property
    def constant(self) -> np.ndarray:
        return self.maxs == self.mins

    def __eq__(self, other):
        if not isinstance(other, Normalizer):
            return NotImplemented
        return (
            self.upper == other.upper
            and np.array_equal(self.mins, other.mins)
            and np.array_equal(self.maxs, other.maxs)
        )

    __hash__ = None


def fit_normalizer(train: Sequence, upper: float | None = 1.0) -> Normalizer:
    X = np.asarray(train, dtype=np.float64)
    if X.ndim != 2 or X.shape[0] == 0:
        raise ValueError("fit_normalizer needs a nonempty list of equal-length vectors")
    return Normalizer(X.min(axis=0), X.max(axis=0), upper)


def normalize(v, n: Normalizer) -> np.ndarray:
    """Map each dimension to [0, 1] via the training min/max, clamping.

    Dimensions that were constant in training use a unit span, so every
    training value maps to 0 while an unseen deviation still shows up
    instead of being erased.
    """
    v = np.asarray(v, dtype=np.float64)
    if v.shape[-1] != n.dim:
        raise SchemaError(f"vector of dim {v.shape[-1]} for normalizer of dim {n.dim}")
    span = np.where(n.constant, 1.0, n.maxs - n.mins)
    upper = np.inf if n.upper is None else n.upper
    return np.clip((v - n.mins) / span, 0.0, upper)
