"""Readers and writers for the on-disk feature-stream formats.

Formats (UTF-8 throughout):

* track stream, JSONL, one record per (frame, track)::

      {"t": 0, "id": 3, "box": [x0, y0, x1, y1], "v": [vx, vy], "class": 0}

  ``v`` is optional.
* category stream, JSONL, one record per frame: ``{"t": 0, "counts": [...]}``.
* SEGMAP text: ``M N C`` on line 1, C class names on line 2, then M rows of
  N integers.  Further blocks, each introduced by ``@frame F``, replace the
  map from frame F on.
* labels: one integer per line (0 normal, 1 abnormal), line number = frame.
* manifest: JSON, see :class:`DatasetManifest`.

Frames with no records are valid and mean "nothing detected".
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from ._io import atomic_write_json, atomic_write_text, jsonl_text
from .features import CategoryVector, FrameFeatures, SegmentationMap, Track

logger = logging.getLogger(__name__)

MANIFEST_NAME = "manifest.json"


class IngestError(ValueError):
    """A feature file failed to parse or validate."""


def _jsonl_records(path):
    path = Path(path)
    with open(path, encoding="utf-8") as f:
        for lineno, line in enumerate(f, 1):
            if not line.strip():
                continue
            try:
                rec = json.loads(line)
            except json.JSONDecodeError as e:
                raise IngestError(f"{path}:{lineno}: malformed JSON ({e.msg})") from None
            if not isinstance(rec, dict):
                raise IngestError(f"{path}:{lineno}: expected a JSON object")
            yield lineno, rec


def _frame_index(path, lineno, rec) -> int:
    t = rec.get("t")
    if not isinstance(t, int) or isinstance(t, bool) or t < 0:
        raise IngestError(f"{path}:{lineno}: 't' must be a non-negative integer, got {t!r}")
    return t


def parse_track_stream(path, total: int | None = None) -> list[list[Track]]:
    """Read a track JSONL file into per-frame track lists.

    The result has ``total`` entries (or max frame + 1 when ``total`` is
    None); frames without records get an empty list.  Tracks within a frame
    are ordered by id.
    """
    by_frame: dict[int, list[Track]] = {}
    for lineno, rec in _jsonl_records(path):
        t = _frame_index(path, lineno, rec)
        try:
            track = Track(
                id=int(rec["id"]),
                box=tuple(rec["box"]),
                object_class=int(rec.get("class", 0)),
                velocity=None if rec.get("v") is None else tuple(rec["v"]),
            )
        except KeyError as e:
            raise IngestError(f"{path}:{lineno}: missing field {e.args[0]!r}") from None
        except (TypeError, ValueError) as e:
            raise IngestError(f"{path}:{lineno}: {e}") from None
        by_frame.setdefault(t, []).append(track)
    n = total if total is not None else (max(by_frame) + 1 if by_frame else 0)
    if by_frame and max(by_frame) >= n:
        raise IngestError(f"{path}: frame {max(by_frame)} beyond frame count {n}")
    frames = []
    for t in range(n):
        tracks = sorted(by_frame.get(t, []), key=lambda tr: tr.id)
        ids = [tr.id for tr in tracks]
        if len(set(ids)) != len(ids):
            raise IngestError(f"{path}: duplicate track id in frame {t}")
        frames.append(tracks)
    return frames


def parse_category_stream(path, k: int, total: int | None = None) -> list[CategoryVector]:
    by_frame: dict[int, CategoryVector] = {}
    for lineno, rec in _jsonl_records(path):
        t = _frame_index(path, lineno, rec)
        counts = rec.get("counts")
        if not isinstance(counts, list):
            raise IngestError(f"{path}:{lineno}: 'counts' must be a list")
        if len(counts) != k:
            raise IngestError(f"{path}:{lineno}: counts has length {len(counts)}, expected K={k}")
        if t in by_frame:
            raise IngestError(f"{path}:{lineno}: duplicate record for frame {t}")
        try:
            by_frame[t] = CategoryVector(np.array(counts, dtype=np.float64))
        except (TypeError, ValueError) as e:
            raise IngestError(f"{path}:{lineno}: {e}") from None
    n = total if total is not None else (max(by_frame) + 1 if by_frame else 0)
    if by_frame and max(by_frame) >= n:
        raise IngestError(f"{path}: frame {max(by_frame)} beyond frame count {n}")
    return [by_frame.get(t) or CategoryVector.zeros(k) for t in range(n)]


def parse_segmentation_maps(path) -> list[SegmentationMap]:
    """Read every block of a SEGMAP file, ordered by ``valid_from``."""
    path = Path(path)
    lines = [ln.split() for ln in path.read_text(encoding="utf-8").splitlines()]
    lines = [ln for ln in lines if ln]
    if len(lines) < 2:
        raise IngestError(f"{path}: SEGMAP needs a header and a class-name line")
    try:
        m, n, c = (int(v) for v in lines[0])
    except ValueError:
        raise IngestError(f"{path}: bad SEGMAP header {' '.join(lines[0])!r}") from None
    if m <= 0 or n <= 0 or c <= 0:
        raise IngestError(f"{path}: SEGMAP dimensions must be positive, got {m} {n} {c}")
    names = tuple(lines[1])
    if len(names) != c:
        raise IngestError(f"{path}: {len(names)} class names for C={c}")

    maps = []
    pos, valid_from = 2, 0
    while True:
        rows = lines[pos:pos + m]
        if len(rows) != m or any(r[0].startswith("@") for r in rows):
            raise IngestError(f"{path}: block at frame {valid_from} has fewer than M={m} rows")
        if any(len(r) != n for r in rows):
            raise IngestError(f"{path}: block at frame {valid_from} has a row without N={n} values")
        try:
            grid = np.array([[int(v) for v in r] for r in rows], dtype=np.int64)
        except ValueError:
            raise IngestError(f"{path}: non-integer cell in block at frame {valid_from}") from None
        if grid.min() < 0 or grid.max() >= c:
            raise IngestError(
                f"{path}: cell value {grid.max() if grid.max() >= c else grid.min()} "
                f"outside [0, {c}) in block at frame {valid_from}"
            )
        maps.append(SegmentationMap(grid, names, valid_from))
        pos += m
        if pos >= len(lines):
            break
        head = lines[pos]
        if head[0] != "@frame" or len(head) != 2:
            raise IngestError(f"{path}: expected '@frame F', got {' '.join(head)!r}")
        try:
            valid_from = int(head[1])
        except ValueError:
            raise IngestError(f"{path}: bad frame index in {' '.join(head)!r}") from None
        if valid_from <= maps[-1].valid_from:
            raise IngestError(f"{path}: '@frame' blocks must have increasing frame indices")
        pos += 1
    return maps


def parse_segmentation_map(path) -> SegmentationMap:
    """Read the initial map of a SEGMAP file."""
    return parse_segmentation_maps(path)[0]


def parse_labels(path, total: int | None = None) -> list[int]:
    path = Path(path)
    labels = []
    for lineno, line in enumerate(path.read_text(encoding="utf-8").splitlines(), 1):
        s = line.strip()
        if not s:
            continue
        if s not in ("0", "1"):
            raise IngestError(f"{path}:{lineno}: label must be 0 or 1, got {s!r}")
        labels.append(int(s))
    if total is not None and len(labels) != total:
        raise IngestError(f"{path}: {len(labels)} labels for {total} frames")
    return labels


# -- writers ---------------------------------------------------------------

def write_track_stream(path, frames: list[list[Track]]) -> Path:
    records = []
    for t, tracks in enumerate(frames):
        for tr in tracks:
            rec = {"t": t, "id": tr.id, "box": list(tr.box)}
            if tr.velocity is not None:
                rec["v"] = list(tr.velocity)
            rec["class"] = tr.object_class
            records.append(rec)
    return atomic_write_text(path, jsonl_text(records))


def write_category_stream(path, vectors: list[CategoryVector]) -> Path:
    def num(x):
        return int(x) if float(x).is_integer() else float(x)

    records = [{"t": t, "counts": [num(c) for c in cv.counts]} for t, cv in enumerate(vectors)]
    return atomic_write_text(path, jsonl_text(records))


def write_segmentation_maps(path, maps: list[SegmentationMap]) -> Path:
    first = maps[0]
    out = [f"{first.height} {first.width} {first.class_count}", " ".join(first.class_names)]
    for i, seg in enumerate(maps):
        if i:
            out.append(f"@frame {seg.valid_from}")
        out.extend(" ".join(str(v) for v in row) for row in seg.labels)
    return atomic_write_text(path, "\n".join(out) + "\n")


def write_labels(path, labels) -> Path:
    return atomic_write_text(path, "".join(f"{int(v)}\n" for v in labels))


# -- manifest / dataset ----------------------------------------------------

@dataclass(frozen=True)
class AnomalyEvent:
    type: str
    start: int
    duration: int

    @property
    def frames(self) -> range:
        return range(self.start, self.start + self.duration)


@dataclass(frozen=True)
class SequenceEntry:
    name: str
    tracks: str
    categories: str
    segmentation: str
    frames: int
    frame_size: tuple[int, int]
    fps: float = 30.0
    labels: str | None = None
    events: tuple[AnomalyEvent, ...] = ()


@dataclass(frozen=True)
class DatasetManifest:
    name: str
    object_classes: tuple[str, ...]
    category_classes: tuple[str, ...]
    sequences: tuple[SequenceEntry, ...]
    category_semantics: str = "counts"
    root: Path = field(default=Path("."), compare=False)

    def to_dict(self) -> dict:
        seqs = []
        for s in self.sequences:
            d = {
                "name": s.name,
                "tracks": s.tracks,
                "categories": s.categories,
                "segmentation": s.segmentation,
                "frames": s.frames,
                "frame_size": list(s.frame_size),
                "fps": s.fps,
            }
            if s.labels is not None:
                d["labels"] = s.labels
            if s.events:
                d["events"] = [
                    {"type": e.type, "start": e.start, "duration": e.duration} for e in s.events
                ]
            seqs.append(d)
        return {
            "name": self.name,
            "object_classes": list(self.object_classes),
            "category_classes": list(self.category_classes),
            "category_semantics": self.category_semantics,
            "sequences": seqs,
        }

    @classmethod
    def from_dict(cls, d: dict, root=".") -> "DatasetManifest":
        try:
            seqs = tuple(
                SequenceEntry(
                    name=str(s["name"]),
                    tracks=s["tracks"],
                    categories=s["categories"],
                    segmentation=s["segmentation"],
                    frames=int(s["frames"]),
                    frame_size=tuple(int(v) for v in s["frame_size"]),
                    fps=float(s.get("fps", 30.0)),
                    labels=s.get("labels"),
                    events=tuple(
                        AnomalyEvent(e["type"], int(e["start"]), int(e["duration"]))
                        for e in s.get("events", ())
                    ),
                )
                for s in d["sequences"]
            )
            m = cls(
                name=str(d["name"]),
                object_classes=tuple(d["object_classes"]),
                category_classes=tuple(d["category_classes"]),
                sequences=seqs,
                category_semantics=d.get("category_semantics", "counts"),
                root=Path(root),
            )
        except (KeyError, TypeError) as e:
            raise IngestError(f"manifest: missing or malformed field {e}") from None
        for s in m.sequences:
            if s.frames <= 0:
                raise IngestError(f"manifest: sequence {s.name!r} has frame count {s.frames}")
            if len(s.frame_size) != 2:
                raise IngestError(f"manifest: sequence {s.name!r} frame_size must be [W, H]")
        if m.category_semantics not in ("counts", "confidences"):
            raise IngestError(f"manifest: unknown category_semantics {m.category_semantics!r}")
        return m


def write_manifest(directory, manifest: DatasetManifest) -> Path:
    return atomic_write_json(Path(directory) / MANIFEST_NAME, manifest.to_dict())


@dataclass(frozen=True)
class Sequence:
    name: str
    frames: tuple[FrameFeatures, ...]
    seg_maps: tuple[SegmentationMap, ...]
    events: tuple[AnomalyEvent, ...] = ()

    def seg_map(self, frame: FrameFeatures) -> SegmentationMap:
        return self.seg_maps[frame.seg_ref]

    @property
    def labels(self) -> list[int | None]:
        return [f.label for f in self.frames]

    @property
    def has_labels(self) -> bool:
        return all(f.label is not None for f in self.frames)

    def event_type(self, t: int) -> str | None:
        for e in self.events:
            if t in e.frames:
                return e.type
        return None


@dataclass(frozen=True)
class Dataset:
    manifest: DatasetManifest
    sequences: tuple[Sequence, ...]

    @property
    def region_classes(self) -> tuple[str, ...]:
        names = {m.class_names for s in self.sequences for m in s.seg_maps}
        if len(names) != 1:
            raise IngestError(f"dataset {self.manifest.name!r}: inconsistent region class tables {names}")
        return names.pop()

    @property
    def frame_count(self) -> int:
        return sum(len(s.frames) for s in self.sequences)

    @property
    def has_labels(self) -> bool:
        return all(s.has_labels for s in self.sequences)


def _active_map(maps, t):
    idx = 0
    for i, m in enumerate(maps):
        if m.valid_from <= t:
            idx = i
    return idx


def load_sequence(entry: SequenceEntry, manifest: DatasetManifest) -> Sequence:
    root = manifest.root

    def resolve(rel):
        p = root / rel
        if not p.is_file():
            raise IngestError(f"sequence {entry.name!r}: missing file {p}")
        return p

    k = len(manifest.category_classes)
    j = len(manifest.object_classes)
    try:
        tracks = parse_track_stream(resolve(entry.tracks), entry.frames)
        cats = parse_category_stream(resolve(entry.categories), k, entry.frames)
        maps = parse_segmentation_maps(resolve(entry.segmentation))
        labels = parse_labels(resolve(entry.labels), entry.frames) if entry.labels else None
    except IngestError as e:
        raise IngestError(f"sequence {entry.name!r}: {e}") from None
    if maps[0].valid_from != 0:
        raise IngestError(f"sequence {entry.name!r}: no segmentation map valid at frame 0")
    w, h = entry.frame_size
    for m in maps:
        if (m.width, m.height) != (w, h):
            raise IngestError(
                f"sequence {entry.name!r}: segmentation {m.width}x{m.height} "
                f"does not match frame size {w}x{h}"
            )
    frames = []
    for t in range(entry.frames):
        for tr in tracks[t]:
            if not 0 <= tr.object_class < j:
                raise IngestError(
                    f"sequence {entry.name!r}: frame {t} track {tr.id} has class "
                    f"{tr.object_class} outside [0, {j})"
                )
        frames.append(FrameFeatures(
            frame=t,
            tracks=tuple(tracks[t]),
            categories=cats[t],
            seg_ref=_active_map(maps, t),
            label=None if labels is None else labels[t],
        ))
    return Sequence(entry.name, tuple(frames), tuple(maps), entry.events)


def read_manifest(path) -> DatasetManifest:
    path = Path(path)
    if path.is_dir():
        path = path / MANIFEST_NAME
    if not path.is_file():
        raise IngestError(f"manifest not found: {path}")
    try:
        d = json.loads(path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as e:
        raise IngestError(f"{path}: malformed manifest JSON ({e.msg})") from None
    return DatasetManifest.from_dict(d, root=path.parent)


def load_dataset(manifest_path) -> Dataset:
    """Load every sequence referenced by a manifest (file or its directory)."""
    manifest = read_manifest(manifest_path)
    seqs = tuple(load_sequence(e, manifest) for e in manifest.sequences)
    logger.info("loaded dataset %r: %d sequences, %d frames",
                manifest.name, len(seqs), sum(len(s.frames) for s in seqs))
    return Dataset(manifest, seqs)
