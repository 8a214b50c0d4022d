"""Core domain records, JSON-Lines file schemas, and validated ingestion.

Timestamps are integer microseconds throughout so that recency comparisons
are exact. One JSON object per line keeps large scene logs streamable.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Iterable

from .geom import BevRect, Quaternion, Vec3

US_PER_S = 1_000_000


class ValidationError(ValueError):
    """Input data violates a schema or invariant."""


@dataclass(frozen=True, slots=True)
class Box3D:
    """One oriented 3D bounding box.

    size is (width, length, height) in meters; velocity is planar (vx, vy)
    in m/s. Ground-truth boxes carry score 1.0 so one schema covers both
    annotations and detections.
    """

    category: str
    center: Vec3
    size: tuple[float, float, float]
    rotation: Quaternion
    velocity: tuple[float, float] = (0.0, 0.0)
    score: float = 1.0
    instance_id: str | None = None
    attribute: str | None = None

    def __post_init__(self):
        if len(self.size) != 3 or any(not (s > 0.0 and math.isfinite(s)) for s in self.size):
            raise ValidationError(f"size must be three positive finite values, got {self.size}")
        if not (0.0 <= self.score <= 1.0):
            raise ValidationError(f"score outside [0, 1]: {self.score}")
        if len(self.velocity) != 2 or any(not math.isfinite(v) for v in self.velocity):
            raise ValidationError(f"velocity must be finite (vx, vy), got {self.velocity}")
        object.__setattr__(self, "size", tuple(float(s) for s in self.size))
        object.__setattr__(self, "velocity", tuple(float(v) for v in self.velocity))

    @property
    def yaw(self) -> float:
        return self.rotation.yaw()

    def bev_rect(self) -> BevRect:
        """Ground-plane footprint of the box."""
        return BevRect(self.center.x, self.center.y, self.size[0], self.size[1], self.yaw)

    def moved_to(self, x: float, y: float) -> "Box3D":
        return replace(self, center=Vec3(x, y, self.center.z))


@dataclass(slots=True)
class FrameAnnotations:
    """Ground-truth boxes of one scene frame."""

    scene_id: str
    timestamp_us: int
    is_keyframe: bool
    boxes: list[Box3D] = field(default_factory=list)

    def __post_init__(self):
        seen: set[str] = set()
        for box in self.boxes:
            if box.instance_id is None:
                continue
            if box.instance_id in seen:
                raise ValidationError(
                    f"duplicate instance_id {box.instance_id!r} at t={self.timestamp_us}"
                )
            seen.add(box.instance_id)


@dataclass(slots=True)
class FrameDetections:
    """Model output for one consumed frame."""

    scene_id: str
    source_timestamp_us: int
    boxes: list[Box3D] = field(default_factory=list)


@dataclass(slots=True)
class TdbEntry:
    timestamp_us: int
    boxes: list[Box3D]


@dataclass(slots=True)
class TemporalDatabase:
    """High-rate auxiliary detections, queryable by nearest timestamp."""

    entries: list[TdbEntry] = field(default_factory=list)

    def __post_init__(self):
        for prev, curr in zip(self.entries, self.entries[1:]):
            if curr.timestamp_us <= prev.timestamp_us:
                raise ValidationError("temporal database timestamps must strictly increase")

    def __len__(self) -> int:
        return len(self.entries)


@dataclass(slots=True)
class RuntimeProfile:
    """Empirical or parametric distribution of per-frame inference time (ms).

    `contention_factor` models a multiplicative slowdown from shared compute
    and is applied at sampling time; `overhead_ms` is post-processing cost
    added after scaling.
    """

    name: str
    samples_ms: list[float] | None = None
    distribution: str | None = None
    params: dict[str, float] | None = None
    overhead_ms: float = 0.0
    contention_factor: float = 1.0

    def __post_init__(self):
        if self.samples_ms is not None:
            if len(self.samples_ms) == 0:
                raise ValidationError("empty profile: samples_ms has no entries")
            if any(not (s > 0.0 and math.isfinite(s)) for s in self.samples_ms):
                raise ValidationError("runtime samples must be positive and finite")
            if self.distribution is not None:
                raise ValidationError("profile cannot be both empirical and parametric")
        elif self.distribution == "constant":
            if not self.params or not self.params.get("ms", 0.0) > 0.0:
                raise ValidationError("constant profile needs params.ms > 0")
        elif self.distribution == "lognormal":
            if not self.params or "mu" not in self.params or not self.params.get("sigma", -1.0) >= 0.0:
                raise ValidationError("lognormal profile needs params.mu and params.sigma >= 0")
        else:
            raise ValidationError(f"unknown profile distribution: {self.distribution!r}")
        if not self.overhead_ms >= 0.0:
            raise ValidationError(f"overhead_ms must be >= 0, got {self.overhead_ms}")
        if not self.contention_factor >= 1.0:
            raise ValidationError(f"contention_factor must be >= 1, got {self.contention_factor}")


def regular_timestamps(start_us: int, end_us: int, rate_hz: float) -> list[int]:
    """Microsecond grid [start, end] at `rate_hz`, anchored at start.

    Each tick is rounded independently from the exact fraction k/rate, so
    grids generated from the same anchor agree tick-for-tick regardless of
    length (no cumulative drift).
    """
    if rate_hz <= 0.0:
        raise ValidationError(f"rate must be positive, got {rate_hz}")
    out = []
    k = 0
    while True:
        t = start_us + round(k * US_PER_S / rate_hz)
        if t > end_us:
            break
        out.append(t)
        k += 1
    return out


def group_by_scene(frames: Iterable) -> dict[str, list]:
    """Group frames (or detections) by scene_id, preserving file order."""
    grouped: dict[str, list] = {}
    for f in frames:
        grouped.setdefault(f.scene_id, []).append(f)
    return grouped


# --------------------------------------------------------------------------
# JSON-Lines serialization
# --------------------------------------------------------------------------


def _box_to_json(box: Box3D, with_score: bool) -> dict:
    obj: dict = {}
    if box.instance_id is not None:
        obj["instance_id"] = box.instance_id
    obj["category"] = box.category
    obj["center"] = [box.center.x, box.center.y, box.center.z]
    obj["size"] = list(box.size)
    obj["rotation"] = [box.rotation.w, box.rotation.x, box.rotation.y, box.rotation.z]
    obj["velocity"] = list(box.velocity)
    if box.attribute is not None:
        obj["attribute"] = box.attribute
    if with_score:
        obj["score"] = box.score
    return obj


def _box_from_json(obj: dict, with_score: bool, where: str) -> Box3D:
    try:
        center = obj["center"]
        size = obj["size"]
        rotation = obj["rotation"]
        velocity = obj["velocity"]
        category = obj["category"]
    except KeyError as exc:
        raise ValidationError(f"{where}: box missing field {exc.args[0]!r}") from None
    try:
        return Box3D(
            category=str(category),
            center=Vec3(*[float(v) for v in center]),
            size=tuple(float(v) for v in size),
            rotation=Quaternion(*[float(v) for v in rotation]),
            velocity=tuple(float(v) for v in velocity),
            score=float(obj["score"]) if with_score else 1.0,
            instance_id=obj.get("instance_id"),
            attribute=obj.get("attribute"),
        )
    except KeyError as exc:
        raise ValidationError(f"{where}: box missing field {exc.args[0]!r}") from None
    except (TypeError, ValueError) as exc:
        raise ValidationError(f"{where}: {exc}") from None


def _iter_jsonl(path: str | Path):
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            if not line.strip():
                continue
            try:
                yield lineno, json.loads(line)
            except json.JSONDecodeError as exc:
                raise ValidationError(f"{path}:{lineno}: malformed JSON: {exc.msg}") from None


def _write_jsonl(path: str | Path, objs: Iterable[dict]) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for obj in objs:
            fh.write(json.dumps(obj, separators=(",", ":")))
            fh.write("\n")


def load_scene_annotations(path: str | Path) -> list[FrameAnnotations]:
    """Read a `<scene_id>.gt.jsonl` file; one frame per line, sorted per scene."""
    frames: list[FrameAnnotations] = []
    last_ts: dict[str, int] = {}
    for lineno, obj in _iter_jsonl(path):
        where = f"{path}:{lineno}"
        try:
            frame = FrameAnnotations(
                scene_id=str(obj["scene_id"]),
                timestamp_us=int(obj["timestamp_us"]),
                is_keyframe=bool(obj["is_keyframe"]),
                boxes=[_box_from_json(b, with_score=False, where=where) for b in obj["boxes"]],
            )
        except KeyError as exc:
            raise ValidationError(f"{where}: missing field {exc.args[0]!r}") from None
        prev = last_ts.get(frame.scene_id)
        if prev is not None and frame.timestamp_us <= prev:
            raise ValidationError(f"{where}: unsorted scene {frame.scene_id!r}")
        last_ts[frame.scene_id] = frame.timestamp_us
        frames.append(frame)
    return frames


def write_scene_annotations(path: str | Path, frames: Iterable[FrameAnnotations]) -> None:
    _write_jsonl(
        path,
        (
            {
                "scene_id": f.scene_id,
                "timestamp_us": f.timestamp_us,
                "is_keyframe": f.is_keyframe,
                "boxes": [_box_to_json(b, with_score=False) for b in f.boxes],
            }
            for f in frames
        ),
    )


def load_detections(path: str | Path) -> list[FrameDetections]:
    """Read a `<scene_id>.det.jsonl` file (annotation schema plus scores)."""
    dets: list[FrameDetections] = []
    last_ts: dict[str, int] = {}
    for lineno, obj in _iter_jsonl(path):
        where = f"{path}:{lineno}"
        try:
            det = FrameDetections(
                scene_id=str(obj["scene_id"]),
                source_timestamp_us=int(obj["timestamp_us"]),
                boxes=[_box_from_json(b, with_score=True, where=where) for b in obj["boxes"]],
            )
        except KeyError as exc:
            raise ValidationError(f"{where}: missing field {exc.args[0]!r}") from None
        prev = last_ts.get(det.scene_id)
        if prev is not None and det.source_timestamp_us <= prev:
            raise ValidationError(f"{where}: unsorted scene {det.scene_id!r}")
        last_ts[det.scene_id] = det.source_timestamp_us
        dets.append(det)
    return dets


def write_detections(path: str | Path, dets: Iterable[FrameDetections]) -> None:
    _write_jsonl(
        path,
        (
            {
                "scene_id": d.scene_id,
                "timestamp_us": d.source_timestamp_us,
                "boxes": [_box_to_json(b, with_score=True) for b in d.boxes],
            }
            for d in dets
        ),
    )


def load_temporal_db(path: str | Path) -> TemporalDatabase:
    """Read a `<scene_id>.tdb.jsonl` file (detection schema)."""
    dets = load_detections(path)
    return TemporalDatabase([TdbEntry(d.source_timestamp_us, d.boxes) for d in dets])


def write_temporal_db(path: str | Path, db: TemporalDatabase, scene_id: str) -> None:
    write_detections(
        path, (FrameDetections(scene_id, e.timestamp_us, e.boxes) for e in db.entries)
    )


def load_runtime_profile(path: str | Path) -> RuntimeProfile:
    """Read a runtime profile from a single JSON object."""
    with open(path, "r", encoding="utf-8") as fh:
        try:
            obj = json.load(fh)
        except json.JSONDecodeError as exc:
            raise ValidationError(f"{path}: malformed JSON: {exc.msg}") from None
    if not isinstance(obj, dict):
        raise ValidationError(f"{path}: profile must be a JSON object")
    samples = obj.get("samples_ms")
    if samples is None and "distribution" not in obj:
        raise ValidationError(f"{path}: profile needs samples_ms or a distribution")
    if samples is not None and len(samples) == 0:
        raise ValidationError(f"{path}: empty profile")
    return RuntimeProfile(
        name=str(obj.get("name", "unnamed")),
        samples_ms=[float(s) for s in samples] if samples is not None else None,
        distribution=obj.get("distribution"),
        params={k: float(v) for k, v in obj["params"].items()} if obj.get("params") else None,
        overhead_ms=float(obj.get("overhead_ms", 0.0)),
        contention_factor=float(obj.get("contention_factor", 1.0)),
    )


def write_runtime_profile(path: str | Path, profile: RuntimeProfile) -> None:
    obj: dict = {"name": profile.name}
    if profile.samples_ms is not None:
        obj["samples_ms"] = profile.samples_ms
    else:
        obj["distribution"] = profile.distribution
        obj["params"] = profile.params
    if profile.overhead_ms:
        obj["overhead_ms"] = profile.overhead_ms
    if profile.contention_factor != 1.0:
        obj["contention_factor"] = profile.contention_factor
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(obj, fh, indent=2)
        fh.write("\n")
