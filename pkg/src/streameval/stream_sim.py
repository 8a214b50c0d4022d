"""Hardware-dependent streaming simulator.

Replays precomputed per-frame detector outputs against a runtime
distribution and produces the time-stamped prediction stream a real
deployment would emit. The scheduler always takes the newest frame: frames
overtaken while an inference is running are dropped, never processed late.
"""

from __future__ import annotations

import json
from bisect import bisect_left
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

from .data import (
    FrameDetections,
    RuntimeProfile,
    ValidationError,
    _box_from_json,
    _box_to_json,
    _iter_jsonl,
)

FRAME_POLICIES = ("latest_frame",)


@dataclass(frozen=True, slots=True)
class SimConfig:
    seed: int = 0
    contention_factor: float = 1.0
    policy: str = "latest_frame"
    input_frame_interval: int = 1

    def __post_init__(self):
        if not self.contention_factor >= 1.0:
            raise ValidationError(f"contention_factor must be >= 1, got {self.contention_factor}")
        if self.policy not in FRAME_POLICIES:
            raise ValidationError(f"unknown frame policy: {self.policy!r}")
        if not self.input_frame_interval >= 1:
            raise ValidationError("input_frame_interval must be a positive integer")


@dataclass(frozen=True, slots=True)
class StreamRecord:
    completion_us: int
    source_us: int
    detections: FrameDetections


@dataclass(slots=True)
class PredictionStream:
    """Time-ordered model outputs: (completion time, source frame, boxes)."""

    records: list[StreamRecord] = field(default_factory=list)

    def __post_init__(self):
        for rec in self.records:
            if rec.source_us > rec.completion_us:
                raise ValidationError("stream record completes before its source frame")
        for prev, curr in zip(self.records, self.records[1:]):
            if curr.completion_us <= prev.completion_us:
                raise ValidationError("stream completion timestamps must strictly increase")
            if curr.source_us < prev.source_us:
                raise ValidationError("stream source timestamps must be non-decreasing")

    def __len__(self) -> int:
        return len(self.records)

    def completions(self) -> list[int]:
        return [r.completion_us for r in self.records]


def sample_runtime(
    profile: RuntimeProfile, rng: np.random.Generator, contention_factor: float = 1.0
) -> int:
    """One inference duration in microseconds (always at least 1).

    Empirical profiles draw uniformly from their samples; parametric
    profiles draw from the declared distribution. The draw is scaled by the
    profile's own contention factor times `contention_factor`, then the
    post-processing overhead is added.
    """
    if profile.samples_ms is not None:
        base = profile.samples_ms[int(rng.integers(len(profile.samples_ms)))]
    elif profile.distribution == "constant":
        base = profile.params["ms"]
    else:  # lognormal
        base = float(rng.lognormal(profile.params["mu"], profile.params["sigma"]))
    total_ms = base * profile.contention_factor * contention_factor + profile.overhead_ms
    return max(1, round(total_ms * 1000.0))


def simulate_stream(
    frame_timestamps: Sequence[int],
    outputs: Mapping[int, FrameDetections],
    profile: RuntimeProfile,
    cfg: SimConfig,
) -> PredictionStream:
    """Run the discrete-event loop over the input clock.

    The model starts on the first frame. On finishing at wall time w it
    consumes the newest not-yet-dropped frame with timestamp <= w, or idles
    until the next frame arrives; every frame that arrived strictly during
    the finished inference is dropped. Inference is slower than the frame
    period in the regimes of interest, so the stream has fewer records than
    there are input frames.
    """
    frames = list(frame_timestamps)
    for prev, curr in zip(frames, frames[1:]):
        if curr <= prev:
            raise ValidationError("frame timestamps must strictly increase")
    frames = frames[:: cfg.input_frame_interval]
    if not frames:
        return PredictionStream([])

    rng = np.random.default_rng(cfg.seed)
    records: list[StreamRecord] = []
    j = 0
    wall = frames[0]
    n = len(frames)
    while j < n:
        start = max(wall, frames[j])
        completion = start + sample_runtime(profile, rng, cfg.contention_factor)
        source = frames[j]
        try:
            dets = outputs[source]
        except KeyError:
            raise ValidationError(f"missing detector output for frame t={source}") from None
        records.append(StreamRecord(completion, source, dets))
        # next input: first frame not overtaken by this inference
        j = bisect_left(frames, completion, lo=j + 1)
        wall = completion
    return PredictionStream(records)


def contention_sweep(base_profile: RuntimeProfile, factors: Sequence[float]) -> list[RuntimeProfile]:
    """Derived profiles, one per slowdown factor, scaled at sampling time."""
    out = []
    for f in factors:
        if not f >= 1.0:
            raise ValidationError(f"contention factor must be >= 1, got {f}")
        if f == 1.0:
            out.append(replace(base_profile))
        else:
            out.append(
                replace(
                    base_profile,
                    name=f"{base_profile.name}@x{f:g}",
                    contention_factor=base_profile.contention_factor * f,
                )
            )
    return out


def load_stream(path: str | Path) -> PredictionStream:
    """Read a stream file written by `write_stream`."""
    records = []
    for lineno, obj in _iter_jsonl(path):
        where = f"{path}:{lineno}"
        try:
            det = FrameDetections(
                scene_id=str(obj["scene_id"]),
                source_timestamp_us=int(obj["source_us"]),
                boxes=[_box_from_json(b, with_score=True, where=where) for b in obj["boxes"]],
            )
            records.append(StreamRecord(int(obj["completion_us"]), int(obj["source_us"]), det))
        except KeyError as exc:
            raise ValidationError(f"{where}: missing field {exc.args[0]!r}") from None
    return PredictionStream(records)


def write_stream(path: str | Path, stream: PredictionStream) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for rec in stream.records:
            obj = {
                "scene_id": rec.detections.scene_id,
                "completion_us": rec.completion_us,
                "source_us": rec.source_us,
                "boxes": [_box_to_json(b, with_score=True) for b in rec.detections.boxes],
            }
            fh.write(json.dumps(obj, separators=(",", ":")))
            fh.write("\n")
