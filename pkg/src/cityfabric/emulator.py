"""Deterministic detection-event emulation standing in for the camera fleet.

Vehicle arrivals follow a time-inhomogeneous Poisson process (piecewise
constant rate plus an optional sinusoid), thinned per class by the process's
class mix. Each vehicle stays in view for a geometrically distributed number
of consecutive frames with a persistent tracking id and a linearly drifting,
lightly wobbling bounding box.

Randomness is counter-based: every (trace_seed, second) pair owns an
independent Philox substream, so any time window of a trace can be
regenerated in isolation and is byte-identical to the same window of a full
replay. This is what lets the federated-learning sampler read single frames
out of a 150-minute trace without materializing it.
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass
from typing import Callable, Iterator, Sequence

import numpy as np
from numpy.random import Generator, Philox

from .errors import BackpressureExceeded
from .model import DEFAULT_CLASS_MIX, DetectionEvent, StreamDescriptor

# Distinct salts keep the arrival substream and auxiliary substreams apart.
_ARRIVAL_SALT = 0x9E3779B97F4A7C15
_HISTORY_SALT = 0xC2B2AE3D27D4EB4F

# tracking_id = ts_s * stride + index-within-second; bounds arrivals/second.
TID_STRIDE = 100_000

# Per-class base bbox sizes (w, h), loosely ordered by vehicle footprint.
_CLASS_W = np.array([0.06, 0.09, 0.12, 0.13, 0.11, 0.22, 0.20, 0.14], dtype=np.float32)
_CLASS_H = np.array([0.10, 0.11, 0.09, 0.10, 0.09, 0.16, 0.15, 0.11], dtype=np.float32)


@dataclass(frozen=True)
class TrafficProcess:
    """Arrival-rate profile and per-vehicle behaviour for one stream."""

    base_per_min: float = 60.0
    amplitude_per_min: float = 0.0
    period_s: float = 1800.0
    phase_rad: float = 0.0
    pieces: tuple[tuple[float, float], ...] = ()  # (start_s, rate_per_min) overrides base
    class_mix: tuple[float, ...] = DEFAULT_CLASS_MIX
    dwell_frames: float = 4.0

    def __post_init__(self):
        if abs(sum(self.class_mix) - 1.0) > 1e-9:
            raise ValueError(f"class_mix must sum to 1, got {sum(self.class_mix)}")
        if any(m < 0 for m in self.class_mix):
            raise ValueError("class_mix entries must be non-negative")
        if self.dwell_frames <= 0:
            raise ValueError("dwell_frames must be positive")

    def rate_per_min(self, t_s: float) -> float:
        """Arrival rate lambda(t) in vehicles/minute; never negative."""
        base = self.base_per_min
        for start, rate in self.pieces:
            if t_s >= start:
                base = rate
            else:
                break
        if self.amplitude_per_min:
            base += self.amplitude_per_min * math.sin(
                2.0 * math.pi * t_s / self.period_s + self.phase_rad
            )
        return max(0.0, base)

    def rates_per_min(self, t_s: np.ndarray) -> np.ndarray:
        """Vectorized rate_per_min."""
        t_s = np.asarray(t_s, dtype=np.float64)
        base = np.full_like(t_s, self.base_per_min)
        for start, rate in self.pieces:
            base[t_s >= start] = rate
        if self.amplitude_per_min:
            base = base + self.amplitude_per_min * np.sin(
                2.0 * math.pi * t_s / self.period_s + self.phase_rad
            )
        return np.maximum(0.0, base)

    @staticmethod
    def from_config(raw: dict, class_count: int) -> "TrafficProcess":
        mix = raw.get("class_mix")
        if mix is None:
            mix = DEFAULT_CLASS_MIX if class_count == len(DEFAULT_CLASS_MIX) else (
                tuple(1.0 / class_count for _ in range(class_count))
            )
        pieces = tuple((float(a), float(b)) for a, b in raw.get("pieces", ()))
        return TrafficProcess(
            base_per_min=float(raw.get("base_per_min", 60.0)),
            amplitude_per_min=float(raw.get("amplitude_per_min", 0.0)),
            period_s=float(raw.get("period_s", 1800.0)),
            phase_rad=float(raw.get("phase_rad", 0.0)),
            pieces=pieces,
            class_mix=tuple(mix),
            dwell_frames=float(raw.get("dwell_frames", 4.0)),
        )


@dataclass
class Arrivals:
    """Vehicles arriving within one second of one stream (columnar)."""

    ts_s: int
    arr_ms: np.ndarray  # absolute ms, sorted
    tracking_id: np.ndarray  # int64
    class_idx: np.ndarray  # int16
    dwell: np.ndarray  # frames, int32
    x0: np.ndarray
    y0: np.ndarray
    w: np.ndarray
    h: np.ndarray
    vx: np.ndarray  # drift per frame
    vy: np.ndarray
    wobble_phase: np.ndarray

    def __len__(self) -> int:
        return len(self.arr_ms)


@dataclass
class EventBatch:
    """Columnar detection events for one stream, ordered by (ts_ms, tracking_id)."""

    stream_id: str
    ts_ms: np.ndarray  # int64
    tracking_id: np.ndarray  # int64
    class_idx: np.ndarray  # int16
    bbox: np.ndarray  # float32 [n, 4]

    def __len__(self) -> int:
        return len(self.ts_ms)

    def __iter__(self) -> Iterator[DetectionEvent]:
        for i in range(len(self.ts_ms)):
            yield DetectionEvent(
                stream_id=self.stream_id,
                ts_ms=int(self.ts_ms[i]),
                tracking_id=int(self.tracking_id[i]),
                class_idx=int(self.class_idx[i]),
                bbox=tuple(float(b) for b in self.bbox[i]),
            )

    def tobytes(self) -> bytes:
        return b"".join(
            [self.ts_ms.tobytes(), self.tracking_id.tobytes(),
             self.class_idx.tobytes(), self.bbox.tobytes()]
        )

    @staticmethod
    def empty(stream_id: str) -> "EventBatch":
        return EventBatch(
            stream_id=stream_id,
            ts_ms=np.empty(0, dtype=np.int64),
            tracking_id=np.empty(0, dtype=np.int64),
            class_idx=np.empty(0, dtype=np.int16),
            bbox=np.empty((0, 4), dtype=np.float32),
        )


@dataclass(frozen=True)
class GroundTruthLabel:
    """True class and bbox for one object in one frame (label-oracle input)."""

    stream_id: str
    ts_ms: int
    tracking_id: int
    class_idx: int
    bbox: tuple[float, float, float, float]


def _second_rng(trace_seed: int, ts_s: int) -> Generator:
    key = np.array([trace_seed & 0xFFFFFFFFFFFFFFFF, _ARRIVAL_SALT], dtype=np.uint64)
    return Generator(Philox(counter=[ts_s, 0, 0, 0], key=key))


def _dwell_cap(proc: TrafficProcess, fps: int) -> int:
    # bounds the lookback needed for random frame access
    return max(1, min(int(round(6 * proc.dwell_frames)), 4 * fps))


def arrivals_in_second(desc: StreamDescriptor, proc: TrafficProcess, ts_s: int) -> Arrivals:
    """Regenerate the vehicles arriving in [ts_s, ts_s+1) — random access."""
    rng = _second_rng(desc.trace_seed, ts_s)
    rate = proc.rate_per_min(ts_s + 0.5) / 60.0
    n = int(rng.poisson(rate)) if rate > 0 else 0
    if n >= TID_STRIDE:
        raise ValueError(f"arrival burst {n} exceeds tracking-id stride {TID_STRIDE}")
    if n == 0:
        z = np.empty(0)
        return Arrivals(ts_s, np.empty(0, np.int64), np.empty(0, np.int64),
                        np.empty(0, np.int16), np.empty(0, np.int32),
                        z, z, z, z, z, z, z)
    offsets = np.sort(rng.integers(0, 1000, size=n))
    mix = np.cumsum(np.asarray(proc.class_mix))
    cls = np.searchsorted(mix, rng.random(n), side="right").astype(np.int16)
    cls = np.minimum(cls, len(proc.class_mix) - 1)
    p = 1.0 / proc.dwell_frames
    dwell = np.minimum(rng.geometric(p, size=n), _dwell_cap(proc, desc.fps)).astype(np.int32)
    w = (_CLASS_W[cls % len(_CLASS_W)] * rng.uniform(0.8, 1.2, size=n)).astype(np.float64)
    h = (_CLASS_H[cls % len(_CLASS_H)] * rng.uniform(0.8, 1.2, size=n)).astype(np.float64)
    x0 = rng.uniform(0.0, 1.0, size=n) * (1.0 - w)
    y0 = rng.uniform(0.0, 1.0, size=n) * (1.0 - h)
    speed = rng.uniform(0.002, 0.02, size=n)
    angle = rng.uniform(0.0, 2.0 * math.pi, size=n)
    phase = rng.uniform(0.0, 2.0 * math.pi, size=n)
    return Arrivals(
        ts_s=ts_s,
        arr_ms=(np.int64(ts_s) * 1000 + offsets).astype(np.int64),
        tracking_id=(np.int64(ts_s) * TID_STRIDE + np.arange(n, dtype=np.int64)),
        class_idx=cls,
        dwell=dwell,
        x0=x0,
        y0=y0,
        w=w,
        h=h,
        vx=speed * np.cos(angle),
        vy=speed * np.sin(angle),
        wobble_phase=phase,
    )


def _frame_ms(k: np.ndarray | int, fps: int):
    return (np.asarray(k, dtype=np.int64) * 1000) // fps


def _bbox_at(arr: Arrivals, vehicle: np.ndarray, k_rel: np.ndarray) -> np.ndarray:
    """Bbox of `vehicle` (index into arr) at relative frame k: drift + wobble.

    The 1e-6 margin keeps x+w <= 1 after the cast to float32.
    """
    w = arr.w[vehicle]
    h = arr.h[vehicle]
    wob = 0.004 * np.sin(arr.wobble_phase[vehicle] + 0.9 * k_rel)
    x = np.clip(arr.x0[vehicle] + arr.vx[vehicle] * k_rel + wob, 0.0, 1.0 - w - 1e-6)
    y = np.clip(arr.y0[vehicle] + arr.vy[vehicle] * k_rel - wob, 0.0, 1.0 - h - 1e-6)
    return np.stack([x, y, w, h], axis=1).astype(np.float32)


def events_from_arrivals(
    stream_id: str, arrs: Sequence[Arrivals], fps: int, duration_s: int
) -> EventBatch:
    """Expand arrival records into per-frame events, clipped to the trace end."""
    if not arrs or all(len(a) == 0 for a in arrs):
        return EventBatch.empty(stream_id)
    arr_ms = np.concatenate([a.arr_ms for a in arrs])
    tid = np.concatenate([a.tracking_id for a in arrs])
    cls = np.concatenate([a.class_idx for a in arrs])
    dwell = np.concatenate([a.dwell for a in arrs])
    merged = Arrivals(
        ts_s=arrs[0].ts_s,
        arr_ms=arr_ms,
        tracking_id=tid,
        class_idx=cls,
        dwell=dwell,
        x0=np.concatenate([a.x0 for a in arrs]),
        y0=np.concatenate([a.y0 for a in arrs]),
        w=np.concatenate([a.w for a in arrs]),
        h=np.concatenate([a.h for a in arrs]),
        vx=np.concatenate([a.vx for a in arrs]),
        vy=np.concatenate([a.vy for a in arrs]),
        wobble_phase=np.concatenate([a.wobble_phase for a in arrs]),
    )
    # first frame at or after arrival
    first_k = np.ceil(arr_ms * fps / 1000.0).astype(np.int64)
    total = int(dwell.sum())
    vehicle = np.repeat(np.arange(len(arr_ms)), dwell)
    starts = np.concatenate([[0], np.cumsum(dwell)[:-1]])
    k_rel = np.arange(total, dtype=np.int64) - np.repeat(starts, dwell)
    k_abs = first_k[vehicle] + k_rel
    ts_ms = _frame_ms(k_abs, fps)
    keep = ts_ms < duration_s * 1000
    vehicle, k_rel, ts_ms = vehicle[keep], k_rel[keep], ts_ms[keep]
    bbox = _bbox_at(merged, vehicle, k_rel)
    ev_tid = tid[vehicle]
    order = np.lexsort((ev_tid, ts_ms))
    return EventBatch(
        stream_id=stream_id,
        ts_ms=ts_ms[order],
        tracking_id=ev_tid[order],
        class_idx=cls[vehicle][order],
        bbox=bbox[order],
    )


def generate_stream(
    desc: StreamDescriptor, proc: TrafficProcess, duration_s: int
) -> EventBatch:
    """Full deterministic trace for one stream: ordered, seed-reproducible."""
    if duration_s <= 0:
        raise ValueError("duration_s must be positive")
    arrs = [arrivals_in_second(desc, proc, s) for s in range(duration_s)]
    return events_from_arrivals(desc.stream_id, arrs, desc.fps, duration_s)


def frame_ground_truth(
    desc: StreamDescriptor, proc: TrafficProcess, frame_k: int, duration_s: int
) -> list[GroundTruthLabel]:
    """Objects truly in view at frame index k, regenerated in O(lookback).

    Matches exactly the events generate_stream() emits for that frame.
    """
    fps = desc.fps
    ts_ms = int(_frame_ms(frame_k, fps))
    if ts_ms >= duration_s * 1000:
        return []
    lookback_s = math.ceil(_dwell_cap(proc, fps) / fps) + 1
    sec = ts_ms // 1000
    labels: list[GroundTruthLabel] = []
    for s in range(max(0, sec - lookback_s), sec + 1):
        arr = arrivals_in_second(desc, proc, s)
        if len(arr) == 0:
            continue
        first_k = np.ceil(arr.arr_ms * fps / 1000.0).astype(np.int64)
        k_rel = frame_k - first_k
        visible = (k_rel >= 0) & (k_rel < arr.dwell)
        idx = np.nonzero(visible)[0]
        if len(idx) == 0:
            continue
        bbox = _bbox_at(arr, idx, k_rel[idx])
        for j, v in enumerate(idx):
            labels.append(
                GroundTruthLabel(
                    stream_id=desc.stream_id,
                    ts_ms=ts_ms,
                    tracking_id=int(arr.tracking_id[v]),
                    class_idx=int(arr.class_idx[v]),
                    bbox=tuple(float(b) for b in bbox[j]),
                )
            )
    labels.sort(key=lambda g: g.tracking_id)
    return labels


def ground_truth_for_batch(batch: EventBatch) -> Iterator[GroundTruthLabel]:
    """1:1 ground-truth counterpart of every emitted event.

    The emulator's emitted class/bbox ARE the truth (detection error is not
    emulated); the oracle perturbs labels downstream.
    """
    for ev in batch:
        yield GroundTruthLabel(
            stream_id=ev.stream_id,
            ts_ms=ev.ts_ms,
            tracking_id=ev.tracking_id,
            class_idx=ev.class_idx,
            bbox=ev.bbox,
        )


class StreamServer:
    """Paces a generated trace at native FPS cadence (or fast-forwards it).

    In paced mode the generator sleeps until each event's wall-clock target;
    if the consumer falls behind by more than ``lag_watermark_ms`` the
    configured backpressure callback fires (or BackpressureExceeded is
    raised when no callback is set).
    """

    def __init__(
        self,
        desc: StreamDescriptor,
        proc: TrafficProcess,
        duration_s: int,
        fast_forward: bool = False,
        lag_watermark_ms: float = 500.0,
        on_backpressure: Callable[[int, float], None] | None = None,
        clock=time,
    ):
        self.desc = desc
        self.proc = proc
        self.duration_s = duration_s
        self.fast_forward = fast_forward
        self.lag_watermark_ms = lag_watermark_ms
        self.on_backpressure = on_backpressure
        self._clock = clock
        self.max_observed_jitter_ms = 0.0

    def events(self) -> Iterator[DetectionEvent]:
        batch = generate_stream(self.desc, self.proc, self.duration_s)
        if self.fast_forward:
            yield from batch
            return
        start = self._clock.monotonic()
        signalled = False
        for ev in batch:
            target = start + ev.ts_ms / 1000.0
            now = self._clock.monotonic()
            if now < target:
                self._clock.sleep(target - now)
                signalled = False
            else:
                lag_ms = (now - target) * 1000.0
                self.max_observed_jitter_ms = max(self.max_observed_jitter_ms, lag_ms)
                if lag_ms > self.lag_watermark_ms and not signalled:
                    signalled = True
                    if self.on_backpressure is not None:
                        self.on_backpressure(ev.ts_ms, lag_ms)
                    else:
                        raise BackpressureExceeded(
                            f"consumer lagging {lag_ms:.0f} ms at ts {ev.ts_ms}"
                        )
            yield ev


def minute_arrival_series(
    procs: Sequence[TrafficProcess], duration_min: int, seed: int
) -> np.ndarray:
    """Per-stream, per-minute arrival counts [stream x minute] for history.

    Used to synthesize forecaster training history: a minute's unique-vehicle
    count is the number of arrivals in it, drawn from the same rate profile
    as the live trace (but from an independent substream; this is history,
    not a replay).
    """
    out = np.zeros((len(procs), duration_min), dtype=np.float64)
    for i, proc in enumerate(procs):
        key = np.array([seed & 0xFFFFFFFFFFFFFFFF, _HISTORY_SALT], dtype=np.uint64)
        rng = Generator(Philox(counter=[i, 0, 0, 0], key=key))
        secs = np.arange(duration_min * 60, dtype=np.float64) + 0.5
        rates = proc.rates_per_min(secs) / 60.0
        counts = rng.poisson(rates)
        out[i] = counts.reshape(duration_min, 60).sum(axis=1)
    return out
