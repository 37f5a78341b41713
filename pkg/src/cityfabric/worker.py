"""Edge worker: turns per-frame detections into per-second unique-vehicle
flow summaries, batched per window and forwarded to the ingest service.

Counting rule: a tracking id contributes exactly 1 to the second of its
FIRST observation on its camera, no matter how many frames it stays in
view or whether it straddles a window boundary. First-seen attribution is
order-independent under replay and makes count conservation exact.

Two implementations of the same rule live here:

* :class:`WindowAggregator` — streaming, watermark-driven, drops-and-counts
  late events; used for live (paced) runs.
* :func:`aggregate_batch` — vectorized over a complete in-order trace; used
  for fast-forward replay where nothing can be late.

Property tests assert they agree on random traces.
"""

from __future__ import annotations

import json
import logging
import time
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Iterable, Iterator

import numpy as np

from .errors import IngestUnreachable, MalformedSummary
from .model import DetectionEvent, FlowRecord

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class FlowSummary:
    """One window of per-second FlowRecords for one camera."""

    camera_id: str
    window_start_s: int
    window_len_s: int
    rows: tuple[FlowRecord, ...]

    def __post_init__(self):
        if len(self.rows) != self.window_len_s:
            raise MalformedSummary(
                f"summary has {len(self.rows)} rows, window is {self.window_len_s} s"
            )
        for i, r in enumerate(self.rows):
            if r.ts_s != self.window_start_s + i:
                raise MalformedSummary(
                    f"row {i} covers second {r.ts_s}, expected {self.window_start_s + i}"
                )

    def to_json_dict(self) -> dict:
        return {
            "camera_id": self.camera_id,
            "window_start_s": self.window_start_s,
            "window_len_s": self.window_len_s,
            "rows": [{"ts_s": r.ts_s, "counts": list(r.counts)} for r in self.rows],
        }

    @staticmethod
    def from_json_dict(d: dict) -> "FlowSummary":
        return FlowSummary(
            camera_id=d["camera_id"],
            window_start_s=d["window_start_s"],
            window_len_s=d["window_len_s"],
            rows=tuple(
                FlowRecord(ts_s=r["ts_s"], camera_id=d["camera_id"], counts=tuple(r["counts"]))
                for r in d["rows"]
            ),
        )


class WindowAggregator:
    """Streaming first-seen aggregation for one camera.

    Windows of ``window_len_s`` seconds are emitted once the event-time
    watermark (max seen ts minus the lateness allowance) passes their end.
    Events older than the watermark are dropped and counted in
    ``late_dropped``.
    """

    def __init__(self, camera_id: str, class_count: int, window_len_s: int = 15,
                 lateness_s: int = 2):
        if not (5 <= window_len_s <= 30):
            raise ValueError(f"window_len_s must be in 5..30, got {window_len_s}")
        self.camera_id = camera_id
        self.class_count = class_count
        self.window_len_s = window_len_s
        self.lateness_s = lateness_s
        self.late_dropped = 0
        self._seen: set[int] = set()
        self._open: dict[int, np.ndarray] = {}  # window_start_s -> [len, C] counts
        self._emitted_until = 0  # first second not yet sealed
        self._max_ts_ms = -1

    def _window_start(self, ts_s: int) -> int:
        return (ts_s // self.window_len_s) * self.window_len_s

    def push(self, ev: DetectionEvent) -> list[FlowSummary]:
        """Feed one event; returns any windows sealed by the watermark advance."""
        ts_s = ev.ts_ms // 1000
        if ts_s < self._emitted_until:
            self.late_dropped += 1
            return []
        if ev.tracking_id not in self._seen:
            self._seen.add(ev.tracking_id)
            start = self._window_start(ts_s)
            w = self._open.get(start)
            if w is None:
                w = np.zeros((self.window_len_s, self.class_count), dtype=np.int64)
                self._open[start] = w
            w[ts_s - start, ev.class_idx] += 1
        if ev.ts_ms > self._max_ts_ms:
            self._max_ts_ms = ev.ts_ms
            return self._drain_watermark()
        return []

    def _drain_watermark(self) -> list[FlowSummary]:
        watermark_s = self._max_ts_ms // 1000 - self.lateness_s
        out = []
        for start in sorted(self._open):
            if start + self.window_len_s <= watermark_s:
                out.append(self._seal(start))
            else:
                break
        return out

    def _seal(self, start: int) -> FlowSummary:
        counts = self._open.pop(start)
        self._emitted_until = max(self._emitted_until, start + self.window_len_s)
        rows = tuple(
            FlowRecord(ts_s=start + i, camera_id=self.camera_id,
                       counts=tuple(int(x) for x in counts[i]))
            for i in range(self.window_len_s)
        )
        return FlowSummary(self.camera_id, start, self.window_len_s, rows)

    def flush(self) -> list[FlowSummary]:
        """Seal all open windows (end of stream)."""
        return [self._seal(start) for start in sorted(self._open)]


def aggregate(
    events: Iterable[DetectionEvent],
    camera_id: str,
    class_count: int,
    window_len_s: int = 15,
    lateness_s: int = 2,
) -> Iterator[FlowSummary]:
    """Streaming aggregation over an ordered event iterable, flushed at end."""
    agg = WindowAggregator(camera_id, class_count, window_len_s, lateness_s)
    for ev in events:
        yield from agg.push(ev)
    yield from agg.flush()


def unique_counts_per_second(
    ts_ms: np.ndarray,
    tracking_id: np.ndarray,
    class_idx: np.ndarray,
    duration_s: int,
    class_count: int,
) -> np.ndarray:
    """[second x class] first-seen unique counts, fully vectorized."""
    counts = np.zeros((duration_s, class_count), dtype=np.int64)
    if len(ts_ms) == 0:
        return counts
    order = np.lexsort((ts_ms, tracking_id))
    tid_sorted = tracking_id[order]
    first_pos = np.nonzero(np.concatenate([[True], tid_sorted[1:] != tid_sorted[:-1]]))[0]
    first_idx = order[first_pos]
    sec = (ts_ms[first_idx] // 1000).astype(np.int64)
    cls = class_idx[first_idx].astype(np.int64)
    valid = sec < duration_s
    np.add.at(counts, (sec[valid], cls[valid]), 1)
    return counts


def aggregate_batch(
    batch, duration_s: int, class_count: int, window_len_s: int = 15
) -> list[FlowSummary]:
    """Vectorized window aggregation of a complete, in-order trace.

    Pads to whole windows so every second of the trace is covered exactly
    once. Agrees with the streaming aggregator on in-order traces.
    """
    n_windows = -(-duration_s // window_len_s)
    padded = n_windows * window_len_s
    counts = unique_counts_per_second(
        batch.ts_ms, batch.tracking_id, batch.class_idx, padded, class_count
    )
    out = []
    for wstart in range(0, padded, window_len_s):
        rows = tuple(
            FlowRecord(
                ts_s=wstart + i,
                camera_id=batch.stream_id,
                counts=tuple(int(x) for x in counts[wstart + i]),
            )
            for i in range(window_len_s)
        )
        out.append(FlowSummary(batch.stream_id, wstart, window_len_s, rows))
    return out


@dataclass
class EmitterStats:
    sent: int = 0
    retries: int = 0
    spilled: int = 0
    replayed: int = 0


class SummaryEmitter:
    """At-least-once delivery of summaries to the ingest service.

    `transport` is any callable taking a summary JSON dict and returning an
    ack dict; failures raise. After `max_retries` capped-exponential-backoff
    attempts the summary is spilled to a local JSONL queue and replayed on
    the next successful delivery. Downstream upserts are idempotent per
    (camera, second), so duplicates from replays are harmless.
    """

    def __init__(
        self,
        transport: Callable[[dict], dict],
        spill_path: str | Path,
        max_retries: int = 3,
        backoff_s: float = 0.05,
        backoff_cap_s: float = 2.0,
        sleep: Callable[[float], None] = time.sleep,
    ):
        self.transport = transport
        self.spill_path = Path(spill_path)
        self.max_retries = max_retries
        self.backoff_s = backoff_s
        self.backoff_cap_s = backoff_cap_s
        self.stats = EmitterStats()
        self._sleep = sleep

    def emit(self, summary: FlowSummary) -> dict | None:
        """Deliver one summary; on persistent failure spill and raise."""
        payload = summary.to_json_dict()
        delay = self.backoff_s
        for attempt in range(self.max_retries + 1):
            try:
                ack = self.transport(payload)
            except Exception as e:
                if attempt == self.max_retries:
                    self._spill(payload)
                    raise IngestUnreachable(
                        f"ingest unreachable after {attempt + 1} attempts: {e}"
                    ) from e
                self.stats.retries += 1
                self._sleep(delay)
                delay = min(delay * 2, self.backoff_cap_s)
                continue
            self.stats.sent += 1
            self._replay_spill()
            return ack
        return None

    def _spill(self, payload: dict) -> None:
        self.spill_path.parent.mkdir(parents=True, exist_ok=True)
        with open(self.spill_path, "a") as f:
            f.write(json.dumps(payload) + "\n")
        self.stats.spilled += 1

    def _replay_spill(self) -> None:
        if not self.spill_path.exists():
            return
        pending = [json.loads(line) for line in self.spill_path.read_text().splitlines() if line]
        if not pending:
            return
        remaining = []
        for payload in pending:
            try:
                self.transport(payload)
                self.stats.replayed += 1
            except Exception:
                remaining.append(payload)
        if remaining:
            with open(self.spill_path, "w") as f:
                for p in remaining:
                    f.write(json.dumps(p) + "\n")
        else:
            self.spill_path.unlink()
