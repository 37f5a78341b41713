"""Cloud-side time-series store for flow records.

Layout (documented bit-exact in schema/store.md): one append-only log file
per camera partition plus an optional compacted block file. Records are
fixed width: u64 ts_s followed by C x u32 class counts, little endian.
Upserts append; on replay the latest record for a (camera, second) wins.
Compaction rewrites a partition as sorted, deduplicated blocks.

An in-memory tail index keeps the most recent `tail_horizon_s` seconds per
camera so hot queries never touch disk. Writers funnel through one lock
(the workload is a single gateway process at desk scale); reads snapshot
under the same lock and release it before serialization.
"""

from __future__ import annotations

import json
import logging
import os
import queue
import struct
import threading
import time
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Mapping, Sequence

import numpy as np

from .errors import MalformedSummary, UnknownCamera
from .worker import FlowSummary

logger = logging.getLogger(__name__)

_MAGIC = b"CFTS"
_VERSION = 1
_HEADER = struct.Struct("<4sHH")  # magic, version, class_count


@dataclass(frozen=True)
class StoreConfig:
    root: Path
    class_count: int
    cameras: tuple[str, ...]
    tail_horizon_s: int = 1800
    fsync: bool = False  # flush-only by default; see decisions in schema/store.md


@dataclass
class QueryResult:
    """Dense [camera x second x class] matrix with a missing-second mask."""

    cameras: tuple[str, ...]
    from_s: int
    to_s: int
    counts: np.ndarray  # int64 [n_cam, n_sec, C]
    missing: np.ndarray  # bool [n_cam, n_sec]; True where no record exists


class NowcastHub:
    """Fan-out of per-second aggregate frames to bounded subscriber queues.

    A frame for second s is (re)published every time an ingest batch touches
    s; consumers wanting finalized totals keep the last frame per second.
    Slow subscribers are disconnected (SubscriberOverflow queued as a
    poison message) rather than ever blocking ingest.
    """

    def __init__(self, buffer_frames: int = 256):
        self.buffer_frames = buffer_frames
        self._subs: dict[int, tuple[queue.Queue, set[str] | None]] = {}
        self._next_id = 0
        self._lock = threading.Lock()

    def subscribe(self, camera_ids: Sequence[str] | None = None) -> tuple[int, queue.Queue]:
        with self._lock:
            sid = self._next_id
            self._next_id += 1
            q: queue.Queue = queue.Queue(maxsize=self.buffer_frames)
            self._subs[sid] = (q, set(camera_ids) if camera_ids is not None else None)
            return sid, q

    def unsubscribe(self, sid: int) -> None:
        with self._lock:
            self._subs.pop(sid, None)

    def publish(self, ts_s: int, per_camera: Mapping[str, Sequence[int]]) -> None:
        with self._lock:
            dead = []
            for sid, (q, cams) in self._subs.items():
                frame = {
                    "ts_s": ts_s,
                    "per_camera": {
                        c: list(v) for c, v in per_camera.items() if cams is None or c in cams
                    },
                }
                try:
                    q.put_nowait(frame)
                except queue.Full:
                    dead.append(sid)
            for sid in dead:
                q, _ = self._subs.pop(sid)
                try:
                    q.get_nowait()  # make room for the poison frame
                except queue.Empty:
                    pass
                q.put_nowait({"error": "subscriber overflow"})

    @property
    def subscriber_count(self) -> int:
        with self._lock:
            return len(self._subs)


class TimeSeriesStore:
    """Append-optimized per-camera flow-record store with a hot tail index."""

    def __init__(self, config: StoreConfig):
        self.config = config
        self.root = Path(config.root)
        self.data_dir = self.root / "data"
        self.data_dir.mkdir(parents=True, exist_ok=True)
        self._record = struct.Struct(f"<Q{config.class_count}I")
        self._lock = threading.Lock()
        self._files: dict[str, object] = {}
        self._tail: dict[str, dict[int, tuple[int, ...]]] = {c: {} for c in config.cameras}
        self._max_ts: dict[str, int] = {}
        self._counts: dict[str, int] = {c: 0 for c in config.cameras}  # distinct seconds
        self.hub = NowcastHub()
        self._write_meta()
        self._replay()

    # -- construction -----------------------------------------------------

    def _write_meta(self) -> None:
        meta = self.root / "meta.json"
        if not meta.exists():
            meta.write_text(
                json.dumps(
                    {
                        "version": _VERSION,
                        "class_count": self.config.class_count,
                        "cameras": list(self.config.cameras),
                    },
                    indent=1,
                )
            )

    def _log_path(self, camera_id: str) -> Path:
        return self.data_dir / f"{camera_id}.log"

    def _blocks_path(self, camera_id: str) -> Path:
        return self.data_dir / f"{camera_id}.blk"

    def _replay(self) -> None:
        """Rebuild the tail index and per-camera counts from disk."""
        for cam in self.config.cameras:
            merged: dict[int, tuple[int, ...]] = {}
            for path in (self._blocks_path(cam), self._log_path(cam)):
                if not path.exists():
                    continue
                for ts_s, counts in self._read_records(path):
                    merged[ts_s] = counts
            self._counts[cam] = len(merged)
            if merged:
                self._max_ts[cam] = max(merged)
                horizon = self._max_ts[cam] - self.config.tail_horizon_s
                self._tail[cam] = {t: v for t, v in merged.items() if t > horizon}

    def _read_records(self, path: Path):
        raw = path.read_bytes()
        if len(raw) < _HEADER.size:
            return
        magic, version, c = _HEADER.unpack_from(raw, 0)
        if magic != _MAGIC or c != self.config.class_count:
            raise ValueError(f"bad store file header in {path}")
        pos = _HEADER.size
        rec = self._record
        # a torn trailing record (crash mid-append) is ignored
        while pos + rec.size <= len(raw):
            vals = rec.unpack_from(raw, pos)
            pos += rec.size
            yield int(vals[0]), tuple(int(v) for v in vals[1:])

    def _open_log(self, camera_id: str):
        f = self._files.get(camera_id)
        if f is None:
            path = self._log_path(camera_id)
            fresh = not path.exists() or path.stat().st_size == 0
            f = open(path, "ab")
            if fresh:
                f.write(_HEADER.pack(_MAGIC, _VERSION, self.config.class_count))
            self._files[camera_id] = f
        return f

    # -- writes ------------------------------------------------------------

    def ingest(self, summary: FlowSummary | dict) -> dict:
        """Upsert one window of rows; durable before the ack returns.

        Duplicate (camera, second) keys overwrite; re-delivering the same
        summary is a no-op byte-wise for the tail index and appends identical
        records to the log (deduplicated on replay and compaction).
        """
        if isinstance(summary, dict):
            summary = FlowSummary.from_json_dict(summary)
        cam = summary.camera_id
        if cam not in self._tail:
            raise UnknownCamera(cam)
        for r in summary.rows:
            if len(r.counts) != self.config.class_count:
                raise MalformedSummary(
                    f"row has {len(r.counts)} classes, store holds {self.config.class_count}"
                )
        with self._lock:
            f = self._open_log(cam)
            tail = self._tail[cam]
            for r in summary.rows:
                f.write(self._record.pack(r.ts_s, *r.counts))
                if r.ts_s not in tail:
                    self._counts[cam] += 1
                tail[r.ts_s] = r.counts
            f.flush()
            if self.config.fsync:
                os.fsync(f.fileno())
            self._max_ts[cam] = max(self._max_ts.get(cam, -1), summary.rows[-1].ts_s)
            self._prune_tail(cam)
            per_second = {r.ts_s: r.counts for r in summary.rows}
        for ts_s, counts in per_second.items():
            self.hub.publish(ts_s, {cam: counts})
        return {"records_written": len(summary.rows)}

    def _prune_tail(self, cam: str) -> None:
        horizon = self._max_ts.get(cam, 0) - self.config.tail_horizon_s
        tail = self._tail[cam]
        if len(tail) > self.config.tail_horizon_s * 2:
            for t in [t for t in tail if t <= horizon]:
                del tail[t]

    def compact(self, camera_id: str) -> int:
        """Rewrite a partition as one sorted deduplicated block file."""
        if camera_id not in self._tail:
            raise UnknownCamera(camera_id)
        with self._lock:
            merged: dict[int, tuple[int, ...]] = {}
            for path in (self._blocks_path(camera_id), self._log_path(camera_id)):
                if path.exists():
                    for ts_s, counts in self._read_records(path):
                        merged[ts_s] = counts
            tmp = self._blocks_path(camera_id).with_suffix(".blk.tmp")
            with open(tmp, "wb") as f:
                f.write(_HEADER.pack(_MAGIC, _VERSION, self.config.class_count))
                for ts_s in sorted(merged):
                    f.write(self._record.pack(ts_s, *merged[ts_s]))
                f.flush()
                os.fsync(f.fileno())
            os.replace(tmp, self._blocks_path(camera_id))
            fh = self._files.pop(camera_id, None)
            if fh is not None:
                fh.close()
            self._log_path(camera_id).unlink(missing_ok=True)
            return len(merged)

    def close(self) -> None:
        with self._lock:
            for f in self._files.values():
                f.close()
            self._files.clear()

    # -- reads ---------------------------------------------------------------

    def query(self, camera_ids: Sequence[str], from_s: int, to_s: int) -> QueryResult:
        """Counts over [from_s, to_s); missing seconds zero-filled + masked."""
        if from_s >= to_s:
            raise ValueError(f"from_s ({from_s}) must be < to_s ({to_s})")
        for cam in camera_ids:
            if cam not in self._tail:
                raise UnknownCamera(cam)
        n_sec = to_s - from_s
        counts = np.zeros((len(camera_ids), n_sec, self.config.class_count), dtype=np.int64)
        missing = np.ones((len(camera_ids), n_sec), dtype=bool)
        with self._lock:
            snapshots = []
            for cam in camera_ids:
                tail = self._tail[cam]
                tail_floor = self._max_ts.get(cam, 0) - self.config.tail_horizon_s
                need_disk = from_s <= tail_floor and self._counts[cam] > len(tail)
                snapshots.append((cam, dict(tail) if need_disk else tail.copy(), need_disk))
        for i, (cam, tail, need_disk) in enumerate(snapshots):
            if need_disk:
                merged: dict[int, tuple[int, ...]] = {}
                for path in (self._blocks_path(cam), self._log_path(cam)):
                    if path.exists():
                        for ts_s, cvec in self._read_records(path):
                            if from_s <= ts_s < to_s:
                                merged[ts_s] = cvec
                merged.update({t: v for t, v in tail.items() if from_s <= t < to_s})
                items = merged.items()
            else:
                items = ((t, v) for t, v in tail.items() if from_s <= t < to_s)
            for t, v in items:
                counts[i, t - from_s] = v
                missing[i, t - from_s] = False
        return QueryResult(tuple(camera_ids), from_s, to_s, counts, missing)

    def record_count(self, camera_id: str | None = None) -> int:
        if camera_id is not None:
            return self._counts[camera_id]
        return sum(self._counts.values())

    def subscribe_nowcast(self, camera_ids: Sequence[str] | None = None):
        """Bounded live feed of per-second aggregate frames."""
        return self.hub.subscribe(camera_ids)


def load_test(
    store: TimeSeriesStore,
    summaries: Iterable[FlowSummary],
) -> dict:
    """Ingest everything, measuring per-ack latency; returns p50/p99/max in ms."""
    lat = []
    t_start = time.perf_counter()
    n = 0
    for s in summaries:
        t0 = time.perf_counter()
        store.ingest(s)
        lat.append((time.perf_counter() - t0) * 1000.0)
        n += 1
    wall = time.perf_counter() - t_start
    arr = np.array(lat)
    return {
        "n_summaries": n,
        "wall_s": wall,
        "p50_ms": float(np.percentile(arr, 50)) if n else 0.0,
        "p99_ms": float(np.percentile(arr, 99)) if n else 0.0,
        "max_ms": float(arr.max()) if n else 0.0,
        "rate_per_s": n / wall if wall > 0 else float("inf"),
    }
