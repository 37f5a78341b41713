"""Orchestration surface binding all modules together.

One Gateway instance owns: the scenario, the scheduler placement (all
mutations serialized through one lock), the ingest store, the coarse graph,
per-stream producer/worker threads for live runs, an event hub with
monotone sequence numbers for the dashboard, and the scenario runner that
produces the artifact CSVs.

Lifecycle: Idle -> Running -> Draining -> Idle.
"""

from __future__ import annotations

import csv
import enum
import json
import logging
import queue
import tempfile
import threading
import time
from collections import deque
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from . import emulator, fl, forecast, scheduler, worker
from .errors import CapacityExhausted, UnknownSegment, UnknownStream
from .graph import CoarseGraph, allocate_edge_flows, coarsen, discretize
from .graphgru import GraphGRULite
from .model import ScenarioConfig, StreamDescriptor
from .store import StoreConfig, TimeSeriesStore

logger = logging.getLogger(__name__)


class RunPhase(enum.Enum):
    IDLE = "idle"
    RUNNING = "running"
    DRAINING = "draining"


class EventHub:
    """Sequence-numbered control-plane events (placement, health, phase)."""

    def __init__(self, buffer: int = 512):
        self.seq = 0
        self._subs: dict[int, queue.Queue] = {}
        self._next = 0
        self._lock = threading.Lock()
        self.buffer = buffer

    def subscribe(self) -> tuple[int, queue.Queue]:
        with self._lock:
            sid = self._next
            self._next += 1
            q: queue.Queue = queue.Queue(maxsize=self.buffer)
            self._subs[sid] = q
            return sid, q

    def unsubscribe(self, sid: int) -> None:
        with self._lock:
            self._subs.pop(sid, None)

    def publish(self, event_type: str, data: dict) -> int:
        with self._lock:
            self.seq += 1
            frame = {"seq": self.seq, "type": event_type, "data": data}
            for q in self._subs.values():
                try:
                    q.put_nowait(frame)
                except queue.Full:
                    pass  # dashboard detects the gap via seq numbers
            return self.seq


@dataclass
class StreamRuntime:
    descriptor: StreamDescriptor
    thread: threading.Thread | None = None
    stop_flag: threading.Event = field(default_factory=threading.Event)


class Gateway:
    def __init__(
        self,
        scenario: ScenarioConfig,
        store_dir: str | Path | None = None,
        policy: scheduler.PlacementPolicy = scheduler.PlacementPolicy.BEST_FIT,
        admission_queue: bool = False,
    ):
        self.scenario = scenario
        self.policy = policy
        self.phase = RunPhase.IDLE
        self.placement = scheduler.Placement(fleet=scenario.devices)
        self.events = EventHub()
        self.admission_queue_enabled = admission_queue
        self._admission: deque[str] = deque()
        self._lock = threading.Lock()  # serializes all lifecycle mutations
        self._runtimes: dict[str, StreamRuntime] = {}
        self.metrics_log: deque[dict] = deque(maxlen=4096)
        self.health: dict[str, str] = {"scheduler": "ok", "store": "ok", "forecast": "idle", "fl": "idle"}

        if store_dir is None:
            self._store_tmp = tempfile.TemporaryDirectory(prefix="cityfabric-store-")
            store_dir = self._store_tmp.name
        self.store = TimeSeriesStore(
            StoreConfig(
                root=Path(store_dir),
                class_count=scenario.class_count,
                cameras=tuple(s.stream_id for s in scenario.streams),
                tail_horizon_s=scenario.intervals.tail_horizon_s,
            )
        )
        self.coarse: CoarseGraph = coarsen(scenario.road_graph)
        # camera == stream at desk scale; junctions may carry several cameras
        self.cameras_by_junction: dict[str, list[str]] = {
            v: [] for v in self.coarse.vertex_ids
        }
        for s in scenario.streams:
            self.cameras_by_junction.setdefault(s.junction_id, []).append(s.stream_id)
        self.forecast_service: forecast.ForecastService | None = None
        self.latest_fl_report: dict | None = None

    # -- processes -----------------------------------------------------------

    def process_for(self, stream_id: str) -> emulator.TrafficProcess:
        raw = self.scenario.traffic.get(stream_id, {})
        return emulator.TrafficProcess.from_config(dict(raw), self.scenario.class_count)

    def _record_metrics(self, ts: float | None = None) -> dict:
        m = scheduler.metrics(self.placement)
        row = {
            "ts": time.time() if ts is None else ts,
            "n_streams": m.n_streams,
            "cumulative_fps": m.cumulative_fps,
            "active_capacity_tops": m.active_capacity_tops,
            "utilization_pct": m.utilization_pct,
            "total_power_w": m.total_power_w,
            "n_active_devices": m.n_active_devices,
        }
        self.metrics_log.append(row)
        return row

    # -- stream lifecycle ------------------------------------------------------

    def start_streams(
        self,
        stream_ids: Sequence[str],
        policy: scheduler.PlacementPolicy | None = None,
        live: bool = False,
    ) -> dict:
        """Assign and start streams; partial success is allowed.

        Returns {"accepted": {sid: device}, "rejected": {sid: reason}}.
        """
        policy = policy or self.policy
        accepted: dict[str, str] = {}
        rejected: dict[str, str] = {}
        with self._lock:
            for sid in stream_ids:
                try:
                    desc = self.scenario.stream_by_id(sid)
                except KeyError:
                    rejected[sid] = "unknown stream"
                    continue
                if self.placement.is_placed(sid):
                    rejected[sid] = "already running"
                    continue
                try:
                    scheduler.assign_stream(self.placement, desc, policy)
                except CapacityExhausted:
                    if self.admission_queue_enabled:
                        self._admission.append(sid)
                        rejected[sid] = "capacity exhausted (queued)"
                    else:
                        rejected[sid] = "capacity exhausted"
                    continue
                accepted[sid] = self.placement.assignments[sid]
                if live:
                    self._spawn_stream(desc)
            if accepted:
                self.phase = RunPhase.RUNNING
            self._record_metrics()
        self.events.publish(
            "placement",
            {"accepted": accepted, "rejected": rejected, "placement": self.placement.snapshot()},
        )
        return {"accepted": accepted, "rejected": rejected}

    def _spawn_stream(self, desc: StreamDescriptor) -> None:
        rt = StreamRuntime(descriptor=desc)

        def pump():
            proc = self.process_for(desc.stream_id)
            agg = worker.WindowAggregator(
                desc.stream_id,
                self.scenario.class_count,
                self.scenario.intervals.summary_window_s,
                self.scenario.intervals.lateness_s,
            )
            server = emulator.StreamServer(
                desc, proc, self.scenario.duration_s, fast_forward=False,
                on_backpressure=lambda ts, lag: logger.warning(
                    "stream %s backpressure: %.0f ms at %d", desc.stream_id, lag, ts
                ),
            )
            try:
                for ev in server.events():
                    if rt.stop_flag.is_set():
                        break
                    for summary in agg.push(ev):
                        self.store.ingest(summary)
                for summary in agg.flush():
                    self.store.ingest(summary)
            except Exception:
                logger.exception("stream %s pump failed", desc.stream_id)
                self.health["scheduler"] = f"stream {desc.stream_id} failed"

        rt.thread = threading.Thread(target=pump, name=f"stream-{desc.stream_id}", daemon=True)
        self._runtimes[desc.stream_id] = rt
        rt.thread.start()

    def stop_streams(self, stream_ids: Sequence[str]) -> dict:
        """Drain and remove streams; final windows flush to the store."""
        removed = []
        with self._lock:
            self.phase = RunPhase.DRAINING
            for sid in stream_ids:
                if not self.placement.is_placed(sid):
                    raise UnknownStream(sid)
                rt = self._runtimes.pop(sid, None)
                if rt is not None:
                    rt.stop_flag.set()
                    if rt.thread is not None:
                        rt.thread.join(timeout=5.0)
                scheduler.remove_stream(self.placement, sid)
                removed.append(sid)
            # admit queued streams into the freed capacity
            while self.admission_queue_enabled and self._admission:
                sid = self._admission[0]
                try:
                    desc = self.scenario.stream_by_id(sid)
                    scheduler.assign_stream(self.placement, desc, self.policy)
                    self._admission.popleft()
                except CapacityExhausted:
                    break
            self.phase = RunPhase.RUNNING if self.placement.assignments else RunPhase.IDLE
            self._record_metrics()
        self.events.publish(
            "placement", {"removed": removed, "placement": self.placement.snapshot()}
        )
        return {"removed": removed}

    # -- queries ------------------------------------------------------------------

    def scheduler_metrics(self) -> dict:
        with self._lock:
            return self._record_metrics()

    def segment_key(self, segment: str) -> tuple[str, str]:
        u, _, v = segment.partition("~")
        if not v:
            raise UnknownSegment(segment)
        return (u, v) if u <= v else (v, u)

    def history(self, target: str, window_s: int = 900) -> dict:
        """Minute series for a camera or a super-edge segment ("u~v").

        Segments additionally carry the per-minute congestion-state band.
        """
        to_s = self._latest_complete_minute()
        from_s = max(0, to_s - (window_s // 60) * 60)
        if to_s <= from_s:
            return {"target": target, "minutes": [], "series": [], "congestion": []}
        if "~" in target:
            key = self.segment_key(target)
            edge = next((e for e in self.coarse.super_edges if e.key == key), None)
            if edge is None:
                raise UnknownSegment(target)
            series, _ = forecast.build_minute_series(
                self.store,
                {
                    edge.u: self.cameras_by_junction.get(edge.u, []),
                    edge.v: self.cameras_by_junction.get(edge.v, []),
                },
                from_s,
                to_s,
            )
            inc = self.coarse.incident()
            w = self.scenario.congestion.weighting
            flows = []
            for m in range(series.shape[1]):
                per_vertex = {edge.u: series[0, m], edge.v: series[1, m]}
                share = 0.0
                for vid in (edge.u, edge.v):
                    weights = {
                        e.key: _edge_w(e, w) for e in inc[vid]
                    }
                    total = sum(weights.values())
                    share += per_vertex[vid] * weights[edge.key] / total
                flows.append(share)
            thresholds = (self.scenario.congestion.t1, self.scenario.congestion.t2)
            states = [int(discretize(f, thresholds)) for f in flows]
            return {
                "target": target,
                "minutes": list(range(from_s // 60, to_s // 60)),
                "series": [round(f, 3) for f in flows],
                "congestion": states,
            }
        if target not in self.store._tail:
            raise UnknownSegment(target)
        series, _ = forecast.build_minute_series(self.store, {target: [target]}, from_s, to_s)
        return {
            "target": target,
            "minutes": list(range(from_s // 60, to_s // 60)),
            "series": [float(x) for x in series[0]],
            "congestion": [],
        }

    def _latest_complete_minute(self) -> int:
        max_ts = max(self.store._max_ts.values(), default=-1)
        return ((max_ts + 1) // 60) * 60

    def edge_congestion(self, from_s: int, to_s: int) -> dict:
        """Per-super-edge flow and congestion state over a window."""
        series, _ = forecast.build_minute_series(
            self.store, self.cameras_by_junction, (from_s // 60) * 60, max(60, (to_s // 60) * 60)
        )
        per_vertex = {v: float(series[i].sum()) for i, v in enumerate(self.cameras_by_junction)}
        flows = allocate_edge_flows(
            per_vertex,
            self.coarse,
            weighting=self.scenario.congestion.weighting,
            aggregation=self.scenario.congestion.aggregation,
        )
        minutes = max(1, series.shape[1])
        thresholds = (self.scenario.congestion.t1, self.scenario.congestion.t2)
        out = {}
        for (u, v), f in flows.flows.items():
            per_min = f / minutes
            out[f"{u}~{v}"] = {
                "flow_per_min": round(per_min, 3),
                "state": int(discretize(per_min, thresholds)),
            }
        return out


def _edge_w(e, weighting: str) -> float:
    return float(e.weight) if weighting == "multiplicity" else e.weight / e.hop_length


# -- scenario runner -----------------------------------------------------------


@dataclass
class RunReport:
    scenario: str
    mode: str
    wall_s: float
    records_ingested: int
    peak_unique_per_s: int
    frac_seconds_over_1000: float
    class_totals: dict[str, int]
    forecast_rmse: list[float]
    fl_accuracy: list[float]
    artifacts: list[str]

    def to_json_dict(self) -> dict:
        return {
            "scenario": self.scenario,
            "mode": self.mode,
            "wall_s": round(self.wall_s, 2),
            "records_ingested": self.records_ingested,
            "peak_unique_per_s": self.peak_unique_per_s,
            "frac_seconds_over_1000": round(self.frac_seconds_over_1000, 4),
            "class_totals": self.class_totals,
            "forecast_rmse": [round(float(r), 4) for r in self.forecast_rmse],
            "fl_accuracy": [round(float(a), 4) for a in self.fl_accuracy],
            "artifacts": self.artifacts,
        }


def run_scenario(
    scenario: ScenarioConfig,
    out_dir: str | Path,
    mode: str = "fast",
    policy: scheduler.PlacementPolicy = scheduler.PlacementPolicy.BEST_FIT,
    skip_fl: bool = False,
    skip_forecast: bool = False,
) -> RunReport:
    """Execute the full pipeline and write every artifact the acceptance
    suite consumes. ``fast`` replays traces without pacing; ``realtime``
    paces each stream at native FPS (wall time ~= scenario duration).
    """
    t_start = time.perf_counter()
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    artifacts: list[str] = []
    gw = Gateway(scenario, store_dir=out / "store", policy=policy)

    # ingest: emulate -> aggregate -> store
    if mode == "fast":
        for desc in scenario.streams:
            proc = gw.process_for(desc.stream_id)
            batch = emulator.generate_stream(desc, proc, scenario.duration_s)
            for summary in worker.aggregate_batch(
                batch,
                scenario.duration_s,
                scenario.class_count,
                scenario.intervals.summary_window_s,
            ):
                gw.store.ingest(summary)
    elif mode == "realtime":
        gw.start_streams([s.stream_id for s in scenario.streams], live=True)
        for rt in list(gw._runtimes.values()):
            rt.thread.join()
    else:
        raise ValueError(f"unknown mode {mode!r}")

    # placement artifacts: replay arrivals under both policies
    counts = list(range(1, len(scenario.streams) + 1))
    fps = scenario.streams[0].fps if scenario.streams else 25
    for pol in (scheduler.PlacementPolicy.BEST_FIT, scheduler.PlacementPolicy.WORST_FIT):
        path = out / f"sched_sweep_{pol.value}.csv"
        scheduler.sweep(scenario.devices, counts, pol, fps=fps, out_csv=path)
        artifacts.append(path.name)

    # per-second aggregate counts
    result = gw.store.query(
        [s.stream_id for s in scenario.streams], 0, scenario.duration_s
    )
    per_second = result.counts.sum(axis=0)  # [sec, C]
    totals = per_second.sum(axis=1)
    agg_path = out / "aggregate_per_second.csv"
    with open(agg_path, "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(["ts_s", "total"] + [f"class_{c}" for c in scenario.classes])
        for s in range(scenario.duration_s):
            w.writerow([s, int(totals[s])] + [int(x) for x in per_second[s]])
    artifacts.append(agg_path.name)

    class_totals = {
        c: int(per_second[:, i].sum()) for i, c in enumerate(scenario.classes)
    }
    ct_path = out / "class_totals.csv"
    with open(ct_path, "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(["class", "total", "share"])
        grand = max(1, sum(class_totals.values()))
        for c, t in class_totals.items():
            w.writerow([c, t, f"{t / grand:.4f}"])
    artifacts.append(ct_path.name)

    # forecasting over synthetic history + evaluation
    rmse: list[float] = []
    if not skip_forecast:
        gw.health["forecast"] = "training"
        procs = [gw.process_for(s.stream_id) for s in scenario.streams]
        history = emulator.minute_arrival_series(
            procs, scenario.forecast.history_minutes, scenario.seed
        )
        junction_series = _sum_by_junction(history, scenario)
        split = int(junction_series.shape[1] * 0.8)
        train, test = junction_series[:, :split], junction_series[:, split:]
        fs = scenario.forecast
        if fs.model == "graphgru":
            model = GraphGRULite(
                gw.coarse,
                lag_minutes=fs.lag_minutes,
                horizon_steps=fs.horizon_steps,
                hidden=fs.hidden,
                seed=fs.seed,
                lr=fs.lr,
                epochs=fs.epochs,
            )
        elif fs.model == "seasonal-naive":
            model = forecast.SeasonalNaive()
        else:
            model = forecast.HistoricalAverage()
        curve = model.fit(train)
        rmse_vec = forecast.evaluate(model, test, fs.lag_minutes, fs.horizon_steps, fs.step_minutes)
        rmse = [float(r) for r in rmse_vec]
        fpath = out / "forecast_rmse.csv"
        with open(fpath, "w", newline="") as f:
            w = csv.writer(f)
            w.writerow(["horizon_step", "rmse", "model"])
            for h, r in enumerate(rmse, start=1):
                w.writerow([h, f"{r:.4f}", model.model_id])
        artifacts.append(fpath.name)
        if curve:
            cpath = out / "forecast_train_curve.csv"
            with open(cpath, "w", newline="") as f:
                w = csv.writer(f)
                w.writerow(["epoch", "train_rmse"])
                for i, r in enumerate(curve):
                    w.writerow([i, f"{r:.4f}"])
            artifacts.append(cpath.name)
        if isinstance(model, GraphGRULite):
            model.save(out / "forecast_model.bin")
            artifacts.extend(["forecast_model.bin", "forecast_model.bin.json"])
        gw.health["forecast"] = "ok"

    # federated learning rounds
    fl_acc: list[float] = []
    if not skip_fl and scenario.fl.clients:
        gw.health["fl"] = "running"
        fl_path = out / "fl_rounds.jsonl"
        report = fl.run_rounds(scenario.fl, scenario.class_count, out_jsonl=fl_path)
        fl_acc = report["accuracy_by_round"]
        artifacts.append(fl_path.name)
        gw.health["fl"] = "ok"
        gw.latest_fl_report = {
            "accuracy_by_round": fl_acc,
            "records": report["records"],
        }

    # placement table for the final full fleet under the selected policy
    placement_path = out / "placement.csv"
    p = scheduler.Placement(fleet=scenario.devices)
    with open(placement_path, "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(["stream_id", "device_id", "policy"])
        for desc in scenario.streams:
            try:
                scheduler.assign_stream(p, desc, policy)
                w.writerow([desc.stream_id, p.assignments[desc.stream_id], policy.value])
            except CapacityExhausted:
                w.writerow([desc.stream_id, "REJECTED", policy.value])
    artifacts.append(placement_path.name)

    peak = int(totals.max()) if len(totals) else 0
    frac = float((totals > 1000).mean()) if len(totals) else 0.0
    report = RunReport(
        scenario=scenario.name,
        mode=mode,
        wall_s=time.perf_counter() - t_start,
        records_ingested=gw.store.record_count(),
        peak_unique_per_s=peak,
        frac_seconds_over_1000=frac,
        class_totals=class_totals,
        forecast_rmse=rmse,
        fl_accuracy=fl_acc,
        artifacts=sorted(set(artifacts)),
    )
    (out / "run_report.json").write_text(json.dumps(report.to_json_dict(), indent=1))
    gw.store.close()
    return report


def _sum_by_junction(stream_series: np.ndarray, scenario: ScenarioConfig) -> np.ndarray:
    """[stream x minute] -> [junction x minute] following the camera map."""
    junctions = [v.vertex_id for v in scenario.road_graph.vertices if v.camera]
    jidx = {j: i for i, j in enumerate(junctions)}
    out = np.zeros((len(junctions), stream_series.shape[1]))
    for i, s in enumerate(scenario.streams):
        out[jidx[s.junction_id]] += stream_series[i]
    return out
