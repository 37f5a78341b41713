"""Shared domain types and scenario loading.

Everything here is immutable after construction and safe to share across
threads. String identifiers from config files are interned to dense integer
indices via :class:`IdIndex` at load time; runtime code keys arrays by index
and translates back to strings only at the API surface.

All timestamps are scenario-relative (epoch t=0), so runs are reproducible
independent of wall clock.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field, asdict
from pathlib import Path
from typing import Iterator, Mapping, Sequence

from .errors import DanglingReferenceError, DuplicateIdError, ScenarioError
from .graph import RoadGraph, RoadVertex

# Stand-in taxonomy: the source dataset's full class list is not public, so we
# ship eight classes covering the mix reported for the validation neighborhood
# (two-wheelers 37%, sedans 15%, three-wheelers 14% are the named majority).
DEFAULT_VEHICLE_CLASSES: tuple[str, ...] = (
    "two-wheeler",
    "three-wheeler",
    "sedan",
    "suv",
    "hatchback",
    "bus",
    "truck",
    "van",
)

DEFAULT_CLASS_MIX: tuple[float, ...] = (0.37, 0.14, 0.15, 0.10, 0.09, 0.05, 0.06, 0.04)


class IdIndex:
    """Bidirectional map between string ids and dense indices 0..n-1.

    Index order follows declaration order in the scenario file and is stable
    for the lifetime of a run.
    """

    __slots__ = ("_ids", "_index")

    def __init__(self, ids: Sequence[str]):
        self._ids = tuple(ids)
        self._index = {s: i for i, s in enumerate(self._ids)}
        if len(self._index) != len(self._ids):
            raise DuplicateIdError("duplicate ids in index")

    def __getitem__(self, sid: str) -> int:
        return self._index[sid]

    def __contains__(self, sid: str) -> bool:
        return sid in self._index

    def id_of(self, idx: int) -> str:
        return self._ids[idx]

    def __len__(self) -> int:
        return len(self._ids)

    def __iter__(self) -> Iterator[str]:
        return iter(self._ids)

    @property
    def ids(self) -> tuple[str, ...]:
        return self._ids


@dataclass(frozen=True)
class DetectionEvent:
    """One per-frame, per-vehicle observation emitted by a stream."""

    stream_id: str
    ts_ms: int
    tracking_id: int
    class_idx: int
    bbox: tuple[float, float, float, float]  # normalized (x, y, w, h)

    def __post_init__(self):
        x, y, w, h = self.bbox
        if min(x, y, w, h) < 0.0 or x + w > 1.0 + 1e-9 or y + h > 1.0 + 1e-9:
            raise ValueError(f"bbox out of unit square: {self.bbox}")


@dataclass(frozen=True)
class FlowRecord:
    """Per-camera, per-second class-count vector (unique first-seen vehicles)."""

    ts_s: int
    camera_id: str
    counts: tuple[int, ...]


@dataclass(frozen=True)
class StreamDescriptor:
    stream_id: str
    junction_id: str
    fps: int = 25
    trace_seed: int = 0

    def __post_init__(self):
        if self.fps <= 0:
            raise ValueError(f"fps must be positive, got {self.fps}")


@dataclass(frozen=True)
class DeviceProfile:
    """Edge device capacity and affine power model (idle + slope * used fps)."""

    device_id: str
    model_name: str
    fps_capacity: int
    tops: float
    power_idle_w: float = 0.0
    power_per_fps_w: float = 0.0

    def __post_init__(self):
        if self.fps_capacity <= 0:
            raise ValueError(f"fps_capacity must be positive, got {self.fps_capacity}")
        if self.power_idle_w < 0 or self.power_per_fps_w < 0:
            raise ValueError("power values must be non-negative")


@dataclass(frozen=True)
class IntervalSettings:
    summary_window_s: int = 15
    lateness_s: int = 2
    tail_horizon_s: int = 1800


@dataclass(frozen=True)
class CongestionSettings:
    t1: float = 30.0
    t2: float = 80.0
    weighting: str = "multiplicity"  # or "inverse_length"
    aggregation: str = "sum"  # or "mean" (non-conserving, see traffic graph docs)

    def __post_init__(self):
        if not (0 < self.t1 < self.t2):
            raise ValueError(f"thresholds must satisfy 0 < t1 < t2, got ({self.t1}, {self.t2})")


@dataclass(frozen=True)
class ForecastSettings:
    lag_minutes: int = 5
    horizon_minutes: int = 5
    step_minutes: int = 1
    period_s: float = 5.0
    model: str = "graphgru"
    seed: int = 7
    hidden: int = 32
    epochs: int = 30
    lr: float = 0.01
    history_minutes: int = 360

    def __post_init__(self):
        if min(self.lag_minutes, self.horizon_minutes, self.step_minutes) <= 0:
            raise ValueError("lag, horizon and step must be positive")
        if self.horizon_minutes % self.step_minutes != 0:
            raise ValueError("horizon must be divisible by step")

    @property
    def horizon_steps(self) -> int:
        return self.horizon_minutes // self.step_minutes


@dataclass(frozen=True)
class FlClientSpec:
    client_id: str
    tier: str  # device model name; selects capacity class and latency profile
    n_streams: int
    seed: int = 0
    class_mix: tuple[float, ...] | None = None  # None -> scenario default mix


@dataclass(frozen=True)
class FlSettings:
    tau: float = 0.30
    window_s: int = 20
    duration_min: int = 150
    target_frames: int | None = None
    epochs: int = 3
    lr: float = 0.05
    rounds: int = 5
    seed: int = 11
    noise_rate: float = 0.10
    feature_dim: int = 64
    lambda_per_min: float = 90.0
    dwell_frames: float = 12.0
    fps: int = 25
    clients: tuple[FlClientSpec, ...] = ()
    latency_mean_s: Mapping[str, float] = field(default_factory=dict)

    def __post_init__(self):
        if not (0.0 < self.tau < 1.0):
            raise ValueError(f"tau must be in (0, 1), got {self.tau}")


@dataclass(frozen=True)
class ScenarioConfig:
    """Validated scenario: all cross-references resolved, ids unique."""

    name: str
    seed: int
    duration_s: int
    classes: tuple[str, ...]
    streams: tuple[StreamDescriptor, ...]
    traffic: Mapping[str, Mapping]  # stream_id -> raw traffic-process config
    devices: tuple[DeviceProfile, ...]
    road_graph: RoadGraph
    intervals: IntervalSettings
    congestion: CongestionSettings
    forecast: ForecastSettings
    fl: FlSettings

    @property
    def class_count(self) -> int:
        return len(self.classes)

    def stream_index(self) -> IdIndex:
        return IdIndex([s.stream_id for s in self.streams])

    def device_index(self) -> IdIndex:
        return IdIndex([d.device_id for d in self.devices])

    def stream_by_id(self, stream_id: str) -> StreamDescriptor:
        for s in self.streams:
            if s.stream_id == stream_id:
                return s
        raise KeyError(stream_id)


def _require(obj, key: str, where: str):
    if not isinstance(obj, Mapping):
        raise ScenarioError(f"expected an object, got {type(obj).__name__}", where)
    if key not in obj:
        raise ScenarioError(f"missing required field {key!r}", where)
    return obj[key]


def _check_unique(ids: list[str], what: str):
    seen = set()
    for sid in ids:
        if sid in seen:
            raise DuplicateIdError(f"duplicate {what} id {sid!r}", where=what)
        seen.add(sid)


def load_scenario(path: str | Path) -> ScenarioConfig:
    """Load and validate a scenario JSON file.

    Raises :class:`ScenarioError` (parse errors carry line/column, validation
    errors carry the dotted field path), :class:`DuplicateIdError`, or
    :class:`DanglingReferenceError` naming the offending id.
    """
    path = Path(path)
    try:
        raw = json.loads(path.read_text())
    except FileNotFoundError:
        raise ScenarioError(f"scenario file not found: {path}")
    except json.JSONDecodeError as e:
        raise ScenarioError(f"parse error: {e.msg}", where=f"{path}:{e.lineno}:{e.colno}")
    return parse_scenario(raw, name_hint=path.stem)


def parse_scenario(raw: Mapping, name_hint: str = "scenario") -> ScenarioConfig:
    classes = tuple(_require(raw, "classes", "classes"))
    if len(classes) == 0:
        raise ScenarioError("class list must be non-empty", "classes")
    _check_unique(list(classes), "class")
    c = len(classes)

    graph_raw = _require(raw, "road_graph", "road_graph")
    road_graph = parse_road_graph(graph_raw)

    streams = []
    traffic: dict[str, Mapping] = {}
    for i, s in enumerate(_require(raw, "streams", "streams")):
        where = f"streams[{i}]"
        desc = StreamDescriptor(
            stream_id=_require(s, "id", where),
            junction_id=_require(s, "junction", where),
            fps=int(s.get("fps", 25)),
            trace_seed=int(s.get("trace_seed", 0)),
        )
        if desc.junction_id not in road_graph.vertex_ids:
            raise DanglingReferenceError(
                f"stream {desc.stream_id!r} references unknown junction {desc.junction_id!r}", where
            )
        if not road_graph.vertex(desc.junction_id).camera:
            raise DanglingReferenceError(
                f"stream {desc.stream_id!r} placed at junction {desc.junction_id!r} "
                "which is not camera-equipped",
                where,
            )
        streams.append(desc)
        t = s.get("traffic", {})
        mix = t.get("class_mix")
        if mix is not None and len(mix) != c:
            raise ScenarioError(
                f"class_mix has {len(mix)} entries, expected {c}", f"{where}.traffic.class_mix"
            )
        traffic[desc.stream_id] = t
    _check_unique([s.stream_id for s in streams], "stream")

    devices = []
    for i, d in enumerate(_require(raw, "devices", "devices")):
        where = f"devices[{i}]"
        try:
            devices.append(
                DeviceProfile(
                    device_id=_require(d, "id", where),
                    model_name=d.get("model", "generic"),
                    fps_capacity=int(_require(d, "fps_capacity", where)),
                    tops=float(d.get("tops", 1.0)),
                    power_idle_w=float(d.get("power_idle_w", 0.0)),
                    power_per_fps_w=float(d.get("power_per_fps_w", 0.0)),
                )
            )
        except ValueError as e:
            raise ScenarioError(str(e), where)
    _check_unique([d.device_id for d in devices], "device")

    iv = raw.get("intervals", {})
    intervals = IntervalSettings(
        summary_window_s=int(iv.get("summary_window_s", 15)),
        lateness_s=int(iv.get("lateness_s", 2)),
        tail_horizon_s=int(iv.get("tail_horizon_s", 1800)),
    )
    if not (5 <= intervals.summary_window_s <= 30):
        raise ScenarioError(
            f"summary_window_s must be within 5..30, got {intervals.summary_window_s}",
            "intervals.summary_window_s",
        )

    ct = raw.get("congestion_thresholds", {})
    try:
        congestion = CongestionSettings(
            t1=float(ct.get("t1", 30.0)),
            t2=float(ct.get("t2", 80.0)),
            weighting=ct.get("weighting", "multiplicity"),
            aggregation=ct.get("aggregation", "sum"),
        )
    except ValueError as e:
        raise ScenarioError(str(e), "congestion_thresholds")
    if congestion.weighting not in ("multiplicity", "inverse_length"):
        raise ScenarioError(
            f"unknown weighting {congestion.weighting!r}", "congestion_thresholds.weighting"
        )

    fc = raw.get("forecast", {})
    try:
        forecast = ForecastSettings(
            lag_minutes=int(fc.get("lag_minutes", 5)),
            horizon_minutes=int(fc.get("horizon_minutes", 5)),
            step_minutes=int(fc.get("step_minutes", 1)),
            period_s=float(fc.get("period_s", 5.0)),
            model=fc.get("model", "graphgru"),
            seed=int(fc.get("seed", 7)),
            hidden=int(fc.get("hidden", 32)),
            epochs=int(fc.get("epochs", 30)),
            lr=float(fc.get("lr", 0.01)),
            history_minutes=int(fc.get("history_minutes", 360)),
        )
    except ValueError as e:
        raise ScenarioError(str(e), "forecast")

    flr = raw.get("fl", {})
    clients = []
    for i, cl in enumerate(flr.get("clients", [])):
        where = f"fl.clients[{i}]"
        mix = cl.get("class_mix")
        if mix is not None and len(mix) != c:
            raise ScenarioError(f"class_mix has {len(mix)} entries, expected {c}", where)
        clients.append(
            FlClientSpec(
                client_id=_require(cl, "id", where),
                tier=cl.get("tier", "generic"),
                n_streams=int(_require(cl, "n_streams", where)),
                seed=int(cl.get("seed", i)),
                class_mix=tuple(mix) if mix is not None else None,
            )
        )
    _check_unique([cl.client_id for cl in clients], "fl client")
    try:
        fl = FlSettings(
            tau=float(flr.get("tau", 0.30)),
            window_s=int(flr.get("window_s", 20)),
            duration_min=int(flr.get("duration_min", 150)),
            target_frames=flr.get("target_frames"),
            epochs=int(flr.get("epochs", 3)),
            lr=float(flr.get("lr", 0.05)),
            rounds=int(flr.get("rounds", 5)),
            seed=int(flr.get("seed", 11)),
            noise_rate=float(flr.get("noise_rate", 0.10)),
            feature_dim=int(flr.get("feature_dim", 64)),
            lambda_per_min=float(flr.get("lambda_per_min", 90.0)),
            dwell_frames=float(flr.get("dwell_frames", 12.0)),
            fps=int(flr.get("fps", 25)),
            clients=tuple(clients),
            latency_mean_s=dict(flr.get("latency_mean_s", {})),
        )
    except ValueError as e:
        raise ScenarioError(str(e), "fl")

    return ScenarioConfig(
        name=raw.get("name", name_hint),
        seed=int(raw.get("seed", 0)),
        duration_s=int(_require(raw, "duration_s", "duration_s")),
        classes=classes,
        streams=tuple(streams),
        traffic=traffic,
        devices=tuple(devices),
        road_graph=road_graph,
        intervals=intervals,
        congestion=congestion,
        forecast=forecast,
        fl=fl,
    )


def parse_road_graph(raw: Mapping) -> RoadGraph:
    vertices = []
    for i, v in enumerate(_require(raw, "vertices", "road_graph.vertices")):
        where = f"road_graph.vertices[{i}]"
        vertices.append(
            RoadVertex(
                vertex_id=_require(v, "id", where),
                camera=bool(v.get("camera", False)),
                x=float(v["x"]) if "x" in v else None,
                y=float(v["y"]) if "y" in v else None,
            )
        )
    _check_unique([v.vertex_id for v in vertices], "junction")
    known = {v.vertex_id for v in vertices}
    edges = []
    for i, e in enumerate(_require(raw, "edges", "road_graph.edges")):
        where = f"road_graph.edges[{i}]"
        if len(e) != 2:
            raise ScenarioError(f"edge must be a [u, v] pair, got {e!r}", where)
        u, v = e
        for end in (u, v):
            if end not in known:
                raise DanglingReferenceError(f"edge references unknown junction {end!r}", where)
        if u == v:
            raise ScenarioError(f"self-loop on {u!r} not allowed", where)
        edges.append((u, v))
    return RoadGraph(vertices=tuple(vertices), edges=tuple(edges))


def scenario_to_dict(cfg: ScenarioConfig) -> dict:
    """Serialize back to the scenario JSON schema (round-trips via parse)."""
    return {
        "name": cfg.name,
        "seed": cfg.seed,
        "duration_s": cfg.duration_s,
        "classes": list(cfg.classes),
        "streams": [
            {
                "id": s.stream_id,
                "junction": s.junction_id,
                "fps": s.fps,
                "trace_seed": s.trace_seed,
                "traffic": dict(cfg.traffic.get(s.stream_id, {})),
            }
            for s in cfg.streams
        ],
        "devices": [
            {
                "id": d.device_id,
                "model": d.model_name,
                "fps_capacity": d.fps_capacity,
                "tops": d.tops,
                "power_idle_w": d.power_idle_w,
                "power_per_fps_w": d.power_per_fps_w,
            }
            for d in cfg.devices
        ],
        "road_graph": {
            "vertices": [
                {
                    "id": v.vertex_id,
                    "camera": v.camera,
                    **({"x": v.x} if v.x is not None else {}),
                    **({"y": v.y} if v.y is not None else {}),
                }
                for v in cfg.road_graph.vertices
            ],
            "edges": [[u, v] for u, v in cfg.road_graph.edges],
        },
        "intervals": asdict(cfg.intervals),
        "congestion_thresholds": asdict(cfg.congestion),
        "forecast": asdict(cfg.forecast),
        "fl": {
            **{
                k: v
                for k, v in asdict(cfg.fl).items()
                if k not in ("clients", "latency_mean_s")
            },
            "latency_mean_s": dict(cfg.fl.latency_mean_s),
            "clients": [
                {
                    "id": cl.client_id,
                    "tier": cl.tier,
                    "n_streams": cl.n_streams,
                    "seed": cl.seed,
                    **({"class_mix": list(cl.class_mix)} if cl.class_mix else {}),
                }
                for cl in cfg.fl.clients
            ],
        },
    }


def resolve_scenario_path(name_or_path: str) -> Path:
    """Resolve a bare scenario name against ./scenarios/, else treat as path."""
    p = Path(name_or_path)
    if p.exists():
        return p
    candidate = Path("scenarios") / f"{name_or_path}.json"
    if candidate.exists():
        return candidate
    raise ScenarioError(f"cannot resolve scenario {name_or_path!r} (tried {p} and {candidate})")
