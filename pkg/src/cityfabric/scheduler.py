"""Capacity-aware placement of streams onto heterogeneous edge devices.

Streams are packed arrival-order onto devices treated as bins with a known
FPS capacity (no migration of already-placed streams). Two heuristics:

* Best Fit  — feasible device with the least remaining capacity.
* Worst Fit — device with the most remaining capacity, if the stream fits.

Remaining capacity is evaluated before placement; for a fixed stream size
that ordering is identical to post-placement remaining. Ties break by
ascending device_id so traces are reproducible.

Mutations are expected to be serialized by the caller (the gateway funnels
them through one lock); metric reads work on plain snapshots.
"""

from __future__ import annotations

import csv
import enum
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

from .errors import CapacityExhausted, UnknownStream
from .model import DeviceProfile, StreamDescriptor


class PlacementPolicy(enum.Enum):
    BEST_FIT = "bestfit"
    WORST_FIT = "worstfit"


@dataclass(frozen=True)
class SchedulerMetrics:
    active_capacity_tops: float
    utilization_pct: float
    total_power_w: float
    cumulative_fps: int
    n_active_devices: int = 0
    n_streams: int = 0


@dataclass
class Placement:
    """Current stream->device assignment over a fixed fleet.

    A device is active iff it hosts at least one stream. used_fps always
    equals the sum of the fps of the streams assigned to the device.
    """

    fleet: tuple[DeviceProfile, ...]
    assignments: dict[str, str] = field(default_factory=dict)  # stream_id -> device_id
    used_fps: dict[str, int] = field(default_factory=dict)  # device_id -> fps
    stream_fps: dict[str, int] = field(default_factory=dict)

    def __post_init__(self):
        self._by_id = {d.device_id: d for d in self.fleet}
        for d in self.fleet:
            self.used_fps.setdefault(d.device_id, 0)

    def device(self, device_id: str) -> DeviceProfile:
        return self._by_id[device_id]

    def remaining(self, device_id: str) -> int:
        return self._by_id[device_id].fps_capacity - self.used_fps[device_id]

    def active_devices(self) -> list[DeviceProfile]:
        return [d for d in self.fleet if self.used_fps[d.device_id] > 0]

    def is_placed(self, stream_id: str) -> bool:
        return stream_id in self.assignments

    def snapshot(self) -> dict[str, str]:
        return dict(self.assignments)

    def copy(self) -> "Placement":
        return Placement(
            fleet=self.fleet,
            assignments=dict(self.assignments),
            used_fps=dict(self.used_fps),
            stream_fps=dict(self.stream_fps),
        )


def choose_device(p: Placement, fps: int, policy: PlacementPolicy) -> DeviceProfile | None:
    """Pick the target device per policy, or None when nothing fits."""
    feasible = [d for d in p.fleet if p.remaining(d.device_id) >= fps]
    if not feasible:
        return None
    if policy is PlacementPolicy.BEST_FIT:
        return min(feasible, key=lambda d: (p.remaining(d.device_id), d.device_id))
    # negate remaining so ties still break by ascending device_id
    return min(feasible, key=lambda d: (-p.remaining(d.device_id), d.device_id))


def assign_stream(p: Placement, s: StreamDescriptor, policy: PlacementPolicy) -> Placement:
    """Place one stream; raises CapacityExhausted leaving the placement unchanged."""
    if p.is_placed(s.stream_id):
        raise ValueError(f"stream {s.stream_id!r} already placed")
    target = choose_device(p, s.fps, policy)
    if target is None:
        raise CapacityExhausted(s.stream_id, s.fps)
    p.assignments[s.stream_id] = target.device_id
    p.used_fps[target.device_id] += s.fps
    p.stream_fps[s.stream_id] = s.fps
    return p


def remove_stream(p: Placement, stream_id: str) -> Placement:
    if stream_id not in p.assignments:
        raise UnknownStream(stream_id)
    device_id = p.assignments.pop(stream_id)
    p.used_fps[device_id] -= p.stream_fps.pop(stream_id)
    return p


def metrics(p: Placement) -> SchedulerMetrics:
    """Aggregate capacity/utilization/power over the active devices."""
    active = p.active_devices()
    if not active:
        return SchedulerMetrics(0.0, 0.0, 0.0, 0, 0, len(p.assignments))
    cap = sum(d.fps_capacity for d in active)
    used = sum(p.used_fps[d.device_id] for d in active)
    power = sum(
        d.power_idle_w + d.power_per_fps_w * p.used_fps[d.device_id] for d in active
    )
    return SchedulerMetrics(
        active_capacity_tops=sum(d.tops for d in active),
        utilization_pct=100.0 * used / cap,
        total_power_w=power,
        cumulative_fps=sum(p.used_fps.values()),
        n_active_devices=len(active),
        n_streams=len(p.assignments),
    )


SWEEP_CSV_COLUMNS = (
    "step",
    "n_streams",
    "policy",
    "cumulative_fps",
    "active_capacity_tops",
    "utilization_pct",
    "total_power_w",
)


def sweep(
    fleet: Sequence[DeviceProfile],
    stream_counts: Sequence[int],
    policy: PlacementPolicy,
    fps: int = 25,
    out_csv: str | Path | None = None,
) -> list[SchedulerMetrics]:
    """Replay sequential arrivals of uniform-fps streams.

    Emits one metrics row per entry in ``stream_counts`` (which must be
    ascending). CapacityExhausted propagates annotated with the step index.
    """
    if list(stream_counts) != sorted(stream_counts):
        raise ValueError("stream_counts must be ascending")
    p = Placement(fleet=tuple(fleet))
    rows: list[SchedulerMetrics] = []
    placed = 0
    for step, count in enumerate(stream_counts):
        while placed < count:
            desc = StreamDescriptor(
                stream_id=f"sweep-{placed:04d}", junction_id="", fps=fps
            )
            try:
                assign_stream(p, desc, policy)
            except CapacityExhausted as e:
                raise CapacityExhausted(f"{e.stream_id} (sweep step {step})", fps) from e
            placed += 1
        rows.append(metrics(p))
    if out_csv is not None:
        write_sweep_csv(out_csv, stream_counts, policy, rows)
    return rows


def write_sweep_csv(
    path: str | Path,
    stream_counts: Sequence[int],
    policy: PlacementPolicy,
    rows: Iterable[SchedulerMetrics],
) -> None:
    with open(path, "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(SWEEP_CSV_COLUMNS)
        for step, (count, m) in enumerate(zip(stream_counts, rows)):
            w.writerow(
                [
                    step,
                    count,
                    policy.value,
                    m.cumulative_fps,
                    f"{m.active_capacity_tops:.1f}",
                    f"{m.utilization_pct:.3f}",
                    f"{m.total_power_w:.3f}",
                ]
            )


def default_fleet() -> tuple[DeviceProfile, ...]:
    """The shipped 5x200-FPS + 4x400-FPS fleet with the calibrated power table.

    Power calibration targets the reference 32-stream comparison (231.6 W
    worst-fit vs 249.6 W best-fit): the larger model idles higher but costs
    less per processed frame.
    """
    small = [
        DeviceProfile(
            device_id=f"jo32-{i}",
            model_name="orin-agx-32gb",
            fps_capacity=200,
            tops=200.0,
            power_idle_w=26.4,
            power_per_fps_w=0.18,
        )
        for i in range(5)
    ]
    large = [
        DeviceProfile(
            device_id=f"jo64-{i}",
            model_name="orin-agx-64gb",
            fps_capacity=400,
            tops=275.0,
            power_idle_w=33.9,
            power_per_fps_w=0.12,
        )
        for i in range(4)
    ]
    return tuple(small + large)
