"""Short-horizon traffic prediction over the coarse graph.

Input is a lag window of per-junction, per-minute vehicle counts; output is
a multi-step horizon of predicted counts per junction (totals, not
per-class). Models are pluggable behind :class:`ForecastModel`:

* HistoricalAverage — per-junction mean of the lag window, replicated.
* SeasonalNaive     — the value one period back (period defaults to lag).
* GraphGRULite      — graph-weighted recurrent model (see graphgru.py).

Evaluation is rolling-origin RMSE per horizon step, cross-checked in tests
against a brute-force oracle.
"""

from __future__ import annotations

import hashlib
import logging
import queue
import threading
import time
from dataclasses import dataclass
from typing import Callable, Mapping, Protocol, Sequence

import numpy as np

from .errors import ShapeMismatch
from .graph import CoarseGraph
from .store import TimeSeriesStore

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class ForecastRequest:
    lag_minutes: int = 5
    horizon_minutes: int = 5
    step_minutes: int = 1
    cameras: tuple[str, ...] = ()

    def __post_init__(self):
        if min(self.lag_minutes, self.horizon_minutes, self.step_minutes) <= 0:
            raise ValueError("lag, horizon and step must be positive")
        if self.horizon_minutes % self.step_minutes != 0:
            raise ValueError("horizon must be divisible by step")

    @property
    def horizon_steps(self) -> int:
        return self.horizon_minutes // self.step_minutes


@dataclass
class Forecast:
    issued_at_s: int
    junctions: tuple[str, ...]
    values: np.ndarray  # [horizon_steps, n_junctions], clamped >= 0
    step_minutes: int
    model_id: str

    def to_json_dict(self) -> dict:
        return {
            "issued_at_s": self.issued_at_s,
            "junctions": list(self.junctions),
            "step_minutes": self.step_minutes,
            "model_id": self.model_id,
            "values": [[round(float(v), 4) for v in row] for row in self.values],
        }


class ForecastModel(Protocol):
    model_id: str

    def fit(self, history: np.ndarray, mask: np.ndarray | None = None) -> list[float]:
        """Train on [junction x minute] history; returns per-epoch train RMSE."""
        ...

    def predict(self, lag: np.ndarray, horizon_steps: int) -> np.ndarray:
        """Map a [junction x lag] window to [horizon_steps x junction] output."""
        ...


class HistoricalAverage:
    """Mean of the lag window per junction, replicated across the horizon."""

    model_id = "historical-average"

    def fit(self, history: np.ndarray, mask: np.ndarray | None = None) -> list[float]:
        return []

    def predict(self, lag: np.ndarray, horizon_steps: int) -> np.ndarray:
        if lag.ndim != 2:
            raise ShapeMismatch(f"lag tensor must be [junction x lag], got {lag.shape}")
        mean = lag.mean(axis=1)
        return np.tile(mean, (horizon_steps, 1))


class SeasonalNaive:
    """Repeats the value one period back; period defaults to the lag length."""

    model_id = "seasonal-naive"

    def __init__(self, period_minutes: int | None = None):
        self.period_minutes = period_minutes

    def fit(self, history: np.ndarray, mask: np.ndarray | None = None) -> list[float]:
        return []

    def predict(self, lag: np.ndarray, horizon_steps: int) -> np.ndarray:
        if lag.ndim != 2:
            raise ShapeMismatch(f"lag tensor must be [junction x lag], got {lag.shape}")
        n, in_len = lag.shape
        period = self.period_minutes or in_len
        if period > in_len:
            raise ShapeMismatch(f"period {period} exceeds lag window {in_len}")
        out = np.empty((horizon_steps, n))
        for h in range(horizon_steps):
            out[h] = lag[:, in_len - period + (h % period)]
        return out


def predict(
    model: ForecastModel,
    lag: np.ndarray,
    cg: CoarseGraph | None,
    horizon_steps: int,
    issued_at_s: int = 0,
    step_minutes: int = 1,
) -> Forecast:
    """Run a model and wrap the clamped output in a Forecast."""
    junctions = cg.vertex_ids if cg is not None else tuple(str(i) for i in range(lag.shape[0]))
    if lag.shape[0] != len(junctions):
        raise ShapeMismatch(
            f"lag tensor has {lag.shape[0]} junction rows, graph has {len(junctions)}"
        )
    values = np.maximum(model.predict(lag, horizon_steps), 0.0)
    return Forecast(
        issued_at_s=issued_at_s,
        junctions=tuple(junctions),
        values=values,
        step_minutes=step_minutes,
        model_id=model.model_id,
    )


def build_minute_series(
    store: TimeSeriesStore,
    cameras_by_junction: Mapping[str, Sequence[str]],
    from_s: int,
    to_s: int,
) -> tuple[np.ndarray, np.ndarray]:
    """[junction x minute] totals plus a fully-missing-minute mask.

    A minute cell sums the junction's cameras' per-second total counts; the
    mask flags cells where every covering second of every camera is missing.
    """
    if from_s % 60 or to_s % 60:
        raise ValueError("minute series bounds must be minute-aligned")
    junctions = list(cameras_by_junction)
    cameras = sorted({c for cams in cameras_by_junction.values() for c in cams})
    n_min = (to_s - from_s) // 60
    if not cameras:
        return np.zeros((len(junctions), n_min)), np.ones((len(junctions), n_min), dtype=bool)
    result = store.query(cameras, from_s, to_s)
    cam_pos = {c: i for i, c in enumerate(result.cameras)}
    totals = result.counts.sum(axis=2)  # [cam, sec]
    out = np.zeros((len(junctions), n_min))
    mask = np.ones((len(junctions), n_min), dtype=bool)
    for j, junction in enumerate(junctions):
        cams = [cam_pos[c] for c in cameras_by_junction[junction]]
        if not cams:
            continue
        per_sec = totals[cams].sum(axis=0).reshape(n_min, 60)
        present = (~result.missing[cams]).any(axis=0).reshape(n_min, 60)
        out[j] = per_sec.sum(axis=1)
        mask[j] = ~present.any(axis=1)
    return out, mask


def evaluate(
    model: ForecastModel,
    test: np.ndarray,
    lag_minutes: int,
    horizon_steps: int,
    step_minutes: int = 1,
) -> np.ndarray:
    """Rolling-origin RMSE per horizon step over [junction x minute] data.

    RMSE_h = sqrt(mean over junctions and origins of squared error at step
    h). Predictions are clamped at zero exactly as served forecasts are.
    """
    n, t = test.shape
    span = horizon_steps * step_minutes
    first = lag_minutes - 1
    last = t - span - 1
    if last < first:
        raise ShapeMismatch(
            f"test tensor with {t} minutes too short for lag {lag_minutes} + horizon {span}"
        )
    sq = np.zeros(horizon_steps)
    count = 0
    for o in range(first, last + 1):
        window = test[:, o - lag_minutes + 1 : o + 1]
        pred = np.maximum(model.predict(window, horizon_steps), 0.0)
        for h in range(horizon_steps):
            truth = test[:, o + (h + 1) * step_minutes]
            sq[h] += np.sum((pred[h] - truth) ** 2)
        count += n
    return np.sqrt(sq / count)


def smoothed_is_monotone_nondecreasing(values: Sequence[float], window: int = 2) -> bool:
    """True when the moving-average-smoothed sequence never decreases."""
    v = np.asarray(values, dtype=float)
    if len(v) < 2:
        return True
    kernel = np.ones(window) / window
    sm = np.convolve(v, kernel, mode="valid")
    return bool(np.all(np.diff(sm) >= -1e-9))


# -- serving ----------------------------------------------------------------


class RealClock:
    monotonic = staticmethod(time.monotonic)
    sleep = staticmethod(time.sleep)


class FastClock:
    """Manual clock: sleep() advances virtual time instantly.

    Used to compress multi-minute serve runs in tests; compute latency is
    still measured with the real perf counter, so overrun detection is
    honest.
    """

    def __init__(self, start: float = 0.0):
        self.now = start

    def monotonic(self) -> float:
        return self.now

    def sleep(self, dt: float) -> None:
        self.now += max(0.0, dt)


@dataclass
class TickStats:
    tick: int
    issued_at_s: int
    compute_latency_s: float
    overrun: bool
    cache_hit: bool


class ForecastService:
    """Issues a fresh forecast every period and fans it out to subscribers.

    A tick whose computation exceeds the period counts as an overrun; the
    tick that would have fired during the computation is skipped, never
    queued. Consecutive ticks often share the same input minute window, so
    results are cached by input hash.
    """

    def __init__(
        self,
        model: ForecastModel,
        series_provider: Callable[[], tuple[np.ndarray, int]],
        cg: CoarseGraph | None,
        horizon_steps: int,
        step_minutes: int = 1,
        period_s: float = 5.0,
        clock=None,
        buffer_frames: int = 64,
    ):
        self.model = model
        self.series_provider = series_provider  # returns (lag tensor, issued_at_s)
        self.cg = cg
        self.horizon_steps = horizon_steps
        self.step_minutes = step_minutes
        self.period_s = period_s
        self.clock = clock or RealClock()
        self.buffer_frames = buffer_frames
        self.latest: Forecast | None = None
        self.overruns = 0
        self._subs: dict[int, queue.Queue] = {}
        self._next_sub = 0
        self._lock = threading.Lock()
        self._cache: tuple[bytes, Forecast] | None = None
        self._stop = threading.Event()

    def stop(self) -> None:
        self._stop.set()

    def subscribe(self) -> tuple[int, queue.Queue]:
        with self._lock:
            sid = self._next_sub
            self._next_sub += 1
            q: queue.Queue = queue.Queue(maxsize=self.buffer_frames)
            self._subs[sid] = q
            return sid, q

    def unsubscribe(self, sid: int) -> None:
        with self._lock:
            self._subs.pop(sid, None)

    def _tick_once(self, tick: int) -> TickStats:
        t0 = time.perf_counter()
        lag, issued_at_s = self.series_provider()
        key = hashlib.sha1(lag.tobytes()).digest()
        cache_hit = self._cache is not None and self._cache[0] == key
        if cache_hit:
            fc = Forecast(
                issued_at_s=issued_at_s,
                junctions=self._cache[1].junctions,
                values=self._cache[1].values,
                step_minutes=self.step_minutes,
                model_id=self.model.model_id,
            )
        else:
            fc = predict(
                self.model, lag, self.cg, self.horizon_steps, issued_at_s, self.step_minutes
            )
            self._cache = (key, fc)
        latency = time.perf_counter() - t0
        self.latest = fc
        payload = fc.to_json_dict()
        with self._lock:
            for q in self._subs.values():
                try:
                    q.put_nowait(payload)
                except queue.Full:
                    pass  # forecast frames are snapshots; dropping is safe
        overrun = latency > self.period_s
        if overrun:
            self.overruns += 1
            logger.warning("forecast tick %d overran period: %.3fs", tick, latency)
        return TickStats(tick, issued_at_s, latency, overrun, cache_hit)

    def run(self, n_ticks: int) -> list[TickStats]:
        """Run the periodic loop for n_ticks; overrunning ticks skip the next."""
        stats = []
        start = self.clock.monotonic()
        tick = 0
        while tick < n_ticks and not self._stop.is_set():
            deadline = start + tick * self.period_s
            # chunked sleep so stop() takes effect within ~200 ms of wall time
            while not self._stop.is_set():
                now = self.clock.monotonic()
                if now >= deadline:
                    break
                self.clock.sleep(min(0.2, deadline - now))
            if self._stop.is_set():
                break
            ts = self._tick_once(tick)
            stats.append(ts)
            tick += 1 + (1 if ts.overrun else 0)  # overrun -> skip next tick
        return stats
