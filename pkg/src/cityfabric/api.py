"""Versioned HTTP + WebSocket surface consumed by the dashboard.

Everything lives under /v1. WebSocket frames from /v1/events carry a
monotone sequence number so clients can detect gaps; /v1/nowcast and
/v1/forecast/stream push one JSON frame per update. All reads serve
immutable snapshots; mutations go through the gateway's single lock.
"""

from __future__ import annotations

import logging
import queue
import threading

import numpy as np
from fastapi import FastAPI, HTTPException, Query, WebSocket, WebSocketDisconnect
from fastapi.concurrency import run_in_threadpool
from fastapi.middleware.cors import CORSMiddleware
from pydantic import BaseModel

from . import forecast, scheduler
from .errors import UnknownCamera, UnknownSegment, UnknownStream
from .gateway import Gateway
from .graph import coarse_graph_to_dict

logger = logging.getLogger(__name__)

HEARTBEAT_S = 2.0


class StartStreamsBody(BaseModel):
    ids: list[str]
    policy: str | None = None
    live: bool = True


def _policy(name: str | None, default: scheduler.PlacementPolicy) -> scheduler.PlacementPolicy:
    if name is None:
        return default
    try:
        return scheduler.PlacementPolicy(name)
    except ValueError:
        raise HTTPException(422, f"unknown policy {name!r}")


def create_app(gw: Gateway) -> FastAPI:
    app = FastAPI(title="cityfabric gateway", version="1")
    # the dashboard is served as static files from a different origin
    app.add_middleware(
        CORSMiddleware, allow_origins=["*"], allow_methods=["*"], allow_headers=["*"]
    )

    @app.get("/v1/streams")
    def list_streams():
        placement = gw.placement.snapshot()
        return {
            "streams": [
                {
                    "id": s.stream_id,
                    "junction": s.junction_id,
                    "fps": s.fps,
                    "running": s.stream_id in placement,
                    "device": placement.get(s.stream_id),
                }
                for s in gw.scenario.streams
            ],
            "phase": gw.phase.value,
        }

    @app.post("/v1/streams")
    def start_streams(body: StartStreamsBody):
        policy = _policy(body.policy, gw.policy)
        return gw.start_streams(body.ids, policy=policy, live=body.live)

    @app.delete("/v1/streams")
    def stop_streams(ids: str = Query(...)):
        wanted = [s for s in ids.split(",") if s]
        try:
            return gw.stop_streams(wanted)
        except UnknownStream as e:
            raise HTTPException(404, f"unknown stream {e}")

    @app.get("/v1/scheduler/metrics")
    def scheduler_metrics():
        return gw.scheduler_metrics()

    @app.get("/v1/flows")
    def flows(cameras: str = Query(...), from_s: int = Query(..., alias="from"),
              to_s: int = Query(..., alias="to")):
        cams = [c for c in cameras.split(",") if c]
        if from_s >= to_s:
            raise HTTPException(422, "from must be < to")
        try:
            result = gw.store.query(cams, from_s, to_s)
        except UnknownCamera as e:
            raise HTTPException(404, f"unknown camera {e}")
        return {
            "cameras": list(result.cameras),
            "from": result.from_s,
            "to": result.to_s,
            "counts": result.counts.tolist(),
            "missing": result.missing.tolist(),
        }

    @app.get("/v1/forecast")
    def latest_forecast(horizon: int = 5, step: int = 1):
        svc = gw.forecast_service
        if svc is None or svc.latest is None:
            raise HTTPException(404, "no forecast issued yet")
        return svc.latest.to_json_dict()

    @app.get("/v1/fl/rounds")
    def fl_rounds():
        if gw.latest_fl_report is None:
            return {"records": [], "accuracy_by_round": []}
        return gw.latest_fl_report

    @app.get("/v1/graph")
    def graph():
        d = coarse_graph_to_dict(gw.coarse)
        to_s = gw._latest_complete_minute()
        congestion = gw.edge_congestion(max(0, to_s - 60), to_s) if to_s >= 60 else {}
        d["congestion"] = congestion
        d["thresholds"] = {"t1": gw.scenario.congestion.t1, "t2": gw.scenario.congestion.t2}
        return d

    @app.get("/v1/history")
    def history(target: str = Query(...), window: int = 900):
        try:
            return gw.history(target, window_s=window)
        except UnknownSegment as e:
            raise HTTPException(404, f"unknown segment or camera: {e}")

    @app.post("/v1/ingest")
    def ingest(summary: dict):
        try:
            return gw.store.ingest(summary)
        except UnknownCamera as e:
            raise HTTPException(404, f"unknown camera {e}")

    @app.get("/v1/health")
    def health():
        return {"phase": gw.phase.value, "modules": gw.health, "seq": gw.events.seq}

    async def _pump_queue_ws(ws: WebSocket, q: queue.Queue, unsubscribe) -> None:
        """Forward queue frames to the socket with periodic heartbeats."""
        await ws.accept()
        try:
            while True:
                try:
                    frame = await run_in_threadpool(q.get, True, HEARTBEAT_S)
                except queue.Empty:
                    await ws.send_json({"type": "heartbeat"})
                    continue
                await ws.send_json(frame)
                if isinstance(frame, dict) and frame.get("error"):
                    break  # subscriber overflow poison frame
        except (WebSocketDisconnect, RuntimeError):
            pass
        finally:
            unsubscribe()

    @app.websocket("/v1/nowcast")
    async def nowcast_ws(ws: WebSocket):
        sid, q = gw.store.subscribe_nowcast()
        await _pump_queue_ws(ws, q, lambda: gw.store.hub.unsubscribe(sid))

    @app.websocket("/v1/forecast/stream")
    async def forecast_ws(ws: WebSocket):
        svc = gw.forecast_service
        if svc is None:
            await ws.accept()
            await ws.send_json({"error": "forecast service not running"})
            await ws.close()
            return
        sid, q = svc.subscribe()
        await _pump_queue_ws(ws, q, lambda: svc.unsubscribe(sid))

    @app.websocket("/v1/events")
    async def events_ws(ws: WebSocket):
        sid, q = gw.events.subscribe()
        await _pump_queue_ws(ws, q, lambda: gw.events.unsubscribe(sid))

    return app


def start_forecast_loop(gw: Gateway, model_name: str = "historical-average",
                        period_s: float | None = None) -> forecast.ForecastService:
    """Spin up the periodic forecast service against the live store."""
    fs = gw.scenario.forecast
    lag = fs.lag_minutes
    junctions = list(gw.cameras_by_junction)

    def provider():
        to_s = gw._latest_complete_minute()
        if to_s <= 0:
            return np.zeros((len(junctions), lag)), 0
        from_s = max(0, to_s - lag * 60)
        series, _ = forecast.build_minute_series(gw.store, gw.cameras_by_junction, from_s, to_s)
        if series.shape[1] < lag:
            pad = np.zeros((len(junctions), lag - series.shape[1]))
            series = np.concatenate([pad, series], axis=1)
        return series[:, -lag:], to_s

    if model_name == "seasonal-naive":
        model = forecast.SeasonalNaive()
    else:
        model = forecast.HistoricalAverage()
    svc = forecast.ForecastService(
        model,
        provider,
        gw.coarse,
        horizon_steps=fs.horizon_steps,
        step_minutes=fs.step_minutes,
        period_s=period_s if period_s is not None else fs.period_s,
    )
    gw.forecast_service = svc
    threading.Thread(target=lambda: svc.run(10**9), name="forecast-loop", daemon=True).start()
    return svc
