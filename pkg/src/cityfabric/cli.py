"""cityfabric command line: scenario runs, scheduler sweeps, FL rounds,
trace replay, and the gateway server for the dashboard."""

from __future__ import annotations

import dataclasses
import json
import sys
from pathlib import Path

import click

from . import api, emulator, fl as fl_mod, gateway, scheduler, wire
from .model import (
    FlClientSpec,
    FlSettings,
    load_scenario,
    parse_scenario,
    resolve_scenario_path,
)


@click.group()
def main():
    """Desk-scale edge-cloud traffic analytics fabric."""


def _load(scenario_name: str):
    return load_scenario(resolve_scenario_path(scenario_name))


@main.command()
@click.option("--scenario", required=True, help="scenario name or path")
@click.option("--mode", type=click.Choice(["fast", "realtime"]), default="fast")
@click.option("--out-dir", default="out", show_default=True)
@click.option("--policy", type=click.Choice(["bestfit", "worstfit"]), default="bestfit")
@click.option("--skip-fl", is_flag=True, default=False)
@click.option("--skip-forecast", is_flag=True, default=False)
def run(scenario, mode, out_dir, policy, skip_fl, skip_forecast):
    """Run the full pipeline and write artifact CSVs/JSON."""
    cfg = _load(scenario)
    report = gateway.run_scenario(
        cfg,
        out_dir,
        mode=mode,
        policy=scheduler.PlacementPolicy(policy),
        skip_fl=skip_fl,
        skip_forecast=skip_forecast,
    )
    click.echo(json.dumps(report.to_json_dict(), indent=1))


@main.group()
def sched():
    """Scheduler tools."""


@sched.command()
@click.option("--policy", type=click.Choice(["bestfit", "worstfit"]), required=True)
@click.option("--fleet", "fleet_path", default=None, help="JSON fleet file; default fleet if omitted")
@click.option("--streams", "n_streams", type=int, default=80, show_default=True)
@click.option("--fps", type=int, default=25, show_default=True)
@click.option("--out", "out_csv", default=None, help="CSV output path")
def sweep(policy, fleet_path, n_streams, fps, out_csv):
    """Replay sequential stream arrivals and emit per-step metrics."""
    if fleet_path:
        raw = json.loads(Path(fleet_path).read_text())
        fleet = tuple(
            dataclasses.replace(
                scheduler.DeviceProfile(
                    device_id=d["id"],
                    model_name=d.get("model", "generic"),
                    fps_capacity=int(d["fps_capacity"]),
                    tops=float(d.get("tops", 1.0)),
                    power_idle_w=float(d.get("power_idle_w", 0.0)),
                    power_per_fps_w=float(d.get("power_per_fps_w", 0.0)),
                )
            )
            for d in raw["devices"]
        )
    else:
        fleet = scheduler.default_fleet()
    counts = list(range(1, n_streams + 1))
    rows = scheduler.sweep(fleet, counts, scheduler.PlacementPolicy(policy), fps=fps,
                           out_csv=out_csv)
    final = rows[-1]
    click.echo(
        f"{policy}: {n_streams} streams, {final.cumulative_fps} FPS, "
        f"{final.n_active_devices} active devices, {final.total_power_w:.1f} W"
    )
    if out_csv:
        click.echo(f"wrote {out_csv}")


@main.group()
def fl():
    """Federated learning simulation."""


@fl.command("run")
@click.option("--rounds", type=int, default=None)
@click.option("--clients", "clients_path", required=True,
              help="scenario file or standalone fl-section JSON")
@click.option("--tau", type=float, default=None)
@click.option("--epochs", type=int, default=None)
@click.option("--target-frames", type=int, default=None)
@click.option("--out", "out_jsonl", default="fl_rounds.jsonl", show_default=True)
def fl_run(rounds, clients_path, tau, epochs, target_frames, out_jsonl):
    """Run FedAvg rounds over the configured simulated clients."""
    raw = json.loads(Path(clients_path).read_text())
    if "fl" in raw and "classes" in raw:
        cfg = parse_scenario(raw, name_hint=Path(clients_path).stem)
        settings, class_count = cfg.fl, cfg.class_count
    else:
        section = raw.get("fl", raw)
        class_count = int(section.get("class_count", 8))
        settings = FlSettings(
            tau=float(section.get("tau", 0.30)),
            window_s=int(section.get("window_s", 20)),
            duration_min=int(section.get("duration_min", 150)),
            target_frames=section.get("target_frames"),
            epochs=int(section.get("epochs", 3)),
            lr=float(section.get("lr", 0.05)),
            rounds=int(section.get("rounds", 5)),
            seed=int(section.get("seed", 11)),
            noise_rate=float(section.get("noise_rate", 0.10)),
            feature_dim=int(section.get("feature_dim", 64)),
            lambda_per_min=float(section.get("lambda_per_min", 90.0)),
            dwell_frames=float(section.get("dwell_frames", 12.0)),
            fps=int(section.get("fps", 25)),
            clients=tuple(
                FlClientSpec(
                    client_id=c["id"],
                    tier=c.get("tier", "generic"),
                    n_streams=int(c["n_streams"]),
                    seed=int(c.get("seed", i)),
                    class_mix=tuple(c["class_mix"]) if c.get("class_mix") else None,
                )
                for i, c in enumerate(section.get("clients", []))
            ),
            latency_mean_s=dict(section.get("latency_mean_s", {})),
        )
    overrides = {}
    if rounds is not None:
        overrides["rounds"] = rounds
    if tau is not None:
        overrides["tau"] = tau
    if epochs is not None:
        overrides["epochs"] = epochs
    if target_frames is not None:
        overrides["target_frames"] = target_frames
    if overrides:
        settings = dataclasses.replace(settings, **overrides)
    report = fl_mod.run_rounds(settings, class_count, out_jsonl=out_jsonl)
    click.echo(json.dumps({"accuracy_by_round": report["accuracy_by_round"]}, indent=1))
    click.echo(f"wrote {out_jsonl}")


@main.command()
@click.option("--scenario", required=True)
@click.option("--stream", "stream_id", default=None, help="single stream id; default all")
@click.option("--duration", type=int, default=None, help="override duration seconds")
@click.option("--json", "as_json", is_flag=True, default=False,
              help="newline-delimited JSON instead of binary frames")
def replay(scenario, stream_id, duration, as_json):
    """Emit a deterministic event trace to stdout (wire format)."""
    cfg = _load(scenario)
    duration = duration or cfg.duration_s
    index = cfg.stream_index()
    streams = [s for s in cfg.streams if stream_id is None or s.stream_id == stream_id]
    if not streams:
        raise click.ClickException(f"stream {stream_id!r} not in scenario")
    out = sys.stdout.buffer
    for desc in streams:
        proc = emulator.TrafficProcess.from_config(
            dict(cfg.traffic.get(desc.stream_id, {})), cfg.class_count
        )
        batch = emulator.generate_stream(desc, proc, duration)
        if as_json:
            for ev in batch:
                out.write((wire.event_to_json(ev) + "\n").encode())
        else:
            for ev in batch:
                out.write(wire.encode_event(ev, index))
    out.flush()


@main.command()
@click.option("--scenario", required=True)
@click.option("--port", type=int, default=8000, show_default=True)
@click.option("--host", default="127.0.0.1", show_default=True)
@click.option("--policy", type=click.Choice(["bestfit", "worstfit"]), default="bestfit")
@click.option("--forecast-period", type=float, default=None, help="override forecast period seconds")
def serve(scenario, port, host, policy, forecast_period):
    """Start the gateway HTTP/WebSocket API for the dashboard."""
    import uvicorn

    cfg = _load(scenario)
    gw = gateway.Gateway(cfg, policy=scheduler.PlacementPolicy(policy))
    api.start_forecast_loop(gw, period_s=forecast_period)
    app = api.create_app(gw)
    uvicorn.run(app, host=host, port=port, log_level="warning")


if __name__ == "__main__":
    main()
