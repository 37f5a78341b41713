from pathlib import Path

import pytest

from cityfabric.model import load_scenario, parse_scenario

REPO = Path(__file__).resolve().parents[1]
SCENARIOS = REPO / "scenarios"


@pytest.fixture(scope="session")
def neighborhood100():
    return load_scenario(SCENARIOS / "neighborhood100.json")


@pytest.fixture(scope="session")
def desk9():
    return load_scenario(SCENARIOS / "desk9.json")


def minimal_scenario_dict(**overrides) -> dict:
    """Smallest well-formed scenario: 1 stream, 1 device, 2-junction graph."""
    raw = {
        "name": "minimal",
        "seed": 1,
        "duration_s": 30,
        "classes": ["car", "bus"],
        "streams": [
            {"id": "s0", "junction": "A", "fps": 25, "trace_seed": 7,
             "traffic": {"base_per_min": 30.0, "class_mix": [0.7, 0.3], "dwell_frames": 3.0}}
        ],
        "devices": [
            {"id": "d0", "model": "m", "fps_capacity": 100, "tops": 10.0,
             "power_idle_w": 5.0, "power_per_fps_w": 0.1}
        ],
        "road_graph": {
            "vertices": [
                {"id": "A", "camera": True, "x": 0.0, "y": 0.0},
                {"id": "B", "camera": True, "x": 1.0, "y": 0.0},
            ],
            "edges": [["A", "B"]],
        },
        "intervals": {"summary_window_s": 15, "lateness_s": 2, "tail_horizon_s": 600},
        "congestion_thresholds": {"t1": 5.0, "t2": 20.0},
        "forecast": {"lag_minutes": 2, "horizon_minutes": 2, "step_minutes": 1,
                     "model": "historical-average", "history_minutes": 20},
        "fl": {"clients": []},
    }
    raw.update(overrides)
    return raw


@pytest.fixture
def minimal_scenario():
    return parse_scenario(minimal_scenario_dict())
