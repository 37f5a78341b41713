"""cityfabric: desk-scale edge-cloud traffic analytics fabric."""

__version__ = "0.1.0"

from .model import (
    DEFAULT_CLASS_MIX,
    DEFAULT_VEHICLE_CLASSES,
    DetectionEvent,
    DeviceProfile,
    FlowRecord,
    ScenarioConfig,
    StreamDescriptor,
    load_scenario,
)

__all__ = [
    "DEFAULT_CLASS_MIX",
    "DEFAULT_VEHICLE_CLASSES",
    "DetectionEvent",
    "DeviceProfile",
    "FlowRecord",
    "ScenarioConfig",
    "StreamDescriptor",
    "load_scenario",
    "__version__",
]
