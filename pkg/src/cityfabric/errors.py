"""Shared error types raised across the fabric."""


class CityFabricError(Exception):
    """Base class for all domain errors."""


class ScenarioError(CityFabricError):
    """Scenario file failed to parse or validate.

    ``where`` names the offending field (dotted path) or file location.
    """

    def __init__(self, message: str, where: str | None = None):
        self.where = where
        super().__init__(f"{message}" + (f" (at {where})" if where else ""))


class DuplicateIdError(ScenarioError):
    pass


class DanglingReferenceError(ScenarioError):
    pass


class CapacityExhausted(CityFabricError):
    """No device in the fleet can host the stream; placement unchanged."""

    def __init__(self, stream_id: str, fps: int):
        self.stream_id = stream_id
        self.fps = fps
        super().__init__(f"no device has {fps} FPS headroom for stream {stream_id!r}")


class UnknownStream(CityFabricError):
    pass


class UnknownCamera(CityFabricError):
    pass


class UnknownSegment(CityFabricError):
    pass


class MalformedSummary(CityFabricError):
    pass


class IngestUnreachable(CityFabricError):
    """Raised by the emitter after retries are exhausted; summary was spilled."""


class IsolatedCameraVertex(CityFabricError):
    """A camera vertex has no collapse path to any other camera vertex."""

    def __init__(self, vertex_id: str):
        self.vertex_id = vertex_id
        super().__init__(f"camera vertex {vertex_id!r} unreachable from any other camera vertex")


class ShapeMismatch(CityFabricError):
    pass


class DivergenceDetected(CityFabricError):
    """Training loss went non-finite; carries the config needed to reproduce."""

    def __init__(self, message: str, seed: int | None = None, config: dict | None = None):
        self.seed = seed
        self.config = config or {}
        super().__init__(f"{message} (seed={seed}, config={self.config})")


class DimensionMismatch(CityFabricError):
    pass


class AllClientsEmpty(CityFabricError):
    pass


class SubscriberOverflow(CityFabricError):
    """Subscriber fell behind the broadcast buffer and was disconnected."""


class BackpressureExceeded(CityFabricError):
    """Live consumer lagged the producer beyond the configured watermark."""
