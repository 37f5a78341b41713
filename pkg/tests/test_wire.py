import pytest

from cityfabric import emulator as em, wire
from cityfabric.model import DetectionEvent, IdIndex, StreamDescriptor


def test_binary_roundtrip():
    idx = IdIndex(["s0", "s1"])
    events = [
        DetectionEvent("s1", 40, 7, 3, (0.25, 0.5, 0.125, 0.25)),
        DetectionEvent("s0", 80, 9, 0, (0.0, 0.0, 1.0, 1.0)),
    ]
    buf = wire.encode_events(events, idx)
    back = list(wire.decode_events(buf, idx))
    assert [(e.stream_id, e.ts_ms, e.tracking_id, e.class_idx) for e in back] == [
        ("s1", 40, 7, 3), ("s0", 80, 9, 0)]
    assert back[0].bbox == pytest.approx(events[0].bbox)


def test_generated_trace_roundtrips():
    desc = StreamDescriptor(stream_id="s0", junction_id="J", fps=25, trace_seed=2)
    proc = em.TrafficProcess(base_per_min=120, dwell_frames=3.0)
    batch = em.generate_stream(desc, proc, 10)
    idx = IdIndex(["s0"])
    buf = wire.encode_events(iter(batch), idx)
    back = list(wire.decode_events(buf, idx))
    assert len(back) == len(batch)
    for a, b in zip(batch, back):
        assert (a.ts_ms, a.tracking_id, a.class_idx) == (b.ts_ms, b.tracking_id, b.class_idx)
        assert a.bbox == pytest.approx(b.bbox, abs=1e-6)


def test_truncated_buffer_raises():
    idx = IdIndex(["s0"])
    buf = wire.encode_event(DetectionEvent("s0", 0, 1, 0, (0, 0, 0.1, 0.1)), idx)
    with pytest.raises(ValueError):
        list(wire.decode_events(buf[:-3], idx))
    with pytest.raises(ValueError):
        list(wire.decode_events(buf[:2], idx))


def test_json_roundtrip():
    e = DetectionEvent("cam-3", 1234, 42, 5, (0.1, 0.2, 0.3, 0.4))
    line = wire.event_to_json(e)
    assert wire.event_from_json(line) == e
