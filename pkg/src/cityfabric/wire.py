"""Event wire format between the emulated fleet and edge workers.

Binary: length-prefixed frames, one per event. Payload layout (little
endian, no padding): u32 stream index, i64 ts_ms, i64 tracking_id,
u16 class index, 4 x f32 bbox. Stream ids travel as dense indices; both
ends share the scenario's stream IdIndex.

A newline-delimited JSON encoding of the same records exists for debugging
(`cityfabric replay --json`).
"""

from __future__ import annotations

import json
import struct
from typing import Iterable, Iterator

from .model import DetectionEvent, IdIndex

_PAYLOAD = struct.Struct("<IqqH4f")
_PREFIX = struct.Struct("<I")


def encode_event(ev: DetectionEvent, index: IdIndex) -> bytes:
    payload = _PAYLOAD.pack(
        index[ev.stream_id], ev.ts_ms, ev.tracking_id, ev.class_idx, *ev.bbox
    )
    return _PREFIX.pack(len(payload)) + payload


def encode_events(events: Iterable[DetectionEvent], index: IdIndex) -> bytes:
    return b"".join(encode_event(ev, index) for ev in events)


def decode_events(buf: bytes, index: IdIndex) -> Iterator[DetectionEvent]:
    pos = 0
    n = len(buf)
    while pos < n:
        if pos + _PREFIX.size > n:
            raise ValueError(f"truncated frame prefix at byte {pos}")
        (length,) = _PREFIX.unpack_from(buf, pos)
        pos += _PREFIX.size
        if pos + length > n:
            raise ValueError(f"truncated frame payload at byte {pos}")
        sidx, ts_ms, tid, cidx, x, y, w, h = _PAYLOAD.unpack_from(buf, pos)
        pos += length
        yield DetectionEvent(
            stream_id=index.id_of(sidx),
            ts_ms=ts_ms,
            tracking_id=tid,
            class_idx=cidx,
            # f32 round-trip can nudge x+w past 1.0 by one ulp; renormalize
            bbox=(x, y, min(w, 1.0 - x), min(h, 1.0 - y)),
        )


def event_to_json(ev: DetectionEvent) -> str:
    return json.dumps(
        {
            "stream_id": ev.stream_id,
            "ts_ms": ev.ts_ms,
            "tracking_id": ev.tracking_id,
            "class_idx": ev.class_idx,
            "bbox": list(ev.bbox),
        },
        separators=(",", ":"),
    )


def event_from_json(line: str) -> DetectionEvent:
    d = json.loads(line)
    return DetectionEvent(
        stream_id=d["stream_id"],
        ts_ms=d["ts_ms"],
        tracking_id=d["tracking_id"],
        class_idx=d["class_idx"],
        bbox=tuple(d["bbox"]),
    )
