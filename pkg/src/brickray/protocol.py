"""Binary wire protocol for remote control and frame streaming.

Every message is a payload of [1 type byte][body], carried over TCP with a
big-endian u32 length prefix (length counts the whole payload including the
type byte).  WebSocket transports carry the identical payload as one binary
frame, without the length prefix.

Type 0x01: UTF-8 JSON control message.
Type 0x02: frame message; body = u32 width, u32 height, u32 frame_id,
           u32 format (0 = raw RGBA8 row-major, 1 = PNG), then pixel data.
           All integers big-endian.
"""

from __future__ import annotations

import json
import struct

from .errors import FrameTooShort, InvalidJson, UnknownType

TYPE_JSON = 0x01
TYPE_FRAME = 0x02

FORMAT_RAW = 0
FORMAT_PNG = 1

MAX_PAYLOAD = 64 * 1024 * 1024  # refuse absurd lengths before allocating

_FRAME_HEADER = struct.Struct(">IIII")


def encode_payload(msg_type: int, body: bytes) -> bytes:
    """Payload bytes (no length prefix): type byte + body."""
    return bytes([msg_type]) + body


def encode_message(msg_type: int, body: bytes) -> bytes:
    """Length-prefixed message as sent over TCP."""
    payload = encode_payload(msg_type, body)
    return struct.pack(">I", len(payload)) + payload


def encode_json_message(obj) -> bytes:
    return encode_message(TYPE_JSON, json.dumps(obj, separators=(",", ":"),
                                                sort_keys=False).encode("utf-8"))


def encode_json_payload(obj) -> bytes:
    return encode_payload(TYPE_JSON, json.dumps(obj, separators=(",", ":"),
                                                sort_keys=False).encode("utf-8"))


def encode_frame_body(width: int, height: int, frame_id: int, fmt: int,
                      pixels: bytes) -> bytes:
    return _FRAME_HEADER.pack(width, height, frame_id, fmt) + pixels


def decode_payload(payload: bytes):
    """Decode one payload into (type, parsed body).

    JSON payloads return (TYPE_JSON, dict-or-list); frame payloads return
    (TYPE_FRAME, dict with width/height/frame_id/format/pixels).
    Raises FrameTooShort, UnknownType, or InvalidJson.
    """
    if len(payload) < 1:
        raise FrameTooShort("payload must contain a type byte")
    msg_type = payload[0]
    body = payload[1:]
    if msg_type == TYPE_JSON:
        try:
            return TYPE_JSON, json.loads(body.decode("utf-8"))
        except (UnicodeDecodeError, json.JSONDecodeError) as exc:
            raise InvalidJson(str(exc)) from exc
    if msg_type == TYPE_FRAME:
        if len(body) < _FRAME_HEADER.size:
            raise FrameTooShort("frame message header incomplete")
        width, height, frame_id, fmt = _FRAME_HEADER.unpack_from(body)
        return TYPE_FRAME, {"width": width, "height": height,
                            "frame_id": frame_id, "format": fmt,
                            "pixels": body[_FRAME_HEADER.size:]}
    raise UnknownType(f"unknown message type 0x{msg_type:02X}")


def decode_message(data: bytes):
    """Decode one length-prefixed message; returns (type, parsed, consumed).

    `consumed` is the number of bytes used from `data`.  Raises
    FrameTooShort when the buffer does not hold a complete message.
    """
    if len(data) < 4:
        raise FrameTooShort("length prefix incomplete")
    (length,) = struct.unpack_from(">I", data)
    if length < 1:
        raise FrameTooShort("declared payload length is zero")
    if length > MAX_PAYLOAD:
        raise FrameTooShort(f"declared payload length {length} exceeds limit")
    if len(data) < 4 + length:
        raise FrameTooShort("payload incomplete")
    msg_type, parsed = decode_payload(data[4:4 + length])
    return msg_type, parsed, 4 + length


class StreamDecoder:
    """Incremental decoder for the TCP byte stream.

    feed() buffers bytes and yields every complete, well-formed message.
    Malformed complete messages surface as (None, exception) entries so a
    server can reply with an error and keep the session alive; payloads with
    an out-of-range declared length are skipped byte-wise.
    """

    def __init__(self):
        self._buf = bytearray()
        self._discard = 0  # remaining bytes of an oversized payload to drop

    def feed(self, data: bytes):
        self._buf.extend(data)
        out = []
        while True:
            if self._discard:
                drop = min(self._discard, len(self._buf))
                del self._buf[:drop]
                self._discard -= drop
                if self._discard:
                    break
            if len(self._buf) < 4:
                break
            (length,) = struct.unpack_from(">I", self._buf)
            if length < 1 or length > MAX_PAYLOAD:
                err = FrameTooShort(f"declared payload length {length} out of range")
                del self._buf[:4]
                if length > MAX_PAYLOAD:
                    self._discard = length
                out.append((None, err))
                continue
            if len(self._buf) < 4 + length:
                break
            payload = bytes(self._buf[4:4 + length])
            del self._buf[:4 + length]
            try:
                out.append(decode_payload(payload))
            except Exception as exc:  # malformed but complete: keep session
                out.append((None, exc))
        return out
