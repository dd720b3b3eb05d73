"""TCP service and WebSocket gateway: sessions, commands, frame streaming."""

import base64
import hashlib
import io
import json
import os
import socket
import struct

import numpy as np
import pytest

from brickray.protocol import (FORMAT_PNG, FORMAT_RAW, TYPE_FRAME, TYPE_JSON,
                               decode_payload, encode_json_payload,
                               encode_message, encode_payload)
from brickray.render.backend import available_backends
from brickray.service import Session, TcpClient, VolumeServer

LOAD_SMALL = {"cmd": "load_volume", "procedural": "noise:32:2:2",
              "cache_mb": 64}
SMALL_SIZE = {"cmd": "set_settings", "width": 24, "height": 16}


@pytest.fixture(scope="module")
def server():
    srv = VolumeServer(ws_port=0)
    srv.start()
    yield srv
    srv.shutdown()


@pytest.fixture
def client(server):
    c = TcpClient("127.0.0.1", server.port)
    yield c
    c.close()


def _prepare(client, load=LOAD_SMALL):
    assert client.request(load)[1]["cmd"] == "volume_loaded"
    assert client.request(SMALL_SIZE)[1]["cmd"] == "ok"


def _frame_pair(client, fmt="raw"):
    """request_frame -> (frame dict, frame_stats dict)."""
    client.send_json({"cmd": "request_frame", "format": fmt})
    msg_type, frame = client.read_message()
    assert msg_type == TYPE_FRAME
    msg_type, stats = client.read_message()
    assert msg_type == TYPE_JSON and stats["cmd"] == "frame_stats"
    return frame, stats


def _converged_frame(client, fmt="raw", rounds=100):
    for _ in range(rounds):
        frame, stats = _frame_pair(client, fmt)
        render = stats["render"]
        pending = sum(c["pending"] for c in stats["cache"].values())
        if (render["wanted_missing"] == 0 and render["fallback_samples"] == 0
                and pending == 0):
            return frame, stats
    raise AssertionError("service session did not converge")


def test_ping_pong(client):
    assert client.request({"cmd": "ping"}) == (TYPE_JSON, {"cmd": "pong"})


def test_hello_reports_capabilities(client):
    _, caps = client.request({"cmd": "hello"})
    assert caps["cmd"] == "capabilities"
    assert caps["version"]
    assert "volume_raycast" in caps["pass_kinds"]
    assert set(caps["formats"]) == {"raw", "png"}
    assert set(caps["pipelines"]) == {"ea-default", "mip"}
    assert "python" in caps["backends"]


def test_load_volume_reports_metadata(client):
    _, loaded = client.request(LOAD_SMALL)
    assert loaded["cmd"] == "volume_loaded"
    assert loaded["dims"] == [32, 32, 32]
    assert loaded["dtype"] == "u8"
    assert loaded["levels"] == 1
    assert loaded["channels"] == 2
    assert loaded["timepoints"] == 2
    assert loaded["voxel_size"] == [1.0, 1.0, 1.0]


def test_frame_request_returns_frame_then_stats_with_increasing_ids(client):
    _prepare(client)
    frame1, stats1 = _frame_pair(client)
    frame2, stats2 = _frame_pair(client)
    assert frame1["width"] == 24 and frame1["height"] == 16
    assert frame1["format"] == FORMAT_RAW
    assert len(frame1["pixels"]) == 24 * 16 * 4
    assert frame2["frame_id"] == frame1["frame_id"] + 1
    assert stats1["frame_id"] == frame1["frame_id"]
    assert stats2["frame_id"] == frame2["frame_id"]


def test_png_frame_decodes_to_the_raw_pixels(client):
    PIL = pytest.importorskip("PIL.Image")
    _prepare(client)
    raw, _ = _converged_frame(client, "raw")
    png, _ = _converged_frame(client, "png")
    assert png["format"] == FORMAT_PNG
    assert png["pixels"][:8] == b"\x89PNG\r\n\x1a\n"
    decoded = np.asarray(PIL.open(io.BytesIO(png["pixels"])).convert("RGBA"))
    want = np.frombuffer(raw["pixels"], np.uint8).reshape(16, 24, 4)
    assert np.array_equal(decoded, want)


def test_unknown_frame_format_rejected(client):
    _prepare(client)
    _, err = client.request({"cmd": "request_frame", "format": "jpeg"})
    assert err["cmd"] == "error" and err["in_reply_to"] == "request_frame"


def test_malformed_messages_get_error_replies_and_session_survives(client):
    client.send_raw(encode_message(0x7F, b"garbage"))
    msg_type, err = client.read_message()
    assert err["cmd"] == "error" and "UnknownType" in err["message"]

    client.send_raw(encode_message(TYPE_JSON, b"{broken"))
    _, err = client.read_message()
    assert err["cmd"] == "error" and "InvalidJson" in err["message"]

    client.send_raw(encode_message(TYPE_JSON, b'["not an object"]'))
    _, err = client.read_message()
    assert err["cmd"] == "error"

    # Client-to-server frame messages are rejected but not fatal.
    client.send_raw(encode_message(TYPE_FRAME, b"\x00" * 20))
    _, err = client.read_message()
    assert "server-to-client" in err["message"]

    assert client.request({"cmd": "ping"})[1] == {"cmd": "pong"}


def test_unknown_command_reports_in_reply_to(client):
    _, err = client.request({"cmd": "warp_drive"})
    assert err["cmd"] == "error" and err["in_reply_to"] == "warp_drive"
    _, err = client.request({"no_cmd_key": 1})
    assert err["cmd"] == "error"


def test_command_errors_do_not_change_state(client):
    _prepare(client)
    base, _ = _converged_frame(client)
    for bad in [{"cmd": "set_camera", "position": [0, 0, 9], "target": [0, 0, 0],
                 "fov": 500},
                {"cmd": "set_settings", "width": 0},
                {"cmd": "set_timepoint", "t": 99},
                {"cmd": "set_channel", "c": -1},
                {"cmd": "set_transfer_function",
                 "points": [{"x": 0.0, "rgba": [0, 0, 0, 0]},
                            {"x": 0.5, "rgba": [1, 1, 1, 1]}]},
                {"cmd": "set_pipeline", "name": "bloom"},
                {"cmd": "load_volume"}]:
        _, err = client.request(bad)
        assert err["cmd"] == "error", bad
        assert err["in_reply_to"] == bad["cmd"]
    after, _ = _frame_pair(client)
    assert after["pixels"] == base["pixels"]


def test_invalid_pipeline_swap_keeps_frames_identical(client):
    _prepare(client)
    base, _ = _converged_frame(client)
    bad = {"cmd": "set_pipeline", "pipeline": {"passes": [
        {"name": "a", "kind": "clear", "output": "x"},
        {"name": "b", "kind": "clear", "output": "x"},
        {"name": "c", "kind": "clear", "output": "display"},
    ]}}
    _, err = client.request(bad)
    assert err["cmd"] == "error" and "DuplicateOutput" in err["message"]
    unchanged, _ = _frame_pair(client)
    assert unchanged["pixels"] == base["pixels"]

    _, ok = client.request({"cmd": "set_pipeline", "name": "mip"})
    assert ok == {"cmd": "ok", "of": "set_pipeline", "pipeline": "mip"}
    swapped, _ = _converged_frame(client)
    assert swapped["pixels"] != base["pixels"]


def test_scene_commands_change_the_image(client):
    _prepare(client)
    base, _ = _converged_frame(client)

    assert client.request({"cmd": "set_camera", "position": [40, 25, 40],
                           "target": [0, 0, 0], "fov": 30})[1]["cmd"] == "ok"
    moved, _ = _converged_frame(client)
    assert moved["pixels"] != base["pixels"]

    tf_points = [{"x": 0.0, "rgba": [0, 0, 0, 0]},
                 {"x": 1.0, "rgba": [1, 0, 0, 1]}]
    assert client.request({"cmd": "set_transfer_function",
                           "points": tf_points})[1]["cmd"] == "ok"
    tinted, _ = _converged_frame(client)
    assert tinted["pixels"] != moved["pixels"]

    assert client.request({"cmd": "set_channel", "c": 1})[1]["cmd"] == "ok"
    other_channel, _ = _converged_frame(client)
    assert other_channel["pixels"] != tinted["pixels"]

    assert client.request({"cmd": "set_timepoint", "t": 1})[1]["cmd"] == "ok"
    other_time, _ = _converged_frame(client)
    assert other_time["pixels"] != other_channel["pixels"]


def test_settings_resize_reflected_in_frame_header(client):
    _prepare(client)
    assert client.request({"cmd": "set_settings", "width": 9,
                           "height": 7})[1]["cmd"] == "ok"
    frame, _ = _frame_pair(client)
    assert (frame["width"], frame["height"]) == (9, 7)
    assert len(frame["pixels"]) == 9 * 7 * 4


@pytest.mark.skipif("compiled" not in available_backends(),
                    reason="compiled kernel not built")
def test_backend_switch_is_pixel_invisible_over_the_wire(client):
    _prepare(client)
    assert client.request({"cmd": "set_settings",
                           "backend": "python"})[1]["cmd"] == "ok"
    py, _ = _converged_frame(client)
    assert client.request({"cmd": "set_settings",
                           "backend": "compiled"})[1]["cmd"] == "ok"
    comp, _ = _frame_pair(client)
    assert comp["pixels"] == py["pixels"]


def test_stats_command_reports_cache_and_frame(client):
    _prepare(client)
    _converged_frame(client)
    _, stats = client.request({"cmd": "stats"})
    assert stats["cmd"] == "stats"
    cache = stats["cache"]["volume"]
    assert 0 < cache["resident_bytes"] <= 64 << 20
    assert cache["resident_bytes"] >= cache["pinned_bytes"] > 0
    assert cache["pending"] == 0
    assert stats["frame"]["wanted_missing"] == 0
    assert stats["frame_id"] >= 1


def test_continuous_mode_streams_until_quiescent(client):
    load = {"cmd": "load_volume", "procedural": "noise:64", "cache_mb": 64}
    assert client.request(load)[1]["cmd"] == "volume_loaded"
    # 64x64 at the default camera distance selects mip level 0, which is not
    # resident after a cold load, so the first frames must use fallback data.
    size = {"cmd": "set_settings", "width": 64, "height": 64}
    assert client.request(size)[1]["cmd"] == "ok"
    # The streaming thread may emit frames before the ok reply arrives, so
    # the ok is collected inside the read loop rather than awaited up front.
    client.send_json({"cmd": "set_continuous", "on": True})
    ids = []
    ok_seen = False
    fallback_seen = False
    quiescent = False
    for _ in range(500):
        msg_type, parsed = client.read_message()
        if msg_type == TYPE_FRAME:
            ids.append(parsed["frame_id"])
        elif parsed.get("cmd") == "ok":
            ok_seen = parsed["of"] == "set_continuous" and parsed["on"] is True
        elif parsed.get("cmd") == "frame_stats":
            render = parsed["render"]
            fallback_seen |= render["fallback_samples"] > 0
            pending = sum(c["pending"] for c in parsed["cache"].values())
            quiescent = (render["wanted_missing"] == 0
                         and render["fallback_samples"] == 0 and pending == 0)
        if quiescent and ok_seen:
            break
    else:
        raise AssertionError("continuous mode never became quiescent")
    assert ok_seen
    assert fallback_seen  # the cold first frame had to fall back to level 1
    assert ids == sorted(ids) and len(set(ids)) == len(ids)
    assert len(ids) >= 2
    _, off = client.request({"cmd": "set_continuous", "on": False})
    assert off["of"] == "set_continuous"


# --- WebSocket gateway -------------------------------------------------------


class WsClient:
    """Minimal RFC 6455 client: masked client frames, handshake validation."""

    def __init__(self, host, port):
        self.sock = socket.create_connection((host, port), timeout=30)
        key = base64.b64encode(os.urandom(16)).decode()
        self.sock.sendall((f"GET /stream HTTP/1.1\r\nHost: {host}:{port}\r\n"
                           "Upgrade: websocket\r\nConnection: Upgrade\r\n"
                           f"Sec-WebSocket-Key: {key}\r\n"
                           "Sec-WebSocket-Version: 13\r\n\r\n").encode())
        head = b""
        while b"\r\n\r\n" not in head:
            chunk = self.sock.recv(4096)
            assert chunk, "handshake failed"
            head += chunk
        first, rest = head.split(b"\r\n\r\n", 1)
        assert b"101" in first.split(b"\r\n")[0]
        want = base64.b64encode(hashlib.sha1(
            (key + "258EAFA5-E914-47DA-95CA-C5AB0DC85B11").encode()).digest())
        assert want in first
        self._buf = rest

    def _recv_exact(self, n):
        while len(self._buf) < n:
            chunk = self.sock.recv(1 << 16)
            if not chunk:
                raise ConnectionError("server closed")
            self._buf += chunk
        out, self._buf = self._buf[:n], self._buf[n:]
        return out

    def send_frame(self, payload, opcode=0x2):
        mask = os.urandom(4)
        n = len(payload)
        head = bytearray([0x80 | opcode])
        if n < 126:
            head.append(0x80 | n)
        elif n < 1 << 16:
            head.append(0x80 | 126)
            head += struct.pack(">H", n)
        else:
            head.append(0x80 | 127)
            head += struct.pack(">Q", n)
        body = bytes(b ^ mask[i % 4] for i, b in enumerate(payload))
        self.sock.sendall(bytes(head) + mask + body)

    def read_frame(self):
        h = self._recv_exact(2)
        opcode = h[0] & 0x0F
        length = h[1] & 0x7F
        if length == 126:
            (length,) = struct.unpack(">H", self._recv_exact(2))
        elif length == 127:
            (length,) = struct.unpack(">Q", self._recv_exact(8))
        return opcode, self._recv_exact(length) if length else b""

    def send_json(self, obj):
        self.send_frame(encode_json_payload(obj))

    def read_payload(self):
        opcode, payload = self.read_frame()
        assert opcode == 0x2, f"unexpected opcode {opcode}"
        return decode_payload(payload)

    def close(self):
        self.sock.close()


def test_websocket_gateway_speaks_the_same_protocol(server):
    ws = WsClient("127.0.0.1", server.ws_port)
    try:
        ws.send_json({"cmd": "ping"})
        assert ws.read_payload() == (TYPE_JSON, {"cmd": "pong"})

        ws.send_json(LOAD_SMALL)
        msg_type, loaded = ws.read_payload()
        assert loaded["cmd"] == "volume_loaded"
        ws.send_json(SMALL_SIZE)
        assert ws.read_payload()[1]["cmd"] == "ok"

        ws.send_json({"cmd": "request_frame", "format": "png"})
        msg_type, frame = ws.read_payload()
        assert msg_type == TYPE_FRAME
        assert frame["width"] == 24 and frame["height"] == 16
        assert frame["pixels"][:8] == b"\x89PNG\r\n\x1a\n"
        assert ws.read_payload()[1]["cmd"] == "frame_stats"
    finally:
        ws.close()


def test_websocket_control_frames_and_bad_input(server):
    ws = WsClient("127.0.0.1", server.ws_port)
    try:
        # RFC ping is answered with a pong carrying the same payload.
        ws.send_frame(b"echo-me", opcode=0x9)
        assert ws.read_frame() == (0xA, b"echo-me")

        # Text frames are not part of the protocol.
        ws.send_frame(b'{"cmd":"ping"}', opcode=0x1)
        _, err = ws.read_payload()
        assert err["cmd"] == "error" and "binary" in err["message"]

        # Malformed binary payloads get error replies, session survives.
        ws.send_frame(b"\x99whatever")
        _, err = ws.read_payload()
        assert err["cmd"] == "error"
        ws.send_json({"cmd": "ping"})
        assert ws.read_payload() == (TYPE_JSON, {"cmd": "pong"})

        # Close handshake is answered.
        ws.send_frame(b"", opcode=0x8)
        assert ws.read_frame()[0] == 0x8
    finally:
        ws.close()


def test_in_process_session_replies_without_sockets():
    sent = []
    session = Session(sent.append)
    session.handle_message(*decode_payload(encode_json_payload({"cmd": "ping"})))
    assert decode_payload(sent[-1]) == (TYPE_JSON, {"cmd": "pong"})
    session.handle_message(None, ValueError("boom"))
    assert decode_payload(sent[-1])[1]["cmd"] == "error"
    session.handle_message(TYPE_JSON, {"cmd": "hello"})
    assert decode_payload(sent[-1])[1]["cmd"] == "capabilities"
    session.close()


def test_session_quiescence_probe_tracks_dirty_state():
    sent = []
    session = Session(sent.append)
    assert session._needs_frame()  # new sessions must render once
    session.handle_message(TYPE_JSON, dict(LOAD_SMALL))
    session.handle_message(TYPE_JSON, dict(SMALL_SIZE))
    session.handle_message(TYPE_JSON, {"cmd": "request_frame"})
    for _ in range(50):
        if not session._needs_frame():
            break
        session.handle_message(TYPE_JSON, {"cmd": "request_frame"})
    assert not session._needs_frame()
    session.handle_message(TYPE_JSON, {"cmd": "set_channel", "c": 1})
    assert session._needs_frame()  # scene change re-dirties the session
    session.close()
