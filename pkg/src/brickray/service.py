"""Remote rendering service: TCP protocol endpoint and WebSocket gateway.

One session per connection.  A session owns a scene, a renderer, and a
block cache; JSON control messages drive it and rendered frames stream
back as binary frame messages followed by a stats message.  Malformed
input never terminates a session — it is answered with an error message.

The WebSocket gateway (RFC 6455, binary frames) carries exactly the same
payloads as the TCP endpoint minus the length prefix, so browser clients
speak the native protocol directly.
"""

from __future__ import annotations

import base64
import hashlib
import math
import socket
import struct
import threading
import time

import numpy as np

from .cache import BlockCache
from .errors import BrickrayError
from .mathutil import look_at_rotation, matrix_to_quat
from .png import encode_png
from .protocol import (FORMAT_PNG, FORMAT_RAW, TYPE_FRAME, TYPE_JSON,
                       StreamDecoder, decode_payload, encode_frame_body,
                       encode_json_payload, encode_payload)
from .render import RenderSettings, quantize_rgba8
from .render.backend import available_backends
from .rendergraph import (PASS_KINDS, PRESET_NAMES, PipelineDesc,
                          SoftwareRenderer, preset_pipeline)
from .scenegraph import Camera, Scene, Transform, VolumeRef
from .transfer import SampleFilter, TransferFunction
from .volume import open_source

VERSION = "0.1.0"
_FORMAT_CODES = {"raw": FORMAT_RAW, "png": FORMAT_PNG}
_WS_GUID = "258EAFA5-E914-47DA-95CA-C5AB0DC85B11"

DEFAULT_CACHE_MB = 256
PUMP_BUDGET = 256  # blocks loaded per rendered frame


class Session:
    """State and command dispatch for one connected client."""

    def __init__(self, send_payload):
        self._send_payload = send_payload
        self._lock = threading.RLock()
        self.scene = Scene()
        self.camera = Camera()
        self.camera_node = self.scene.add(self.camera, name="camera")
        self.renderer = SoftwareRenderer()
        self.settings = RenderSettings(width=512, height=512)
        self.caches = {}
        self.source = None
        self.vref = None
        self.volume_node = None
        self.frame_id = 0
        self.last_format = FORMAT_RAW
        self.last_stats = None
        self.last_wanted = 0
        self.last_fallback = 0
        self.dirty = True
        self._camera_user_set = False
        self._continuous = False
        self._cont_thread = None
        self.closed = False
        self._set_camera_pose((0.0, 0.0, 4.0), (0.0, 0.0, 0.0), (0.0, 1.0, 0.0))

    # -- message plumbing ----------------------------------------------------

    def send_json(self, obj) -> None:
        self._send_payload(encode_json_payload(obj))

    def send_error(self, message: str, in_reply_to=None) -> None:
        err = {"cmd": "error", "message": str(message)}
        if in_reply_to:
            err["in_reply_to"] = in_reply_to
        self.send_json(err)

    def handle_message(self, msg_type, parsed) -> None:
        """Entry point for decoded payloads ((None, exc) for malformed ones)."""
        if msg_type is None:
            self.send_error(f"{type(parsed).__name__}: {parsed}")
            return
        if msg_type == TYPE_FRAME:
            self.send_error("frame messages are server-to-client only")
            return
        if msg_type == TYPE_JSON:
            if not isinstance(parsed, dict) or "cmd" not in parsed:
                self.send_error("control message must be an object with 'cmd'")
                return
            self.dispatch(parsed)

    def dispatch(self, msg: dict) -> None:
        cmd = msg["cmd"]
        handler = getattr(self, f"_cmd_{cmd}", None)
        if handler is None:
            self.send_error(f"unknown command '{cmd}'", in_reply_to=cmd)
            return
        try:
            handler(msg)
        except (BrickrayError, KeyError, ValueError, TypeError, OSError) as exc:
            self.send_error(f"{type(exc).__name__}: {exc}", in_reply_to=cmd)
        except Exception as exc:  # never terminate the session
            self.send_error(f"internal error: {type(exc).__name__}: {exc}",
                            in_reply_to=cmd)

    def close(self) -> None:
        with self._lock:
            self.closed = True
            self._continuous = False
        if self._cont_thread is not None:
            self._cont_thread.join(timeout=5.0)
        if self.source is not None:
            self.source.close()
            self.source = None

    # -- commands -------------------------------------------------------------

    def _cmd_ping(self, msg):
        self.send_json({"cmd": "pong"})

    def _cmd_hello(self, msg):
        self.send_json({
            "cmd": "capabilities",
            "version": VERSION,
            "pass_kinds": list(PASS_KINDS),
            "formats": list(_FORMAT_CODES),
            "pipelines": list(PRESET_NAMES),
            "backends": available_backends(),
        })

    def _cmd_load_volume(self, msg):
        if "path" in msg:
            spec = msg["path"]
        elif "procedural" in msg:
            spec = "procedural:" + msg["procedural"]
        else:
            raise ValueError("load_volume needs 'path' or 'procedural'")
        cache_bytes = int(msg.get("cache_mb", DEFAULT_CACHE_MB)) * (1 << 20)
        source, meta = open_source(spec)
        try:
            cache = BlockCache(source, cache_bytes)
        except Exception:
            source.close()
            raise
        with self._lock:
            if self.source is not None:
                self.source.close()
            if self.volume_node is not None:
                self.scene.remove(self.volume_node)
            self.source = source
            self.caches = {"volume": cache}
            self.vref = VolumeRef(pyramid_id="volume")
            center = np.asarray(meta.dims0, np.float64) * np.asarray(
                meta.voxel_size, np.float64) / 2.0
            self.volume_node = self.scene.add(
                self.vref, name="volume",
                transform=Transform(translation=tuple(-center)))
            if not self._camera_user_set:
                distance = 2.0 * float(max(center)) * 2.0
                self._set_camera_pose((0.0, 0.0, distance), (0.0, 0.0, 0.0),
                                      (0.0, 1.0, 0.0))
            self.dirty = True
        self.send_json({
            "cmd": "volume_loaded",
            "dims": [int(d) for d in meta.dims0],
            "dtype": meta.dtype,
            "block_size": meta.block_size,
            "levels": meta.levels,
            "channels": meta.channels,
            "timepoints": meta.timepoints,
            "voxel_size": [float(v) for v in meta.voxel_size],
        })

    def _set_camera_pose(self, position, target, up):
        rot = look_at_rotation(np.asarray(position, np.float64),
                               np.asarray(target, np.float64),
                               np.asarray(up, np.float64))
        node = self.scene.nodes[self.camera_node]
        node.transform = Transform(translation=tuple(float(p) for p in position),
                                   rotation=tuple(matrix_to_quat(rot)))

    def _cmd_set_camera(self, msg):
        fov = None
        if "fov" in msg:
            fov = math.radians(float(msg["fov"]))
            if not 0.0 < fov < math.pi:
                raise ValueError("fov must be in (0, 180) degrees")
        with self._lock:
            self._set_camera_pose(msg["position"], msg["target"],
                                  msg.get("up", (0.0, 1.0, 0.0)))
            if fov is not None:
                self.camera.fov_y = fov
            self._camera_user_set = True
            self.dirty = True
        self.send_json({"cmd": "ok", "of": "set_camera"})

    def _cmd_set_transfer_function(self, msg):
        tf = TransferFunction.from_json({"points": msg["points"]})
        with self._lock:
            if self.vref is None:
                raise ValueError("no volume loaded")
            self.scene.transfer_functions["tf"] = tf
            self.vref.transfer_function_id = "tf"
            self.dirty = True
        self.send_json({"cmd": "ok", "of": "set_transfer_function"})

    def _cmd_set_timepoint(self, msg):
        t = int(msg["t"])
        with self._lock:
            if self.vref is None:
                raise ValueError("no volume loaded")
            meta = self.caches["volume"].meta
            if not 0 <= t < meta.timepoints:
                raise ValueError(f"timepoint {t} outside [0, {meta.timepoints})")
            self.vref.timepoint = t
            self.dirty = True
        self.send_json({"cmd": "ok", "of": "set_timepoint"})

    def _cmd_set_channel(self, msg):
        c = int(msg["c"])
        with self._lock:
            if self.vref is None:
                raise ValueError("no volume loaded")
            meta = self.caches["volume"].meta
            if not 0 <= c < meta.channels:
                raise ValueError(f"channel {c} outside [0, {meta.channels})")
            self.vref.channel = c
            self.dirty = True
        self.send_json({"cmd": "ok", "of": "set_channel"})

    def _cmd_set_pipeline(self, msg):
        if "name" in msg:
            desc = preset_pipeline(msg["name"])
        elif "pipeline" in msg:
            desc = PipelineDesc.from_json(msg["pipeline"])
        else:
            raise ValueError("set_pipeline needs 'name' or 'pipeline'")
        with self._lock:
            self.renderer.swap_pipeline(desc)  # invalid -> raises, old kept
            self.dirty = True
        self.send_json({"cmd": "ok", "of": "set_pipeline",
                        "pipeline": desc.name})

    def _cmd_set_settings(self, msg):
        with self._lock:
            s = self.settings
            new = RenderSettings(
                width=int(msg.get("width", s.width)),
                height=int(msg.get("height", s.height)),
                step=float(msg.get("step", s.step)),
                fixed_lod=(None if msg.get("fixed_lod", s.fixed_lod) is None
                           else int(msg.get("fixed_lod", s.fixed_lod))),
                threads=int(msg.get("threads", s.threads)),
                sample_filter=(SampleFilter.parse(msg["filter"])
                               if "filter" in msg else s.sample_filter),
                backend=msg.get("backend", s.backend),
            )
            self.settings = new
            self.dirty = True
        self.send_json({"cmd": "ok", "of": "set_settings"})

    def _cmd_request_frame(self, msg):
        fmt_name = msg.get("format", "raw")
        if fmt_name not in _FORMAT_CODES:
            raise ValueError(f"unknown frame format '{fmt_name}'")
        self.render_and_send(_FORMAT_CODES[fmt_name])

    def _cmd_set_continuous(self, msg):
        on = bool(msg["on"])
        with self._lock:
            if on and not self._continuous:
                self._continuous = True
                self._cont_thread = threading.Thread(
                    target=self._continuous_loop, daemon=True)
                self._cont_thread.start()
            elif not on:
                self._continuous = False
        self.send_json({"cmd": "ok", "of": "set_continuous", "on": on})

    def _cmd_stats(self, msg):
        with self._lock:
            cache_stats = {name: c.stats().as_dict()
                           for name, c in self.caches.items()}
            frame_stats = self.last_stats.as_dict() if self.last_stats else None
        self.send_json({"cmd": "stats", "cache": cache_stats,
                        "frame": frame_stats, "frame_id": self.frame_id})

    # -- rendering ------------------------------------------------------------

    def render_and_send(self, fmt: int) -> None:
        with self._lock:
            display, _buffers, stats, _depth = self.renderer.render_frame(
                self.scene, self.caches, self.settings)
            for cache in self.caches.values():
                cache.pump_loads(PUMP_BUDGET)
            self.frame_id += 1
            fid = self.frame_id
            self.last_stats = stats
            self.last_wanted = stats.wanted_missing
            self.last_fallback = stats.fallback_samples
            self.last_format = fmt
            self.dirty = False
            rgba8 = quantize_rgba8(display)
            cache_stats = {name: c.stats().as_dict()
                           for name, c in self.caches.items()}
        if fmt == FORMAT_PNG:
            pixels = encode_png(rgba8)
        else:
            pixels = rgba8.tobytes()
        body = encode_frame_body(rgba8.shape[1], rgba8.shape[0], fid, fmt, pixels)
        self._send_payload(encode_payload(TYPE_FRAME, body))
        self.send_json({"cmd": "frame_stats", "frame_id": fid,
                        "render": stats.as_dict(), "cache": cache_stats})

    def _needs_frame(self) -> bool:
        if self.dirty or self.last_wanted > 0 or self.last_fallback > 0:
            return True
        return any(c.stats().pending > 0 for c in self.caches.values())

    def _continuous_loop(self) -> None:
        while True:
            with self._lock:
                if not self._continuous or self.closed:
                    return
                need = self._needs_frame()
                fmt = self.last_format
            if need:
                try:
                    self.render_and_send(fmt)
                except (BrickrayError, ValueError, OSError) as exc:
                    self.send_error(f"continuous render failed: {exc}")
                    time.sleep(0.1)
            else:
                time.sleep(0.01)


# -----------------------------------------------------------------------------
# Transports


def _tcp_session_loop(conn: socket.socket) -> None:
    send_lock = threading.Lock()

    def send_payload(payload: bytes) -> None:
        with send_lock:
            conn.sendall(struct.pack(">I", len(payload)) + payload)

    session = Session(send_payload)
    decoder = StreamDecoder()
    try:
        while True:
            try:
                data = conn.recv(1 << 16)
            except OSError:
                break
            if not data:
                break
            for msg_type, parsed in decoder.feed(data):
                session.handle_message(msg_type, parsed)
    finally:
        session.close()
        conn.close()


def _ws_accept_key(key: str) -> str:
    digest = hashlib.sha1((key + _WS_GUID).encode("ascii")).digest()
    return base64.b64encode(digest).decode("ascii")


def _ws_handshake(conn: socket.socket) -> bool:
    data = b""
    while b"\r\n\r\n" not in data:
        chunk = conn.recv(4096)
        if not chunk:
            return False
        data += chunk
        if len(data) > 65536:
            return False
    head = data.split(b"\r\n\r\n", 1)[0].decode("latin-1")
    key = None
    for line in head.split("\r\n")[1:]:
        name, _, value = line.partition(":")
        if name.strip().lower() == "sec-websocket-key":
            key = value.strip()
    if key is None:
        conn.sendall(b"HTTP/1.1 400 Bad Request\r\n\r\n")
        return False
    resp = ("HTTP/1.1 101 Switching Protocols\r\n"
            "Upgrade: websocket\r\n"
            "Connection: Upgrade\r\n"
            f"Sec-WebSocket-Accept: {_ws_accept_key(key)}\r\n\r\n")
    conn.sendall(resp.encode("ascii"))
    return True


def _ws_recv_exact(conn: socket.socket, n: int) -> bytes:
    buf = b""
    while len(buf) < n:
        chunk = conn.recv(n - len(buf))
        if not chunk:
            raise ConnectionError("websocket peer closed")
        buf += chunk
    return buf


def _ws_read_frame(conn: socket.socket):
    """Returns (opcode, payload bytes) for one (unfragmented) frame."""
    header = _ws_recv_exact(conn, 2)
    opcode = header[0] & 0x0F
    masked = bool(header[1] & 0x80)
    length = header[1] & 0x7F
    if length == 126:
        (length,) = struct.unpack(">H", _ws_recv_exact(conn, 2))
    elif length == 127:
        (length,) = struct.unpack(">Q", _ws_recv_exact(conn, 8))
    if length > 1 << 27:
        raise ConnectionError("websocket frame too large")
    mask = _ws_recv_exact(conn, 4) if masked else None
    payload = _ws_recv_exact(conn, length) if length else b""
    if mask:
        payload = bytes(b ^ mask[i % 4] for i, b in enumerate(payload))
    return opcode, payload


def _ws_send_frame(conn: socket.socket, opcode: int, payload: bytes,
                   lock: threading.Lock) -> None:
    header = bytearray([0x80 | opcode])
    n = len(payload)
    if n < 126:
        header.append(n)
    elif n < 1 << 16:
        header.append(126)
        header += struct.pack(">H", n)
    else:
        header.append(127)
        header += struct.pack(">Q", n)
    with lock:
        conn.sendall(bytes(header) + payload)


def _ws_session_loop(conn: socket.socket) -> None:
    if not _ws_handshake(conn):
        conn.close()
        return
    send_lock = threading.Lock()

    def send_payload(payload: bytes) -> None:
        _ws_send_frame(conn, 0x2, payload, send_lock)

    session = Session(send_payload)
    try:
        while True:
            try:
                opcode, payload = _ws_read_frame(conn)
            except (ConnectionError, OSError):
                break
            if opcode == 0x8:  # close
                try:
                    _ws_send_frame(conn, 0x8, b"", send_lock)
                except OSError:
                    pass
                break
            if opcode == 0x9:  # ping -> pong
                _ws_send_frame(conn, 0xA, payload, send_lock)
                continue
            if opcode != 0x2:
                session.send_error("only binary websocket frames are accepted")
                continue
            try:
                msg_type, parsed = decode_payload(payload)
            except Exception as exc:
                session.handle_message(None, exc)
                continue
            session.handle_message(msg_type, parsed)
    finally:
        session.close()
        conn.close()


class VolumeServer:
    """Accept loop pair: native TCP protocol plus the WebSocket gateway."""

    def __init__(self, host: str = "127.0.0.1", port: int = 0,
                 ws_port: int | None = 0):
        self.host = host
        self._tcp = socket.socket(socket.AF_INET, socket.SOCK_STREAM)
        self._tcp.setsockopt(socket.SOL_SOCKET, socket.SO_REUSEADDR, 1)
        self._tcp.bind((host, port))
        self._tcp.listen(8)
        self.port = self._tcp.getsockname()[1]
        self._ws = None
        self.ws_port = None
        if ws_port is not None:
            self._ws = socket.socket(socket.AF_INET, socket.SOCK_STREAM)
            self._ws.setsockopt(socket.SOL_SOCKET, socket.SO_REUSEADDR, 1)
            self._ws.bind((host, ws_port))
            self._ws.listen(8)
            self.ws_port = self._ws.getsockname()[1]
        self._threads = []
        self._running = False

    def start(self) -> None:
        self._running = True
        t = threading.Thread(target=self._accept_loop,
                             args=(self._tcp, _tcp_session_loop), daemon=True)
        t.start()
        self._threads.append(t)
        if self._ws is not None:
            t = threading.Thread(target=self._accept_loop,
                                 args=(self._ws, _ws_session_loop), daemon=True)
            t.start()
            self._threads.append(t)

    def _accept_loop(self, listener: socket.socket, handler) -> None:
        while self._running:
            try:
                conn, _addr = listener.accept()
            except OSError:
                return
            threading.Thread(target=handler, args=(conn,), daemon=True).start()

    def serve_forever(self) -> None:
        self.start()
        try:
            while True:
                time.sleep(0.5)
        except KeyboardInterrupt:
            pass
        finally:
            self.shutdown()

    def shutdown(self) -> None:
        self._running = False
        self._tcp.close()
        if self._ws is not None:
            self._ws.close()


class TcpClient:
    """Small blocking client for the native protocol (tests and tooling)."""

    def __init__(self, host: str, port: int, timeout: float = 30.0):
        self.sock = socket.create_connection((host, port), timeout=timeout)
        self._decoder = StreamDecoder()
        self._inbox = []

    def send_json(self, obj) -> None:
        payload = encode_json_payload(obj)
        self.sock.sendall(struct.pack(">I", len(payload)) + payload)

    def send_raw(self, data: bytes) -> None:
        self.sock.sendall(data)

    def request(self, obj):
        """Send a control message and return the next decoded reply."""
        self.send_json(obj)
        return self.read_message()

    def read_message(self):
        """Next decoded (type, parsed) message, blocking."""
        while not self._inbox:
            data = self.sock.recv(1 << 16)
            if not data:
                raise ConnectionError("server closed connection")
            self._inbox.extend(self._decoder.feed(data))
        return self._inbox.pop(0)

    def read_until(self, cmd: str, limit: int = 1000):
        """Skip messages until a JSON control message with cmd == `cmd`."""
        for _ in range(limit):
            msg_type, parsed = self.read_message()
            if msg_type == TYPE_JSON and isinstance(parsed, dict) \
                    and parsed.get("cmd") == cmd:
                return parsed
        raise TimeoutError(f"no '{cmd}' message within {limit} messages")

    def close(self) -> None:
        self.sock.close()
