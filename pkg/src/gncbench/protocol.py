"""Wire protocol: tagged JSON messages over WebSocket text frames.

Message layer: every message is one JSON object with a "tag" field naming
the variant; unknown tags and unknown fields are rejected so both ends fail
loudly on drift. Field order inside a frame is fixed by the encoders here
and documented in docs/protocol.md.

Transport layer: a minimal RFC 6455 implementation over plain sockets:
HTTP upgrade handshake, text/close/ping/pong frames, client-side masking.
Only unfragmented messages are supported; a frame is one message
(self-delimiting). Browser WebSocket clients interoperate directly.
"""

from __future__ import annotations

import base64
import hashlib
import json
import math
import os
import socket
from dataclasses import dataclass

WS_GUID = "258EAFA5-E914-47DA-95CA-C5AB0DC85B11"

OP_TEXT = 0x1
OP_CLOSE = 0x8
OP_PING = 0x9
OP_PONG = 0xA

MODES = ("teach", "repeat", "idle")
TEACH_ACTIONS = ("start", "stop", "save")


class ProtocolError(ValueError):
    """Malformed message: bad JSON, unknown tag, or invalid fields."""


class HandshakeError(ConnectionError):
    """HTTP upgrade request or response is not a valid WebSocket handshake."""


class FrameError(ConnectionError):
    """Byte stream violates the framing rules."""


# --- message layer ---------------------------------------------------------


@dataclass(frozen=True)
class Command:
    """Teleop actuation request; saturated and timestamped on receipt."""

    u: tuple

    def __post_init__(self):
        u = tuple(float(v) for v in self.u)
        if len(u) != 3 or not all(math.isfinite(v) for v in u):
            raise ProtocolError("Command.u must hold 3 finite floats")
        object.__setattr__(self, "u", u)


@dataclass(frozen=True)
class StateUpdate:
    t: float
    pose: tuple       # estimated (x, y, psi)
    mu: tuple         # filter mean, 6 floats
    diag_sigma: tuple  # posterior variance diagonal, 6 floats

    def __post_init__(self):
        object.__setattr__(self, "t", float(self.t))
        for name, dim in (("pose", 3), ("mu", 6), ("diag_sigma", 6)):
            v = tuple(float(x) for x in getattr(self, name))
            if len(v) != dim:
                raise ProtocolError(f"StateUpdate.{name} must hold {dim} floats")
            object.__setattr__(self, name, v)


@dataclass(frozen=True)
class TeachControl:
    action: str
    name: str | None = None

    def __post_init__(self):
        if self.action not in TEACH_ACTIONS:
            raise ProtocolError(f"TeachControl.action must be one of "
                                f"{TEACH_ACTIONS}, got {self.action!r}")
        if self.action == "save":
            if not isinstance(self.name, str) or not self.name:
                raise ProtocolError("TeachControl save needs a non-empty name")
        elif self.name is not None:
            raise ProtocolError("TeachControl.name only applies to save")


@dataclass(frozen=True)
class ModeSwitch:
    mode: str
    trajectory: str | None = None

    def __post_init__(self):
        if self.mode not in MODES:
            raise ProtocolError(f"ModeSwitch.mode must be one of {MODES}, "
                                f"got {self.mode!r}")
        if self.mode == "repeat":
            if not isinstance(self.trajectory, str) or not self.trajectory:
                raise ProtocolError("ModeSwitch to repeat needs a trajectory name")
        elif self.trajectory is not None:
            raise ProtocolError("ModeSwitch.trajectory only applies to repeat")


@dataclass(frozen=True)
class Ack:
    code: str
    text: str = ""
    t: float | None = None   # tick time of emission, when a runtime replies


@dataclass(frozen=True)
class Error:
    code: str
    text: str = ""
    t: float | None = None


def encode_message(msg) -> str:
    """Serialize a message dataclass to its wire JSON (fixed field order)."""
    if isinstance(msg, Command):
        doc = {"tag": "Command", "u": list(msg.u)}
    elif isinstance(msg, StateUpdate):
        doc = {"tag": "StateUpdate", "t": msg.t, "pose": list(msg.pose),
               "mu": list(msg.mu), "diagSigma": list(msg.diag_sigma)}
    elif isinstance(msg, TeachControl):
        doc = {"tag": "TeachControl", "action": msg.action}
        if msg.name is not None:
            doc["name"] = msg.name
    elif isinstance(msg, ModeSwitch):
        doc = {"tag": "ModeSwitch", "mode": msg.mode}
        if msg.trajectory is not None:
            doc["trajectory"] = msg.trajectory
    elif isinstance(msg, Ack):
        doc = {"tag": "Ack", "code": msg.code, "text": msg.text}
        if msg.t is not None:
            doc["t"] = msg.t
    elif isinstance(msg, Error):
        doc = {"tag": "Error", "code": msg.code, "text": msg.text}
        if msg.t is not None:
            doc["t"] = msg.t
    else:
        raise ProtocolError(f"not a wire message: {type(msg).__name__}")
    return json.dumps(doc, separators=(",", ":"))


_FIELDS = {
    "Command": ({"u"}, set()),
    "StateUpdate": ({"t", "pose", "mu", "diagSigma"}, set()),
    "TeachControl": ({"action"}, {"name"}),
    "ModeSwitch": ({"mode"}, {"trajectory"}),
    "Ack": ({"code"}, {"text", "t"}),
    "Error": ({"code"}, {"text", "t"}),
}


def decode_message(text: str):
    """Parse one wire JSON message; raises ProtocolError on anything off."""
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ProtocolError(f"unparseable message: {exc}") from exc
    if not isinstance(doc, dict) or "tag" not in doc:
        raise ProtocolError("message must be an object with a 'tag' field")
    tag = doc["tag"]
    if tag not in _FIELDS:
        raise ProtocolError(f"unknown message tag {tag!r}")
    required, optional = _FIELDS[tag]
    fields = set(doc) - {"tag"}
    if fields - required - optional:
        raise ProtocolError(
            f"{tag}: unknown fields {sorted(fields - required - optional)}")
    if required - fields:
        raise ProtocolError(f"{tag}: missing fields {sorted(required - fields)}")
    try:
        if tag == "Command":
            return Command(u=tuple(doc["u"]))
        if tag == "StateUpdate":
            return StateUpdate(t=doc["t"], pose=tuple(doc["pose"]),
                               mu=tuple(doc["mu"]),
                               diag_sigma=tuple(doc["diagSigma"]))
        if tag == "TeachControl":
            return TeachControl(action=doc["action"], name=doc.get("name"))
        if tag == "ModeSwitch":
            return ModeSwitch(mode=doc["mode"], trajectory=doc.get("trajectory"))
        if tag == "Ack":
            return Ack(code=str(doc["code"]), text=str(doc.get("text", "")),
                       t=None if doc.get("t") is None else float(doc["t"]))
        return Error(code=str(doc["code"]), text=str(doc.get("text", "")),
                     t=None if doc.get("t") is None else float(doc["t"]))
    except (TypeError, ValueError) as exc:
        if isinstance(exc, ProtocolError):
            raise
        raise ProtocolError(f"{tag}: {exc}") from exc


# --- handshake -------------------------------------------------------------


def accept_key(client_key: str) -> str:
    digest = hashlib.sha1((client_key + WS_GUID).encode("ascii")).digest()
    return base64.b64encode(digest).decode("ascii")


def _parse_headers(block: bytes):
    try:
        text = block.decode("latin-1")
    except UnicodeDecodeError as exc:
        raise HandshakeError(f"undecodable handshake: {exc}") from exc
    lines = text.split("\r\n")
    headers = {}
    for line in lines[1:]:
        if not line:
            continue
        if ":" not in line:
            raise HandshakeError(f"malformed header line {line!r}")
        key, value = line.split(":", 1)
        headers[key.strip().lower()] = value.strip()
    return lines[0], headers


def server_handshake(request: bytes) -> bytes:
    """Validate an upgrade request; returns the 101 response to send."""
    start, headers = _parse_headers(request)
    if not start.startswith("GET "):
        raise HandshakeError(f"expected GET request, got {start!r}")
    if headers.get("upgrade", "").lower() != "websocket":
        raise HandshakeError("missing 'Upgrade: websocket' header")
    if "upgrade" not in headers.get("connection", "").lower():
        raise HandshakeError("missing 'Connection: Upgrade' header")
    key = headers.get("sec-websocket-key")
    if not key:
        raise HandshakeError("missing Sec-WebSocket-Key header")
    return (
        "HTTP/1.1 101 Switching Protocols\r\n"
        "Upgrade: websocket\r\n"
        "Connection: Upgrade\r\n"
        f"Sec-WebSocket-Accept: {accept_key(key)}\r\n"
        "\r\n"
    ).encode("ascii")


def client_handshake_request(host: str, port: int, key: str,
                             path: str = "/") -> bytes:
    return (
        f"GET {path} HTTP/1.1\r\n"
        f"Host: {host}:{port}\r\n"
        "Upgrade: websocket\r\n"
        "Connection: Upgrade\r\n"
        f"Sec-WebSocket-Key: {key}\r\n"
        "Sec-WebSocket-Version: 13\r\n"
        "\r\n"
    ).encode("ascii")


def check_handshake_response(response: bytes, key: str) -> None:
    start, headers = _parse_headers(response)
    if " 101 " not in start + " ":
        raise HandshakeError(f"expected 101 response, got {start!r}")
    if headers.get("sec-websocket-accept") != accept_key(key):
        raise HandshakeError("Sec-WebSocket-Accept mismatch")


# --- framing ---------------------------------------------------------------


def encode_frame(opcode: int, payload: bytes, mask: bool = False) -> bytes:
    """One unfragmented frame; clients must mask, servers must not."""
    head = bytearray([0x80 | opcode])
    n = len(payload)
    mask_bit = 0x80 if mask else 0x00
    if n < 126:
        head.append(mask_bit | n)
    elif n < 1 << 16:
        head.append(mask_bit | 126)
        head += n.to_bytes(2, "big")
    else:
        head.append(mask_bit | 127)
        head += n.to_bytes(8, "big")
    if mask:
        key = os.urandom(4)
        head += key
        payload = bytes(b ^ key[i % 4] for i, b in enumerate(payload))
    return bytes(head) + payload


def encode_text(text: str, mask: bool = False) -> bytes:
    return encode_frame(OP_TEXT, text.encode("utf-8"), mask)


def encode_close(mask: bool = False) -> bytes:
    return encode_frame(OP_CLOSE, b"", mask)


class FrameDecoder:
    """Incremental frame parser: feed bytes, collect (opcode, payload) pairs.

    require_mask selects the server side (client frames must be masked) vs
    the client side (server frames must not be). Fragmented messages and
    reserved bits are rejected; control frames longer than 125 bytes too.
    """

    def __init__(self, require_mask: bool):
        self.require_mask = require_mask
        self._buf = bytearray()

    def feed(self, data: bytes):
        self._buf += data
        out = []
        while True:
            frame = self._next()
            if frame is None:
                return out
            out.append(frame)

    def _next(self):
        buf = self._buf
        if len(buf) < 2:
            return None
        b0, b1 = buf[0], buf[1]
        if b0 & 0x70:
            raise FrameError("reserved bits set")
        fin = bool(b0 & 0x80)
        opcode = b0 & 0x0F
        if not fin or opcode == 0x0:
            raise FrameError("fragmented messages not supported")
        if opcode not in (OP_TEXT, OP_CLOSE, OP_PING, OP_PONG):
            raise FrameError(f"unsupported opcode {opcode:#x}")
        masked = bool(b1 & 0x80)
        if masked != self.require_mask:
            raise FrameError("mask bit does not match connection side")
        n = b1 & 0x7F
        offset = 2
        if opcode in (OP_CLOSE, OP_PING, OP_PONG) and n > 125:
            raise FrameError("oversized control frame")
        if n == 126:
            if len(buf) < offset + 2:
                return None
            n = int.from_bytes(buf[offset:offset + 2], "big")
            offset += 2
        elif n == 127:
            if len(buf) < offset + 8:
                return None
            n = int.from_bytes(buf[offset:offset + 8], "big")
            offset += 8
        key = None
        if masked:
            if len(buf) < offset + 4:
                return None
            key = bytes(buf[offset:offset + 4])
            offset += 4
        if len(buf) < offset + n:
            return None
        payload = bytes(buf[offset:offset + n])
        if key is not None:
            payload = bytes(b ^ key[i % 4] for i, b in enumerate(payload))
        del buf[:offset + n]
        return opcode, payload


# --- blocking client (tests and tooling) -----------------------------------


class WsClient:
    """Small blocking WebSocket client speaking the message layer."""

    def __init__(self, host: str, port: int, timeout: float = 5.0):
        self.sock = socket.create_connection((host, port), timeout=timeout)
        self.sock.settimeout(timeout)
        key = base64.b64encode(os.urandom(16)).decode("ascii")
        self.sock.sendall(client_handshake_request(host, port, key))
        response = b""
        while b"\r\n\r\n" not in response:
            chunk = self.sock.recv(4096)
            if not chunk:
                raise HandshakeError("connection closed during handshake")
            response += chunk
        head, rest = response.split(b"\r\n\r\n", 1)
        check_handshake_response(head, key)
        self._decoder = FrameDecoder(require_mask=False)
        self._pending = list(self._decoder.feed(rest))

    def send(self, msg) -> None:
        self.sock.sendall(encode_text(encode_message(msg), mask=True))

    def recv(self):
        """Next message, or None once the server closes the connection."""
        while True:
            while self._pending:
                opcode, payload = self._pending.pop(0)
                if opcode == OP_TEXT:
                    return decode_message(payload.decode("utf-8"))
                if opcode == OP_CLOSE:
                    return None
                if opcode == OP_PING:
                    self.sock.sendall(encode_frame(OP_PONG, payload, mask=True))
            data = self.sock.recv(4096)
            if not data:
                return None
            self._pending.extend(self._decoder.feed(data))

    def close(self) -> None:
        try:
            self.sock.sendall(encode_close(mask=True))
        except OSError:
            pass
        self.sock.close()
