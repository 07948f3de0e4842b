"""Network endpoint for the tick loop: one thread, two bounded queues.

The simulation side never touches sockets. It drains poll() for inbound
messages (each stamped with a receipt time) and pushes outbound messages
with broadcast(); everything else (accepting clients, the upgrade
handshake, framing, malformed-input Error replies) happens on the single
network thread. Outbound queues are bounded per client with drop-oldest,
so a slow or stalled client can never block or balloon the tick loop.
"""

from __future__ import annotations

import collections
import queue
import selectors
import socket
import threading
import time

from gncbench.protocol import (
    OP_CLOSE, OP_PING, OP_PONG, OP_TEXT, Error, FrameDecoder, FrameError,
    HandshakeError, ProtocolError, decode_message, encode_close, encode_frame,
    encode_message, encode_text, server_handshake,
)

INBOUND_MAX = 256
OUTBOUND_MAX = 64


class _Client:
    def __init__(self, sock):
        self.sock = sock
        self.handshaken = False
        self.request = bytearray()
        self.decoder = FrameDecoder(require_mask=True)
        self.sendbuf = bytearray()
        self.pending = collections.deque(maxlen=OUTBOUND_MAX)  # drop-oldest


class WireServer:
    """Bounded-queue WebSocket endpoint owned by a single network thread."""

    def __init__(self, port: int, host: str = "127.0.0.1"):
        self.host = host
        self.port = port
        self.inbound: queue.Queue = queue.Queue(maxsize=INBOUND_MAX)
        self._clients: dict[socket.socket, _Client] = {}
        self._lock = threading.Lock()
        self._listener: socket.socket | None = None
        self._thread: threading.Thread | None = None
        self._running = False
        # wakeup pipe so broadcast() can rouse the selector from another thread
        self._wake_r, self._wake_w = socket.socketpair()
        self._wake_r.setblocking(False)

    # -- simulation-side API --

    def start(self) -> None:
        """Bind and serve; raises OSError if the port is taken."""
        listener = socket.socket(socket.AF_INET, socket.SOCK_STREAM)
        listener.setsockopt(socket.SOL_SOCKET, socket.SO_REUSEADDR, 1)
        listener.bind((self.host, self.port))
        listener.listen(4)
        listener.setblocking(False)
        self._listener = listener
        self._running = True
        self._thread = threading.Thread(target=self._serve, name="wire-server",
                                        daemon=True)
        self._thread.start()

    def stop(self) -> None:
        if not self._running:
            return
        self._running = False
        self._wake()
        if self._thread is not None:
            self._thread.join(timeout=5.0)

    @property
    def has_client(self) -> bool:
        with self._lock:
            return any(c.handshaken for c in self._clients.values())

    def poll(self) -> list:
        """Drain inbound messages as (message, receipt_monotonic) pairs."""
        out = []
        while True:
            try:
                out.append(self.inbound.get_nowait())
            except queue.Empty:
                return out

    def broadcast(self, msg) -> None:
        """Queue a message for every connected client (drop-oldest on full)."""
        text = encode_message(msg)
        with self._lock:
            for client in self._clients.values():
                if client.handshaken:
                    client.pending.append(text)
        self._wake()

    # -- network thread --

    def _wake(self) -> None:
        try:
            self._wake_w.send(b"\x00")
        except OSError:
            pass

    def _serve(self) -> None:
        sel = selectors.DefaultSelector()
        sel.register(self._listener, selectors.EVENT_READ, "listener")
        sel.register(self._wake_r, selectors.EVENT_READ, "wake")
        try:
            while self._running:
                self._update_write_interest(sel)
                for key, _ in sel.select(timeout=0.25):
                    if key.data == "listener":
                        self._accept(sel)
                    elif key.data == "wake":
                        try:
                            self._wake_r.recv(4096)
                        except OSError:
                            pass
                    else:
                        self._service(sel, key.fileobj)
        finally:
            with self._lock:
                clients = list(self._clients)
            for sock in clients:
                self._drop(sel, sock, send_close=True)
            sel.close()
            self._listener.close()
            self._wake_r.close()
            self._wake_w.close()

    def _update_write_interest(self, sel) -> None:
        with self._lock:
            for sock, client in self._clients.items():
                if client.pending and client.handshaken:
                    while client.pending:
                        client.sendbuf += encode_text(client.pending.popleft())
                events = selectors.EVENT_READ
                if client.sendbuf:
                    events |= selectors.EVENT_WRITE
                try:
                    sel.modify(sock, events, "client")
                except (KeyError, ValueError):
                    pass

    def _accept(self, sel) -> None:
        try:
            sock, _ = self._listener.accept()
        except OSError:
            return
        sock.setblocking(False)
        with self._lock:
            self._clients[sock] = _Client(sock)
        sel.register(sock, selectors.EVENT_READ, "client")

    def _service(self, sel, sock) -> None:
        with self._lock:
            client = self._clients.get(sock)
        if client is None:
            return
        try:
            data = sock.recv(65536)
        except BlockingIOError:
            data = None
        except OSError:
            self._drop(sel, sock)
            return
        if data == b"":
            self._drop(sel, sock)
            return
        if data:
            try:
                self._ingest(client, data)
            except (FrameError, HandshakeError):
                self._drop(sel, sock, send_close=True)
                return
        if client.sendbuf:
            try:
                sent = sock.send(client.sendbuf)
                del client.sendbuf[:sent]
            except BlockingIOError:
                pass
            except OSError:
                self._drop(sel, sock)

    def _ingest(self, client, data: bytes) -> None:
        if not client.handshaken:
            client.request += data
            if b"\r\n\r\n" not in client.request:
                return
            head, rest = bytes(client.request).split(b"\r\n\r\n", 1)
            client.sendbuf += server_handshake(head)
            client.handshaken = True
            client.request = bytearray()
            data = rest
            if not data:
                return
        for opcode, payload in client.decoder.feed(data):
            if opcode == OP_TEXT:
                self._dispatch(client, payload)
            elif opcode == OP_PING:
                client.sendbuf += encode_frame(OP_PONG, payload)
            elif opcode == OP_CLOSE:
                raise FrameError("client closed")

    def _dispatch(self, client, payload: bytes) -> None:
        try:
            msg = decode_message(payload.decode("utf-8"))
        except (ProtocolError, UnicodeDecodeError) as exc:
            # malformed input answers with Error but keeps the connection
            reply = Error(code="malformed", text=str(exc))
            client.sendbuf += encode_text(encode_message(reply))
            return
        entry = (msg, time.monotonic())
        try:
            self.inbound.put_nowait(entry)
        except queue.Full:
            # keep the newest command stream flowing: shed the oldest entry
            try:
                self.inbound.get_nowait()
            except queue.Empty:
                pass
            try:
                self.inbound.put_nowait(entry)
            except queue.Full:
                pass

    def _drop(self, sel, sock, send_close: bool = False) -> None:
        with self._lock:
            self._clients.pop(sock, None)
        try:
            sel.unregister(sock)
        except (KeyError, ValueError):
            pass
        if send_close:
            try:
                sock.send(encode_close())
            except OSError:
                pass
        sock.close()
