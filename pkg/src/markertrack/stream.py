"""Frame streaming over TCP as newline-delimited frame-log lines.

:class:`ServeSession` replays a frame source at a fixed rate to every
connected client.  Each client has its own bounded queue drained by a
writer thread; a client whose queue fills up is disconnected and the
others carry on.  :func:`client_frames` connects, parses lines into
frames, skips malformed lines and reconnects with a fixed backoff.
"""
from __future__ import annotations

import logging
import queue
import socket
import threading
import time
from typing import Iterable, Iterator, Optional

from pydantic import BaseModel, NonNegativeInt, PositiveFloat, PositiveInt, field_validator

from ._schema import STRICT
from .frames import FrameParseError, FrameValidationError, MarkerFrame, parse_frame, serialize_frame

log = logging.getLogger(__name__)

# default VRPN port
DEFAULT_PORT = 3883
DEFAULT_RATE_HZ = 100.0


class EndpointError(OSError):
    pass


def parse_endpoint(endpoint: str) -> tuple[str, int]:
    host, sep, port = endpoint.rpartition(":")
    if not sep or not port.isdigit() or int(port) > 65535:
        raise ValueError(f"endpoint must look like host:port, got {endpoint!r}")
    return host or "127.0.0.1", int(port)


class StreamConfig(BaseModel):
    model_config = STRICT

    endpoint: str = f"127.0.0.1:{DEFAULT_PORT}"
    # None replays at DEFAULT_RATE_HZ, or at the engine's frame interval
    rate_hz: Optional[PositiveFloat] = None
    reconnect_backoff_ms: NonNegativeInt = 500
    # lines queued per client before it counts as too slow
    send_buffer_lines: PositiveInt = 4096
    connect_timeout_s: PositiveFloat = 2.0

    @field_validator("endpoint")
    @classmethod
    def _endpoint(cls, v: str) -> str:
        parse_endpoint(v)
        return v


_EOS = None


class _Client:
    def __init__(self, conn: socket.socket, addr, maxsize: int):
        self.conn = conn
        self.addr = addr
        self.q: queue.Queue = queue.Queue(maxsize)
        self.alive = True
        self.thread = threading.Thread(target=self._drain, daemon=True)

    def _drain(self):
        try:
            while True:
                data = self.q.get()
                if data is _EOS or not self.alive:
                    break
                self.conn.sendall(data)
        except OSError as e:
            log.info("client %s dropped: %s", self.addr, e)
        finally:
            self.alive = False
            try:
                self.conn.shutdown(socket.SHUT_RDWR)
            except OSError:
                pass
            self.conn.close()

    def offer(self, data: Optional[bytes]) -> bool:
        try:
            self.q.put_nowait(data)
            return True
        except queue.Full:
            return False

    def kick(self):
        self.alive = False
        # unblock the writer even when the queue is full
        try:
            self.conn.shutdown(socket.SHUT_RDWR)
        except OSError:
            pass
        try:
            self.q.put_nowait(_EOS)
        except queue.Full:
            pass


class ServeSession:
    """A running replay server.

    Replay starts once ``min_clients`` clients are connected (immediately
    for 0).  Use as a context manager or call :meth:`close`.
    """

    def __init__(self, frames: Iterable[MarkerFrame], cfg: StreamConfig = StreamConfig(), min_clients: int = 0):
        self.cfg = cfg
        self.frames_sent = 0
        self.clients_dropped = 0
        self._frames = frames
        self._min_clients = min_clients
        self._clients: list[_Client] = []
        self._lock = threading.Lock()
        self._joined = threading.Condition(self._lock)
        self._stop = threading.Event()
        self._done = threading.Event()
        host, port = parse_endpoint(cfg.endpoint)
        try:
            self._sock = socket.create_server((host, port), reuse_port=False)
        except OSError as e:
            raise EndpointError(f"cannot listen on {cfg.endpoint}: {e}") from e
        self._sock.settimeout(0.1)
        self.address = self._sock.getsockname()[:2]
        self._acceptor = threading.Thread(target=self._accept_loop, daemon=True)
        self._pacer = threading.Thread(target=self._replay, daemon=True)
        self._acceptor.start()
        self._pacer.start()

    @property
    def endpoint(self) -> str:
        return f"{self.address[0]}:{self.address[1]}"

    def _accept_loop(self):
        while not self._stop.is_set():
            try:
                conn, addr = self._sock.accept()
            except socket.timeout:
                continue
            except OSError:
                break
            conn.setsockopt(socket.IPPROTO_TCP, socket.TCP_NODELAY, 1)
            c = _Client(conn, addr, self.cfg.send_buffer_lines)
            with self._lock:
                if self._done.is_set():
                    c.offer(_EOS)
                self._clients.append(c)
                self._joined.notify_all()
            c.thread.start()

    def wait_for_clients(self, n: int, timeout: Optional[float] = None) -> bool:
        with self._lock:
            return self._joined.wait_for(lambda: len(self._clients) >= n or self._stop.is_set(), timeout)

    def _broadcast(self, data: Optional[bytes]):
        with self._lock:
            for c in self._clients:
                if c.alive and not c.offer(data):
                    log.warning("client %s fell %d lines behind; disconnecting", c.addr, self.cfg.send_buffer_lines)
                    self.clients_dropped += 1
                    c.kick()

    def _replay(self):
        try:
            if self._min_clients:
                self.wait_for_clients(self._min_clients)
            period = 1.0 / (self.cfg.rate_hz or DEFAULT_RATE_HZ)
            start = time.monotonic()
            for k, f in enumerate(self._frames):
                if self._stop.is_set():
                    break
                delay = start + k * period - time.monotonic()
                if delay > 0 and self._stop.wait(delay):
                    break
                self._broadcast((serialize_frame(f) + "\n").encode())
                self.frames_sent += 1
        finally:
            with self._lock:
                self._done.set()
            self._broadcast(_EOS)

    def join(self, timeout: Optional[float] = None) -> bool:
        """Wait for the replay to finish and every client to be flushed."""
        deadline = None if timeout is None else time.monotonic() + timeout
        self._pacer.join(timeout)
        with self._lock:
            clients = list(self._clients)
        for c in clients:
            left = None if deadline is None else max(0.0, deadline - time.monotonic())
            c.thread.join(left)
        return self._done.is_set() and not any(c.thread.is_alive() for c in clients)

    def close(self) -> int:
        """Stop serving; returns the number of frames sent."""
        with self._lock:
            self._stop.set()
            self._joined.notify_all()
        self._pacer.join()
        self._sock.close()
        self._acceptor.join()
        with self._lock:
            clients = list(self._clients)
        for c in clients:
            c.thread.join(1.0)
            if c.thread.is_alive():
                c.kick()
        return self.frames_sent

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()


def serve(frames: Iterable[MarkerFrame], cfg: StreamConfig = StreamConfig(), min_clients: int = 0) -> ServeSession:
    return ServeSession(frames, cfg, min_clients)


def _lines(sock: socket.socket, stop: threading.Event) -> Iterator[bytes]:
    """Complete lines from ``sock``; a trailing partial line is dropped."""
    buf = b""
    while not stop.is_set():
        try:
            chunk = sock.recv(65536)
        except socket.timeout:
            continue
        except OSError as e:
            log.info("connection lost: %s", e)
            chunk = b""
        if not chunk:
            if buf:
                log.warning("discarding %d bytes of partial line at disconnect", len(buf))
            return
        buf += chunk
        *lines, buf = buf.split(b"\n")
        yield from lines


def client_frames(
    cfg: StreamConfig = StreamConfig(),
    stop: Optional[threading.Event] = None,
    max_reconnects: Optional[int] = None,
) -> Iterator[MarkerFrame]:
    """Frames from a server in arrival order.

    On disconnect or connection failure the client waits
    ``reconnect_backoff_ms`` and tries again, at most ``max_reconnects``
    times (forever if None), until ``stop`` is set.
    """
    stop = stop or threading.Event()
    host, port = parse_endpoint(cfg.endpoint)
    attempts = 0
    while not stop.is_set():
        try:
            sock = socket.create_connection((host, port), timeout=cfg.connect_timeout_s)
        except OSError as e:
            log.info("connect to %s failed: %s", cfg.endpoint, e)
        else:
            with sock:
                sock.settimeout(0.1)
                for line in _lines(sock, stop):
                    if not line.strip():
                        continue
                    try:
                        yield parse_frame(line.decode("utf-8"))
                    except (FrameParseError, FrameValidationError, UnicodeDecodeError) as e:
                        log.warning("skipping malformed line: %s", e)
        if max_reconnects is not None and attempts >= max_reconnects:
            return
        attempts += 1
        if stop.wait(cfg.reconnect_backoff_ms / 1000.0):
            return
