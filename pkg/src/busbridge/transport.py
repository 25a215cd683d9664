"""Byte-stream channels between initiator and responder.

All channels share the same contract: ``send_all`` queues bytes for in-order
delivery, ``recv_exact`` returns exactly ``n`` bytes or raises
``DeadlineExceeded`` while keeping any partial bytes buffered for the next
call.  Loopback and TCP channels can additionally be paced by a
``LineModel`` so that UART timing can be reproduced without hardware.
"""
from __future__ import annotations

import collections
import os
import select
import socket
import stat
import threading
import time
from dataclasses import dataclass
from typing import Iterator, List, Optional, Tuple

DEFAULT_RESPONSE_DEADLINE = 0.5
DEFAULT_TCP_PORT = 7450


class ChannelClosed(Exception):
    def __init__(self, msg="channel closed", partial: int = 0):
        super().__init__(msg)
        self.partial = partial


class DeadlineExceeded(Exception):
    def __init__(self, partial: int, wanted: int):
        super().__init__(f"deadline exceeded after {partial} of {wanted} bytes")
        self.partial = partial
        self.wanted = wanted


@dataclass(frozen=True)
class LineModel:
    """Serial line pacing: ``bits_per_byte`` is start + data + stop bits."""

    baud: int = 115200
    bits_per_byte: int = 10

    @property
    def byte_time(self) -> float:
        return self.bits_per_byte / self.baud


def modeled_transaction_time(model: LineModel, request_bytes: int, response_bytes: int) -> float:
    """Seconds spent on the wire for one request/response exchange."""
    if request_bytes < 0 or response_bytes < 0:
        raise ValueError("byte counts must be non-negative")
    return (request_bytes + response_bytes) * model.bits_per_byte / model.baud


class WallClock:
    """Host monotonic time; waiting for a future instant sleeps."""

    def now(self) -> float:
        return time.perf_counter()

    def advance_to(self, t: float) -> None:
        remaining = t - time.perf_counter()
        if remaining > 0.002:
            time.sleep(remaining - 0.001)
        while time.perf_counter() < t:
            pass


class VirtualClock:
    """Modeled time that only moves when something waits on it."""

    def __init__(self, start: float = 0.0):
        self._t = start
        self._lock = threading.Lock()

    def now(self) -> float:
        return self._t

    def advance_to(self, t: float) -> None:
        with self._lock:
            if t > self._t:
                self._t = t

    def advance(self, dt: float) -> None:
        with self._lock:
            self._t += dt


class Channel:
    kind = "abstract"

    def __init__(self, read_deadline: Optional[float] = DEFAULT_RESPONSE_DEADLINE,
                 write_deadline: Optional[float] = None):
        self.read_deadline = read_deadline
        self.write_deadline = write_deadline
        self.closed = False
        self._rx = bytearray()

    # subclasses implement _send and _recv_some
    def _send(self, data: bytes) -> None:
        raise NotImplementedError

    def _recv_some(self, timeout: Optional[float], limit: int) -> bytes:
        """Return up to ``limit`` bytes, ``b""`` on timeout, raise ChannelClosed on EOF."""
        raise NotImplementedError

    def _close(self) -> None:
        pass

    def send_all(self, data) -> None:
        if self.closed:
            raise ChannelClosed()
        self._send(bytes(data))

    def recv_exact(self, n: int, deadline: Optional[float] = None) -> bytes:
        if n < 1:
            raise ValueError("n must be >= 1")
        if self.closed:
            raise ChannelClosed()
        timeout = self.read_deadline if deadline is None else deadline
        end = None if timeout is None else time.monotonic() + timeout
        while len(self._rx) < n:
            remaining = None if end is None else end - time.monotonic()
            if remaining is not None and remaining <= 0:
                raise DeadlineExceeded(len(self._rx), n)
            try:
                self._rx += self._recv_some(remaining, n - len(self._rx))
            except ChannelClosed as exc:
                raise ChannelClosed(str(exc), partial=len(self._rx)) from None
        out = bytes(self._rx[:n])
        del self._rx[:n]
        return out

    def recv_some(self, timeout: Optional[float], limit: int = 4096) -> bytes:
        """Buffered bytes first, otherwise whatever arrives within ``timeout``."""
        if self.closed:
            raise ChannelClosed()
        if self._rx:
            out = bytes(self._rx[:limit])
            del self._rx[:limit]
            return out
        return self._recv_some(timeout, limit)

    @property
    def buffered(self) -> int:
        return len(self._rx)

    def close(self) -> None:
        if not self.closed:
            self.closed = True
            self._close()

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()


class _Line:
    """One direction of an in-memory link."""

    def __init__(self, clock, model: Optional[LineModel]):
        self.clock = clock
        self.model = model
        self.queue: collections.deque = collections.deque()
        self.cond = threading.Condition()
        self.closed = False
        self.free_at = 0.0

    def put(self, data: bytes) -> None:
        with self.cond:
            if self.closed:
                raise ChannelClosed("peer closed")
            now = self.clock.now()
            for b in data:
                if self.model is None:
                    arrival = now
                else:
                    arrival = max(now, self.free_at) + self.model.byte_time
                    self.free_at = arrival
                self.queue.append((arrival, b))
            self.cond.notify_all()

    def take(self, timeout: Optional[float], limit: int) -> bytes:
        with self.cond:
            if not self.cond.wait_for(lambda: self.queue or self.closed, timeout):
                return b""
            if not self.queue:
                raise ChannelClosed("peer closed")
            out = bytearray()
            last = None
            while self.queue and len(out) < limit:
                last, b = self.queue.popleft()
                out.append(b)
        self.clock.advance_to(last)
        return bytes(out)

    def close(self) -> None:
        with self.cond:
            self.closed = True
            self.cond.notify_all()


class LoopbackChannel(Channel):
    kind = "in-memory-loopback"

    def __init__(self, tx: _Line, rx: _Line, **kw):
        super().__init__(**kw)
        self._tx = tx
        self._rxline = rx
        self.clock = tx.clock

    def _send(self, data):
        self._tx.put(data)

    def _recv_some(self, timeout, limit):
        return self._rxline.take(timeout, limit)

    def _close(self):
        self._tx.close()
        self._rxline.close()


def loopback_pair(line_model: Optional[LineModel] = None, clock=None,
                  **kw) -> Tuple[LoopbackChannel, LoopbackChannel]:
    """Two connected in-memory channel ends (initiator side first).

    With a ``line_model`` every byte arrives ``byte_time`` after the previous
    one on the same direction; the receiving side advances ``clock`` to the
    arrival instant.  Pass a ``VirtualClock`` for deterministic modeled time.
    """
    clock = clock or WallClock()
    a2b = _Line(clock, line_model)
    b2a = _Line(clock, line_model)
    return LoopbackChannel(a2b, b2a, **kw), LoopbackChannel(b2a, a2b, **kw)


class SocketChannel(Channel):
    kind = "tcp"

    def __init__(self, sock: socket.socket, line_model: Optional[LineModel] = None, **kw):
        super().__init__(**kw)
        self.sock = sock
        self.line_model = line_model
        if sock.family in (socket.AF_INET, socket.AF_INET6):
            sock.setsockopt(socket.IPPROTO_TCP, socket.TCP_NODELAY, 1)

    def _send(self, data):
        if self.line_model is not None:
            WallClock().advance_to(time.perf_counter() + len(data) * self.line_model.byte_time)
        self.sock.settimeout(self.write_deadline)
        try:
            self.sock.sendall(data)
        except socket.timeout:
            raise DeadlineExceeded(0, len(data)) from None
        except OSError as exc:
            raise ChannelClosed(str(exc)) from None

    def _recv_some(self, timeout, limit):
        if timeout is not None and timeout <= 0:
            return b""
        self.sock.settimeout(timeout)
        try:
            data = self.sock.recv(limit)
        except socket.timeout:
            return b""
        except OSError as exc:
            raise ChannelClosed(str(exc)) from None
        if not data:
            raise ChannelClosed("peer closed")
        return data

    def _close(self):
        try:
            self.sock.shutdown(socket.SHUT_RDWR)
        except OSError:
            pass
        self.sock.close()


class FdChannel(Channel):
    """Channel over a pair of file descriptors (pipes, FIFOs, tty devices)."""

    kind = "local-pipe-pair"

    def __init__(self, rfd: int, wfd: int, **kw):
        super().__init__(**kw)
        self.rfd = rfd
        self.wfd = wfd

    def _send(self, data):
        view = memoryview(data)
        while view:
            _, w, _ = select.select([], [self.wfd], [], self.write_deadline)
            if not w:
                raise DeadlineExceeded(len(data) - len(view), len(data))
            try:
                n = os.write(self.wfd, view)
            except OSError as exc:
                raise ChannelClosed(str(exc)) from None
            view = view[n:]

    def _recv_some(self, timeout, limit):
        if timeout is not None and timeout < 0:
            timeout = 0
        r, _, _ = select.select([self.rfd], [], [], timeout)
        if not r:
            return b""
        try:
            data = os.read(self.rfd, limit)
        except OSError as exc:
            raise ChannelClosed(str(exc)) from None
        if not data:
            raise ChannelClosed("peer closed")
        return data

    def _close(self):
        for fd in {self.rfd, self.wfd}:
            try:
                os.close(fd)
            except OSError:
                pass


def pipe_pair(**kw) -> Tuple[FdChannel, FdChannel]:
    """Anonymous duplex pair built from two OS pipes."""
    r1, w1 = os.pipe()
    r2, w2 = os.pipe()
    return FdChannel(r2, w1, **kw), FdChannel(r1, w2, **kw)


def fifo_paths(path: str) -> Tuple[str, str]:
    """(initiator-to-responder, responder-to-initiator) FIFO paths for ``path``."""
    return path + ".i2r", path + ".r2i"


def open_fifo_responder(path: str, **kw) -> FdChannel:
    i2r, r2i = fifo_paths(path)
    for p in (i2r, r2i):
        if not os.path.exists(p):
            os.mkfifo(p)
        elif not stat.S_ISFIFO(os.stat(p).st_mode):
            raise ValueError(f"{p} exists and is not a FIFO")
    # O_RDWR keeps the open from blocking until the initiator shows up
    rfd = os.open(i2r, os.O_RDWR)
    wfd = os.open(r2i, os.O_RDWR)
    return FdChannel(rfd, wfd, **kw)


def open_fifo_initiator(path: str, **kw) -> FdChannel:
    i2r, r2i = fifo_paths(path)
    try:
        wfd = os.open(i2r, os.O_WRONLY | os.O_NONBLOCK)
    except OSError as exc:
        raise ChannelClosed(f"no responder on {path}: {exc}") from None
    os.set_blocking(wfd, True)
    rfd = os.open(r2i, os.O_RDONLY | os.O_NONBLOCK)
    return FdChannel(rfd, wfd, **kw)


class SerialChannel(FdChannel):
    """8N1 raw tty.  ``rtscts`` toggles hardware flow control; unused otherwise."""

    kind = "serial-device"

    def __init__(self, device: str, baud: int = 115200, rtscts: bool = False, **kw):
        import termios
        import tty

        fd = os.open(device, os.O_RDWR | os.O_NOCTTY | os.O_NONBLOCK)
        try:
            tty.setraw(fd)
            attrs = termios.tcgetattr(fd)
            speed = getattr(termios, f"B{baud}", None)
            if speed is None:
                raise ValueError(f"unsupported baud rate {baud}")
            attrs[4] = attrs[5] = speed
            attrs[2] &= ~(termios.PARENB | termios.CSTOPB | termios.CSIZE)
            attrs[2] |= termios.CS8 | termios.CLOCAL | termios.CREAD
            if hasattr(termios, "CRTSCTS"):
                if rtscts:
                    attrs[2] |= termios.CRTSCTS
                else:
                    attrs[2] &= ~termios.CRTSCTS
            termios.tcsetattr(fd, termios.TCSANOW, attrs)
        except Exception:
            os.close(fd)
            raise
        super().__init__(fd, fd, **kw)
        self.device = device
        self.baud = baud
        self.rtscts = rtscts


class ChannelTap(Channel):
    """Wraps a channel and records every byte as ``(t_us, dir, byte)``.

    ``side`` is ``"I"`` when the tap sits on the initiator end: sent bytes are
    tagged ``I`` and received ones ``R`` (swapped for a responder-side tap).
    """

    def __init__(self, inner: Channel, side: str = "I", clock=None):
        super().__init__(read_deadline=inner.read_deadline, write_deadline=inner.write_deadline)
        self.inner = inner
        self.kind = inner.kind
        self.clock = clock or getattr(inner, "clock", None) or WallClock()
        self.tx_tag, self.rx_tag = ("I", "R") if side == "I" else ("R", "I")
        self.events: List[Tuple[float, str, int]] = []

    def _stamp(self, tag, data):
        t = self.clock.now() * 1e6
        self.events.extend((t, tag, b) for b in data)

    def send_all(self, data):
        data = bytes(data)
        self.inner.send_all(data)
        self._stamp(self.tx_tag, data)

    def recv_exact(self, n, deadline=None):
        data = self.inner.recv_exact(n, deadline)
        self._stamp(self.rx_tag, data)
        return data

    def recv_some(self, timeout, limit=4096):
        data = self.inner.recv_some(timeout, limit)
        self._stamp(self.rx_tag, data)
        return data

    @property
    def buffered(self):
        return self.inner.buffered

    def close(self):
        self.closed = True
        self.inner.close()


def parse_channel_spec(spec: str) -> Tuple[str, tuple]:
    """Split ``tcp:host:port``, ``pipe:path`` or ``serial:dev[:baud]``."""
    kind, _, rest = spec.partition(":")
    if kind == "tcp":
        host, _, port = rest.rpartition(":")
        if not host:
            host, port = rest or "127.0.0.1", str(DEFAULT_TCP_PORT)
        return "tcp", (host, int(port, 0))
    if kind == "pipe" and rest:
        return "pipe", (rest,)
    if kind == "serial" and rest:
        dev, _, baud = rest.partition(":")
        return "serial", (dev, int(baud) if baud else 115200)
    raise ValueError(f"bad channel spec {spec!r} (tcp:host:port | pipe:path | serial:dev:baud)")


def open_channel(spec: str, line_model: Optional[LineModel] = None, **kw) -> Channel:
    """Initiator side: connect to a responder."""
    kind, args = parse_channel_spec(spec)
    if kind == "tcp":
        try:
            sock = socket.create_connection(args, timeout=kw.get("read_deadline") or 5.0)
        except OSError as exc:
            raise ChannelClosed(f"cannot connect to {args[0]}:{args[1]}: {exc}") from None
        return SocketChannel(sock, line_model=line_model, **kw)
    if kind == "pipe":
        return open_fifo_initiator(*args, **kw)
    return SerialChannel(*args, **kw)


def listen(spec: str, line_model: Optional[LineModel] = None,
           ready=None, **kw) -> Iterator[Channel]:
    """Responder side: yield one channel per session.

    TCP yields each accepted connection; pipe and serial specs yield the one
    device channel.  ``ready`` is called with the bound address once listening.
    """
    kind, args = parse_channel_spec(spec)
    if kind == "tcp":
        srv = socket.create_server(args)
        try:
            if ready:
                ready(srv.getsockname())
            while True:
                conn, _ = srv.accept()
                yield SocketChannel(conn, line_model=line_model, **kw)
        finally:
            srv.close()
    elif kind == "pipe":
        if ready:
            ready(args[0])
        yield open_fifo_responder(*args, **kw)
    else:
        if ready:
            ready(args[0])
        yield SerialChannel(*args, **kw)
