"""Initiator side: blocking bus transactions over a channel."""
from __future__ import annotations

import enum
import logging
import threading
import time
from dataclasses import dataclass
from typing import Callable, Optional

from .protocol import (Ack, ProtocolError, Request, Response, decode_response,
                       encode_request, word_from_bytes, word_to_bytes, BYTE_ORDER)
from .transport import (Channel, ChannelClosed, DEFAULT_RESPONSE_DEADLINE,
                        DeadlineExceeded, WallClock)

log = logging.getLogger(__name__)

WORD_MASK = 0xFFFFFFFF


class TransportError(Exception):
    """The responder could not be reached or did not answer in time."""


class LineFault(ProtocolError):
    """Status byte carried the ``never`` ack; treated as line noise."""


class BusClient:
    """Protocol-level client: one request, one decoded response.

    All calls go through one lock, so there is never more than one
    transaction in flight on the channel.
    """

    def __init__(self, channel: Channel, response_deadline: float = DEFAULT_RESPONSE_DEADLINE):
        self.channel = channel
        self.response_deadline = response_deadline
        self.lock = threading.RLock()
        self.transactions = 0

    def transact(self, req: Request) -> Optional[Response]:
        with self.lock:
            try:
                self.channel.send_all(encode_request(req))
                self.transactions += 1
                n = req.command.response_length
                if n == 0:
                    return None
                raw = self.channel.recv_exact(n, self.response_deadline)
            except DeadlineExceeded as exc:
                self._drain()
                raise TransportError(f"{req.command.name.lower()}: {exc}") from exc
            except (ChannelClosed, OSError) as exc:
                raise TransportError(f"{req.command.name.lower()}: {exc}") from exc
            resp = decode_response(req.command, raw)
            if resp.ack is Ack.NEVER:
                raise LineFault(f"{req.command.name.lower()}: received ack 'never'")
            return resp

    def _drain(self):
        # a late response would otherwise be taken for the next one
        try:
            while self.channel.recv_some(0.0):
                pass
        except (ChannelClosed, OSError):
            pass

    def read(self, addr: int) -> Response:
        return self.transact(Request.read(addr))

    def write(self, addr: int, value: int) -> Response:
        return self.transact(Request.write(addr, value))

    def reset(self) -> None:
        self.transact(Request.reset())

    def get_pending_irqs(self) -> Response:
        return self.transact(Request.get_pending_irqs())

    def set_time(self, millis: int) -> Response:
        return self.transact(Request.set_time(millis))

    def exit(self) -> Response:
        return self.transact(Request.exit())


class BusStatus(enum.Enum):
    OK = "ok"
    ADDRESS_ERROR = "address-error"
    GENERIC_ERROR = "generic-error"


class TimePolicy(enum.Enum):
    SIMULATION_TIME = "simulation-time"
    WALL_CLOCK_LOCKED = "wall-clock-locked"


@dataclass
class BusAccessResult:
    status: BusStatus
    data: Optional[bytes] = None
    accumulated_delay: float = 0.0
    ack: Optional[Ack] = None
    detail: str = ""

    @property
    def ok(self) -> bool:
        return self.status is BusStatus.OK

    @property
    def value(self) -> Optional[int]:
        return None if self.data is None else word_from_bytes(self.data.ljust(4, b"\0"))


def _map_ack(ack: Ack) -> BusStatus:
    if ack is Ack.OK:
        return BusStatus.OK
    if ack is Ack.NOT_MAPPED:
        return BusStatus.ADDRESS_ERROR
    return BusStatus.GENERIC_ERROR


class IrqPoller(threading.Thread):
    def __init__(self, bridge: "InitiatorBridge", interval: float,
                 callback: Optional[Callable[[int], None]]):
        super().__init__(daemon=True, name="irq-poller")
        self.bridge = bridge
        self.interval = interval
        self.callback = callback
        self.stopped = threading.Event()
        self.polls = 0
        self.error: Optional[Exception] = None

    def run(self):
        while not self.stopped.wait(self.interval):
            try:
                self.bridge.poll_pending_irqs(callback=self.callback)
                self.polls += 1
            except TransportError as exc:
                self.error = exc
                log.warning("irq poller stopped: %s", exc)
                return
            except ProtocolError as exc:
                log.warning("irq poll failed: %s", exc)

    def stop(self, timeout: float = 1.0):
        self.stopped.set()
        if self.is_alive() and threading.current_thread() is not self:
            self.join(timeout)


class InitiatorBridge:
    """Memory-mapped bus member that forwards accesses to a responder.

    Addresses given to ``read``/``write``/``transport`` are offsets added to
    ``base_address``.  ``read_delay``/``write_delay`` (seconds) accumulate in
    ``accumulated_delay`` for every successful access, mirroring the delay
    annotation a TLM target adds to a transaction.
    """

    def __init__(self, channel: Channel, base_address: int = 0, read_delay: float = 0.0,
                 write_delay: float = 0.0,
                 time_policy: TimePolicy = TimePolicy.WALL_CLOCK_LOCKED,
                 response_deadline: float = DEFAULT_RESPONSE_DEADLINE):
        self.client = BusClient(channel, response_deadline)
        self.base_address = base_address
        self.read_delay = read_delay
        self.write_delay = write_delay
        self.time_policy = TimePolicy(time_policy)
        self.accumulated_delay = 0.0
        self.sim_time_us = 0.0
        self.pending_mask = 0
        self.poller: Optional[IrqPoller] = None

    @property
    def channel(self) -> Channel:
        return self.client.channel

    def _addr(self, addr: int) -> int:
        return (self.base_address + addr) & WORD_MASK

    def read(self, addr: int) -> BusAccessResult:
        try:
            resp = self.client.read(self._addr(addr))
        except (TransportError, ProtocolError) as exc:
            return BusAccessResult(BusStatus.GENERIC_ERROR, None, self.accumulated_delay,
                                   detail=str(exc))
        status = _map_ack(resp.ack)
        data = None
        if status is BusStatus.OK:
            data = word_to_bytes(resp.payload)
            self.accumulated_delay += self.read_delay
        return BusAccessResult(status, data, self.accumulated_delay, resp.ack,
                               "" if data is not None else resp.ack.name.lower())

    def write(self, addr: int, value: int) -> BusAccessResult:
        try:
            resp = self.client.write(self._addr(addr), value & WORD_MASK)
        except (TransportError, ProtocolError) as exc:
            return BusAccessResult(BusStatus.GENERIC_ERROR, None, self.accumulated_delay,
                                   detail=str(exc))
        status = _map_ack(resp.ack)
        if status is BusStatus.OK:
            self.accumulated_delay += self.write_delay
        return BusAccessResult(status, None, self.accumulated_delay, resp.ack,
                               "" if status is BusStatus.OK else resp.ack.name.lower())

    def transport(self, kind: str, addr: int, buffer: bytearray) -> BusAccessResult:
        """Byte-buffer access of 1, 2 or 4 bytes.

        Sub-word writes zero-extend the buffer into a full word (the whole
        register is overwritten).  Sub-word reads fetch the full word and copy
        its low bytes back into ``buffer``.
        """
        n = len(buffer)
        if n not in (1, 2, 4):
            raise ValueError(f"invalid access length {n}; expected 1, 2 or 4")
        if kind == "write":
            word = int.from_bytes(bytes(buffer).ljust(4, b"\0"), BYTE_ORDER)
            return self.write(addr, word)
        if kind != "read":
            raise ValueError(f"unknown access kind {kind!r}")
        res = self.read(addr)
        if res.data is not None:
            buffer[:] = res.data[:n]
        elif n != 4 and res.ack is not None:
            # the word scratch buffer is copied back even after an error ack
            buffer[:] = bytes(n)
        return res

    def reset(self) -> None:
        self.client.reset()
        self.pending_mask = 0

    def poll_pending_irqs(self, callback: Optional[Callable[[int], None]] = None) -> int:
        """Fetch the pending-line bitmask; raises TransportError on failure."""
        resp = self.client.get_pending_irqs()
        if resp.ack is not Ack.OK:
            raise ProtocolError(f"getPendingIRQs answered {resp.ack.name.lower()}")
        self.pending_mask = resp.payload
        if resp.payload and callback is not None:
            callback(resp.payload)
        return resp.payload

    def set_time(self, millis: int) -> BusAccessResult:
        try:
            resp = self.client.set_time(millis & WORD_MASK)
        except (TransportError, ProtocolError) as exc:
            return BusAccessResult(BusStatus.GENERIC_ERROR, None, self.accumulated_delay,
                                   detail=str(exc))
        return BusAccessResult(_map_ack(resp.ack), None, self.accumulated_delay, resp.ack,
                               "" if resp.ack is Ack.OK else resp.ack.name.lower())

    def exit(self) -> BusAccessResult:
        self.stop_irq_poller()
        try:
            resp = self.client.exit()
        except (TransportError, ProtocolError) as exc:
            return BusAccessResult(BusStatus.GENERIC_ERROR, detail=str(exc))
        return BusAccessResult(_map_ack(resp.ack), None, self.accumulated_delay, resp.ack)

    def start_irq_poller(self, callback: Optional[Callable[[int], None]] = None,
                         interval: float = 0.001) -> IrqPoller:
        self.stop_irq_poller()
        self.poller = IrqPoller(self, interval, callback)
        self.poller.start()
        return self.poller

    def stop_irq_poller(self) -> None:
        if self.poller is not None:
            self.poller.stop()
            self.poller = None

    # time helpers for bit-bang drivers
    def delay_us(self, us: float) -> None:
        if self.time_policy is TimePolicy.WALL_CLOCK_LOCKED:
            WallClock().advance_to(time.perf_counter() + us * 1e-6)
        else:
            self.sim_time_us += us

    def now_us(self) -> float:
        if self.time_policy is TimePolicy.WALL_CLOCK_LOCKED:
            return time.perf_counter() * 1e6
        return self.sim_time_us

    def close(self) -> None:
        self.stop_irq_poller()
        self.channel.close()
