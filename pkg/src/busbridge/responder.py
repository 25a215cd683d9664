"""Software responder: request parser, mask-mapped bus dispatch, responses."""
from __future__ import annotations

import enum
import logging
import threading
import time
from dataclasses import dataclass, field
from typing import Callable, Dict, Iterable, List, Optional

from .peripherals import (Breadboard, GcdAccelerator, GpioBank, InternalLed,
                          PeripheralModel, UartStub)
from .protocol import (Ack, Command, FrameParser, NEED_MORE, ParseError, Request,
                       ResponseStatus, encode_response)
from .transport import Channel, ChannelClosed

log = logging.getLogger(__name__)

WORD_MASK = 0xFFFFFFFF
DEFAULT_WATCHDOG = 0.002
_TIME_EPS = 1e-9  # absorbs float rounding in caller-supplied timestamps


class MappingError(ValueError):
    pass


class OverlappingMapping(MappingError):
    pass


@dataclass(frozen=True)
class BusMapping:
    base: int
    mask: int

    def __post_init__(self):
        if self.base & ~self.mask & WORD_MASK:
            raise MappingError(
                f"base 0x{self.base:08x} has bits outside mask 0x{self.mask:08x}")

    def matches(self, addr: int) -> bool:
        return (addr & self.mask) == self.base

    def offset(self, addr: int) -> int:
        return addr & ~self.mask & WORD_MASK

    def overlaps(self, other: "BusMapping") -> bool:
        # some address matches both iff the bases agree on the bits both masks check
        common = self.mask & other.mask
        return (self.base ^ other.base) & common == 0

    def __str__(self):
        return f"0x{self.base:08x}/0x{self.mask:08x}"


@dataclass
class PeripheralSlot:
    mapping: BusMapping
    model: PeripheralModel
    irq_line: Optional[int] = None
    name: str = ""


class SessionState(enum.Enum):
    SERVING = "serving"
    EXITED = "exited"


@dataclass
class SessionReport:
    reads: int = 0
    writes: int = 0
    resets: int = 0
    irq_polls: int = 0
    set_times: int = 0
    exits: int = 0
    protocol_errors: int = 0
    watchdog_resets: int = 0
    not_mapped: int = 0
    truncated_frame: bool = False
    closed_by_peer: bool = False
    fault: Optional[str] = None

    def count(self, cmd: Command) -> None:
        attr = {Command.READ: "reads", Command.WRITE: "writes", Command.RESET: "resets",
                Command.GET_PENDING_IRQS: "irq_polls", Command.SET_TIME: "set_times",
                Command.EXIT: "exits"}[cmd]
        setattr(self, attr, getattr(self, attr) + 1)


class ResponderCore:
    """One responder session: bytes in, response bytes out.

    Timestamps are supplied by the caller so the watchdog can be driven by
    a virtual clock in tests and by the host monotonic clock in the daemon.
    """

    def __init__(self, watchdog: float = DEFAULT_WATCHDOG, time_sinks: Iterable = ()):
        self.watchdog = watchdog
        self.parser = FrameParser()
        self.slots: List[PeripheralSlot] = []
        self.time_sinks = list(time_sinks)
        self.state = SessionState.SERVING
        self.last_event: Optional[float] = None
        self.report = SessionReport()

    def register_peripheral(self, mapping: BusMapping, model: PeripheralModel,
                            irq_line: Optional[int] = None, name: str = "") -> PeripheralSlot:
        if irq_line is not None and not 0 <= irq_line <= 31:
            raise MappingError(f"irq line {irq_line} outside 0..31")
        for slot in self.slots:
            if slot.mapping.overlaps(mapping):
                raise OverlappingMapping(
                    f"{mapping} overlaps {slot.name or 'slot'} at {slot.mapping}")
            if irq_line is not None and slot.irq_line == irq_line:
                raise MappingError(f"irq line {irq_line} already used by {slot.name}")
        slot = PeripheralSlot(mapping, model, irq_line, name or model.name)
        self.slots.append(slot)
        return slot

    def find_slot(self, addr: int) -> Optional[PeripheralSlot]:
        for slot in self.slots:
            if slot.mapping.matches(addr):
                return slot
        return None

    def __getitem__(self, name: str) -> PeripheralModel:
        for slot in self.slots:
            if slot.name == name:
                return slot.model
        raise KeyError(name)

    def dispatch_read(self, addr: int):
        slot = self.find_slot(addr)
        if slot is None:
            return Ack.NOT_MAPPED, 0
        return Ack.OK, slot.model.reg_read(slot.mapping.offset(addr)) & WORD_MASK

    def dispatch_write(self, addr: int, value: int) -> Ack:
        slot = self.find_slot(addr)
        if slot is None:
            return Ack.NOT_MAPPED
        slot.model.reg_write(slot.mapping.offset(addr), value & WORD_MASK)
        return Ack.OK

    def pending_irqs(self) -> int:
        mask = 0
        for slot in self.slots:
            if slot.irq_line is not None and slot.model.pending_irq():
                mask |= 1 << slot.irq_line
        return mask

    def irq_waiting(self) -> bool:
        return any(slot.model.pending_irq() for slot in self.slots)

    def reset(self) -> None:
        """Parser and every peripheral back to power-on state."""
        self.parser.reset()
        for slot in self.slots:
            slot.model.reset()

    def set_time(self, millis: int) -> Ack:
        sinks = self.time_sinks + [s.model for s in self.slots if hasattr(s.model, "set_time")]
        if not sinks:
            return Ack.COMMAND_NOT_SUPPORTED
        for sink in sinks:
            sink.set_time(millis)
        return Ack.OK

    def execute(self, req: Request) -> bytes:
        cmd = req.command
        self.report.count(cmd)
        payload = None
        if cmd is Command.RESET:
            self.reset()
            return b""
        if cmd is Command.READ:
            ack, payload = self.dispatch_read(req.address)
        elif cmd is Command.WRITE:
            ack = self.dispatch_write(req.address, req.payload)
        elif cmd is Command.GET_PENDING_IRQS:
            ack, payload = Ack.OK, self.pending_irqs()
        elif cmd is Command.SET_TIME:
            ack = self.set_time(req.address)
        else:
            ack = Ack.OK
        if ack is Ack.NOT_MAPPED:
            self.report.not_mapped += 1
        status = ResponseStatus(ack, self.irq_waiting())
        out = encode_response(cmd, status, payload)
        if cmd is Command.EXIT:
            self.reset()
            self.state = SessionState.EXITED
        return out

    def watchdog_tick(self, now: float) -> bool:
        """Drop a stale partial frame.  Returns True if one was dropped."""
        if (self.parser.mid_frame and self.last_event is not None
                and now - self.last_event >= self.watchdog - _TIME_EPS):
            log.debug("watchdog: dropping %d buffered bytes", len(self.parser.buffer))
            self.parser.reset()
            self.report.watchdog_resets += 1
            return True
        return False

    def serve_byte(self, b: int, now: float) -> bytes:
        if self.state is not SessionState.SERVING:
            raise RuntimeError("session has exited")
        self.watchdog_tick(now)
        self.last_event = now
        ev = self.parser.feed(b)
        if ev is NEED_MORE:
            return b""
        if isinstance(ev, ParseError):
            # no ack exists for a malformed request; the initiator times out
            self.report.protocol_errors += 1
            log.debug("protocol error: %s", ev.reason)
            return b""
        return self.execute(ev.request)

    def serve(self, data, now: float) -> bytes:
        out = bytearray()
        for b in data:
            out += self.serve_byte(b, now)
        return bytes(out)

    def run_session(self, ch: Channel, clock: Callable[[], float] = time.monotonic) -> SessionReport:
        """Serve ``ch`` until an exit command or the channel closes."""
        self.state = SessionState.SERVING
        self.report = SessionReport()
        self.last_event = None
        self.parser.reset()
        while self.state is SessionState.SERVING:
            timeout = self.watchdog if self.parser.mid_frame else 0.05
            try:
                data = ch.recv_some(timeout)
            except ChannelClosed:
                self.report.closed_by_peer = True
                self.report.truncated_frame = self.parser.mid_frame
                break
            except OSError as exc:
                self.report.fault = str(exc)
                break
            if not data:
                self.watchdog_tick(clock())
                continue
            # bytes that arrived in one chunk share a timestamp: no silence between them
            now = clock()
            for b in data:
                out = self.serve_byte(b, now)
                if out:
                    try:
                        ch.send_all(out)
                    except (ChannelClosed, OSError) as exc:
                        self.report.fault = str(exc)
                        return self.report
                if self.state is SessionState.EXITED:
                    break
        return self.report


# memory map

KINDS: Dict[str, Callable[..., PeripheralModel]] = {
    "led": InternalLed,
    "gpio": GpioBank,
    "uart": UartStub,
    "gcd": GcdAccelerator,
}


@dataclass(frozen=True)
class MapEntry:
    name: str
    base: int
    mask: int
    kind: str
    irq_line: Optional[int] = None


DEFAULT_MEMORY_MAP = (
    MapEntry("led", 0x50000000, 0xFFFFFFF0, "led"),
    MapEntry("gpio_a", 0x50001000, 0xFFFFFFF0, "gpio"),
    MapEntry("gpio_b", 0x50002000, 0xFFFFFFF0, "gpio"),
    MapEntry("uart", 0x50003000, 0xFFFFFFF0, "uart"),
    MapEntry("gcd", 0x50004000, 0xFFFFFF00, "gcd"),
)


def parse_memory_map(text: str) -> List[MapEntry]:
    """Lines of ``NAME BASE MASK KIND [irq-line]``; ``#`` starts a comment."""
    entries = []
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        parts = line.split()
        if len(parts) not in (4, 5):
            raise MappingError(f"line {lineno}: expected NAME BASE MASK KIND [irq-line]")
        name, base, mask, kind = parts[:4]
        if kind not in KINDS:
            raise MappingError(f"line {lineno}: unknown kind {kind!r}")
        try:
            irq = int(parts[4], 0) if len(parts) == 5 else None
            entries.append(MapEntry(name, int(base, 16), int(mask, 16), kind, irq))
        except ValueError as exc:
            raise MappingError(f"line {lineno}: {exc}") from None
    return entries


def format_memory_map(entries: Iterable[MapEntry]) -> str:
    lines = []
    for e in entries:
        irq = "" if e.irq_line is None else f" {e.irq_line}"
        lines.append(f"{e.name} 0x{e.base:08x} 0x{e.mask:08x} {e.kind}{irq}")
    return "\n".join(lines)


@dataclass
class Environment:
    """External world shared by the peripherals of a responder: GPIO pins."""

    boards: Dict[str, Breadboard] = field(default_factory=dict)
    time_sinks: list = field(default_factory=list)

    def board(self, name: str) -> Breadboard:
        return self.boards.setdefault(name, Breadboard())


def build_responder(entries: Iterable[MapEntry] = DEFAULT_MEMORY_MAP,
                    env: Optional[Environment] = None,
                    watchdog: float = DEFAULT_WATCHDOG) -> ResponderCore:
    """Instantiate a responder from a memory map.

    GPIO banks get a breadboard from ``env`` (created on demand) and raise
    their interrupt on input change when an irq line is assigned.
    """
    env = env if env is not None else Environment()
    core = ResponderCore(watchdog=watchdog, time_sinks=env.time_sinks)
    for e in entries:
        if e.kind == "gpio":
            model = GpioBank(env.board(e.name), irq_on_change=e.irq_line is not None)
        else:
            model = KINDS[e.kind]()
        core.register_peripheral(BusMapping(e.base, e.mask), model, e.irq_line, e.name)
    return core


def serve_in_thread(core: ResponderCore, ch: Channel, clock: Callable[[], float] = time.monotonic):
    """Run ``core.run_session(ch)`` on a daemon thread; the report lands on ``thread.report``."""

    def target():
        t.report = core.run_session(ch, clock)

    t = threading.Thread(target=target, daemon=True, name="responder")
    t.report = None
    t.start()
    return t
