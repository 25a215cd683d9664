"""Register-level models of the peripherals hosted by the responder."""
from __future__ import annotations

import calendar
import datetime as dt
import enum
import threading
from collections import deque
from typing import Callable, Optional, Protocol, Tuple

WORD_MASK = 0xFFFFFFFF


class PeripheralModel:
    """Behaviour behind one bus mapping.

    Offsets are relative to the mapping base.  Undefined offsets read as 0
    and swallow writes, since the address decoder has already claimed them.
    """

    name = "peripheral"

    def reg_read(self, offset: int) -> int:
        return 0

    def reg_write(self, offset: int, value: int) -> None:
        pass

    def pending_irq(self) -> bool:
        return False

    def reset(self) -> None:
        pass


class InternalLed(PeripheralModel):
    """Single latch register at offset 0 driving the on-board LEDs."""

    name = "led"

    def __init__(self, on_change: Optional[Callable[[int], None]] = None):
        self.on_change = on_change
        self.reset()

    def reset(self):
        self.val = 0

    def reg_read(self, offset):
        return self.val if offset == 0 else 0

    def reg_write(self, offset, value):
        if offset == 0:
            self.val = value & WORD_MASK
            if self.on_change:
                self.on_change(self.val)


class UartStub(PeripheralModel):
    """Reserves the UART address slot; reads 0, ignores writes."""

    name = "uart"


class PinHook(Protocol):
    def drive(self, levels: int, mask: int) -> None: ...

    def sample(self) -> int: ...


class FloatingPins:
    """Pin hook with nothing attached: inputs read low."""

    def __init__(self, levels: int = 0):
        self.levels = levels
        self.driven = 0
        self.mask = 0

    def drive(self, levels, mask):
        self.driven, self.mask = levels & mask, mask

    def sample(self):
        return self.levels


class GpioBank(PeripheralModel):
    DIRECTION = 0x0
    OUTPUT = 0x4
    INPUT = 0x8

    name = "gpio"

    def __init__(self, pins: Optional[PinHook] = None, irq_on_change: bool = False):
        self.pins = pins if pins is not None else FloatingPins()
        self.irq_on_change = irq_on_change
        self.reset()

    def reset(self):
        self.direction = 0
        self.output = 0
        self.input = 0
        self._irq = False
        self._last_sample = None
        self._drive()

    def _drive(self):
        self.pins.drive(self.output & self.direction, self.direction)

    def _sample(self):
        raw = self.pins.sample() & WORD_MASK
        self.input = raw & ~self.direction & WORD_MASK
        return self.input

    def reg_read(self, offset):
        if offset == self.DIRECTION:
            return self.direction
        if offset == self.OUTPUT:
            return self.output
        if offset == self.INPUT:
            self._sample()
            self._last_sample = self.input
            self._irq = False
            return self.input
        return 0

    def reg_write(self, offset, value):
        value &= WORD_MASK
        if offset == self.DIRECTION:
            self.direction = value
        elif offset == self.OUTPUT:
            self.output = value
        else:
            return
        self._drive()

    def pending_irq(self):
        # latched on any input pin change since the last input register read
        if not self.irq_on_change:
            return False
        if not self._irq:
            current = self.pins.sample() & ~self.direction & WORD_MASK
            if self._last_sample is None:
                self._last_sample = current
            elif current != self._last_sample:
                self._irq = True
        return self._irq


def sw_gcd_reference(a: int, b: int) -> Tuple[int, int]:
    """Subtraction-form Euclid; returns (gcd, loop iterations)."""
    if a < 1 or b < 1:
        raise ValueError("operands must be >= 1")
    steps = 0
    while a != b:
        if a > b:
            a -= b
        else:
            b -= a
        steps += 1
    return a, steps


def gcd_modulo(a: int, b: int) -> int:
    while b:
        a, b = b, a % b
    return a


class GcdAccelerator(PeripheralModel):
    """Registers a/b/valid/ready/res at 0x00/0x04/0x08/0x0C/0x10.

    Writing ``valid`` nonzero starts a computation.  ``latency_polls`` ready
    reads return 0 before the result shows up (0 means it completes at once).
    """

    A, B, VALID, READY, RES = 0x00, 0x04, 0x08, 0x0C, 0x10
    name = "gcd"

    def __init__(self, latency_polls: int = 0):
        self.latency_polls = latency_polls
        self.reset()

    def reset(self):
        self.a = self.b = self.valid = 0
        self.ready = 0
        self.res = 0
        self._busy_polls = 0

    def step(self):
        if self.a == 0 or self.b == 0:
            self.res = max(self.a, self.b)
        else:
            self.res = gcd_modulo(self.a, self.b)
        self.ready = 1

    def reg_read(self, offset):
        if offset == self.A:
            return self.a
        if offset == self.B:
            return self.b
        if offset == self.VALID:
            return self.valid
        if offset == self.READY:
            if self._busy_polls:
                self._busy_polls -= 1
                if self._busy_polls == 0:
                    self.step()
                return 0 if not self.ready else 1
            return self.ready
        if offset == self.RES:
            return self.res
        return 0

    def reg_write(self, offset, value):
        value &= WORD_MASK
        if offset == self.A:
            self.a, self.ready = value, 0
        elif offset == self.B:
            self.b, self.ready = value, 0
        elif offset == self.VALID:
            self.valid = value
            if value:
                self.ready = 0
                if self.latency_polls:
                    self._busy_polls = self.latency_polls + 1
                else:
                    self.step()


def to_bcd(n: int) -> int:
    return ((n // 10) << 4) | (n % 10)


def from_bcd(b: int) -> int:
    return (b >> 4) * 10 + (b & 0x0F)


RTC_EPOCH = dt.datetime(2000, 1, 1)


class RtcState(enum.Enum):
    IDLE = "idle"
    COMMAND = "command"
    WRITE = "write"
    READ = "read"


class ThreeWireRtc:
    """Simplified DS1302 on three pins (CE, SCLK, I/O).

    Command byte, LSB first: bit 0 is the read flag, bits 1..5 the register
    (0 seconds, 1 minutes, 2 hours, 3 date, 4 month, 5 weekday, 6 year, all
    BCD, 24h mode).  Bits 6 and 7 are ignored.  Data is latched on SCLK rising
    edges; read data is shifted out LSB first on falling edges.  No burst
    mode, write protect or trickle charger.

    ``tick_source`` returns the current time in seconds; the calendar runs
    from it, so freezing the source freezes the clock.
    """

    REGISTERS = ("seconds", "minutes", "hours", "date", "month", "weekday", "year")

    def __init__(self, tick_source: Callable[[], float],
                 start: dt.datetime = RTC_EPOCH):
        self.tick_source = tick_source
        self._set_datetime(start)
        self._abort()
        self._sclk = 0

    # calendar
    def _set_datetime(self, when: dt.datetime):
        self.fields = [when.second, when.minute, when.hour, when.day, when.month,
                       when.isoweekday(), when.year % 100]
        self._base_tick = self.tick_source() - when.microsecond * 1e-6

    def _advance(self):
        # fields are only normalised once whole seconds have elapsed, so a
        # multi-register set sequence may pass through invalid dates
        elapsed = int(self.tick_source() - self._base_tick)
        if elapsed <= 0:
            return
        sec, minute, hour, day, month, _, year = self.fields
        year += 2000
        day = min(max(day, 1), calendar.monthrange(year, month)[1])
        when = dt.datetime(year, month, day, hour, minute, sec) + dt.timedelta(seconds=elapsed)
        self._base_tick += elapsed
        self.fields = [when.second, when.minute, when.hour, when.day, when.month,
                       when.isoweekday(), when.year % 100]

    def now(self) -> dt.datetime:
        self._advance()
        sec, minute, hour, day, month, _, year = self.fields
        return dt.datetime(2000 + year, month, day, hour, minute, sec)

    def set_time(self, millis: int) -> None:
        """Protocol setTime hook: milliseconds since 2000-01-01 00:00:00."""
        self._set_datetime(RTC_EPOCH + dt.timedelta(milliseconds=millis))

    def read_register(self, reg: int) -> int:
        self._advance()
        if 0 <= reg < 7:
            v = self.fields[reg]
            return v if reg == 5 else to_bcd(v)
        return 0

    def write_register(self, reg: int, value: int) -> None:
        limits = ((0, 59), (0, 59), (0, 23), (1, 31), (1, 12), (1, 7), (0, 99))
        if not 0 <= reg < 7:
            return
        self._advance()
        if reg == 0:
            value &= 0x7F  # clock-halt bit is not modelled
        elif reg == 2:
            value &= 0x3F  # 24h mode only
        v = value if reg == 5 else from_bcd(value)
        lo, hi = limits[reg]
        if not lo <= v <= hi:
            return  # out-of-range values are dropped
        self.fields[reg] = v
        if reg == 0:
            # writing seconds restarts the sub-second divider
            self._base_tick = self.tick_source()

    # pin level protocol
    def _abort(self):
        self.state = RtcState.IDLE
        self.bits = 0
        self.shift = 0
        self.command = 0
        self.io_out: Optional[int] = None

    def clock_edge(self, ce: int, sclk: int, io_in: int) -> Optional[int]:
        """Apply pin levels; return the level driven on I/O, or None if released."""
        rising = sclk and not self._sclk
        falling = self._sclk and not sclk
        self._sclk = sclk
        if not ce:
            self._abort()
            return None
        if self.state is RtcState.IDLE:
            self.state = RtcState.COMMAND
            self.bits = self.shift = 0
        if rising and self.state in (RtcState.COMMAND, RtcState.WRITE):
            self.shift |= (io_in & 1) << self.bits
            self.bits += 1
            if self.bits == 8:
                if self.state is RtcState.COMMAND:
                    self.command = self.shift
                    self.bits = self.shift = 0
                    if self.command & 1:
                        self.state = RtcState.READ
                        self.shift = self.read_register((self.command >> 1) & 0x1F)
                    else:
                        self.state = RtcState.WRITE
                else:
                    self.write_register((self.command >> 1) & 0x1F, self.shift)
                    self.state = RtcState.COMMAND
                    self.bits = self.shift = 0
        elif falling and self.state is RtcState.READ:
            if self.bits < 8:
                self.io_out = (self.shift >> self.bits) & 1
                self.bits += 1
            else:
                self.io_out = None
        return self.io_out if self.state is RtcState.READ else None


class Breadboard:
    """External pins of one GPIO bank plus whatever is wired to them.

    ``levels`` holds what the environment drives (switches, devices); bank
    outputs override them on driven pins.  Devices are attached with a pin
    map and see the resolved levels every time the bank re-drives.
    """

    def __init__(self, levels: int = 0):
        self.levels = levels
        self.driven = 0
        self.mask = 0
        self.history = deque(maxlen=4096)  # recent (driven, mask) pairs
        self._rtc: Optional[Tuple[ThreeWireRtc, int, int, int]] = None
        self.lock = threading.RLock()

    def attach_rtc(self, rtc: ThreeWireRtc, ce: int, sclk: int, io: int) -> None:
        self._rtc = (rtc, ce, sclk, io)

    def set_levels(self, levels: int, mask: int = WORD_MASK) -> None:
        with self.lock:
            self.levels = (self.levels & ~mask) | (levels & mask)

    def resolved(self) -> int:
        with self.lock:
            return ((self.levels & ~self.mask) | (self.driven & self.mask)) & WORD_MASK

    def drive(self, levels, mask):
        with self.lock:
            self.driven, self.mask = levels & mask, mask
            self.history.append((self.driven, mask))
            if self._rtc is not None:
                rtc, ce, sclk, io = self._rtc
                net = self.resolved()
                out = rtc.clock_edge((net >> ce) & 1, (net >> sclk) & 1, (net >> io) & 1)
                if out is not None:
                    self.set_levels(out << io, 1 << io)

    def sample(self):
        return self.resolved()
