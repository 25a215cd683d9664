"""Drivers running on the initiator: bit-banged RTC over GPIO, GCD accelerator."""
from __future__ import annotations

import datetime as dt
from typing import Tuple

from .initiator import BusStatus, InitiatorBridge
from .peripherals import GcdAccelerator, GpioBank, from_bcd, to_bcd

INPUT, OUTPUT = 0, 1
LOW, HIGH = 0, 1

# GPIO bank B: LEDs on bits 0-7, RTC wired above them
RTC_CE_PIN = 8
RTC_SCLK_PIN = 9
RTC_IO_PIN = 10


class BusFault(IOError):
    pass


class GpioPins:
    """The four Arduino calls a bit-bang library needs, over one GPIO bank.

    Direction and output registers are shadowed locally, so each call is a
    single bus write (or read for ``digital_read``).
    """

    def __init__(self, bridge: InitiatorBridge, bank_offset: int):
        self.bridge = bridge
        self.bank = bank_offset
        self.direction = self._read(GpioBank.DIRECTION)
        self.output = self._read(GpioBank.OUTPUT)

    def _read(self, reg):
        res = self.bridge.read(self.bank + reg)
        if res.status is not BusStatus.OK:
            raise BusFault(f"gpio read 0x{self.bank + reg:x}: {res.status.value} {res.detail}")
        return res.value

    def _write(self, reg, value):
        res = self.bridge.write(self.bank + reg, value)
        if res.status is not BusStatus.OK:
            raise BusFault(f"gpio write 0x{self.bank + reg:x}: {res.status.value} {res.detail}")

    def pin_mode(self, pin: int, mode: int) -> None:
        bit = 1 << pin
        new = self.direction | bit if mode == OUTPUT else self.direction & ~bit
        if new != self.direction:
            self.direction = new
            self._write(GpioBank.DIRECTION, new)

    def digital_write(self, pin: int, level: int) -> None:
        bit = 1 << pin
        new = self.output | bit if level else self.output & ~bit
        if new != self.output:
            self.output = new
            self._write(GpioBank.OUTPUT, new)

    def digital_read(self, pin: int) -> int:
        return (self._read(GpioBank.INPUT) >> pin) & 1

    def delay_microseconds(self, us: float) -> None:
        self.bridge.delay_us(us)


class Ds1302Driver:
    """Bit-banged 3-wire RTC access, LSB first, command then data byte."""

    SECONDS, MINUTES, HOURS, DATE, MONTH, WEEKDAY, YEAR = range(7)

    def __init__(self, pins: GpioPins, ce: int = RTC_CE_PIN, sclk: int = RTC_SCLK_PIN,
                 io: int = RTC_IO_PIN, delay_us: float = 1.0):
        self.pins = pins
        self.ce, self.sclk, self.io = ce, sclk, io
        self.delay = delay_us
        pins.digital_write(ce, LOW)
        pins.digital_write(sclk, LOW)
        pins.pin_mode(ce, OUTPUT)
        pins.pin_mode(sclk, OUTPUT)

    def _begin(self):
        self.pins.digital_write(self.sclk, LOW)
        self.pins.digital_write(self.ce, HIGH)
        self.pins.delay_microseconds(4 * self.delay)

    def _end(self):
        self.pins.digital_write(self.ce, LOW)
        self.pins.delay_microseconds(4 * self.delay)

    def _write_byte(self, value: int, release_after: bool = False):
        p = self.pins
        p.pin_mode(self.io, OUTPUT)
        for i in range(8):
            p.digital_write(self.io, (value >> i) & 1)
            p.delay_microseconds(self.delay)
            p.digital_write(self.sclk, HIGH)
            p.delay_microseconds(self.delay)
            if release_after and i == 7:
                # hand I/O to the device before the falling edge shifts bit 0 out
                p.pin_mode(self.io, INPUT)
            p.digital_write(self.sclk, LOW)
            p.delay_microseconds(self.delay)

    def _read_byte(self) -> int:
        p = self.pins
        value = 0
        for i in range(8):
            value |= p.digital_read(self.io) << i
            p.digital_write(self.sclk, HIGH)
            p.delay_microseconds(self.delay)
            p.digital_write(self.sclk, LOW)
            p.delay_microseconds(self.delay)
        return value

    @staticmethod
    def command(reg: int, read: bool) -> int:
        return 0x80 | (reg & 0x1F) << 1 | int(read)

    def read_register(self, reg: int) -> int:
        self._begin()
        self._write_byte(self.command(reg, True), release_after=True)
        value = self._read_byte()
        self._end()
        return value

    def write_register(self, reg: int, value: int) -> None:
        self._begin()
        self._write_byte(self.command(reg, False))
        self._write_byte(value)
        self._end()

    def set_datetime(self, when: dt.datetime) -> None:
        # seconds last so the clock restarts at the written second
        self.write_register(self.YEAR, to_bcd(when.year % 100))
        self.write_register(self.MONTH, to_bcd(when.month))
        self.write_register(self.DATE, to_bcd(when.day))
        self.write_register(self.HOURS, to_bcd(when.hour))
        self.write_register(self.MINUTES, to_bcd(when.minute))
        self.write_register(self.SECONDS, to_bcd(when.second))

    def get_datetime(self) -> dt.datetime:
        # re-read if the seconds rolled over mid-sequence
        for _ in range(3):
            sec = from_bcd(self.read_register(self.SECONDS) & 0x7F)
            minute = from_bcd(self.read_register(self.MINUTES))
            hour = from_bcd(self.read_register(self.HOURS) & 0x3F)
            day = from_bcd(self.read_register(self.DATE))
            month = from_bcd(self.read_register(self.MONTH))
            year = 2000 + from_bcd(self.read_register(self.YEAR))
            if from_bcd(self.read_register(self.SECONDS) & 0x7F) == sec:
                break
        return dt.datetime(year, month, day, hour, minute, sec)


GCD_BASE = 0x50004000


def hw_gcd(bridge: InitiatorBridge, a: int, b: int, base: int = GCD_BASE,
           max_polls: int = 5) -> Tuple[int, int]:
    """Run one computation on the remote accelerator.

    Returns (result, bus transactions used).  Raises BusFault on an error
    ack or if ready is still low after ``max_polls`` reads.
    """
    start = bridge.client.transactions

    def write(reg, value):
        res = bridge.write(base + reg, value)
        if not res.ok:
            raise BusFault(f"gcd write 0x{base + reg:08x}: {res.status.value} {res.detail}")

    def read(reg):
        res = bridge.read(base + reg)
        if not res.ok:
            raise BusFault(f"gcd read 0x{base + reg:08x}: {res.status.value} {res.detail}")
        return res.value

    write(GcdAccelerator.A, a)
    write(GcdAccelerator.B, b)
    write(GcdAccelerator.VALID, 1)
    for _ in range(max_polls):
        if read(GcdAccelerator.READY):
            break
    else:
        raise BusFault(f"gcd not ready after {max_polls} polls")
    result = read(GcdAccelerator.RES)
    return result, bridge.client.transactions - start
