import datetime as dt
import math

import pytest
from hypothesis import given, settings, strategies as st

from busbridge.peripherals import (Breadboard, FloatingPins, GcdAccelerator, GpioBank,
                                   InternalLed, RtcState, ThreeWireRtc, UartStub, from_bcd,
                                   gcd_modulo, sw_gcd_reference, to_bcd)

PAPER_ROWS = [(10154, 3), (101654, 3), (1051654, 3), (10512654, 3), (36546, 1051654)]


def quotient_sum_steps(a, b):
    # subtractions done by the subtraction loop = sum of Euclid quotients - 1
    s = 0
    while b:
        q, r = divmod(a, b)
        s += q
        a, b = b, r
    return s - 1


class PinCapture:
    def __init__(self, levels=0):
        self.levels = levels
        self.drives = []

    def drive(self, levels, mask):
        self.drives.append((levels, mask))

    def sample(self):
        return self.levels


# GPIO

def test_gpio_led_pattern_drives_pins():
    pins = PinCapture()
    g = GpioBank(pins)
    g.reg_write(GpioBank.DIRECTION, 0xFF)
    g.reg_write(GpioBank.OUTPUT, 0x55)
    assert pins.drives[-1] == (0x55, 0xFF)


def test_gpio_all_input_drives_nothing():
    pins = PinCapture()
    g = GpioBank(pins)
    g.reg_write(GpioBank.OUTPUT, 0xFF)
    g.reg_write(GpioBank.DIRECTION, 0x00)
    assert pins.drives[-1] == (0, 0)


def test_gpio_input_register_read_only():
    g = GpioBank(PinCapture(0x12))
    g.reg_write(GpioBank.INPUT, 0xDEADBEEF)
    assert g.reg_read(GpioBank.INPUT) == 0x12


def test_gpio_switches_read():
    assert GpioBank(PinCapture(0b1000_0001)).reg_read(GpioBank.INPUT) == 0x00000081


def test_gpio_reset_state():
    g = GpioBank(PinCapture())
    g.reg_write(0x0, 0xF0)
    g.reg_write(0x4, 0x0F)
    g.reset()
    assert g.reg_read(0x0) == 0 and g.reg_read(0x4) == 0


def test_gpio_input_masked_by_direction():
    g = GpioBank(PinCapture(0xFF))
    g.reg_write(GpioBank.DIRECTION, 0x0F)
    assert g.reg_read(GpioBank.INPUT) == 0xF0


def test_gpio_undefined_offset_reads_zero():
    g = GpioBank(PinCapture(0xFF))
    g.reg_write(0xC, 0x1234)
    assert g.reg_read(0xC) == 0
    assert g.reg_read(0x0) == 0 and g.reg_read(0x4) == 0


def test_gpio_masking_rule_enumerated_8bit():
    pins = PinCapture()
    g = GpioBank(pins)
    for direction in range(256):
        g.reg_write(GpioBank.DIRECTION, direction)
        for sampled in range(0, 256, 7):
            pins.levels = sampled
            expected = sum(1 << i for i in range(8)
                           if not (direction >> i) & 1 and (sampled >> i) & 1)
            assert g.reg_read(GpioBank.INPUT) == expected


@given(st.integers(0, 255), st.integers(0, 255), st.integers(0, 255))
def test_gpio_readback(direction, output, sampled):
    pins = PinCapture(sampled)
    g = GpioBank(pins)
    g.reg_write(GpioBank.DIRECTION, direction)
    g.reg_write(GpioBank.OUTPUT, output)
    assert g.reg_read(GpioBank.OUTPUT) == output
    assert g.reg_read(GpioBank.DIRECTION) == direction
    assert g.reg_read(GpioBank.INPUT) == sampled & ~direction & 0xFF
    assert pins.drives[-1] == (output & direction, direction)


def test_gpio_irq_on_input_change():
    pins = PinCapture(0x01)
    g = GpioBank(pins, irq_on_change=True)
    assert not g.pending_irq()
    pins.levels = 0x03
    assert g.pending_irq()
    assert g.pending_irq()  # latched
    g.reg_read(GpioBank.INPUT)
    assert not g.pending_irq()


def test_gpio_irq_disabled_by_default():
    pins = PinCapture(0x01)
    g = GpioBank(pins)
    pins.levels = 0xFF
    assert not g.pending_irq()


# LED / UART

@given(st.lists(st.integers(0, 0xFFFFFFFF), min_size=1))
def test_led_is_latch(values):
    led = InternalLed()
    for v in values:
        led.reg_write(0, v)
    assert led.reg_read(0) == values[-1]


def test_led_callback_and_reset():
    seen = []
    led = InternalLed(on_change=seen.append)
    led.reg_write(0, 7)
    led.reg_write(4, 9)
    assert seen == [7] and led.reg_read(4) == 0
    led.reset()
    assert led.reg_read(0) == 0


def test_uart_stub_reads_zero():
    u = UartStub()
    u.reg_write(0, 0x41)
    assert u.reg_read(0) == 0 and not u.pending_irq()


# GCD

@pytest.mark.parametrize("a, b, res", [
    (10154, 3, 1), (10512654, 3, 3), (36546, 1051654, 2), (7, 7, 7)])
def test_gcd_accelerator(a, b, res):
    g = GcdAccelerator()
    g.reg_write(g.A, a)
    g.reg_write(g.B, b)
    g.reg_write(g.VALID, 1)
    assert g.reg_read(g.READY) == 1
    assert g.reg_read(g.RES) == res == math.gcd(a, b)


def test_gcd_writing_operand_clears_ready():
    g = GcdAccelerator()
    g.reg_write(g.A, 4)
    g.reg_write(g.B, 6)
    g.reg_write(g.VALID, 1)
    assert g.reg_read(g.READY)
    g.reg_write(g.A, 9)
    assert g.reg_read(g.READY) == 0
    g.reg_write(g.B, 6)
    assert g.reg_read(g.READY) == 0


@pytest.mark.parametrize("a, b", [(0, 5), (5, 0), (0, 0)])
def test_gcd_zero_operand_convention(a, b):
    g = GcdAccelerator()
    g.reg_write(g.A, a)
    g.reg_write(g.B, b)
    g.reg_write(g.VALID, 1)
    assert g.reg_read(g.READY) == 1 and g.reg_read(g.RES) == max(a, b)


def test_gcd_latency_knob():
    g = GcdAccelerator(latency_polls=2)
    g.reg_write(g.A, 12)
    g.reg_write(g.B, 18)
    g.reg_write(g.VALID, 1)
    assert [g.reg_read(g.READY) for _ in range(4)] == [0, 0, 1, 1]
    assert g.reg_read(g.RES) == 6


def test_gcd_result_registers_read_only():
    g = GcdAccelerator()
    g.reg_write(g.READY, 1)
    g.reg_write(g.RES, 99)
    assert g.reg_read(g.READY) == 0 and g.reg_read(g.RES) == 0


def test_sw_gcd_paper_rows():
    # frozen from the quotient-sum oracle
    expected = [(1, 3386), (1, 33886), (1, 350553), (3, 3504217), (2, 64)]
    got = [sw_gcd_reference(a, b) for a, b in PAPER_ROWS]
    assert got == expected
    assert [quotient_sum_steps(a, b) for a, b in PAPER_ROWS] == [s for _, s in expected]


def test_sw_gcd_equal_operands():
    assert sw_gcd_reference(42, 42) == (42, 0)


def test_sw_gcd_step_growth():
    assert sw_gcd_reference(10512654, 3)[1] > 100 * sw_gcd_reference(10154, 3)[1]


def test_sw_gcd_rejects_zero():
    with pytest.raises(ValueError):
        sw_gcd_reference(0, 3)


@settings(max_examples=300)
@given(st.integers(1, 10**6), st.integers(1, 10**6))
def test_gcd_implementations_agree(a, b):
    res, steps = sw_gcd_reference(a, b)
    assert res == gcd_modulo(a, b) == math.gcd(a, b)
    assert steps == quotient_sum_steps(max(a, b), min(a, b))


# BCD / RTC

@pytest.mark.parametrize("n", range(100))
def test_bcd_round_trip(n):
    assert from_bcd(to_bcd(n)) == n
    assert to_bcd(n) == int(str(n), 16)


class Tick:
    def __init__(self, t=0.0):
        self.t = t

    def __call__(self):
        return self.t


def clock_byte_in(rtc, value):
    for i in range(8):
        bit = (value >> i) & 1
        rtc.clock_edge(1, 0, bit)
        rtc.clock_edge(1, 1, bit)


def read_via_pins(rtc, reg):
    rtc.clock_edge(1, 0, 0)
    cmd = 0x81 | reg << 1
    outs = []
    for i in range(8):
        bit = (cmd >> i) & 1
        rtc.clock_edge(1, 0, bit)
        rtc.clock_edge(1, 1, bit)
    for _ in range(8):
        outs.append(rtc.clock_edge(1, 0, 0))
        rtc.clock_edge(1, 1, 0)
    rtc.clock_edge(0, 0, 0)
    return sum(b << i for i, b in enumerate(outs))


def write_via_pins(rtc, reg, value):
    rtc.clock_edge(1, 0, 0)
    clock_byte_in(rtc, 0x80 | reg << 1)
    clock_byte_in(rtc, value)
    rtc.clock_edge(1, 0, 0)
    rtc.clock_edge(0, 0, 0)


def test_rtc_write_then_read_seconds_frozen():
    rtc = ThreeWireRtc(Tick())
    write_via_pins(rtc, 0, 0x30)
    assert rtc.read_register(0) == 0x30
    assert read_via_pins(rtc, 0) == 0x30


def test_rtc_read_shifts_lsb_first_on_falling_edges():
    rtc = ThreeWireRtc(Tick(), start=dt.datetime(2024, 5, 17, 12, 34, 25))
    rtc.clock_edge(1, 0, 0)
    clock_byte_in(rtc, 0x81)
    assert rtc.state is RtcState.READ
    # 25 s = BCD 0x25 = 0b0010_0101
    bits = []
    for _ in range(8):
        bits.append(rtc.clock_edge(1, 0, 0))
        rtc.clock_edge(1, 1, 0)
    assert bits == [1, 0, 1, 0, 0, 1, 0, 0]


def test_rtc_ce_low_aborts_without_change():
    rtc = ThreeWireRtc(Tick())
    rtc.clock_edge(1, 0, 0)
    clock_byte_in(rtc, 0x80)
    for i in range(4):
        rtc.clock_edge(1, 0, 1)
        rtc.clock_edge(1, 1, 1)
    rtc.clock_edge(0, 0, 0)
    assert rtc.state is RtcState.IDLE
    assert rtc.read_register(0) == 0x00


def test_rtc_bcd_wrap_with_minute_carry():
    tick = Tick()
    rtc = ThreeWireRtc(tick, start=dt.datetime(2000, 1, 1, 0, 0, 59))
    assert rtc.read_register(0) == 0x59 and rtc.read_register(1) == 0x00
    tick.t += 1
    assert rtc.read_register(0) == 0x00 and rtc.read_register(1) == 0x01
    tick.t += 60
    assert rtc.read_register(0) == 0x00 and rtc.read_register(1) == 0x02


def test_rtc_sixty_second_advance():
    tick = Tick()
    rtc = ThreeWireRtc(tick, start=dt.datetime(2000, 1, 1, 10, 59, 30))
    tick.t = 60
    assert (rtc.read_register(2), rtc.read_register(1), rtc.read_register(0)) == (0x11, 0x00, 0x30)


def test_rtc_calendar_over_days():
    tick = Tick()
    rtc = ThreeWireRtc(tick, start=dt.datetime(2024, 2, 28, 23, 0, 0))
    tick.t = 86400 + 3600
    assert rtc.now() == dt.datetime(2024, 3, 1, 0, 0, 0)
    assert rtc.read_register(5) == dt.date(2024, 3, 1).isoweekday()


def test_rtc_set_sequence_through_invalid_date():
    rtc = ThreeWireRtc(Tick(), start=dt.datetime(2000, 1, 31))
    rtc.write_register(4, 0x02)   # Feb 31 transiently
    rtc.write_register(3, 0x14)
    assert rtc.now() == dt.datetime(2000, 2, 14)


def test_rtc_out_of_range_write_dropped():
    rtc = ThreeWireRtc(Tick())
    rtc.write_register(0, 0x75)
    assert rtc.read_register(0) == 0


def test_rtc_set_time_millis():
    rtc = ThreeWireRtc(Tick())
    rtc.set_time(1000)
    assert rtc.now() == dt.datetime(2000, 1, 1, 0, 0, 1)


def test_breadboard_resolves_levels():
    bb = Breadboard(levels=0xF0)
    bb.drive(0x05, 0x0F)
    assert bb.sample() == 0xF5
    bb.set_levels(0x00, 0x30)
    assert bb.sample() == 0xC5


def test_floating_pins():
    p = FloatingPins(0x3)
    p.drive(0xFF, 0x0F)
    assert p.sample() == 0x3 and p.driven == 0x0F
