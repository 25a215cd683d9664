"""Wire format shared by the initiator and the responder.

Every multi-byte field is little-endian.  Requests are a command byte,
optionally followed by a 4 byte address and a 4 byte payload; responses are
a status byte (ack in bits 0-6, ``irq_waiting`` in bit 7), optionally
followed by a 4 byte payload.
"""
from __future__ import annotations

import enum
from dataclasses import dataclass
from typing import Optional, Union

# Flip to "big" only for interop experiments with a big-endian peer.
BYTE_ORDER = "little"

WORD_MASK = 0xFFFFFFFF
IRQ_WAITING_BIT = 0x80
ACK_MASK = 0x7F


class ProtocolError(Exception):
    """Base class for wire format violations."""


class UnknownCommand(ProtocolError):
    def __init__(self, value: int):
        super().__init__(f"unknown command 0x{value:02x}")
        self.value = value


class UnknownAck(ProtocolError):
    def __init__(self, value: int):
        super().__init__(f"unknown ack code {value}")
        self.value = value


class ShortRead(ProtocolError):
    def __init__(self, expected: int, got: int):
        super().__init__(f"expected {expected} response bytes, got {got}")
        self.expected = expected
        self.got = got


class Command(enum.IntEnum):
    RESET = 0
    READ = 1
    WRITE = 2
    GET_PENDING_IRQS = 3
    SET_TIME = 4
    EXIT = 5

    @classmethod
    def decode(cls, value: int) -> "Command":
        try:
            return cls(value)
        except ValueError:
            raise UnknownCommand(value) from None

    @property
    def has_address(self) -> bool:
        return self in (Command.READ, Command.WRITE, Command.SET_TIME)

    @property
    def has_payload(self) -> bool:
        return self is Command.WRITE

    @property
    def request_length(self) -> int:
        return 1 + 4 * self.has_address + 4 * self.has_payload

    @property
    def response_has_payload(self) -> bool:
        return self in (Command.READ, Command.GET_PENDING_IRQS)

    @property
    def response_length(self) -> int:
        if self is Command.RESET:
            return 0
        return 5 if self.response_has_payload else 1


class Ack(enum.IntEnum):
    NEVER = 0
    OK = 1
    NOT_MAPPED = 2
    COMMAND_NOT_SUPPORTED = 3

    @classmethod
    def decode(cls, value: int) -> "Ack":
        try:
            return cls(value)
        except ValueError:
            raise UnknownAck(value) from None


@dataclass(frozen=True)
class ResponseStatus:
    ack: Ack = Ack.OK
    irq_waiting: bool = False

    def pack(self) -> int:
        return int(self.ack) | (IRQ_WAITING_BIT if self.irq_waiting else 0)

    @classmethod
    def unpack(cls, value: int) -> "ResponseStatus":
        return cls(Ack.decode(value & ACK_MASK), bool(value & IRQ_WAITING_BIT))


@dataclass(frozen=True)
class Request:
    """One initiator to responder message.

    ``address`` is only meaningful for read, write and setTime (for setTime
    it carries a millisecond timestamp); ``payload`` only for write.  Both
    are normalised to ``None`` for commands that do not transmit them.
    """

    command: Command
    address: Optional[int] = None
    payload: Optional[int] = None

    def __post_init__(self):
        cmd = Command(self.command)
        object.__setattr__(self, "command", cmd)
        if cmd.has_address:
            _check_word("address", self.address)
        elif self.address is not None:
            raise ValueError(f"{cmd.name} carries no address")
        if cmd.has_payload:
            _check_word("payload", self.payload)
        elif self.payload is not None:
            raise ValueError(f"{cmd.name} carries no payload")

    @classmethod
    def reset(cls) -> "Request":
        return cls(Command.RESET)

    @classmethod
    def read(cls, address: int) -> "Request":
        return cls(Command.READ, address)

    @classmethod
    def write(cls, address: int, payload: int) -> "Request":
        return cls(Command.WRITE, address, payload)

    @classmethod
    def get_pending_irqs(cls) -> "Request":
        return cls(Command.GET_PENDING_IRQS)

    @classmethod
    def set_time(cls, millis: int) -> "Request":
        return cls(Command.SET_TIME, millis)

    @classmethod
    def exit(cls) -> "Request":
        return cls(Command.EXIT)


def _check_word(name: str, value) -> None:
    if value is None:
        raise ValueError(f"{name} is required")
    if not 0 <= value <= WORD_MASK:
        raise ValueError(f"{name} 0x{value:x} does not fit in 32 bits")


def word_to_bytes(value: int) -> bytes:
    return value.to_bytes(4, BYTE_ORDER)


def word_from_bytes(data) -> int:
    return int.from_bytes(bytes(data), BYTE_ORDER)


def encode_request(req: Request) -> bytes:
    out = bytearray([req.command])
    if req.command.has_address:
        out += word_to_bytes(req.address)
    if req.command.has_payload:
        out += word_to_bytes(req.payload)
    return bytes(out)


def encode_response(cmd: Command, status: ResponseStatus,
                    payload: Optional[int] = None) -> bytes:
    cmd = Command(cmd)
    if cmd is Command.RESET:
        return b""
    if cmd.response_has_payload:
        _check_word("payload", payload)
        return bytes([status.pack()]) + word_to_bytes(payload)
    if payload is not None:
        raise ValueError(f"{cmd.name} response carries no payload")
    return bytes([status.pack()])


@dataclass(frozen=True)
class Response:
    status: ResponseStatus
    payload: Optional[int] = None

    @property
    def ack(self) -> Ack:
        return self.status.ack


def decode_response(cmd: Command, data: Union[bytes, bytearray]) -> Response:
    cmd = Command(cmd)
    expected = cmd.response_length
    if len(data) < expected:
        raise ShortRead(expected, len(data))
    if len(data) > expected:
        raise ProtocolError(f"{cmd.name} response is {expected} bytes, got {len(data)}")
    if expected == 0:
        return Response(ResponseStatus())
    status = ResponseStatus.unpack(data[0])
    payload = word_from_bytes(data[1:5]) if cmd.response_has_payload else None
    return Response(status, payload)


class Phase(enum.Enum):
    IDLE = "idle"
    ADDRESS = "awaiting-address"
    PAYLOAD = "awaiting-payload"
    COMPLETE = "complete"


class NeedMore:
    __slots__ = ()

    def __repr__(self):
        return "NEED_MORE"


NEED_MORE = NeedMore()


@dataclass(frozen=True)
class RequestComplete:
    request: Request
    raw: bytes


@dataclass(frozen=True)
class ParseError:
    reason: str
    byte: int


ParseEvent = Union[NeedMore, RequestComplete, ParseError]


class FrameParser:
    """Byte-at-a-time request parser.

    ``feed`` consumes exactly one byte and returns ``NEED_MORE``, a
    ``RequestComplete`` or a ``ParseError``.  The parser drops back to idle
    after a complete request or an error, so it can be fed indefinitely.
    """

    def __init__(self):
        self.reset()

    def reset(self) -> None:
        self.phase = Phase.IDLE
        self.bytes_needed = 1
        self.buffer = bytearray()
        self._command: Optional[Command] = None

    @property
    def mid_frame(self) -> bool:
        return self.phase in (Phase.ADDRESS, Phase.PAYLOAD)

    def feed(self, b: int) -> ParseEvent:
        if self.phase is Phase.COMPLETE:
            self.reset()
        if self.phase is Phase.IDLE:
            try:
                self._command = Command.decode(b)
            except UnknownCommand as exc:
                self.reset()
                return ParseError(str(exc), b)
            self.buffer.append(b)
            if not self._command.has_address:
                return self._complete()
            self.phase = Phase.ADDRESS
            self.bytes_needed = 4
            return NEED_MORE

        self.buffer.append(b)
        self.bytes_needed -= 1
        if self.bytes_needed:
            return NEED_MORE
        if self.phase is Phase.ADDRESS and self._command.has_payload:
            self.phase = Phase.PAYLOAD
            self.bytes_needed = 4
            return NEED_MORE
        return self._complete()

    def _complete(self) -> RequestComplete:
        raw = bytes(self.buffer)
        cmd = self._command
        address = word_from_bytes(raw[1:5]) if cmd.has_address else None
        payload = word_from_bytes(raw[5:9]) if cmd.has_payload else None
        self.phase = Phase.COMPLETE
        self.bytes_needed = 0
        self.buffer = bytearray()
        return RequestComplete(Request(cmd, address, payload), raw)

    def feed_all(self, data) -> list:
        """Feed a byte string and collect every non-``NEED_MORE`` event."""
        events = []
        for b in data:
            ev = self.feed(b)
            if ev is not NEED_MORE:
                events.append(ev)
        return events
