"""Capture files and transaction decoding for recorded protocol traffic.

Capture format: one byte per line, ``<t_microseconds> <I|R> <hex-byte>``.
``I`` marks initiator-to-responder bytes, ``R`` the responses.  Blank lines
and ``#`` comments are ignored.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterable, List, Optional, TextIO, Tuple

from .protocol import (Command, FrameParser, NEED_MORE, ParseError, ProtocolError, Request,
                       Response, decode_response)

Event = Tuple[float, str, int]


class CaptureError(ValueError):
    pass


def parse_capture(lines: Iterable[str]) -> List[Event]:
    events = []
    for lineno, line in enumerate(lines, 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        parts = line.split()
        if len(parts) != 3 or parts[1] not in ("I", "R"):
            raise CaptureError(f"line {lineno}: expected '<t_us> <I|R> <hex-byte>'")
        try:
            t = float(parts[0])
            b = int(parts[2], 16)
        except ValueError:
            raise CaptureError(f"line {lineno}: bad number in {line!r}") from None
        if not 0 <= b <= 0xFF:
            raise CaptureError(f"line {lineno}: byte 0x{b:x} out of range")
        events.append((t, parts[1], b))
    return events


def read_capture(path: str) -> List[Event]:
    with open(path) as fp:
        return parse_capture(fp)


def write_capture(events: Iterable[Event], fp: TextIO) -> None:
    for t, d, b in events:
        fp.write(f"{t:.3f} {d} {b:02x}\n")


@dataclass
class TraceRecord:
    t_start: float
    t_end: float
    request: Optional[Request] = None
    response: Optional[Response] = None
    request_bytes: bytes = b""
    response_bytes: bytes = b""
    t_request_end: Optional[float] = None
    error: Optional[str] = None

    @property
    def nbytes(self) -> int:
        return len(self.request_bytes) + len(self.response_bytes)

    @property
    def total(self) -> float:
        return self.t_end - self.t_start

    @property
    def response_latency(self) -> Optional[float]:
        """Last request byte to last response byte."""
        if self.t_request_end is None or not self.response_bytes:
            return None
        return self.t_end - self.t_request_end


@dataclass
class _Pending:
    t_start: float
    raw: bytearray = field(default_factory=bytearray)
    t_last: float = 0.0


def decode_trace(events: Iterable[Event], watchdog_us: Optional[float] = None) -> List[TraceRecord]:
    """Group captured bytes into transactions.

    Every captured byte ends up in exactly one record; bytes that do not fit
    the protocol land in records with ``error`` set.  If ``watchdog_us`` is
    given, a request interrupted by that much silence is flagged as dropped,
    the way the responder would discard it.
    """
    records: List[TraceRecord] = []
    parser = FrameParser()
    req: Optional[_Pending] = None
    awaiting: Optional[Tuple[TraceRecord, int]] = None

    def flush_response(reason):
        nonlocal awaiting
        rec, _ = awaiting
        rec.error = reason
        records.append(rec)
        awaiting = None

    for t, d, b in events:
        if d == "I":
            if awaiting is not None:
                flush_response("response truncated")
            if (req is not None and watchdog_us is not None
                    and t - req.t_last >= watchdog_us):
                records.append(TraceRecord(req.t_start, req.t_last, request_bytes=bytes(req.raw),
                                           error="partial request dropped by watchdog"))
                parser.reset()
                req = None
            if req is None:
                req = _Pending(t)
            req.raw.append(b)
            req.t_last = t
            ev = parser.feed(b)
            if ev is NEED_MORE:
                continue
            if isinstance(ev, ParseError):
                records.append(TraceRecord(req.t_start, t, request_bytes=bytes(req.raw),
                                           error=ev.reason))
                req = None
                continue
            rec = TraceRecord(req.t_start, t, ev.request, request_bytes=ev.raw, t_request_end=t)
            req = None
            n = ev.request.command.response_length
            if n == 0:
                records.append(rec)
            else:
                awaiting = (rec, n)
        else:
            if awaiting is None:
                records.append(TraceRecord(t, t, response_bytes=bytes([b]),
                                           error=f"unexpected response byte 0x{b:02x}"))
                continue
            rec, n = awaiting
            rec.response_bytes += bytes([b])
            rec.t_end = t
            if len(rec.response_bytes) == n:
                try:
                    rec.response = decode_response(rec.request.command, rec.response_bytes)
                except ProtocolError as exc:
                    rec.error = str(exc)
                records.append(rec)
                awaiting = None
    if awaiting is not None:
        flush_response("response truncated")
    if req is not None:
        records.append(TraceRecord(req.t_start, req.t_last, request_bytes=bytes(req.raw),
                                   error="request truncated"))
    return records


def _describe_request(req: Request) -> str:
    cmd = req.command
    if cmd is Command.READ:
        return f"READ 0x{req.address:08x}"
    if cmd is Command.WRITE:
        return f"WRITE 0x{req.address:08x} ← 0x{req.payload:08x}"
    if cmd is Command.SET_TIME:
        return f"SET_TIME {req.address} ms"
    return cmd.name


def format_record(rec: TraceRecord) -> str:
    stamp = f"{rec.t_start:12.2f} {rec.t_end:12.2f}"
    if rec.request is None:
        return f"{stamp}  !! {rec.error} ({rec.nbytes} bytes)"
    text = _describe_request(rec.request)
    if rec.response is not None:
        status = rec.response.status
        text += f" → {status.ack.name.lower()}"
        if rec.response.payload is not None:
            text += f" 0x{rec.response.payload:08x}"
        if status.irq_waiting:
            text += " [irq]"
    elif rec.request.command is Command.RESET:
        text += " (no response)"
    text += f", total {rec.total:.2f} µs"
    if rec.response_latency is not None:
        text += f", response {rec.response_latency:.2f} µs"
    if rec.error:
        text += f"  !! {rec.error}"
    return f"{stamp}  {text}"
