"""Command line tools: responderd, busctl, tracecat, gcdbench.

Run as ``busbridge <tool> ...`` or through the per-tool entry points.
"""
from __future__ import annotations

import argparse
import datetime as dt
import logging
import os
import socketserver
import sys
import threading
import time
from typing import List, Optional, Sequence, Tuple

from . import trace as tracemod
from .drivers import BusFault, RTC_CE_PIN, RTC_IO_PIN, RTC_SCLK_PIN, hw_gcd
from .initiator import BusClient, InitiatorBridge, LineFault, TransportError
from .peripherals import ThreeWireRtc, gcd_modulo, sw_gcd_reference
from .protocol import Ack, ProtocolError
from .responder import (DEFAULT_MEMORY_MAP, Environment, MappingError, build_responder,
                        format_memory_map, parse_memory_map)
from .transport import (ChannelClosed, ChannelTap, LineModel, listen, open_channel,
                        parse_channel_spec)

log = logging.getLogger("busbridge")

CHANNEL_ENV = "BUSBRIDGE_CHANNEL"
DEFAULT_CHANNEL = "tcp:127.0.0.1:7450"

# busctl exit codes; argparse usage errors exit with 2
EXIT_OK = 0
EXIT_NOT_MAPPED = 10
EXIT_NOT_SUPPORTED = 11
EXIT_PROTOCOL = 12
EXIT_TRANSPORT = 13

ACK_EXIT = {Ack.OK: EXIT_OK, Ack.NOT_MAPPED: EXIT_NOT_MAPPED,
            Ack.COMMAND_NOT_SUPPORTED: EXIT_NOT_SUPPORTED}

GCD_TABLE = ((10154, 3), (101654, 3), (1051654, 3), (10512654, 3), (36546, 1051654))


def hex_int(text: str) -> int:
    return int(text, 0) if text.lower().startswith("0x") else int(text, 16)


def word(v: int) -> str:
    return f"0x{v:08x}"


# responderd

def handle_breadboard_command(env: Environment, line: str) -> str:
    """One line of the breadboard side channel.

    ``set BANK LEVELS [MASK]``, ``get BANK`` (resolved pin levels),
    ``driven BANK`` (levels and mask driven by the bank), ``banks``.
    """
    parts = line.split()
    if not parts:
        return "err empty command"
    op, args = parts[0].lower(), parts[1:]
    try:
        if op == "banks":
            return " ".join(sorted(env.boards))
        if op in ("set", "get", "driven"):
            if not args or args[0] not in env.boards:
                return f"err unknown bank {args[0] if args else ''}".rstrip()
            board = env.boards[args[0]]
            if op == "get":
                return word(board.resolved())
            if op == "driven":
                return f"{word(board.driven)} {word(board.mask)}"
            if len(args) not in (2, 3):
                return "err usage: set BANK LEVELS [MASK]"
            mask = hex_int(args[2]) if len(args) == 3 else 0xFFFFFFFF
            board.set_levels(hex_int(args[1]), mask)
            return "ok"
    except ValueError as exc:
        return f"err {exc}"
    return f"err unknown command {op}"


def start_breadboard_server(env: Environment, host: str, port: int):
    class Handler(socketserver.StreamRequestHandler):
        def handle(self):
            for raw in self.rfile:
                reply = handle_breadboard_command(env, raw.decode(errors="replace").strip())
                self.wfile.write((reply + "\n").encode())

    server = socketserver.ThreadingTCPServer((host, port), Handler)
    server.daemon_threads = True
    threading.Thread(target=server.serve_forever, daemon=True, name="breadboard").start()
    return server


def parse_pins(specs: Sequence[str]) -> List[Tuple[str, int]]:
    out = []
    for spec in specs:
        name, sep, value = spec.partition("=")
        if not sep:
            raise ValueError(f"--pins expects BANK=LEVELS, got {spec!r}")
        out.append((name, hex_int(value)))
    return out


def make_environment(entries, pins=(), rtc_bank: Optional[str] = None,
                     tick_source=time.time) -> Environment:
    env = Environment()
    gpio = [e.name for e in entries if e.kind == "gpio"]
    for name in gpio:
        env.board(name)
    for name, levels in pins:
        if name not in env.boards:
            raise ValueError(f"unknown gpio bank {name!r}")
        env.boards[name].set_levels(levels)
    if rtc_bank:
        if rtc_bank not in env.boards:
            raise ValueError(f"unknown gpio bank {rtc_bank!r}")
        rtc = ThreeWireRtc(tick_source, start=dt.datetime.now().replace(microsecond=0))
        env.boards[rtc_bank].attach_rtc(rtc, RTC_CE_PIN, RTC_SCLK_PIN, RTC_IO_PIN)
        env.time_sinks.append(rtc)
    return env


def serve_forever(listen_spec: str, entries, env: Environment, watchdog: float,
                  line_model: Optional[LineModel] = None, ready=None,
                  stop: Optional[threading.Event] = None) -> None:
    """Accept sessions on ``listen_spec``; each gets a fresh responder core."""
    kind, _ = parse_channel_spec(listen_spec)

    def session(ch):
        core = build_responder(entries, env, watchdog)
        report = core.run_session(ch)
        log.info("session ended: %s", report)
        if kind == "tcp" or report.closed_by_peer:
            ch.close()
        return report

    for ch in listen(listen_spec, line_model=line_model, ready=ready, read_deadline=None):
        if kind == "tcp":
            threading.Thread(target=session, args=(ch,), daemon=True).start()
        else:
            # device channels stay open; serve session after session
            while not (stop and stop.is_set()):
                if session(ch).closed_by_peer:
                    break
        if stop and stop.is_set():
            break


def cmd_responderd(args) -> int:
    try:
        if args.map:
            with open(args.map) as fp:
                entries = parse_memory_map(fp.read())
        else:
            entries = list(DEFAULT_MEMORY_MAP)
        build_responder(entries)  # validates overlaps and mappings
        env = make_environment(entries, parse_pins(args.pins), args.rtc)
        parse_channel_spec(args.listen)
    except (OSError, MappingError, ValueError) as exc:
        print(f"responderd: {exc}", file=sys.stderr)
        return 1
    watchdog = args.watchdog_ms / 1000.0
    line_model = LineModel(args.line_baud) if args.line_baud else None
    print(f"memory map (watchdog {args.watchdog_ms:g} ms):\n{format_memory_map(entries)}",
          flush=True)
    if args.breadboard:
        _, (host, port) = parse_channel_spec(args.breadboard)
        srv = start_breadboard_server(env, host, port)
        print("breadboard on {}:{}".format(*srv.server_address), flush=True)

    def ready(addr):
        where = f"{addr[0]}:{addr[1]}" if isinstance(addr, tuple) else addr
        print(f"listening on {where}", flush=True)

    try:
        serve_forever(args.listen, entries, env, watchdog, line_model, ready)
    except OSError as exc:
        print(f"responderd: {exc}", file=sys.stderr)
        return 1
    except KeyboardInterrupt:
        pass
    return 0


# busctl

def cmd_busctl(args) -> int:
    try:
        ch = open_channel(args.channel, read_deadline=args.timeout)
    except (ChannelClosed, OSError, ValueError) as exc:
        print(f"transport error: {exc}", file=sys.stderr)
        return EXIT_TRANSPORT
    tap = ChannelTap(ch, side="I") if args.trace else ch
    client = BusClient(tap, response_deadline=args.timeout)
    try:
        return _busctl_run(client, args)
    except TransportError as exc:
        print(f"transport error: {exc}", file=sys.stderr)
        return EXIT_TRANSPORT
    except (LineFault, ProtocolError) as exc:
        print(f"protocol error: {exc}", file=sys.stderr)
        return EXIT_PROTOCOL
    finally:
        if args.trace:
            with open(args.trace, "w") as fp:
                tracemod.write_capture(tap.events, fp)
        tap.close()


def _busctl_run(client: BusClient, args) -> int:
    op = args.op
    if op == "reset":
        client.reset()
        print("reset sent")
        return EXIT_OK
    if op == "read":
        resp = client.read(args.address)
    elif op == "write":
        resp = client.write(args.address, args.value)
    elif op == "irqs":
        resp = client.get_pending_irqs()
    elif op == "settime":
        resp = client.set_time(args.millis)
    else:
        resp = client.exit()
    text = resp.ack.name.lower()
    if resp.payload is not None:
        text = f"{word(resp.payload)} {text}"
    if resp.status.irq_waiting:
        text += " irq"
    print(text)
    return ACK_EXIT[resp.ack]


# tracecat

def cmd_tracecat(args) -> int:
    try:
        events = tracemod.read_capture(args.capture)
    except OSError as exc:
        print(f"tracecat: {exc}", file=sys.stderr)
        return 1
    except tracemod.CaptureError as exc:
        print(f"tracecat: corrupt capture: {exc}", file=sys.stderr)
        return 1
    for rec in tracemod.decode_trace(events, args.watchdog_us):
        print(tracemod.format_record(rec))
    return 0


# gcdbench

def read_pairs(path: str) -> List[Tuple[int, int]]:
    pairs = []
    with open(path) as fp:
        for line in fp:
            line = line.split("#", 1)[0].replace(",", " ").split()
            if line:
                pairs.append((int(line[0], 0), int(line[1], 0)))
    return pairs


def run_gcdbench(bridge: InitiatorBridge, pairs, out=None, gcd_base: int = 0x50004000):
    """Benchmark rows as dicts; raises BusFault or RuntimeError on failure."""
    out = out or sys.stdout
    rows = []
    print(f"{'A':>10} {'B':>10} {'SW':>6} {'HW':>6} {'agree':>5} {'SW steps':>10} "
          f"{'HW txns':>7} {'SW [s]':>9} {'HW [s]':>9}", file=out)
    for a, b in pairs:
        t0 = time.perf_counter()
        sw, steps = sw_gcd_reference(a, b)
        t1 = time.perf_counter()
        hw, txns = hw_gcd(bridge, a, b, base=gcd_base)
        t2 = time.perf_counter()
        agree = sw == hw == gcd_modulo(a, b)
        row = dict(a=a, b=b, sw=sw, hw=hw, agree=agree, sw_steps=steps, hw_transactions=txns,
                   sw_seconds=t1 - t0, hw_seconds=t2 - t1)
        rows.append(row)
        print(f"{a:>10} {b:>10} {sw:>6} {hw:>6} {'yes' if agree else 'NO':>5} {steps:>10} "
              f"{txns:>7} {t1 - t0:>9.4f} {t2 - t1:>9.4f}", file=out)
        if not agree:
            raise RuntimeError(f"gcd({a}, {b}): software {sw} != accelerator {hw}")
    return rows


def cmd_gcdbench(args) -> int:
    try:
        pairs = read_pairs(args.pairs) if args.pairs else list(GCD_TABLE)
    except (OSError, ValueError, IndexError) as exc:
        print(f"gcdbench: bad pairs file: {exc}", file=sys.stderr)
        return 1
    try:
        ch = open_channel(args.channel, read_deadline=args.timeout)
    except (ChannelClosed, OSError, ValueError) as exc:
        print(f"transport error: {exc}", file=sys.stderr)
        return EXIT_TRANSPORT
    bridge = InitiatorBridge(ch, response_deadline=args.timeout)
    try:
        run_gcdbench(bridge, pairs, gcd_base=args.base)
    except BusFault as exc:
        print(f"gcdbench: {exc}", file=sys.stderr)
        return EXIT_TRANSPORT
    except RuntimeError as exc:
        print(f"gcdbench: {exc}", file=sys.stderr)
        return 1
    finally:
        ch.close()
    return 0


# argument parsing

def _add_channel(p):
    p.add_argument("--channel", "-c", default=os.environ.get(CHANNEL_ENV, DEFAULT_CHANNEL),
                   help=f"tcp:host:port | pipe:path | serial:dev:baud (env {CHANNEL_ENV})")
    p.add_argument("--timeout", type=float, default=0.5, help="response deadline in seconds")


def _responderd_parser(p):
    p.add_argument("--listen", default="tcp:127.0.0.1:7450")
    p.add_argument("--watchdog-ms", type=float, default=2.0)
    p.add_argument("--map", help="memory map file: NAME BASE MASK KIND [irq-line] per line")
    p.add_argument("--pins", action="append", default=[], metavar="BANK=LEVELS",
                   help="initial external pin levels, e.g. gpio_a=0x81")
    p.add_argument("--rtc", metavar="BANK", help="wire a 3-wire RTC to pins 8/9/10 of BANK")
    p.add_argument("--breadboard", metavar="tcp:HOST:PORT",
                   help="serve the pin side channel")
    p.add_argument("--line-baud", type=int, help="pace TCP traffic like a UART at this baud")
    p.set_defaults(func=cmd_responderd)


def _busctl_parser(p):
    _add_channel(p)
    p.add_argument("--trace", help="write a capture of the exchange to this file")
    sub = p.add_subparsers(dest="op", required=True)
    r = sub.add_parser("read")
    r.add_argument("address", type=hex_int)
    w = sub.add_parser("write")
    w.add_argument("address", type=hex_int)
    w.add_argument("value", type=hex_int)
    sub.add_parser("irqs")
    sub.add_parser("reset")
    s = sub.add_parser("settime")
    s.add_argument("millis", type=int)
    sub.add_parser("exit")
    p.set_defaults(func=cmd_busctl)


def _tracecat_parser(p):
    p.add_argument("capture")
    p.add_argument("--watchdog-us", type=float,
                   help="flag requests interrupted by this much silence")
    p.set_defaults(func=cmd_tracecat)


def _gcdbench_parser(p):
    _add_channel(p)
    p.add_argument("--pairs", help="file with one 'A B' pair per line (default: builtin table)")
    p.add_argument("--base", type=hex_int, default=0x50004000)
    p.set_defaults(func=cmd_gcdbench)


TOOLS = {
    "responderd": _responderd_parser,
    "busctl": _busctl_parser,
    "tracecat": _tracecat_parser,
    "gcdbench": _gcdbench_parser,
}


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = argparse.ArgumentParser(prog="busbridge")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="tool", required=True)
    for name, build in TOOLS.items():
        build(sub.add_parser(name))
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING)
    return args.func(args)


def _tool_main(name):
    def entry(argv=None):
        parser = argparse.ArgumentParser(prog=name)
        TOOLS[name](parser)
        args = parser.parse_args(argv)
        logging.basicConfig(level=logging.WARNING)
        return args.func(args)
    return entry


responderd_main = _tool_main("responderd")
busctl_main = _tool_main("busctl")
tracecat_main = _tool_main("tracecat")
gcdbench_main = _tool_main("gcdbench")

if __name__ == "__main__":
    sys.exit(main())
