"""Modeled read/write transaction latency over a paced loopback link.

Prints per-transaction modeled times and writes a capture that tracecat
can annotate.
"""
import argparse
import statistics
from dataclasses import dataclass

from busbridge.cli import make_environment
from busbridge.initiator import InitiatorBridge
from busbridge.responder import DEFAULT_MEMORY_MAP, build_responder, serve_in_thread
from busbridge.trace import write_capture
from busbridge.transport import (ChannelTap, LineModel, VirtualClock, loopback_pair,
                                 modeled_transaction_time)

MEASURED_US = {"read": 848.25, "write": 859.75}


@dataclass
class Config:
    baud: int = 115200
    bits_per_byte: int = 10
    repeats: int = 100
    capture: str = ""


def run(cfg: Config):
    model = LineModel(cfg.baud, cfg.bits_per_byte)
    clock = VirtualClock()
    env = make_environment(DEFAULT_MEMORY_MAP, pins=[("gpio_a", 0x81)])
    ini, resp = loopback_pair(model, clock=clock)
    thread = serve_in_thread(build_responder(env=env), resp, clock=clock.now)
    tap = ChannelTap(ini, clock=clock)
    bridge = InitiatorBridge(tap)
    times = {"read": [], "write": []}
    for _ in range(cfg.repeats):
        for kind, op in (("read", lambda: bridge.read(0x50001008)),
                         ("write", lambda: bridge.write(0x50001000, 0))):
            t0 = clock.now()
            assert op().ok
            times[kind].append((clock.now() - t0) * 1e6)
    ini.close()
    thread.join(2)
    if cfg.capture:
        with open(cfg.capture, "w") as fp:
            write_capture(tap.events, fp)
    sizes = {"read": (5, 5), "write": (9, 1)}
    for kind, samples in times.items():
        wire = modeled_transaction_time(model, *sizes[kind]) * 1e6
        dev = abs(wire - MEASURED_US[kind]) / MEASURED_US[kind]
        print(f"{kind:5s} mean {statistics.mean(samples):8.2f} us  model {wire:8.2f} us  "
              f"measured {MEASURED_US[kind]:8.2f} us  deviation {dev:.2%}")
    return times


if __name__ == "__main__":
    p = argparse.ArgumentParser(description=__doc__)
    p.add_argument("--baud", type=int, default=Config.baud)
    p.add_argument("--repeats", type=int, default=Config.repeats)
    p.add_argument("--capture", default="")
    a = p.parse_args()
    run(Config(baud=a.baud, repeats=a.repeats, capture=a.capture))
