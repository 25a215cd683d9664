"""Software vs accelerator GCD over the bridge, with subtraction step counts."""
import argparse
from dataclasses import dataclass

from busbridge.cli import GCD_TABLE, run_gcdbench
from busbridge.initiator import InitiatorBridge
from busbridge.responder import build_responder, serve_in_thread
from busbridge.transport import LineModel, VirtualClock, loopback_pair


@dataclass
class Config:
    baud: int = 115200
    gcd_latency_polls: int = 0


def run(cfg: Config):
    clock = VirtualClock()
    ini, resp = loopback_pair(LineModel(cfg.baud), clock=clock)
    core = build_responder()
    core["gcd"].latency_polls = cfg.gcd_latency_polls
    thread = serve_in_thread(core, resp, clock=clock.now)
    bridge = InitiatorBridge(ini)
    t0 = clock.now()
    rows = run_gcdbench(bridge, GCD_TABLE)
    link_ms = (clock.now() - t0) * 1e3
    ini.close()
    thread.join(2)
    print(f"modeled link time for {len(rows)} accelerator runs: {link_ms:.2f} ms")
    return rows


if __name__ == "__main__":
    p = argparse.ArgumentParser(description=__doc__)
    p.add_argument("--baud", type=int, default=Config.baud)
    p.add_argument("--latency-polls", type=int, default=Config.gcd_latency_polls)
    a = p.parse_args()
    run(Config(a.baud, a.latency_polls))
