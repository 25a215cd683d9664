"""Bit-banged RTC over the bridge: set once, then read back across simulated days."""
import argparse
import datetime as dt
import time
from dataclasses import dataclass

from busbridge.cli import make_environment
from busbridge.drivers import Ds1302Driver, GpioPins
from busbridge.initiator import InitiatorBridge, TimePolicy
from busbridge.responder import DEFAULT_MEMORY_MAP, build_responder, serve_in_thread
from busbridge.transport import loopback_pair


@dataclass
class Config:
    days: int = 7
    reads_per_day: int = 4
    start: str = "2024-02-27T22:15:00"


class VirtualTick:
    def __init__(self):
        self.t = 0.0

    def __call__(self):
        return self.t


def run(cfg: Config):
    tick = VirtualTick()
    env = make_environment(DEFAULT_MEMORY_MAP, rtc_bank="gpio_b", tick_source=tick)
    ini, resp = loopback_pair()
    thread = serve_in_thread(build_responder(env=env), resp)
    bridge = InitiatorBridge(ini, time_policy=TimePolicy.SIMULATION_TIME)
    drv = Ds1302Driver(GpioPins(bridge, 0x50002000))
    start = dt.datetime.fromisoformat(cfg.start)
    wall0 = time.perf_counter()
    drv.set_datetime(start)
    worst = 0.0
    step = 86400 / cfg.reads_per_day
    for i in range(1, cfg.days * cfg.reads_per_day + 1):
        tick.t = i * step
        got = drv.get_datetime()
        want = start + dt.timedelta(seconds=i * step)
        err = abs((got - want).total_seconds())
        worst = max(worst, err)
        print(f"t+{i * step / 86400:6.2f} d  read {got.isoformat(' ')}  error {err:.0f} s")
    print(f"{bridge.client.transactions} bus transactions, worst error {worst:.0f} s, "
          f"host time {time.perf_counter() - wall0:.2f} s")
    ini.close()
    thread.join(2)
    return worst


if __name__ == "__main__":
    p = argparse.ArgumentParser(description=__doc__)
    p.add_argument("--days", type=int, default=Config.days)
    p.add_argument("--reads-per-day", type=int, default=Config.reads_per_day)
    p.add_argument("--start", default=Config.start)
    a = p.parse_args()
    run(Config(a.days, a.reads_per_day, a.start))
