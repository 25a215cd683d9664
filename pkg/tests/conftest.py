import pytest

from busbridge.initiator import InitiatorBridge, TimePolicy
from busbridge.responder import Environment, build_responder, serve_in_thread
from busbridge.transport import ChannelTap, loopback_pair

ACCEPTANCE = {}


class Link:
    """Initiator bridge wired to a responder thread over an in-memory loopback."""

    def __init__(self, core, line_model=None, clock=None, base_address=0,
                 tap=False, **bridge_kw):
        self.core = core
        self.ini, self.resp = loopback_pair(line_model, clock=clock)
        self.channel = ChannelTap(self.ini, side="I") if tap else self.ini
        self.thread = serve_in_thread(core, self.resp)
        self.bridge = InitiatorBridge(self.channel, base_address=base_address, **bridge_kw)

    def close(self):
        self.bridge.stop_irq_poller()
        self.ini.close()
        self.thread.join(2)


@pytest.fixture
def env():
    return Environment()


@pytest.fixture
def core(env):
    return build_responder(env=env)


@pytest.fixture
def link(core):
    lk = Link(core, tap=True, time_policy=TimePolicy.SIMULATION_TIME)
    yield lk
    lk.close()


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    marker = item.get_closest_marker("acceptance")
    if marker is None:
        return
    key = marker.args[0]
    if rep.when == "call" or (rep.when == "setup" and rep.outcome != "passed"):
        ok = ACCEPTANCE.get(key, (True,))[0] and rep.passed
        ACCEPTANCE[key] = (ok, marker.args[1])


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for key in sorted(ACCEPTANCE):
        ok, title = ACCEPTANCE[key]
        terminalreporter.write_line(f"AC{key} {'PASS' if ok else 'FAIL'}  {title}")
