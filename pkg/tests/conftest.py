import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from phaseprobe.apt_ingest import IonEvents

settings.register_profile("default", deadline=None, suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")


def pulse_stream(sizes, seed=0, mult=None):
    """Events for consecutive pulse groups of the given sizes.

    Each group leader gets pulse_delta >= 1, followers 0; multiplicity equals
    the group size unless ``mult`` overrides it per event.
    """
    rng = np.random.default_rng(seed)
    n = int(sum(sizes))
    pd = np.zeros(n, np.int64)
    m = np.zeros(n, np.int64)
    k = 0
    for s in sizes:
        pd[k] = rng.integers(1, 5)
        m[k:k + s] = s
        k += s
    if mult is not None:
        m = np.asarray(mult)
    return IonEvents.from_columns(
        x=rng.uniform(-10, 10, n), y=rng.uniform(-10, 10, n), z=rng.uniform(0, 100, n),
        mz=rng.uniform(1, 200, n), det_x=rng.uniform(-20, 20, n), det_y=rng.uniform(-20, 20, n),
        pulse_delta=pd, multiplicity=m)


@pytest.fixture(scope="session")
def small_specimen():
    from phaseprobe import synth

    spec = synth.trilayer_spec(n_ions=60_000, n_delta=400, n_epsilon=100, seed=11)
    table = synth.default_range_table()
    events, truth = synth.gen_apt_specimen(spec, table)
    return events, truth, table


def pytest_configure(config):
    config._acceptance_lines = []


def pytest_terminal_summary(terminalreporter, config):
    lines = getattr(config, "_acceptance_lines", [])
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in sorted(lines):
            terminalreporter.write_line(line)


@pytest.fixture
def report(request):
    """Record one PASS/FAIL line for an acceptance criterion."""

    def _report(number: int, ok: bool, detail: str):
        line = f"criterion {number}: {'PASS' if ok else 'FAIL'}  {detail}"
        request.config._acceptance_lines.append(line)
        print(line)
        return ok

    return _report
