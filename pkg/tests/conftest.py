import math
import random

import numpy as np
import pytest

from evrp_hma.instance_io import generate_small
from evrp_hma.model import Instance, Node


def line_instance(customers, stations=(), Q=100.0, C=100.0, g=1.0, h=1.0, horizon=1000.0,
                  mu1=1000.0, mu2=1.0, time=None):
    """Cartesian instance on explicit points.

    ``customers`` items are ``(x, y, u, v, e, l, s)``; ``stations`` items are
    ``(x, y)``.  The depot sits at the origin.
    """
    nodes = [Node(0, "depot", 0, 0, 0.0, horizon, 0.0, 0.0, 0.0)]
    for c in customers:
        x, y, u, v, e, l, s = c
        nodes.append(Node(len(nodes), "customer", u, v, e, l, s, x, y))
    for x, y in stations:
        nodes.append(Node(len(nodes), "station", 0, 0, 0.0, horizon, 0.0, x, y))
    pos = np.array([(nd.x, nd.y) for nd in nodes], dtype=float)
    dist = np.sqrt(((pos[:, None, :] - pos[None, :, :]) ** 2).sum(axis=2))
    return Instance(nodes, dist, dist if time is None else time, C, Q, g, h, mu1, mu2,
                    triangle_ok=True, name="hand")


def matrix_instance(dist, kinds, Q=100.0, C=100.0, g=1.0, h=1.0, horizon=1000.0, time=None, windows=None):
    """Instance from a raw distance matrix; ``kinds`` lists node kinds in id order."""
    nodes = []
    for i, kind in enumerate(kinds):
        e, l = (0.0, horizon)
        if windows and i in windows:
            e, l = windows[i]
        nodes.append(Node(i, kind, 0, 0, e, l, 0.0, float(i), 0.0))
    dist = np.asarray(dist, dtype=float)
    return Instance(nodes, dist, dist if time is None else np.asarray(time, dtype=float), C, Q, g, h,
                    coord_mode="geographic", triangle_ok=False, name="matrix")


def random_matrix(n, seed, low=1.0, high=100.0):
    rng = np.random.default_rng(seed)
    m = rng.uniform(low, high, size=(n, n))
    np.fill_diagonal(m, 0.0)
    return m


@pytest.fixture(scope="session")
def small_instances():
    return [generate_small(seed, M=5, P=2) for seed in range(6)]


@pytest.fixture
def rng():
    return random.Random(12345)


def approx_equal(a, b, tol=1e-6):
    return math.isclose(a, b, rel_tol=0, abs_tol=tol)


# ---------------------------------------------------------------- acceptance verdicts
#
# Acceptance tests carry ``@pytest.mark.criterion("name")``.  A criterion
# passes when every test tagged with it passed; the terminal summary prints
# one PASS/FAIL line per criterion, with the details each test recorded
# through ``record_property("detail", ...)``.

_verdicts = {}


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(name): acceptance criterion this test decides")


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    report = outcome.get_result()
    mark = item.get_closest_marker("criterion")
    if mark is None:
        return
    if report.when == "call" or (report.when == "setup" and not report.passed):
        details = [str(v) for k, v in item.user_properties if k == "detail"]
        if not report.passed and report.longrepr is not None:
            lines = str(report.longrepr).strip().splitlines()
            errors = [ln for ln in lines if ln.startswith("E ")]
            details.append((errors[0] if errors else lines[-1])[:200])
        _verdicts.setdefault(mark.args[0], []).append((item.name, report.passed, details))


def pytest_terminal_summary(terminalreporter):
    if not _verdicts:
        return
    terminalreporter.section("acceptance criteria")
    for name, results in _verdicts.items():
        ok = all(passed for _, passed, _ in results)
        terminalreporter.write_line(f"{'PASS' if ok else 'FAIL'}  {name}")
        for test, passed, details in results:
            if len(results) > 1 or details:
                note = "; ".join(details)
                terminalreporter.write_line(f"        {'ok  ' if passed else 'FAIL'} {test}" + (f": {note}" if note else ""))
