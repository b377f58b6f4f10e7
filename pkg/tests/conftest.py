import random

import numpy as np
import pytest

from tcoord.topology import Digraph, DigraphSchedule, delta_spanning_tree_root


def random_connected_schedule(rng: random.Random, n: int, max_segments: int = 6):
    """Cycling schedule whose union graph has a spanning tree.

    Returns ``(schedule, T, delta)`` with ``T`` one period, so every window
    sees each segment for exactly its dwell; ``delta`` is the smallest
    integrated union weight.
    """
    while True:
        m = rng.randint(1, max_segments)
        segs = []
        for _ in range(m):
            a = np.zeros((n, n))
            for i in range(n):
                for j in range(n):
                    if i != j and rng.random() < 0.25:
                        a[i, j] = 1.0
            segs.append((Digraph(a), rng.choice([0.05, 0.1, 0.15, 0.2])))
        s = DigraphSchedule(tuple(segs), cycle=True)
        T = s.period
        w = -s.integrated_laplacian(0.0, T).matrix
        np.fill_diagonal(w, 0.0)
        if not (w > 0).any():
            continue
        delta = float(w[w > 0].min())
        if delta_spanning_tree_root(s.integrated_laplacian(0.0, T), delta) is not None:
            return s, T, delta


@pytest.fixture
def rng():
    return random.Random(20260101)


# -- acceptance reporting ----------------------------------------------------

_criteria: dict[int, tuple[str, str, float]] = {}


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(number, title): acceptance criterion")


def pytest_runtest_makereport(item, call):
    mark = item.get_closest_marker("criterion")
    if mark is None:
        return
    num, title = mark.args
    if call.when == "setup" and call.excinfo is not None:
        _criteria[num] = (title, "FAIL", 0.0)
    elif call.when == "call":
        _criteria[num] = (title, "FAIL" if call.excinfo is not None else "PASS", call.duration)


def pytest_terminal_summary(terminalreporter):
    if not _criteria:
        return
    terminalreporter.section("acceptance criteria")
    for num in sorted(_criteria):
        title, verdict, dur = _criteria[num]
        terminalreporter.write_line(f"criterion {num}: {verdict}  {title}  ({dur:.2f} s)")
