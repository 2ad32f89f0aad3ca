import re

import numpy as np
import pytest

from firntopo.image import GrayImage

_ACCEPTANCE: list[tuple[int, str, str, str]] = []


def pytest_configure(config):
    config.addinivalue_line("markers", "acceptance(number, title): exit criterion")


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    marker = item.get_closest_marker("acceptance")
    if marker is None:
        return
    if rep.when == "call" or (rep.when == "setup" and rep.outcome != "passed"):
        detail = "; ".join(str(v) for k, v in item.user_properties if k == "detail")
        status = "PASS" if rep.passed else ("SKIP" if rep.skipped else "FAIL")
        _ACCEPTANCE.append((marker.args[0], marker.args[1], status, detail))


def _criterion_key(row):
    num, suffix = re.match(r"(\d+)(.*)", str(row[0])).groups()
    return int(num), suffix


def pytest_terminal_summary(terminalreporter):
    if not _ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for number, title, status, detail in sorted(_ACCEPTANCE, key=_criterion_key):
        line = f"[{status}] criterion {number}: {title}"
        if detail:
            line += f" ({detail})"
        terminalreporter.write_line(line)


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)


def ring_image(border=0, center=5) -> GrayImage:
    px = np.full((3, 3), border)
    px[1, 1] = center
    return GrayImage(px)


DIHEDRAL = [
    ("identity", lambda a: a),
    ("rot90", lambda a: np.rot90(a, 1)),
    ("rot180", lambda a: np.rot90(a, 2)),
    ("rot270", lambda a: np.rot90(a, 3)),
    ("flip_lr", np.fliplr),
    ("flip_ud", np.flipud),
    ("transpose", lambda a: a.T),
    ("anti_transpose", lambda a: np.rot90(a, 2).T),
]
