import numpy as np
import pytest

from reconlab.datagen import PhantomSpec, generate_phantom


@pytest.fixture(scope="session")
def phantom_frame() -> np.ndarray:
    """One [0, 1] frame of the cardiac phantom at 64 x 64."""
    cine = generate_phantom(PhantomSpec.sample(11, 0, matrix=64))
    frame = cine.data[0].astype(np.float64)
    return (frame - frame.min()) / (frame.max() - frame.min())


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


# --------------------------------------------------------------------------- acceptance report

def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(n, title): acceptance criterion checked by a test")
    config._criteria = {}


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    mark = item.get_closest_marker("criterion")
    if mark is None:
        return
    n, title = mark.args
    entry = item.config._criteria.setdefault(n, {"title": title, "ok": True, "ran": False,
                                                  "notes": []})
    if rep.failed or rep.skipped:
        entry["ok"] = False
    if rep.when == "call":
        entry["ran"] = True
        entry["notes"].extend(f"{k}={v}" for k, v in item.user_properties)


def pytest_terminal_summary(terminalreporter, config):
    crit = getattr(config, "_criteria", {})
    if not crit:
        return
    terminalreporter.write_sep("=", "acceptance criteria")
    for n in sorted(crit):
        e = crit[n]
        status = "PASS" if e["ok"] and e["ran"] else "FAIL"
        line = f"[{status}] criterion {n:2d}: {e['title']}"
        if e["notes"]:
            line += "  (" + ", ".join(e["notes"]) + ")"
        terminalreporter.write_line(line)
