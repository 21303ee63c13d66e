"""Shared expensive runs and the acceptance summary.

Full-resolution runs are computed once per session and reused by every
acceptance test that needs them.  Tests marked ``criterion`` contribute one
PASS/FAIL line per criterion to the terminal summary.
"""

from dataclasses import replace

import pytest

from smectic_flow.experiments import (
    preset_accuracy,
    preset_chevron,
    preset_shear,
    run_accuracy,
    run_chevron,
    run_shear,
    simulate,
)

_RESULTS: dict = {}
_DETAILS: dict = {}


@pytest.fixture
def detail(request):
    """Append a line to the acceptance detail of the running test."""
    lines = _DETAILS.setdefault(request.node.nodeid, [])
    return lines.append


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    marker = item.get_closest_marker("criterion")
    if marker is None:
        return
    if rep.when == "call" or (rep.when == "setup" and not rep.passed):
        cid, title = marker.args
        entry = _RESULTS.setdefault(cid, {"title": title, "runs": []})
        lines = list(_DETAILS.get(item.nodeid, []))
        if rep.failed:
            msg = str(rep.longrepr.reprcrash.message if hasattr(rep.longrepr, "reprcrash") else rep.longrepr)
            lines.append(msg.splitlines()[0][:200])
        entry["runs"].append((rep.passed, item.name, lines))


def pytest_terminal_summary(terminalreporter):
    if not _RESULTS:
        return
    tr = terminalreporter
    tr.section("acceptance criteria")

    def key(cid):
        return (0, cid, "") if isinstance(cid, int) else (1, 0, str(cid))

    for cid in sorted(_RESULTS, key=key):
        entry = _RESULTS[cid]
        ok = all(passed for passed, _, _ in entry["runs"])
        tr.write_line(f"{'PASS' if ok else 'FAIL'}  [{cid}] {entry['title']}")
        for passed, name, lines in entry["runs"]:
            tr.write_line(f"        {'ok  ' if passed else 'FAIL'} {name}")
            for line in lines:
                tr.write_line(f"             {line}")


# --- cached runs -------------------------------------------------------------------

@pytest.fixture(scope="session")
def chevron_run():
    return run_chevron(preset_chevron(42))


@pytest.fixture(scope="session")
def chevron_run_repeat():
    return run_chevron(preset_chevron(42))


_DT_CACHE: dict = {}


@pytest.fixture(scope="session")
def chevron_dt_run(chevron_run):
    """Chevron preset at another time step: 0.8 time units, or 20 steps when dt = 1."""

    def get(dt):
        if dt == 1e-3:
            return chevron_run.run
        if dt not in _DT_CACHE:
            base = preset_chevron(42)
            t_final = 20.0 if dt == 1.0 else base.t_final
            cfg = replace(base, scheme=replace(base.scheme, dt=dt), t_final=t_final, snapshot_times=())
            _DT_CACHE[dt] = simulate(cfg)
        return _DT_CACHE[dt]

    return get


@pytest.fixture(scope="session")
def shear_run(chevron_run):
    return run_shear(preset_shear(42), baseline=chevron_run)


@pytest.fixture(scope="session")
def accuracy_table():
    return run_accuracy(preset_accuracy(), (8e-3, 4e-3, 2e-3, 1e-3, 5e-4), 1e-4)
