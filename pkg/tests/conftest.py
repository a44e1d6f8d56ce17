import pytest

import dissipnet.optimizer as opt_mod
import _report

CONE_TOL = 1e-9


class _RecordedHistory(opt_mod.IterateHistory):
    def __init__(self, *args, **kwargs):
        super().__init__(*args, **kwargs)
        _report.RUNS.append(self)


@pytest.fixture(autouse=True, scope="session")
def _record_every_run():
    """Keep every descent history produced in this session for the invariant check."""
    original = opt_mod.IterateHistory
    opt_mod.IterateHistory = _RecordedHistory
    yield
    opt_mod.IterateHistory = original


def _suite_invariants():
    runs = [h for h in _report.RUNS if len(h)]
    bad_mono = sum(not h.is_monotone() for h in runs)
    bad_cone = sum(h.max_cone_violation() > CONE_TOL for h in runs)
    iterates = sum(len(h) for h in runs)
    return runs, iterates, bad_mono, bad_cone


def pytest_sessionfinish(session, exitstatus):
    runs, _, bad_mono, bad_cone = _suite_invariants()
    if runs and (bad_mono or bad_cone) and session.exitstatus == 0:
        session.exitstatus = 1


def pytest_terminal_summary(terminalreporter):
    runs, iterates, bad_mono, bad_cone = _suite_invariants()
    tr = terminalreporter
    if runs:
        tr.section("descent invariants over every run in this session")
        tr.write_line(f"{len(runs)} runs, {iterates} recorded iterates")
        tr.write_line(f"cone membership (tol {CONE_TOL:g}): "
                      f"{'PASS' if not bad_cone else 'FAIL'} ({bad_cone} runs violating)")
        tr.write_line(f"monotone energy: {'PASS' if not bad_mono else 'FAIL'} "
                      f"({bad_mono} runs violating)")
    if _report.RESULTS:
        tr.section("acceptance criteria")
        for key in sorted(_report.RESULTS, key=lambda k: (int(k.split()[0]), k)):
            ok, detail = _report.RESULTS[key]
            tr.write_line(f"criterion {key}: {'PASS' if ok else 'FAIL'}  {detail}")
