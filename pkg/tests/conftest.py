"""Shared pytest plumbing: the per-criterion acceptance summary."""

import contextlib

RESULTS = {}


@contextlib.contextmanager
def criterion(number, title):
    """Record PASS/FAIL for one acceptance criterion; details go in ``info["detail"]``."""
    info = {"detail": ""}
    try:
        yield info
    except BaseException as e:
        msg = str(e).strip().splitlines()[0] if str(e).strip() else ""
        RESULTS[number] = (False, title, f"{type(e).__name__}: {msg}"[:800])
        print(f"criterion {number} ({title}): FAIL {RESULTS[number][2]}")
        raise
    RESULTS[number] = (True, title, info["detail"])
    print(f"criterion {number} ({title}): PASS {info['detail']}")


def pytest_terminal_summary(terminalreporter):
    if not RESULTS:
        return
    terminalreporter.write_sep("=", "acceptance criteria")
    for n in sorted(RESULTS):
        ok, title, detail = RESULTS[n]
        terminalreporter.write_line(f"criterion {n:>2} {'PASS' if ok else 'FAIL'}  {title}: {detail}")
