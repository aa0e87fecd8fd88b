import pytest

ACCEPTANCE: dict[str, tuple[str, str]] = {}


@pytest.fixture
def verdict(request):
    """Record one acceptance line; the id comes from the ``criterion`` marker.

    ``record(True/False, detail)`` logs PASS/FAIL, ``record(None, reason)`` logs SKIP.
    """
    cid = request.node.get_closest_marker("criterion").args[0]
    ACCEPTANCE[cid] = ("FAIL", "did not finish")

    def record(ok, detail: str):
        ACCEPTANCE[cid] = ("SKIP" if ok is None else "PASS" if ok else "FAIL", detail)
        return ok

    return record


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")

    def order(cid):
        num = "".join(ch for ch in cid if ch.isdigit())
        return (int(num), cid)

    for cid in sorted(ACCEPTANCE, key=order):
        status, detail = ACCEPTANCE[cid]
        terminalreporter.write_line(f"criterion {cid:<4} {status}  {detail}")
