import pytest

# criterion id -> (passed, detail); filled by test_acceptance.py
ACCEPTANCE = {}


def record(cid, passed, detail):
    ACCEPTANCE[cid] = (bool(passed), detail)
    line = f"C{cid} {'PASS' if passed else 'FAIL'}: {detail}"
    print(line)
    return line


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for cid in sorted(ACCEPTANCE):
        ok, detail = ACCEPTANCE[cid]
        terminalreporter.write_line(f"C{cid} {'PASS' if ok else 'FAIL'}: {detail}")


@pytest.fixture
def acceptance():
    return record
