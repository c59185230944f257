import contextlib

# (criterion, title, passed, detail) rows filled by test_acceptance.py
ACCEPTANCE = []


@contextlib.contextmanager
def criterion(number, title):
    detail = {}
    try:
        yield detail
    except BaseException:
        ACCEPTANCE.append((number, title, False, detail))
        raise
    ACCEPTANCE.append((number, title, True, detail))


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for number, title, ok, detail in sorted(ACCEPTANCE, key=lambda r: r[0]):
        extra = "; ".join(f"{k}={v}" for k, v in detail.items())
        terminalreporter.write_line(f"[{'PASS' if ok else 'FAIL'}] {number}. {title}"
                                    + (f" ({extra})" if extra else ""))
