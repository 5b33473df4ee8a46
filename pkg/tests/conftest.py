import pytest

VERDICTS: list[str] = []


def record_verdict(number: int, title: str, passed: bool, detail: str) -> None:
    """Keep a one-line outcome for the acceptance summary."""
    VERDICTS.append(f"criterion {number:2d} [{'PASS' if passed else 'FAIL'}] {title}: {detail}")


@pytest.fixture
def verdict(capsys):
    def report(number, title, passed, detail=""):
        record_verdict(number, title, passed, detail)
        with capsys.disabled():
            print(f"\n{VERDICTS[-1]}")
        return passed

    return report


def pytest_terminal_summary(terminalreporter):
    if VERDICTS:
        terminalreporter.section("acceptance criteria")
        for line in sorted(VERDICTS):
            terminalreporter.write_line(line)
