import pytest

from bubbletower import ModelParams

_ACCEPTANCE: dict[str, tuple[bool, str]] = {}


def record(criterion: str, passed: bool, detail: str) -> None:
    """Store and print one acceptance line; the terminal summary repeats them."""
    _ACCEPTANCE[criterion] = (bool(passed), detail)
    print(f"{'PASS' if passed else 'FAIL'} {criterion}: {detail}")


def pytest_terminal_summary(terminalreporter):
    if not _ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")

    def key(name):
        head = name.split()[1] if name.startswith("criterion") else name
        digits = "".join(ch for ch in head if ch.isdigit())
        return (int(digits) if digits else 99, name)

    for name in sorted(_ACCEPTANCE, key=key):
        passed, detail = _ACCEPTANCE[name]
        terminalreporter.write_line(f"{'PASS' if passed else 'FAIL'} {name}: {detail}")


@pytest.fixture(scope="session")
def P4():
    return ModelParams(4)
