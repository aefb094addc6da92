from hypothesis import settings

settings.register_profile("mfplan", deadline=None, max_examples=60)
settings.load_profile("mfplan")

import pytest

_CRITERIA: dict[str, str] = {}


@pytest.fixture(scope="session")
def criterion():
    """Record one pass/fail line per acceptance criterion."""

    def report(name: str, ok: bool, detail: str) -> bool:
        line = f"{'PASS' if ok else 'FAIL'}  {name}: {detail}"
        _CRITERIA[name] = line
        print(line)
        return ok

    return report


def pytest_terminal_summary(terminalreporter):
    if _CRITERIA:
        terminalreporter.section("acceptance criteria")
        for name in sorted(_CRITERIA, key=lambda k: int(k.split()[0][1:])):
            terminalreporter.write_line(_CRITERIA[name])
