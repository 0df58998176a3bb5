import pytest

from fpdisj import parameters_from_root


@pytest.fixture(scope="session")
def strict3():
    return parameters_from_root(960, 3, "1/4", "strict")


@pytest.fixture(scope="session")
def strict4():
    return parameters_from_root(1280, 4, "1/4", "strict")


@pytest.fixture(scope="session")
def desk():
    """n = 4096, p = 3, eps = 9/10, t = 3, relaxed."""
    return parameters_from_root(16, 3, "9/10", "relaxed")


@pytest.fixture(scope="session")
def tiny():
    """n = 64 (m = 4, p = 3), t forced to 2."""
    return parameters_from_root(4, 3, "1/4", "relaxed", t=2)


def pytest_terminal_summary(terminalreporter):
    import sys

    mod = sys.modules.get("test_acceptance") or sys.modules.get("tests.test_acceptance")
    results = getattr(mod, "RESULTS", None)
    if not results:
        return
    terminalreporter.section("acceptance criteria")
    for num in sorted(results):
        terminalreporter.write_line(results[num])
