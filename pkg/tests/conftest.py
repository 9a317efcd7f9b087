import pytest

from threebody.cns import IntegratorConfig
from threebody.dynamics import Masses
from threebody.finder import OrbitGuess, newton_correct

EQUAL = Masses(1, 1, 1)

# published BHH satellite orbits with equal masses
SEED1 = dict(x1="-1.325626981682458", v1="-0.8933877752879044", v2="-0.2885702941263346",
             T="9.199307755830397", theta="0.383160887655628")
SEED2 = dict(x1="-1.609965115714630", v1="-0.6656909425824538", v2="-0.1529561125709906",
             T="6.879203007710456", theta="0.0105056462558377")


def seed_guess(values=SEED1, masses=EQUAL, family="bhh-1"):
    return OrbitGuess(masses, values["x1"], values["v1"], values["v2"], values["T"], values["theta"], family)


@pytest.fixture(scope="session")
def fast():
    return IntegratorConfig.fast()


@pytest.fixture(scope="session")
def seed1_fast(fast):
    rec = newton_correct(seed_guess(), 1e-12, cfg=fast)
    assert rec.converged
    return rec


@pytest.fixture(scope="session")
def small_grid(seed1_fast, fast):
    """Float-backend 2x2 lattice around the seed, (0.99..1.00) x (1.00..1.01)."""
    from threebody.continuation import build_seed_grid
    grid = build_seed_grid(seed1_fast, (("0.99", "1"), ("1", "1.01")), "0.01", 1e-12, fast)
    assert len(grid) == 4
    return grid


# ---------------------------------------------------------------- acceptance summary

_CRITERIA = {}


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(number, title): acceptance criterion with a summary line")


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    mark = item.get_closest_marker("criterion")
    if mark is None or (rep.when != "call" and not rep.failed):
        return
    number, title = mark.args
    detail = dict(item.user_properties).get("detail", "")
    if rep.failed and not detail:
        detail = str(call.excinfo.value).splitlines()[0] if call.excinfo else "error"
    _CRITERIA[number] = (title, rep.passed, detail)


def pytest_terminal_summary(terminalreporter):
    if not _CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(_CRITERIA):
        title, ok, detail = _CRITERIA[number]
        terminalreporter.write_line(f"criterion {number:2d} {'PASS' if ok else 'FAIL'}  {title}: {detail}")
