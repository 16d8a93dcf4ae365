import pytest
from hypothesis import strategies as st

from ipwstrata import PopulationSpec, StratumSpec

probs = st.floats(0.02, 0.98)
means = st.floats(-10, 10)
variances = st.floats(0, 25)


@st.composite
def strata_specs(draw, label="s"):
    return StratumSpec(
        label=label,
        p=draw(probs),
        mu1=draw(means),
        mu0=draw(means),
        var1=draw(variances),
        var0=draw(variances),
        n_total=draw(st.integers(2, 60)),
    )


@st.composite
def populations(draw, max_strata=5):
    k = draw(st.integers(1, max_strata))
    return PopulationSpec([draw(strata_specs(label=f"s{i}")) for i in range(k)])


@pytest.fixture
def fig1_left():
    return PopulationSpec([StratumSpec("x", 0.5, 0.0, 0.0, 4.0, 16.0, 17)])


@pytest.fixture
def fig1_right():
    return PopulationSpec([StratumSpec("x", 0.5, 1.0, 3.0, 4.0, 16.0, 17)])


def pytest_terminal_summary(terminalreporter):
    from . import test_acceptance

    if test_acceptance.RESULTS:
        terminalreporter.section("acceptance criteria")
        for key in sorted(test_acceptance.RESULTS):
            terminalreporter.write_line(test_acceptance.RESULTS[key])
