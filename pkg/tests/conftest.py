import warnings

import pytest

from mpcmr.fpca import fit_fpca
from mpcmr.pipeline import fit_mpcmr
from mpcmr.simgen import SimConfig, gen_dataset

from rigs import analytic_linear_model

# CRITERION lines appended by test_acceptance, echoed after the test run.
ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.line(line)


def _fit_quiet(data, **kwargs):
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        return fit_fpca(data, **kwargs)


@pytest.fixture(scope="session")
def sim_a():
    return gen_dataset(SimConfig(n=2000, exposure_scenario="A",
                                 outcome_scenario=1, seed=11))


@pytest.fixture(scope="session")
def sim_b():
    return gen_dataset(SimConfig(n=2000, exposure_scenario="B",
                                 outcome_scenario=3, seed=12))


@pytest.fixture(scope="session")
def sim_c():
    return gen_dataset(SimConfig(n=2000, exposure_scenario="C",
                                 outcome_scenario=3, seed=13))


@pytest.fixture(scope="session")
def model_a(sim_a):
    return _fit_quiet(sim_a.sparse_exposure, max_components=2)


@pytest.fixture(scope="session")
def model_b(sim_b):
    return _fit_quiet(sim_b.sparse_exposure, max_components=2)


@pytest.fixture(scope="session")
def model_c(sim_c):
    return _fit_quiet(sim_c.sparse_exposure, max_components=2)


@pytest.fixture(scope="session")
def fit_a_poly(sim_a, model_a):
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        return fit_mpcmr(sim_a.sparse_exposure, sim_a.genotype, sim_a.outcome,
                         basis="poly", model=model_a)


@pytest.fixture(scope="session")
def fit_c_poly(sim_c, model_c):
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        return fit_mpcmr(sim_c.sparse_exposure, sim_c.genotype, sim_c.outcome,
                         basis="poly", model=model_c)


@pytest.fixture(scope="session")
def sim_c_big():
    """Full-size strong-instrument dataset, shared by slow estimator checks."""
    return gen_dataset(SimConfig(n=10000, exposure_scenario="C",
                                 outcome_scenario=3, seed=101))


@pytest.fixture(scope="session")
def model_c_big(sim_c_big):
    return _fit_quiet(sim_c_big.sparse_exposure, max_components=2)


@pytest.fixture(scope="session")
def linear_model():
    return analytic_linear_model()
