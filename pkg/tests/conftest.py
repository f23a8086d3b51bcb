import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))

from abide import dgp  # noqa: E402
from abide.data import CovariateSchema, ExperimentDataset  # noqa: E402
from abide.montecarlo import BenchmarkConfig, run_benchmark  # noqa: E402

# acceptance lines collected by test_acceptance, echoed in the terminal summary
ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)


def make_dataset(treatment, responded, covariates, outcomes, names=("x",)):
    """Build a dataset from full-length arrays (NaN outcomes for non-respondents)."""
    return ExperimentDataset.from_arrays(CovariateSchema(tuple(names)), treatment, responded,
                                         covariates, outcomes)


@pytest.fixture
def tiny_dataset():
    # treated respondents Y = 1, 1, 0; control respondents Y = 0, 0
    t = [1, 1, 1, 1, 0, 0, 0, 0]
    r = [1, 1, 1, 0, 1, 1, 0, 0]
    x = [0.1, 0.5, 0.9, 0.3, 0.2, 0.8, 0.4, 0.6]
    y = [1, 1, 0, np.nan, 0, 0, np.nan, np.nan]
    return make_dataset(t, r, x, y)


@pytest.fixture(scope="session")
def truth_true():
    return dgp.population_truths(dgp.DgpConfig(scenario=dgp.TRUE))


@pytest.fixture(scope="session")
def study_reports():
    """Desk-scale benchmark (500 x 10K) for both scenarios, computed once."""
    out = {}
    for scenario in (dgp.TRUE, dgp.TRANSFORMED):
        import time
        start = time.perf_counter()
        report = run_benchmark(BenchmarkConfig(replicates=500, n_per_replicate=10_000,
                                               scenario=scenario, master_seed=0))
        out[scenario] = (report, time.perf_counter() - start)
    return out
