import numpy as np
import pytest

from pseudopost.design import InclusionProbabilities, ObservedSample, normalize_weights, \
    sample_from_indices
from pseudopost.population import CovariateRecipe, GeneratingParams, ModelConfig, \
    generate_population


def make_sample(X, Y, w=None):
    """ObservedSample from raw arrays; weights default to one."""
    X = np.asarray(X, dtype=float)
    Y = np.asarray(Y)
    n = X.shape[0]
    w = np.ones(n) if w is None else np.asarray(w, dtype=float)
    return ObservedSample(np.arange(n), Y, X, 1.0 / w, w, normalize_weights(w))


def census(pop):
    probs = InclusionProbabilities(np.ones(pop.n_units), pop.n_units)
    return sample_from_indices(pop, probs, np.arange(pop.n_units))


@pytest.fixture(scope="session")
def small_pop():
    """600-unit Gaussian-covariate population with an informative size measure."""
    B = np.array([[0.5, 0.2], [0.6, 0.4], [-0.3, 0.1]])
    cov = np.array([[0.2, 0.05], [0.05, 0.3]])
    cfg = ModelConfig(n_units=600, D=2, P=3,
                      recipe=CovariateRecipe(kind="gaussian", size_informativeness=1.0))
    return generate_population(cfg, GeneratingParams(B, np.linalg.inv(cov)), seed=11)


# ---------------------------------------------------------------- acceptance report

ACCEPTANCE_LINES = {}


@pytest.fixture()
def criterion():
    """``criterion(k, ok, detail)`` records one acceptance line and returns ``ok``."""
    def record(k, ok, detail):
        ACCEPTANCE_LINES[k] = f"criterion {k}: {'PASS' if ok else 'FAIL'}  {detail}"
        print(ACCEPTANCE_LINES[k])
        return ok
    return record


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for k in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(ACCEPTANCE_LINES[k])
