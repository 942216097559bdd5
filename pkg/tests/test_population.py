import numpy as np
import pytest

from pseudopost.errors import ConfigError, GenerationError, RankError, SchemaError
from pseudopost.population import (JOLTS_COVARIATES, CovariateRecipe, FinitePopulation,
                                   GeneratingParams, ModelConfig, covariate_rank,
                                   default_jolts_params, generate_population, load_population,
                                   save_population, sidecar_path)


def gaussian_cfg(N=200, P=3, D=2, **recipe):
    return ModelConfig(n_units=N, D=D, P=P, recipe=CovariateRecipe(kind="gaussian", **recipe))


def params(P=3, D=2):
    B = np.zeros((P, D))
    B[0] = 0.5
    return GeneratingParams(B, 4.0 * np.eye(D))


def test_params_validation():
    with pytest.raises(ConfigError, match="Lambda"):
        GeneratingParams(np.zeros((3, 2)), np.eye(3))
    with pytest.raises(ConfigError, match="positive definite"):
        GeneratingParams(np.zeros((3, 2)), np.diag([1.0, -1.0]))
    with pytest.raises(ConfigError, match="tau_B"):
        GeneratingParams(np.zeros((3, 2)), np.eye(2), tau_B=0.0)
    p = default_jolts_params()
    assert GeneratingParams.from_dict(p.to_dict()).to_dict() == p.to_dict()


def test_generation_is_deterministic():
    a = generate_population(gaussian_cfg(), params(), seed=5)
    b = generate_population(gaussian_cfg(), params(), seed=5)
    c = generate_population(gaussian_cfg(), params(), seed=6)
    np.testing.assert_array_equal(a.responses, b.responses)
    np.testing.assert_array_equal(a.size_measure, b.size_measure)
    assert not np.array_equal(a.responses, c.responses)


def test_generated_shapes_and_invariants():
    pop = generate_population(gaussian_cfg(N=300, P=4, D=3), params(4, 3), seed=1)
    assert pop.responses.shape == (300, 3) and pop.covariates.shape == (300, 4)
    assert pop.responses.dtype.kind == "i" and pop.responses.min() >= 0
    assert np.all(pop.size_measure > 0)
    np.testing.assert_array_equal(pop.covariates[:, 0], 1.0)


def test_jolts_population_layout():
    cfg = ModelConfig(n_units=2000)
    pop = generate_population(cfg, default_jolts_params(), seed=3)
    assert pop.covariate_names == JOLTS_COVARIATES
    assert pop.response_names == ["Hires", "Seps"]
    X = pop.covariates
    assert set(np.unique(X[:, 1:7])) <= {0.0, 1.0}
    assert np.all(X[:, 1:4].sum(1) <= 1) and np.all(X[:, 4:7].sum(1) <= 1)
    assert X[:, 7].min() >= 0   # log employment of at least one worker


def test_latent_moments_match_params():
    """With a big population the count means track exp(mean + var/2)."""
    B = np.array([[1.0], [0.0]])
    p = GeneratingParams(B, np.array([[1 / 0.25]]))
    pop = generate_population(gaussian_cfg(N=200000, P=2, D=1), p, seed=0)
    expected = np.exp(1.0 + 0.25 / 2)
    assert abs(pop.responses.mean() - expected) / expected < 0.01


def test_mean_cap_names_unit():
    B = np.array([[30.0, 0.0], [0.0, 0.0], [0.0, 0.0]])
    with pytest.raises(GenerationError, match="unit 1"):
        generate_population(gaussian_cfg(), GeneratingParams(B, np.eye(2) * 100), seed=0)


def test_config_roundtrip_and_missing_recipe():
    cfg = ModelConfig(recipe=CovariateRecipe(emp_curvature=(-0.01, 0.0)))
    assert ModelConfig.from_dict(cfg.to_dict()) == cfg
    d = cfg.to_dict()
    del d["recipe"]
    with pytest.raises(ConfigError, match="recipe"):
        ModelConfig.from_dict(d)
    with pytest.raises(ConfigError, match="unknown"):
        ModelConfig.from_dict({**cfg.to_dict(), "bogus": 1})


def test_recipe_validation():
    with pytest.raises(ConfigError, match="P=9"):
        ModelConfig(P=4).validate()
    with pytest.raises(ConfigError, match="region_probs"):
        ModelConfig(recipe=CovariateRecipe(region_probs=(0.5, 0.5, 0.5, 0.5))).validate()


def test_rank_check():
    X = np.column_stack([np.ones(10), np.arange(10.0), 2 * np.arange(10.0)])
    assert covariate_rank(X) == 2
    pop = FinitePopulation(np.zeros((10, 1), dtype=int), X, np.ones(10))
    with pytest.raises(RankError) as info:
        pop.validate()
    assert info.value.rank == 2


def test_negative_count_reports_row_and_column():
    Y = np.zeros((4, 2), dtype=int)
    Y[2, 1] = -1
    pop = FinitePopulation(Y, np.column_stack([np.ones(4), np.arange(4.0)]), np.ones(4))
    with pytest.raises(SchemaError, match="row 3, column y_2"):
        pop.validate()


def test_save_load_roundtrip(tmp_path):
    pop = generate_population(gaussian_cfg(), params(), seed=9)
    path = tmp_path / "pop.csv"
    save_population(pop, path)
    assert (tmp_path / "pop.params.json").exists() and sidecar_path(path).endswith("params.json")
    back = load_population(path)
    np.testing.assert_array_equal(back.responses, pop.responses)
    np.testing.assert_array_equal(back.covariates, pop.covariates)
    np.testing.assert_array_equal(back.size_measure, pop.size_measure)
    np.testing.assert_array_equal(back.true_params.B, pop.true_params.B)
    save_population(back, tmp_path / "again.csv")
    assert (tmp_path / "again.csv").read_bytes() == path.read_bytes()


@pytest.mark.parametrize("mutate, message", [
    (lambda lines: [lines[0].replace("size", "weight")] + lines[1:], "size"),
    (lambda lines: lines[:2] + [lines[2].replace(",", ",x", 1)] + lines[3:], "line 3"),
    (lambda lines: lines[:1], "no data rows"),
])
def test_load_rejects_bad_files(tmp_path, mutate, message):
    pop = generate_population(gaussian_cfg(N=20), params(), seed=2)
    path = tmp_path / "pop.csv"
    save_population(pop, path)
    lines = path.read_text().splitlines()
    path.write_text("\n".join(mutate(lines)) + "\n")
    with pytest.raises(SchemaError, match=message):
        load_population(path)
