import json
from dataclasses import replace

import numpy as np
import pytest
from scipy import stats

from modules.sim.scenarios import (
    FULL_REPLICATES,
    SCENARIOS,
    Scenario,
    load_scenario,
    replicate_rng,
    sample_uniform_stiefel,
    simulate_dataset,
)
from modules.data.data_models import FactorMatrix, orthonormality_defect
from modules.utils.errors import GPPCAArgumentError


def test_replicates_are_reproducible_and_independent():
    scenario = SCENARIOS["demo"]
    a = simulate_dataset(scenario, 3)
    b = simulate_dataset(scenario, 3)
    c = simulate_dataset(scenario, 4)

    assert np.array_equal(a.Y, b.Y)
    assert not np.array_equal(a.Y, c.Y)
    assert np.array_equal(simulate_dataset(replace(scenario, base_seed=1), 3).Y,
                          simulate_dataset(replace(scenario, base_seed=1), 3).Y)


def test_dataset_shapes_and_truth():
    scenario = SCENARIOS["shared_cov"]
    data = simulate_dataset(scenario, 0)

    assert data.Y.shape == (8, 200)
    assert data.Z_true.shape == (4, 200)
    assert orthonormality_defect(data.A_true) < 1e-12
    np.testing.assert_allclose(data.mean_true, data.A_raw @ data.Z_true)
    np.testing.assert_array_equal(data.grid.points[:, 0], np.arange(1.0, 201.0))
    Y, A, Z, mean = data.as_tuple()
    assert FactorMatrix(Z).values.shape == (4, 200)
    assert Y is data.Y and A is data.A_true and mean is data.mean_true


def test_noise_has_the_scenario_variance():
    scenario = SCENARIOS["demo"]
    resid = np.concatenate([
        (d.Y - d.mean_true).ravel() for d in (simulate_dataset(scenario, r) for r in range(20))
    ])

    assert abs(np.mean(resid)) < 0.06
    assert np.var(resid) == pytest.approx(scenario.noise_variance, rel=0.1)


def test_uniform_stiefel_first_coordinate_law():
    # the first entry of a uniform unit vector in R^k has (x + 1)/2 ~ Beta((k-1)/2, (k-1)/2)
    rng = replicate_rng(0, 0)
    k = 5
    samples = np.array([sample_uniform_stiefel(k, 1, rng).values[0, 0] for _ in range(2000)])
    beta = stats.beta((k - 1) / 2.0, (k - 1) / 2.0)

    assert stats.kstest((samples + 1.0) / 2.0, beta.cdf).pvalue > 1e-3


def test_held_out_points_are_disjoint():
    data = simulate_dataset(replace(SCENARIOS["shared_cov_calibration"], n_test=10), 0)

    assert data.test_Y.shape == (8, 10)
    assert data.Y.shape == (8, 200)
    assert not set(data.test_inputs[:, 0]) & set(data.grid.points[:, 0])


def test_distinct_ranges_are_drawn_per_factor():
    data = simulate_dataset(SCENARIOS["diff_cov"], 0)

    assert len(data.gammas) == 4
    assert all(10.0 <= g <= 1000.0 for g in data.gammas)
    assert len(set(data.gammas)) == 4


def test_cosine_factors_are_deterministic_given_thetas():
    scenario = replace(SCENARIOS["deterministic_cosine"], cosine_thetas=(0.1, 0.2, 0.3, 0.4))
    data = simulate_dataset(scenario, 0)
    x = data.grid.points[:, 0]

    np.testing.assert_allclose(data.Z_true[2], np.cos(0.05 * np.pi * 0.3 * x))


def test_load_scenario_overrides_and_files(tmp_path):
    assert load_scenario("demo", full_scale=True).replicates == FULL_REPLICATES
    assert load_scenario("demo", replicates=3, seed=9).base_seed == 9

    path = tmp_path / "custom.json"
    path.write_text(json.dumps({**SCENARIOS["demo"].to_dict(), "name": "custom", "k": 3}), encoding="utf-8")
    custom = load_scenario(str(path))
    assert (custom.name, custom.k) == ("custom", 3)

    with pytest.raises(GPPCAArgumentError, match="unknown scenario"):
        load_scenario("nope")


def test_invalid_scenarios_are_rejected():
    with pytest.raises(GPPCAArgumentError):
        Scenario("x", k=2, d=3, n=10, sigma0_sq=1.0)
    with pytest.raises(GPPCAArgumentError, match="sigma0_sq or tau"):
        Scenario("x", k=2, d=1, n=10)
