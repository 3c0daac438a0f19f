import itertools

import numpy as np
import pytest

from opeval.features import (
    FeatureMap, RffConfig, feature_map_from_dict, feature_map_to_dict, gaussian_synthetic_features,
    load_feature_map, make_rff_config, median_sq_distance, one_hot_features, random_fourier_features,
    save_feature_map, spectral_features, state_action_encoding,
)
from opeval.mdp import exact_q_value

from conftest import make_random_mdp, random_policy


def test_one_hot_row_major():
    mdp = make_random_mdp(2, 2, 0.9, seed=0)
    fm = one_hot_features(mdp)
    assert fm.dim == 4
    np.testing.assert_array_equal(fm(1, 0), [0, 0, 1, 0])


def test_norm_bound_enforced():
    with pytest.raises(ValueError):
        FeatureMap(np.full((1, 1, 2), 1.0))
    FeatureMap(np.full((1, 1, 2), 1.0), norm_bound_enforced=False)


def test_rff_zero_weights_constant():
    d = 6
    cfg = RffConfig(np.zeros((d, 5)), np.zeros(d), gamma_rff=1.0)
    fm = random_fourier_features(None, 3, 2, d, config=cfg)
    np.testing.assert_allclose(fm.matrix(), np.full((6, d), 1 / np.sqrt(d)), atol=1e-15)


def test_rff_bounds_and_determinism():
    enc = state_action_encoding(5, 3).reshape(-1, 8)
    a = random_fourier_features(enc, 5, 3, 16, rng_seed=3)
    b = random_fourier_features(enc, 5, 3, 16, rng_seed=3)
    np.testing.assert_array_equal(a.table, b.table)
    assert np.abs(a.table).max() <= 1 / np.sqrt(16) + 1e-15
    assert np.linalg.norm(a.table, axis=-1).max() <= 1 + 1e-12
    # Bandwidth follows the median heuristic.
    assert a.rff.gamma_rff == pytest.approx(1.0 / a.rff.median_sq_dist)


def test_median_two_points():
    x = np.array([[0.0, 0.0, 0.0], [1.0, 0.0, 0.0]])
    assert median_sq_distance(x, 10, np.random.default_rng(0)) == 1.0


def test_median_brute_force():
    rng = np.random.default_rng(2)
    x = rng.standard_normal((12, 3))
    d = [((x[i] - x[j]) ** 2).sum() for i, j in itertools.combinations(range(12), 2)]
    assert median_sq_distance(x, 1000, rng) == pytest.approx(np.median(d), rel=1e-14)


def test_median_needs_two_distinct_points():
    with pytest.raises(ValueError):
        median_sq_distance(np.ones((5, 2)), 10, np.random.default_rng(0))
    with pytest.raises(ValueError):
        make_rff_config(np.ones((1, 2)), 4)


def test_gaussian_stream_moments():
    gen = gaussian_synthetic_features(5, rng_seed=1)
    x = np.array([next(gen) for _ in range(100_000)])
    assert np.abs(x.mean(axis=0)).max() <= 4 / np.sqrt(1e5)
    cov = np.cov(x.T)
    off = cov[~np.eye(5, dtype=bool)]
    assert np.abs(off).max() <= 0.05


def test_gaussian_stream_deterministic():
    a = gaussian_synthetic_features(3, 9)
    b = gaussian_synthetic_features(3, 9)
    for _ in range(2000):
        np.testing.assert_array_equal(next(a), next(b))


def test_spectral_features_realizable():
    mdp = make_random_mdp(6, 3, 0.9, seed=1)
    pol = random_policy(mdp, 1)
    fm = spectral_features(mdp, pol, 4, include_value=True)
    assert fm.dim == 4
    assert np.linalg.norm(fm.table, axis=-1).max() == pytest.approx(1.0)
    q = exact_q_value(mdp, pol).q.reshape(-1)
    coef = np.linalg.lstsq(fm.matrix(), q, rcond=None)[0]
    np.testing.assert_allclose(fm.matrix() @ coef, q, atol=1e-9)


def test_feature_map_round_trip(tmp_path):
    enc = state_action_encoding(4, 2).reshape(-1, 6)
    fm = random_fourier_features(enc, 4, 2, 5, rng_seed=0)
    save_feature_map(fm, tmp_path / "fm.json")
    back = load_feature_map(tmp_path / "fm.json")
    np.testing.assert_array_equal(back.table, fm.table)
    assert back.kind == fm.kind
    assert feature_map_from_dict(feature_map_to_dict(fm)).dim == 5
