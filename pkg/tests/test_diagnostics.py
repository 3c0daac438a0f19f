import math

import numpy as np
import pytest

from opeval.data import bundle_from_features
from opeval.diagnostics import (
    amplification_spectrum, completeness_residual, dominance_constant, non_expansiveness_check,
    shift_constants, write_summary_csv,
)
from opeval.features import FeatureMap, one_hot_features
from opeval.mdp import DiscountedMDP, Policy, exact_q_value, stationary_distribution
from opeval.benchmarks import ergodic_chain

from conftest import make_random_mdp, random_policy


def test_single_state_constants_are_one():
    mdp = DiscountedMDP(np.ones((1, 1, 1)), np.array([[0.5]]), 0.9, np.ones(1))
    fm = FeatureMap(np.array([[[0.6, 0.8]]]))
    sh = shift_constants(mdp, fm, Policy([0]), np.ones(1))
    np.testing.assert_allclose(sh.lambda_pop, sh.lambda_bar)
    assert sh.c_policy == pytest.approx(1.0) and sh.c_init == pytest.approx(1.0)
    assert sh.assumption3_satisfied


def test_stationary_gives_unit_constant():
    mdp = ergodic_chain(8, 0.9, 1)
    pol = random_policy(mdp, 1)
    mu = stationary_distribution(mdp, pol)
    sh = shift_constants(mdp, one_hot_features(mdp), pol, mu)
    assert sh.c_policy == pytest.approx(1.0, abs=1e-8)


def test_uncovered_direction_is_infinite():
    P = np.zeros((2, 2, 2))
    P[:, :, 1] = 1.0  # everything moves to state 1
    mdp = DiscountedMDP(P, np.zeros((2, 2)), 0.9, np.array([1.0, 0.0]))
    mu = np.array([[1.0, 0.0], [0.0, 0.0]])  # data only at (0, 0)
    sh = shift_constants(mdp, one_hot_features(mdp), Policy([0, 0]), mu)
    assert math.isinf(sh.c_policy)
    assert not sh.assumption3_satisfied


def test_dominance_oracle_on_full_rank():
    rng = np.random.default_rng(0)
    X, Y = rng.standard_normal((4, 4)), rng.standard_normal((4, 4))
    A, B = X @ X.T, Y @ Y.T + 0.1 * np.eye(4)
    # Oracle: generalized eigenvalues through the Cholesky factor of B.
    C = np.linalg.cholesky(B)
    Ci = np.linalg.inv(C)
    expect = np.linalg.eigvalsh(Ci @ A @ Ci.T).max()
    assert dominance_constant(A, B) == pytest.approx(expect, rel=1e-10)


def test_shift_scale_invariance():
    mdp = make_random_mdp(5, 2, 0.9, seed=3)
    pol = random_policy(mdp, 3)
    rng = np.random.default_rng(3)
    table = rng.standard_normal((5, 2, 4))
    table /= np.linalg.norm(table, axis=-1).max()
    M = rng.standard_normal((4, 4)) + 3 * np.eye(4)
    mu = rng.dirichlet(np.ones(10))
    a = shift_constants(mdp, FeatureMap(table), pol, mu)
    b = shift_constants(mdp, FeatureMap(table @ M.T, norm_bound_enforced=False), pol, mu)
    assert b.c_policy == pytest.approx(a.c_policy, rel=1e-8)
    assert b.c_init == pytest.approx(a.c_init, rel=1e-8)


def test_one_hot_is_complete():
    mdp = make_random_mdp(4, 3, 0.9, seed=1)
    rep = completeness_residual(mdp, one_hot_features(mdp), random_policy(mdp, 1))
    assert rep.worst_residual <= 1e-10 and rep.complete


def test_full_rank_is_complete():
    mdp = make_random_mdp(3, 2, 0.9, seed=2)
    rng = np.random.default_rng(2)
    table = rng.standard_normal((3, 2, 6))
    fm = FeatureMap(table / np.linalg.norm(table, axis=-1).max())
    assert completeness_residual(mdp, fm, random_policy(mdp, 2)).worst_residual <= 1e-9


def test_rank_deficient_matches_projection_oracle():
    mdp = make_random_mdp(4, 2, 0.9, seed=6)
    pol = random_policy(mdp, 6)
    rng = np.random.default_rng(6)
    table = rng.standard_normal((4, 2, 4))
    fm = FeatureMap(table / np.linalg.norm(table, axis=-1).max())
    rep = completeness_residual(mdp, fm, pol)
    Phi = fm.matrix()
    proj = Phi @ np.linalg.pinv(Phi)
    oracle = []
    for j in range(4):
        v = Phi[:, j]
        next_v = mdp.transition @ v.reshape(4, 2)[np.arange(4), pol.actions]
        target = mdp.reward_mean.reshape(-1) + 0.9 * next_v.reshape(-1)
        oracle.append(np.abs(target - proj @ target).max())
    assert rep.worst_residual > 0
    np.testing.assert_allclose(rep.per_basis_residuals, oracle, atol=1e-10)


def test_completeness_both_directions():
    mdp = make_random_mdp(4, 2, 0.9, seed=7)
    pol = random_policy(mdp, 7)
    q = exact_q_value(mdp, pol).q.reshape(-1)
    # span{Q} alone is not complete for a generic reward; adding the whole space is.
    fm = FeatureMap((q / np.abs(q).max()).reshape(4, 2, 1))
    assert not completeness_residual(mdp, fm, pol).complete


def test_non_expansive_one_hot_uniform():
    mdp = make_random_mdp(4, 3, 0.9, seed=4)
    fm = one_hot_features(mdp)
    v = non_expansiveness_check(mdp, fm, random_policy(mdp, 4), np.full(12, 1 / 12), range(11))
    assert v <= 1e-8


def test_non_expansive_power_zero():
    mdp = make_random_mdp(3, 2, 0.9, seed=4)
    rng = np.random.default_rng(0)
    table = rng.standard_normal((3, 2, 3))
    fm = FeatureMap(table / np.linalg.norm(table, axis=-1).max())
    assert non_expansiveness_check(mdp, fm, random_policy(mdp, 0), np.full(6, 1 / 6), [0]) == 0.0


def test_non_expansive_violation_grows_for_gaussian_instance():
    # Data states 0..n-1 each jump to their own absorbing state n..2n-1; every
    # pair carries an independent Gaussian feature, as in the synthetic regime.
    rng = np.random.default_rng(1)
    n, d = 12, 10
    S = 2 * n
    P = np.zeros((S, 1, S))
    P[np.arange(n), 0, n + np.arange(n)] = 1.0
    P[n + np.arange(n), 0, n + np.arange(n)] = 1.0
    mdp = DiscountedMDP(P, np.zeros((S, 1)), 0.99, np.full(S, 1 / S))
    fm = FeatureMap(rng.standard_normal((S, 1, d)), norm_bound_enforced=False)
    pol = Policy(np.zeros(S, dtype=int))
    mu = np.r_[np.full(n, 1 / n), np.zeros(n)]
    vals = [non_expansiveness_check(mdp, fm, pol, mu, [t]) for t in (1, 5, 20)]
    assert vals[0] < vals[1] < vals[2]


def test_amplification_zero_and_scalar():
    b = bundle_from_features(np.array([[1.0], [1.0]]), np.array([[1.0], [-1.0]]), np.zeros(2), 0.1)
    spec = amplification_spectrum(b, 0.9, 5)
    assert np.all(spec.frobenius == 0) and spec.spectral_radius == 0
    c = 1 / 1.1
    b = bundle_from_features(np.ones((3, 1)), np.ones((3, 1)), np.zeros(3), 0.1)
    spec = amplification_spectrum(b, 0.9, 8)
    np.testing.assert_allclose(spec.frobenius, (0.9 * c) ** np.arange(1, 9), rtol=1e-12)


def test_amplification_eventually_decreases():
    rng = np.random.default_rng(5)
    d = 6
    b = bundle_from_features(rng.standard_normal((400, d)), rng.standard_normal((400, d)), np.zeros(400), 1e-3)
    spec = amplification_spectrum(b, 0.99, 100)
    assert spec.spectral_radius < 1
    tail = spec.frobenius[5 * d:]
    assert np.all(np.diff(tail) <= 0)


def test_summary_csv(tmp_path):
    mdp = DiscountedMDP(np.ones((1, 1, 1)), np.array([[0.5]]), 0.9, np.ones(1))
    fm = FeatureMap(np.array([[[1.0]]]))
    sh = shift_constants(mdp, fm, Policy([0]), np.ones(1))
    comp = completeness_residual(mdp, fm, Policy([0]))
    write_summary_csv(tmp_path / "s.csv", [("dstar", sh, 0.5, comp)], "seed=0, config_hash=x")
    lines = (tmp_path / "s.csv").read_text().splitlines()
    assert lines[1] == "label,c_policy,c_init,spectral_radius,worst_completeness_residual,assumption3_ok"
    assert lines[2].endswith(",true")
