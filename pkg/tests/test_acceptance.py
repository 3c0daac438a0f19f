"""End-to-end acceptance checks, one test per criterion.

Each test prints a single ``criterion N [PASS|FAIL]`` line (collected again
in the terminal summary) and then asserts the criterion at its stated
tolerance.
"""

import filecmp
import time

import numpy as np
from scipy.stats import spearmanr

from opeval.benchmarks import ergodic_chain
from opeval.config import load_config, parse_config
from opeval.data import bundle_from_features, sample_iid_dataset
from opeval.diagnostics import amplification_spectrum, completeness_residual, shift_constants
from opeval.estimators import (
    FqiConfig, exact_expectation_fqi, fitted_q_iteration, lemma1_decomposition, lstd_from_bundle,
    make_eval_set, run_fqi,
)
from opeval.experiment import run_experiment
from opeval.features import one_hot_features
from opeval.mdp import exact_q_value, greedy_policy, optimal_q, stationary_distribution
from opeval.synthetic import SimConfig, build_sim_instance, repetition_seed, run_simulation

from conftest import make_random_mdp, random_policy

MIXING_CONFIG = """
[experiment]
mode = evaluate

[environment]
kind = random
num_states = 20
num_actions = 4
gamma = 0.95
reward_noise_std = 0.5
concentration = 0.3

[features]
kind = spectral
dim = 8
include_value = true

[dataset]
n_target = 100000
mix_ratios = 0, 0.5, 1, 2

[estimator]
lambdas = 1e-1, 1e-2, 1e-3, 1e-4, 1e-8
num_rounds = 100
record_every = 10
"""


def test_criterion_1_decomposition_identity(acceptance_report):
    rng = np.random.default_rng(2024)
    start = time.perf_counter()
    gaps = []
    for i in range(100):
        d = int(rng.integers(1, 21))
        n = int(rng.integers(max(2, d // 2), 201))
        T = int(rng.integers(1, 21))
        lam = [1e-4, 1e-2][i % 2]
        noisy = (i // 2) % 2 == 1
        gamma = 0.99
        phi = rng.standard_normal((n, d))
        phi_next = rng.standard_normal((n, d))
        theta = rng.standard_normal(d)
        r = phi @ theta - gamma * phi_next @ theta
        if noisy:
            r = r + rng.standard_normal(n)
        b = bundle_from_features(phi, phi_next, r, lam, theta, gamma)
        gaps.append(lemma1_decomposition(b, theta, gamma, FqiConfig(lam, T, T)).relative_gap)
    elapsed = time.perf_counter() - start
    worst = max(gaps)
    ok = worst <= 1e-8 and elapsed < 30
    acceptance_report(1, "error decomposition identity", ok,
                      f"worst relative gap {worst:.2e} over 100 instances (<= 1e-8), {elapsed:.1f}s")
    assert ok


def test_criterion_2_amplification_growth(acceptance_report):
    start = time.perf_counter()
    base = dict(dim=100, gamma=0.99, lambda_reg=1e-4, num_rounds=100, repetitions=20)
    c100 = run_simulation(SimConfig(n_samples=100, **base))
    c200 = run_simulation(SimConfig(n_samples=200, **base))
    elapsed = time.perf_counter() - start

    def slope(curves):
        ok = ~curves.saturated
        t = np.arange(1, len(ok) + 1)[ok]
        return np.polyfit(t, np.log10(curves.mean_frobenius[ok]), 1)[0]

    s100, s200 = slope(c100), slope(c200)
    keep = ~c100.saturated
    rho = spearmanr(np.log(c100.mean_estimation_error[keep]), np.log(c100.mean_frobenius[keep]))[0]
    ok = s100 > 0 and s200 < s100 and rho > 0.9 and elapsed < 300
    acceptance_report(2, "geometric amplification", ok,
                      f"log10 slope N=100 {s100:.3f} (> 0), N=200 {s200:.3f} (< N=100), "
                      f"rank correlation {rho:.3f} (> 0.9) on {keep.sum()} unsaturated rounds, {elapsed:.1f}s")
    assert ok


def test_criterion_3_population_limit(acceptance_report):
    start = time.perf_counter()
    cfg = SimConfig(n_samples=10_000, dim=10, gamma=0.99, lambda_reg=1e-4, num_rounds=100, repetitions=20)
    good, radii = 0, []
    for rep in range(cfg.repetitions):
        inst = build_sim_instance(cfg, repetition_seed(cfg.master_seed, rep))
        b = inst.bundle(cfg.lambda_reg)
        radius = amplification_spectrum(b, cfg.gamma, 1).spectral_radius
        fqi = run_fqi(b, cfg.gamma, FqiConfig(cfg.lambda_reg, cfg.num_rounds, 1))
        err = np.linalg.norm(fqi.theta_trajectory - inst.theta_star, axis=1)
        radii.append(radius)
        good += radius < 1 and err[-1] < 0.1 * err[0]
    elapsed = time.perf_counter() - start
    ok = good >= 18 and elapsed < 60
    acceptance_report(3, "population-limit contrast", ok,
                      f"{good}/20 repetitions with radius < 1 and error(T=100) < 10% of error(1) "
                      f"(need >= 18), max radius {max(radii):.3f}, {elapsed:.1f}s")
    assert ok


def test_criterion_4_complete_features_contract(acceptance_report):
    start = time.perf_counter()
    worst_excess, worst_resid = -np.inf, 0.0
    for seed, (S, A) in enumerate([(20, 4), (12, 3), (7, 2)]):
        mdp = make_random_mdp(S, A, 0.9, seed)
        pol = random_policy(mdp, seed)
        fm = one_hot_features(mdp)
        q = exact_q_value(mdp, pol).q.reshape(-1)
        mu = np.full(S * A, 1.0 / (S * A))
        rep = exact_expectation_fqi(mdp, fm, pol, mu, FqiConfig(0.0, 200, 1))
        err = np.abs(rep.theta_trajectory - q).max(axis=1)
        bound = 0.9 ** np.arange(1, 201) * np.abs(q).max() + 1e-9
        worst_excess = max(worst_excess, float((err - bound).max()))
        worst_resid = max(worst_resid, completeness_residual(mdp, fm, pol).worst_residual)
    elapsed = time.perf_counter() - start
    ok = worst_excess <= 0 and worst_resid <= 1e-10 and elapsed < 30
    acceptance_report(4, "complete features contract", ok,
                      f"max(error - bound) {worst_excess:.2e} (<= 0) over T <= 200 on 3 MDPs, "
                      f"completeness residual {worst_resid:.1e} (<= 1e-10), {elapsed:.1f}s")
    assert ok


def test_criterion_5_low_shift_regime(acceptance_report):
    start = time.perf_counter()
    mdp = ergodic_chain(10, 0.9, rng_seed=0)
    pol = greedy_policy(optimal_q(mdp))
    mu = stationary_distribution(mdp, pol)
    fm = one_hot_features(mdp)
    c_policy = shift_constants(mdp, fm, pol, mu).c_policy
    ds = sample_iid_dataset(mdp, mu, 100_000, rng_seed=1)
    ev = make_eval_set(mdp, pol, np.arange(mdp.num_states))
    rmse = fitted_q_iteration(ds, fm, pol, mdp.gamma, FqiConfig(1e-8, 300, 100), ev).final_rmse
    v_max = np.abs(exact_q_value(mdp, pol).v).max()
    elapsed = time.perf_counter() - start
    ok = abs(c_policy - 1) <= 1e-6 and rmse <= 0.01 * v_max and elapsed < 60
    acceptance_report(5, "low-shift regime", ok,
                      f"c_policy {c_policy:.10f} (within 1e-6 of 1), RMSE {rmse:.4f} <= 1% of "
                      f"||V||_inf = {0.01 * v_max:.4f}, {elapsed:.1f}s")
    assert ok


def test_criterion_6_lstd_fqi_equivalence(acceptance_report):
    start = time.perf_counter()
    rng = np.random.default_rng(6)
    worst, used, tried = 0.0, 0, 0
    while used < 50:
        tried += 1
        d = int(rng.integers(1, 11))
        n = int(rng.integers(20, 201))
        gamma, lam = 0.9, 1e-3
        phi = rng.standard_normal((n, d)) / np.sqrt(d)
        phi_next = rng.standard_normal((n, d)) / np.sqrt(d)
        b = bundle_from_features(phi, phi_next, rng.uniform(size=n), lam)
        if amplification_spectrum(b, gamma, 1).spectral_radius >= 0.95:
            continue
        used += 1
        theta, _ = lstd_from_bundle(b, gamma)
        fqi = run_fqi(b, gamma, FqiConfig(lam, 2000, 2000)).final_theta
        worst = max(worst, np.linalg.norm(theta - fqi) / (1 + np.linalg.norm(theta)))
    elapsed = time.perf_counter() - start
    ok = worst <= 1e-6 and elapsed < 60
    acceptance_report(6, "LSTD and FQI fixed point", ok,
                      f"worst ||theta_LSTD - theta_FQI|| / (1 + ||theta_LSTD||) = {worst:.2e} (<= 1e-6) "
                      f"on 50 instances ({tried} drawn), {elapsed:.1f}s")
    assert ok


def test_criterion_7_degradation_trend(acceptance_report, tmp_path):
    start = time.perf_counter()
    cfg = parse_config(MIXING_CONFIG, "mixing.ini", tmp_path)
    labels = ["dstar", "dstar_plus_0.5x", "dstar_plus_1x", "dstar_plus_2x"]
    monotone, curves = 0, []
    for seed in range(5):
        summary = run_experiment(cfg.with_overrides(seed=seed), tmp_path / f"seed{seed}")
        vals = [summary["mixtures"][k]["final_rmse"] for k in labels]
        curves.append("/".join(f"{v:.3f}" for v in vals))
        monotone += all(a <= b for a, b in zip(vals, vals[1:]))
    elapsed = time.perf_counter() - start
    ok = monotone >= 4 and elapsed < 300
    acceptance_report(7, "degradation with added random data", ok,
                      f"{monotone}/5 seeds non-decreasing (need >= 4); best-lambda RMSE by ratio "
                      f"0/0.5/1/2: {'; '.join(curves)}, {elapsed:.1f}s")
    assert ok


def test_criterion_8_determinism(acceptance_report, tmp_path):
    small = MIXING_CONFIG.replace("n_target = 100000", "n_target = 20000")
    cfg_path = tmp_path / "exp.ini"
    cfg_path.write_text(small + "\n[simulation]\nrepetitions = 3\nnum_rounds = 30\n")
    cfg = load_config(cfg_path).with_overrides(seed=17)
    mismatched, compared = [], 0
    for mode in ("evaluate", "sweep", "diagnose", "compare", "simulate"):
        a, b = tmp_path / f"{mode}_a", tmp_path / f"{mode}_b"
        run_experiment(cfg.with_overrides(mode=mode), a)
        run_experiment(cfg.with_overrides(mode=mode), b)
        names = sorted(p.name for p in a.iterdir() if p.suffix == ".csv")
        assert names == sorted(p.name for p in b.iterdir() if p.suffix == ".csv")
        match, mismatch, errors = filecmp.cmpfiles(a, b, names, shallow=False)
        mismatched += mismatch + errors
        compared += len(names)
    ok = not mismatched
    acceptance_report(8, "determinism", ok,
                      f"{compared} CSVs across 5 modes compared byte for byte, mismatches: {mismatched or 'none'}")
    assert ok
