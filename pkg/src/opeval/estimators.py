"""Fitted Q-Iteration, LSTD and the exact unrolling of the FQI error.

All estimators work from a :class:`~opeval.data.CovarianceBundle`. The
dataset-level wrappers only assemble the bundle and evaluation features.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass

import numpy as np
from scipy.linalg import lu_factor, lu_solve

from .data import CovarianceBundle, TransitionDataset, build_covariance_bundle, population_bundle
from .errors import SingularSystemError
from .features import FeatureMap
from .mdp import DiscountedMDP, Policy, exact_q_value, simulate_episodes

SATURATION = 1e300
LSTD_MAX_CONDITION = 1e13


def stable_norm(x: np.ndarray, axis=None) -> np.ndarray | float:
    """Euclidean/Frobenius norm that does not overflow for entries above ~1e154."""
    x = np.asarray(x, dtype=float)
    with np.errstate(over="ignore", invalid="ignore", divide="ignore"):
        m = np.abs(x).max(axis=axis, keepdims=True) if x.size else np.zeros(1)
        safe = np.where((m > 0) & np.isfinite(m), m, 1.0)
        out = np.squeeze(safe, axis=axis) * np.linalg.norm(x / safe, axis=axis)
        out = np.where(np.isfinite(np.squeeze(m, axis=axis)), out, np.inf)
    return float(out) if np.ndim(out) == 0 else out


@dataclass(frozen=True)
class FqiConfig:
    lambda_reg: float
    num_rounds: int
    record_every: int = 10

    def __post_init__(self):
        if not self.lambda_reg >= 0 or not math.isfinite(self.lambda_reg):
            raise ValueError("lambda_reg must be a finite non-negative number")
        if self.num_rounds < 1:
            raise ValueError("num_rounds must be at least 1")
        if self.record_every < 1:
            raise ValueError("record_every must be at least 1")

    def recorded_rounds(self) -> np.ndarray:
        rounds = list(range(self.record_every, self.num_rounds + 1, self.record_every))
        if not rounds or rounds[-1] != self.num_rounds:
            rounds.append(self.num_rounds)
        return np.array(rounds)


@dataclass(frozen=True, eq=False)
class EvalSet:
    """Evaluation states with their exact values ``V^pi(s)``."""

    states: np.ndarray
    values: np.ndarray

    def features(self, feature_map: FeatureMap, policy: Policy) -> np.ndarray:
        return feature_map.table[self.states, policy.actions[self.states]]


@dataclass(eq=False)
class FqiReport:
    lambda_reg: float
    rounds: np.ndarray
    theta_trajectory: np.ndarray  # (len(rounds), d)
    final_theta: np.ndarray
    rmse_per_round: np.ndarray | None = None
    saturated: bool = False

    @property
    def final_rmse(self) -> float:
        if self.rmse_per_round is None:
            raise ValueError("report was produced without evaluation states")
        value = float(self.rmse_per_round[-1])
        return value if math.isfinite(value) else math.inf

    def write_csv(self, path, comment: str | None = None) -> None:
        if self.rmse_per_round is None:
            raise ValueError("report was produced without evaluation states")
        with open(path, "w", newline="") as fh:
            if comment:
                fh.write(f"# {comment}\n")
            w = csv.writer(fh)
            w.writerow(["round", "rmse"])
            for t, e in zip(self.rounds, self.rmse_per_round):
                w.writerow([int(t), repr(float(e))])


@dataclass(eq=False)
class LstdReport:
    theta: np.ndarray
    condition_number: float
    predictions: np.ndarray | None = None
    rmse: float | None = None


def run_fqi(
    bundle: CovarianceBundle,
    gamma: float,
    config: FqiConfig,
    eval_features: np.ndarray | None = None,
    eval_values: np.ndarray | None = None,
) -> FqiReport:
    """Iterate ``theta_t = lambda_hat^-1 (Phi^T r / N + gamma Phi^T Phi_bar theta_{t-1} / N)``.

    Starts from ``theta_0 = 0``. ``lambda_hat`` is factored once by the bundle.
    """
    if config.lambda_reg != bundle.lambda_reg:
        raise ValueError("config.lambda_reg does not match the bundle")
    record = set(config.recorded_rounds().tolist())
    theta = np.zeros(bundle.dim)
    kept, rmse = [], []
    saturated = False
    with np.errstate(over="ignore", invalid="ignore"):
        for t in range(1, config.num_rounds + 1):
            theta = bundle.solve(bundle.phi_t_r + gamma * (bundle.cross @ theta))
            if not saturated and not stable_norm(theta) <= SATURATION:
                saturated = True
            if t in record:
                kept.append(theta)
                if eval_features is not None:
                    err = eval_features @ theta - eval_values
                    rmse.append(math.sqrt(np.mean(err**2)))
    return FqiReport(
        lambda_reg=bundle.lambda_reg,
        rounds=config.recorded_rounds(),
        theta_trajectory=np.array(kept),
        final_theta=theta,
        rmse_per_round=np.array(rmse) if eval_features is not None else None,
        saturated=saturated,
    )


def fitted_q_iteration(
    dataset: TransitionDataset,
    feature_map: FeatureMap,
    policy: Policy,
    gamma: float,
    config: FqiConfig,
    eval_set: EvalSet | None = None,
) -> FqiReport:
    bundle = build_covariance_bundle(dataset, feature_map, policy, config.lambda_reg)
    return _fqi_with_eval(bundle, feature_map, policy, gamma, config, eval_set)


def exact_expectation_fqi(
    mdp: DiscountedMDP,
    feature_map: FeatureMap,
    policy: Policy,
    pair_dist: np.ndarray,
    config: FqiConfig,
    eval_set: EvalSet | None = None,
) -> FqiReport:
    """FQI with every empirical average replaced by its exact expectation under ``pair_dist``."""
    bundle = population_bundle(mdp, feature_map, policy, pair_dist, config.lambda_reg)
    return _fqi_with_eval(bundle, feature_map, policy, mdp.gamma, config, eval_set)


def _fqi_with_eval(bundle, feature_map, policy, gamma, config, eval_set):
    if eval_set is None:
        return run_fqi(bundle, gamma, config)
    return run_fqi(bundle, gamma, config, eval_set.features(feature_map, policy), eval_set.values)


# ---------------------------------------------------------------------------
# LSTD


def lstd_from_bundle(bundle: CovarianceBundle, gamma: float) -> tuple[np.ndarray, float]:
    """Solve ``(Phi^T (Phi - gamma Phi_bar) / N + lambda I) theta = Phi^T r / N``.

    The system matrix is not symmetric, so an LU factorization is used.
    Raises :class:`SingularSystemError` when it is numerically singular.
    """
    A = bundle.lambda_hat - gamma * bundle.cross
    b = bundle.phi_t_r
    cond = float(np.linalg.cond(A))
    if not cond < LSTD_MAX_CONDITION:
        raise SingularSystemError("LSTD system matrix is numerically singular", cond)
    theta = lu_solve(lu_factor(A), b)
    resid = np.linalg.norm(A @ theta - b)
    scale = np.linalg.norm(A, 2) * np.linalg.norm(theta) + np.linalg.norm(b)
    if resid > 1e-10 * max(scale, np.finfo(float).tiny):
        raise SingularSystemError(f"LSTD residual {resid:.3e} too large", cond)
    return theta, cond


def lstd(
    dataset: TransitionDataset,
    feature_map: FeatureMap,
    policy: Policy,
    gamma: float,
    lambda_reg: float,
    eval_set: EvalSet | None = None,
) -> LstdReport:
    bundle = build_covariance_bundle(dataset, feature_map, policy, lambda_reg)
    theta, cond = lstd_from_bundle(bundle, gamma)
    if eval_set is None:
        return LstdReport(theta, cond)
    pred = eval_set.features(feature_map, policy) @ theta
    rmse = math.sqrt(np.mean((pred - eval_set.values) ** 2))
    return LstdReport(theta, cond, pred, rmse)


# ---------------------------------------------------------------------------
# Error decomposition


@dataclass(eq=False)
class DecompositionReport:
    """Unrolled FQI error ``theta_T - theta*`` split into its three sources.

    With ``zeta_i = r_i + gamma phi(s'_i, pi(s'_i))^T theta* - phi(s_i, a_i)^T theta*``::

        theta_T - theta* = sum_{t<T} (gamma L)^t lambda_hat^-1 Phi^T zeta / N     (noise)
                         - sum_{t<T} (gamma L)^t lambda lambda_hat^-1 theta*      (ridge)
                         - (gamma L)^T theta*                                     (propagation)
    """

    noise_term: np.ndarray
    ridge_term: np.ndarray
    propagation_term: np.ndarray
    reconstructed_error: np.ndarray
    actual_error: np.ndarray
    per_power_frobenius: np.ndarray
    error_norms: np.ndarray  # ||theta_t - theta*|| for t = 1..T from the FQI run

    @property
    def relative_gap(self) -> float:
        diff = np.linalg.norm(self.reconstructed_error - self.actual_error)
        return float(diff / max(np.linalg.norm(self.actual_error), np.finfo(float).tiny))

    def write_csv(self, path, comment: str | None = None) -> None:
        with open(path, "w", newline="") as fh:
            if comment:
                fh.write(f"# {comment}\n")
            w = csv.writer(fh)
            w.writerow(["t", "frobenius_norm", "estimation_error"])
            for t, (f, e) in enumerate(zip(self.per_power_frobenius, self.error_norms), start=1):
                w.writerow([t, repr(float(f)), repr(float(e))])


def _geometric_sum(apply, start: np.ndarray, terms: int) -> np.ndarray:
    total = np.zeros_like(start)
    v = start
    for _ in range(terms):
        total = total + v
        v = apply(v)
    return total


def lemma1_decomposition(
    bundle: CovarianceBundle,
    theta_star: np.ndarray,
    gamma: float,
    config: FqiConfig,
) -> DecompositionReport:
    """Compute the three error terms and compare them with an actual FQI run.

    Vector terms use repeated application of ``gamma L``; explicit matrix
    powers are formed only for the Frobenius-norm curve ``||L^t||_F``.
    """
    if bundle.phi_t_zeta is None:
        raise ValueError("bundle lacks Bellman noise; build it with theta_star and gamma")
    theta_star = np.asarray(theta_star, dtype=float)
    T = config.num_rounds
    L = bundle.amplifier

    def step(v):
        return gamma * (L @ v)

    noise = _geometric_sum(step, bundle.solve(bundle.phi_t_zeta), T)
    ridge = _geometric_sum(step, -bundle.lambda_reg * bundle.solve(theta_star), T)
    prop = -theta_star
    for _ in range(T):
        prop = step(prop)

    frob = np.empty(T)
    power = L.copy()
    with np.errstate(over="ignore", invalid="ignore"):
        for t in range(T):
            frob[t] = stable_norm(power)
            power = L @ power

    every_round = FqiConfig(config.lambda_reg, T, record_every=1)
    fqi = run_fqi(bundle, gamma, every_round)
    errors = stable_norm(fqi.theta_trajectory - theta_star, axis=1)
    return DecompositionReport(
        noise_term=noise,
        ridge_term=ridge,
        propagation_term=prop,
        reconstructed_error=noise + ridge + prop,
        actual_error=fqi.final_theta - theta_star,
        per_power_frobenius=frob,
        error_norms=errors,
    )


# ---------------------------------------------------------------------------
# Hyperparameter sweep and evaluation states


@dataclass(eq=False)
class SweepResult:
    lambdas: list[float]
    reports: list[FqiReport]
    best_index: int

    @property
    def best_lambda(self) -> float:
        return self.lambdas[self.best_index]

    @property
    def best_report(self) -> FqiReport:
        return self.reports[self.best_index]

    def by_lambda(self) -> dict[float, FqiReport]:
        return dict(zip(self.lambdas, self.reports))


def select_best(lambdas, final_rmses) -> int:
    """Index of the smallest final RMSE; ties go to the larger lambda."""
    best = None
    for i, (lam, err) in enumerate(zip(lambdas, final_rmses)):
        err = err if math.isfinite(err) else math.inf
        if best is None or err < best[1] or (err == best[1] and lam > best[2]):
            best = (i, err, lam)
    return best[0]


def hyperparameter_sweep(
    dataset: TransitionDataset,
    feature_map: FeatureMap,
    policy: Policy,
    gamma: float,
    lambdas,
    config: FqiConfig,
    eval_set: EvalSet,
) -> SweepResult:
    """Run FQI once per lambda (``config.lambda_reg`` is ignored) and pick the best."""
    lambdas = [float(x) for x in lambdas]
    if not lambdas:
        raise ValueError("need at least one lambda")
    reports = []
    for lam in lambdas:
        cfg = FqiConfig(lam, config.num_rounds, config.record_every)
        reports.append(fitted_q_iteration(dataset, feature_map, policy, gamma, cfg, eval_set))
    best = select_best(lambdas, [r.final_rmse for r in reports])
    return SweepResult(lambdas, reports, best)


def select_eval_states(
    mdp: DiscountedMDP,
    policy: Policy,
    num_states: int = 100,
    max_step: int = 100,
    rng_seed: int = 0,
) -> np.ndarray:
    """One state per target-policy trajectory, from a uniformly random step below ``max_step``."""
    rng = np.random.default_rng(rng_seed)
    traj = simulate_episodes(mdp, policy, num_states, max_step, rng)
    steps = rng.integers(max_step, size=num_states)
    return traj.states[np.arange(num_states), steps]


def make_eval_set(mdp: DiscountedMDP, policy: Policy, states: np.ndarray) -> EvalSet:
    values = exact_q_value(mdp, policy).v
    states = np.asarray(states, dtype=np.int64)
    return EvalSet(states, values[states])
