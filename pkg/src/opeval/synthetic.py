"""Synthetic Gaussian-feature instances that exhibit geometric error amplification.

Each sample pairs a current feature ``phi_i`` with a next-state feature
``phi_bar_i``, both drawn independently from ``N(0, I_d)``. Rewards are set to
``phi_i^T theta* - gamma phi_bar_i^T theta*`` so the Bellman noise is zero and
``theta*`` realizes the value function exactly.
"""

from __future__ import annotations

import csv
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from .data import CovarianceBundle, bundle_from_features
from .estimators import FqiConfig, run_fqi, stable_norm

SATURATION = 1e300


@dataclass(frozen=True)
class SimConfig:
    n_samples: int = 100
    dim: int = 100
    gamma: float = 0.99
    lambda_reg: float = 1e-4
    num_rounds: int = 100
    repetitions: int = 100
    master_seed: int = 0

    def __post_init__(self):
        for name in ("n_samples", "dim", "num_rounds", "repetitions"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be positive")
        if not 0.0 <= self.gamma < 1.0:
            raise ValueError("gamma must lie in [0, 1)")
        if not self.lambda_reg > 0:
            raise ValueError("lambda_reg must be positive")


@dataclass(frozen=True, eq=False)
class SimInstance:
    phi: np.ndarray
    phi_next: np.ndarray
    rewards: np.ndarray
    theta_star: np.ndarray
    gamma: float

    def bundle(self, lambda_reg: float) -> CovarianceBundle:
        return bundle_from_features(self.phi, self.phi_next, self.rewards, lambda_reg,
                                    self.theta_star, self.gamma)


@dataclass(eq=False)
class SimCurves:
    mean_estimation_error: np.ndarray  # (T,)
    mean_frobenius: np.ndarray  # (T,)
    saturated: np.ndarray  # (T,) bool
    estimation_error: np.ndarray  # (reps, T)
    frobenius: np.ndarray  # (reps, T)
    config: SimConfig

    def write_csv(self, path, comment: str | None = None) -> None:
        with open(path, "w", newline="") as fh:
            if comment:
                fh.write(f"# {comment}\n")
            w = csv.writer(fh)
            w.writerow(["t", "mean_frobenius", "mean_estimation_error", "saturated"])
            for t in range(len(self.mean_frobenius)):
                w.writerow([t + 1, repr(float(self.mean_frobenius[t])),
                            repr(float(self.mean_estimation_error[t])), int(self.saturated[t])])


def repetition_seed(master_seed: int, index: int) -> np.random.SeedSequence:
    return np.random.SeedSequence([master_seed, index])


def build_sim_instance(config: SimConfig, rep_seed, theta_star: np.ndarray | None = None) -> SimInstance:
    rng = np.random.default_rng(rep_seed)
    N, d = config.n_samples, config.dim
    if theta_star is None:
        theta_star = rng.standard_normal(d)
    phi = rng.standard_normal((N, d))
    phi_next = rng.standard_normal((N, d))
    theta_star = np.asarray(theta_star, dtype=float)
    rewards = phi @ theta_star - config.gamma * (phi_next @ theta_star)
    return SimInstance(phi, phi_next, rewards, theta_star, config.gamma)


def power_frobenius(L: np.ndarray, max_power: int) -> np.ndarray:
    """``||L^t||_F`` for ``t = 1..max_power`` by successive products, capped at ``SATURATION``."""
    out = np.full(max_power, SATURATION)
    power = L.copy()
    with np.errstate(over="ignore", invalid="ignore"):
        for t in range(max_power):
            val = stable_norm(power)
            if not val <= SATURATION:
                break
            out[t] = val
            power = L @ power
    return out


def _one_repetition(config: SimConfig, index: int):
    inst = build_sim_instance(config, repetition_seed(config.master_seed, index))
    bundle = inst.bundle(config.lambda_reg)
    fqi = run_fqi(bundle, config.gamma, FqiConfig(config.lambda_reg, config.num_rounds, 1))
    with np.errstate(over="ignore", invalid="ignore"):
        err = stable_norm(fqi.theta_trajectory - inst.theta_star, axis=1)
    err = np.where(err <= SATURATION, err, SATURATION)
    return err, power_frobenius(bundle.amplifier, config.num_rounds)


def run_simulation(config: SimConfig, workers: int = 1) -> SimCurves:
    """Average FQI error and ``||L^t||_F`` curves over independent repetitions.

    Repetitions use seeds derived from ``(master_seed, index)`` and are merged
    in index order, so the result does not depend on ``workers``.
    """
    indices = range(config.repetitions)
    if workers > 1:
        with ThreadPoolExecutor(workers) as pool:
            results = list(pool.map(lambda i: _one_repetition(config, i), indices))
    else:
        results = [_one_repetition(config, i) for i in indices]
    errors = np.array([r[0] for r in results])
    frob = np.array([r[1] for r in results])
    saturated = (errors >= SATURATION).any(axis=0) | (frob >= SATURATION).any(axis=0)
    saturated = np.maximum.accumulate(saturated)
    with np.errstate(over="ignore"):
        mean_err = np.minimum(errors.mean(axis=0), SATURATION)
        mean_frob = np.minimum(frob.mean(axis=0), SATURATION)
    mean_err[saturated] = SATURATION
    mean_frob[saturated] = SATURATION
    return SimCurves(mean_err, mean_frob, saturated, errors, frob, config)


def log_slope(values: np.ndarray) -> float:
    """Least-squares slope of ``log10(values)`` against ``t = 1..len(values)``."""
    y = np.log10(np.asarray(values, dtype=float))
    t = np.arange(1, len(y) + 1)
    return float(np.polyfit(t, y, 1)[0])
