"""Checks for the representation and distribution-shift conditions.

Population matrices are exact sums over all state-action pairs, so the
functions here require a tabular feature map.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass

import numpy as np

from .data import CovarianceBundle
from .estimators import stable_norm
from .features import FeatureMap
from .mdp import DiscountedMDP, Policy, pair_transition_matrix

EIG_FLOOR = 1e-12
SATURATION = 1e300


@dataclass(frozen=True, eq=False)
class ShiftDiagnostics:
    lambda_pop: np.ndarray
    lambda_bar: np.ndarray
    lambda_init: np.ndarray
    lambda_cross: np.ndarray
    c_policy: float
    c_init: float
    gamma: float

    @property
    def assumption3_satisfied(self) -> bool:
        return self.c_policy < 1.0 / self.gamma**2 and math.isfinite(self.c_init)


@dataclass(frozen=True)
class CompletenessReport:
    worst_residual: float
    per_basis_residuals: np.ndarray
    tolerance: float = 1e-10

    @property
    def complete(self) -> bool:
        return self.worst_residual <= self.tolerance


@dataclass(frozen=True)
class AmplificationSpectrum:
    frobenius: np.ndarray  # ||(gamma L)^t||_F, t = 1..T, capped at SATURATION
    spectral_radius: float
    saturated: np.ndarray

    def write_csv(self, path, comment: str | None = None) -> None:
        with open(path, "w", newline="") as fh:
            if comment:
                fh.write(f"# {comment}\n")
            w = csv.writer(fh)
            w.writerow(["t", "frobenius_norm"])
            for t, f in enumerate(self.frobenius, start=1):
                w.writerow([t, repr(float(f))])


def _restricted_range(B: np.ndarray, floor: float = EIG_FLOOR):
    w, U = np.linalg.eigh(0.5 * (B + B.T))
    keep = w > floor * max(1.0, w[-1])
    return w[keep], U[:, keep], U[:, ~keep]


def dominance_constant(A: np.ndarray, B: np.ndarray, floor: float = EIG_FLOOR) -> float:
    """Smallest ``C`` with ``A <= C B`` in the PSD order, ``inf`` if none exists.

    Computed as the largest eigenvalue of ``B^-1/2 A B^-1/2`` on the range of
    ``B``; any mass of ``A`` outside that range makes the constant infinite.
    """
    w, U, N = _restricted_range(B, floor)
    scale = max(1.0, np.abs(A).max())
    if N.shape[1] and np.abs(N.T @ A @ N).max() > 1e-10 * scale:
        return math.inf
    if len(w) == 0:
        return 0.0 if np.abs(A).max() <= 1e-10 * scale else math.inf
    M = (U / np.sqrt(w)).T @ A @ (U / np.sqrt(w))
    return float(np.linalg.eigvalsh(0.5 * (M + M.T))[-1])


def population_matrices(mdp: DiscountedMDP, feature_map: FeatureMap, policy: Policy, pair_dist):
    """``(Lambda, Lambda_bar, Lambda_init, Lambda_cross)`` under ``pair_dist``."""
    feature_map.check_compatible(mdp.num_states, mdp.num_actions)
    mu = np.asarray(pair_dist, dtype=float).reshape(-1)
    if mu.shape != (mdp.num_pairs,) or np.any(mu < 0) or abs(mu.sum() - 1) > 1e-10:
        raise ValueError("pair_dist must be a distribution over (s, a)")
    Phi = feature_map.matrix()
    P = pair_transition_matrix(mdp, policy)
    lookahead = mu @ P
    init = np.zeros(mdp.num_pairs)
    init[policy.pair_indices(mdp.num_actions)] = mdp.init_dist
    lam = Phi.T @ (Phi * mu[:, None])
    lam_bar = Phi.T @ (Phi * lookahead[:, None])
    lam_init = Phi.T @ (Phi * init[:, None])
    lam_cross = (Phi * mu[:, None]).T @ (P @ Phi)
    return lam, lam_bar, lam_init, lam_cross


def shift_constants(mdp: DiscountedMDP, feature_map: FeatureMap, policy: Policy, pair_dist) -> ShiftDiagnostics:
    lam, lam_bar, lam_init, lam_cross = population_matrices(mdp, feature_map, policy, pair_dist)
    return ShiftDiagnostics(
        lambda_pop=lam,
        lambda_bar=lam_bar,
        lambda_init=lam_init,
        lambda_cross=lam_cross,
        c_policy=dominance_constant(lam_bar, lam),
        c_init=dominance_constant(lam_init, lam),
        gamma=mdp.gamma,
    )


def bellman_image(mdp: DiscountedMDP, feature_map: FeatureMap, policy: Policy, thetas: np.ndarray) -> np.ndarray:
    """Columns ``R + gamma P_pi Phi theta`` over all pairs, one per probe column."""
    Phi = feature_map.matrix()
    P = pair_transition_matrix(mdp, policy)
    r = mdp.reward_mean.reshape(-1, 1)
    return r + mdp.gamma * (P @ (Phi @ thetas))


def completeness_residual(
    mdp: DiscountedMDP,
    feature_map: FeatureMap,
    policy: Policy,
    probe_basis: np.ndarray | None = None,
    tolerance: float = 1e-10,
) -> CompletenessReport:
    """Sup-norm distance of each probe's Bellman backup from the feature span.

    ``probe_basis`` holds probe vectors as columns (default: the identity).
    """
    d = feature_map.dim
    probes = np.eye(d) if probe_basis is None else np.atleast_2d(np.asarray(probe_basis, dtype=float))
    if probes.shape[0] != d:
        probes = probes.T
    Phi = feature_map.matrix()
    targets = bellman_image(mdp, feature_map, policy, probes)
    coef = np.linalg.lstsq(Phi, targets, rcond=None)[0]
    residuals = np.abs(targets - Phi @ coef).max(axis=0)
    return CompletenessReport(float(residuals.max()), residuals, tolerance)


def non_expansiveness_check(
    mdp: DiscountedMDP,
    feature_map: FeatureMap,
    policy: Policy,
    pair_dist,
    powers,
    probes: np.ndarray | None = None,
    num_random_probes: int = 20,
    rng_seed: int = 0,
) -> float:
    """Largest ``|phi(s,a)^T (Lambda^-1 Lambda_cross)^t x| - 1`` over pairs, unit probes and powers.

    Clipped below at zero. ``Lambda`` is inverted on its range only (pseudo
    inverse with the same eigenvalue floor as :func:`dominance_constant`).
    Probes default to the standard basis plus ``num_random_probes`` random
    unit vectors, so the check is sampling based.
    """
    lam, _, _, lam_cross = population_matrices(mdp, feature_map, policy, pair_dist)
    w, U, _ = _restricted_range(lam)
    M = (U / w) @ (U.T @ lam_cross)
    d = feature_map.dim
    if probes is None:
        rng = np.random.default_rng(rng_seed)
        extra = rng.standard_normal((d, num_random_probes))
        probes = np.hstack([np.eye(d), extra])
    X = np.atleast_2d(np.asarray(probes, dtype=float))
    if X.shape[0] != d:
        X = X.T
    X = X / np.linalg.norm(X, axis=0)
    Phi = feature_map.matrix()
    worst = 0.0
    powers = sorted(int(t) for t in powers)
    current, done = X, 0
    with np.errstate(over="ignore", invalid="ignore"):
        for t in powers:
            for _ in range(t - done):
                current = M @ current
            done = t
            worst = max(worst, float(np.abs(Phi @ current).max()) - 1.0)
    return min(max(worst, 0.0), SATURATION) if math.isfinite(worst) else SATURATION


def amplification_spectrum(bundle: CovarianceBundle, gamma: float, max_power: int) -> AmplificationSpectrum:
    """``||(gamma L)^t||_F`` for ``t = 1..max_power`` and the spectral radius of ``gamma L``."""
    if max_power < 1:
        raise ValueError("max_power must be at least 1")
    G = gamma * bundle.amplifier
    norms = np.empty(max_power)
    sat = np.zeros(max_power, dtype=bool)
    power = G.copy()
    hit = False
    with np.errstate(over="ignore", invalid="ignore"):
        for t in range(max_power):
            val = stable_norm(power) if not hit else np.inf
            if not val <= SATURATION:
                hit = True
            sat[t] = hit
            norms[t] = SATURATION if hit else val
            if not hit:
                power = G @ power
    radius = float(np.abs(np.linalg.eigvals(G)).max())
    return AmplificationSpectrum(norms, radius, sat)


def write_summary_csv(path, rows, comment: str | None = None) -> None:
    """One row per label: ``c_policy,c_init,spectral_radius,worst_completeness_residual,assumption3_ok``."""
    with open(path, "w", newline="") as fh:
        if comment:
            fh.write(f"# {comment}\n")
        w = csv.writer(fh)
        w.writerow(["label", "c_policy", "c_init", "spectral_radius",
                    "worst_completeness_residual", "assumption3_ok"])
        for label, shift, radius, completeness in rows:
            w.writerow([label, repr(shift.c_policy), repr(shift.c_init), repr(radius),
                        repr(completeness.worst_residual), str(shift.assumption3_satisfied).lower()])
