"""Offline datasets, dataset mixing and empirical covariance assembly."""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Iterator, NamedTuple

import numpy as np
from scipy.linalg import cho_factor, cho_solve

from .errors import NumericalError
from .features import FeatureMap
from .mdp import (
    DiscountedMDP, Policy, _sample_next_states, _sample_rewards, pair_transition_matrix,
    simulate_episodes,
)

TARGET = "target"
RANDOM = "random"
# Rows are accumulated in fixed-size chunks in index order, so Gram sums are
# bitwise reproducible regardless of how callers batch their work.
CHUNK = 65_536


def lower_perf_tag(i: int) -> str:
    return f"lower_perf({i})"


class Transition(NamedTuple):
    s: int
    a: int
    r: float
    s_next: int
    source_tag: str


@dataclass(frozen=True, eq=False)
class TransitionDataset:
    """Column-stored ``(s, a, r, s')`` samples with per-row source tags."""

    s: np.ndarray
    a: np.ndarray
    r: np.ndarray
    s_next: np.ndarray
    source: np.ndarray
    generating_seed: int | None = None
    provenance: str = ""

    def __post_init__(self):
        cols = {
            "s": np.asarray(self.s, dtype=np.int64),
            "a": np.asarray(self.a, dtype=np.int64),
            "r": np.asarray(self.r, dtype=float),
            "s_next": np.asarray(self.s_next, dtype=np.int64),
            "source": np.asarray(self.source, dtype=object),
        }
        n = len(cols["s"])
        if n < 1:
            raise ValueError("a dataset needs at least one transition")
        if any(len(c) != n for c in cols.values()):
            raise ValueError("dataset columns have different lengths")
        for name, col in cols.items():
            col = col.copy()
            col.setflags(write=False)
            object.__setattr__(self, name, col)

    def __len__(self) -> int:
        return len(self.s)

    def __iter__(self) -> Iterator[Transition]:
        for row in zip(self.s, self.a, self.r, self.s_next, self.source):
            yield Transition(int(row[0]), int(row[1]), float(row[2]), int(row[3]), str(row[4]))

    def __getitem__(self, idx) -> "TransitionDataset":
        return TransitionDataset(
            self.s[idx], self.a[idx], self.r[idx], self.s_next[idx], self.source[idx],
            self.generating_seed, self.provenance,
        )

    def check(self, num_states: int, num_actions: int) -> None:
        if self.s.max() >= num_states or self.s_next.max() >= num_states or self.a.max() >= num_actions:
            raise ValueError("dataset indices out of range for the MDP")
        if min(self.s.min(), self.s_next.min(), self.a.min()) < 0:
            raise ValueError("dataset indices must be non-negative")

    def tag_counts(self) -> dict[str, int]:
        tags, counts = np.unique(self.source.astype(str), return_counts=True)
        return dict(zip(tags.tolist(), counts.tolist()))

    def pair_frequencies(self, num_states: int, num_actions: int) -> np.ndarray:
        """Empirical distribution over ``(s, a)``, shape ``(S, A)``."""
        counts = np.bincount(self.s * num_actions + self.a, minlength=num_states * num_actions)
        return (counts / len(self)).reshape(num_states, num_actions)


def concat_datasets(*parts: TransitionDataset, provenance: str | None = None) -> TransitionDataset:
    return TransitionDataset(
        np.concatenate([p.s for p in parts]),
        np.concatenate([p.a for p in parts]),
        np.concatenate([p.r for p in parts]),
        np.concatenate([p.s_next for p in parts]),
        np.concatenate([p.source for p in parts]),
        parts[0].generating_seed,
        provenance if provenance is not None else " + ".join(p.provenance for p in parts),
    )


def sample_offline_dataset(
    mdp: DiscountedMDP,
    behavior: Policy | None,
    n: int,
    rng_seed: int,
    horizon: int = 100,
    epsilon: float = 0.0,
    source_tag: str | None = None,
) -> TransitionDataset:
    """Harvest ``n`` transitions from fixed-horizon episodes restarted from ``mu_init``.

    ``behavior=None`` means uniformly random actions. Episodes are laid out
    one after another and the flattened stream is cut at ``n``.
    """
    if n < 1:
        raise ValueError("n must be at least 1")
    if source_tag is None:
        source_tag = RANDOM if behavior is None else TARGET
    episodes = math.ceil(n / horizon)
    traj = simulate_episodes(mdp, behavior, episodes, horizon, np.random.default_rng(rng_seed), epsilon)
    who = "random actions" if behavior is None else f"policy (epsilon={epsilon:g})"
    return TransitionDataset(
        traj.states.reshape(-1)[:n],
        traj.actions.reshape(-1)[:n],
        traj.rewards.reshape(-1)[:n],
        traj.next_states.reshape(-1)[:n],
        np.full(n, source_tag, dtype=object),
        rng_seed,
        f"{n} samples, {who}, horizon {horizon}, seed {rng_seed}",
    )


def sample_iid_dataset(
    mdp: DiscountedMDP,
    pair_dist: np.ndarray,
    n: int,
    rng_seed: int,
    source_tag: str = TARGET,
) -> TransitionDataset:
    """Draw ``(s, a) ~ pair_dist`` i.i.d., then ``r`` and ``s'`` from the model."""
    mu = np.asarray(pair_dist, dtype=float).reshape(-1)
    if abs(mu.sum() - 1.0) > 1e-10 or np.any(mu < 0):
        raise ValueError("pair_dist must be a distribution over (s, a)")
    rng = np.random.default_rng(rng_seed)
    idx = rng.choice(len(mu), size=n, p=mu / mu.sum())
    s, a = np.divmod(idx, mdp.num_actions)
    r = _sample_rewards(mdp, s, a, rng)
    s2 = _sample_next_states(mdp, s, a, rng)
    return TransitionDataset(s, a, r, s2, np.full(n, source_tag, dtype=object), rng_seed,
                             f"{n} i.i.d. samples from a fixed (s, a) distribution, seed {rng_seed}")


def mix_datasets(base: TransitionDataset, extra: TransitionDataset, ratio: float) -> TransitionDataset:
    """Append the first ``ceil(ratio * len(base))`` samples of ``extra`` to ``base``."""
    if ratio < 0 or not math.isfinite(ratio):
        raise ValueError("ratio must be a non-negative real")
    k = math.ceil(ratio * len(base))
    if k > len(extra):
        raise ValueError(f"mixing ratio {ratio:g} needs {k} extra samples, only {len(extra)} available")
    if k == 0:
        return base
    return concat_datasets(base, extra[:k], provenance=f"{base.provenance} + {ratio:g}x [{extra.provenance}]")


# ---------------------------------------------------------------------------
# Covariances


@dataclass(frozen=True, eq=False)
class CovarianceBundle:
    """Empirical quantities that drive FQI and LSTD.

    ``lambda_hat = Phi^T Phi / N + lambda I``, ``cross = Phi^T Phi_bar / N``,
    ``phi_t_r = Phi^T r / N`` and ``amplifier = lambda_hat^-1 cross``.
    ``phi_t_zeta = Phi^T zeta / N`` exists only when ``theta_star`` was given.
    """

    lambda_hat: np.ndarray
    cross: np.ndarray
    phi_t_r: np.ndarray
    lambda_reg: float
    n: int
    phi_t_zeta: np.ndarray | None = None

    def __post_init__(self):
        try:
            chol = cho_factor(self.lambda_hat, lower=True)
        except np.linalg.LinAlgError as exc:
            raise NumericalError("lambda_hat is not positive definite") from exc
        object.__setattr__(self, "_chol", chol)
        object.__setattr__(self, "_amplifier", None)

    @property
    def dim(self) -> int:
        return self.lambda_hat.shape[0]

    def solve(self, rhs: np.ndarray) -> np.ndarray:
        """``lambda_hat^-1 rhs`` through the cached Cholesky factor."""
        return cho_solve(self._chol, rhs)

    @property
    def amplifier(self) -> np.ndarray:
        if self._amplifier is None:
            object.__setattr__(self, "_amplifier", self.solve(self.cross))
        return self._amplifier

    def condition_number(self) -> float:
        w = np.linalg.eigvalsh(self.lambda_hat)
        return float(w[-1] / w[0])


def _chunked_gram(left: np.ndarray, right: np.ndarray) -> np.ndarray:
    out = np.zeros((left.shape[1], right.shape[1]))
    for start in range(0, len(left), CHUNK):
        out += left[start:start + CHUNK].T @ right[start:start + CHUNK]
    return out


def bundle_from_features(
    phi: np.ndarray,
    phi_next: np.ndarray,
    rewards: np.ndarray,
    lambda_reg: float,
    theta_star: np.ndarray | None = None,
    gamma: float | None = None,
) -> CovarianceBundle:
    """Build a bundle from row-aligned feature matrices.

    ``phi[i] = phi(s_i, a_i)`` and ``phi_next[i] = phi(s'_i, pi(s'_i))``. The
    realized Bellman noise ``zeta_i = r_i + gamma phi_next[i]^T theta* - phi[i]^T theta*``
    is formed when ``theta_star`` (and ``gamma``) are supplied.
    """
    if not lambda_reg > 0:
        raise ValueError("lambda_reg must be positive")
    phi = np.asarray(phi, dtype=float)
    phi_next = np.asarray(phi_next, dtype=float)
    rewards = np.asarray(rewards, dtype=float)
    n, d = phi.shape
    if n < 1:
        raise ValueError("empty dataset")
    if phi_next.shape != (n, d) or rewards.shape != (n,):
        raise ValueError("feature matrices and rewards are misaligned")
    lam = _chunked_gram(phi, phi) / n
    lam = 0.5 * (lam + lam.T) + lambda_reg * np.eye(d)
    cross = _chunked_gram(phi, phi_next) / n
    phi_t_r = _chunked_gram(phi, rewards[:, None])[:, 0] / n
    phi_t_zeta = None
    if theta_star is not None:
        if gamma is None:
            raise ValueError("gamma is required to form the Bellman noise")
        theta_star = np.asarray(theta_star, dtype=float)
        zeta = rewards + gamma * (phi_next @ theta_star) - phi @ theta_star
        phi_t_zeta = _chunked_gram(phi, zeta[:, None])[:, 0] / n
    return CovarianceBundle(lam, cross, phi_t_r, float(lambda_reg), n, phi_t_zeta)


def dataset_features(dataset: TransitionDataset, feature_map: FeatureMap, policy: Policy):
    """``(Phi, Phi_bar)`` for a dataset: current pairs and next pairs under ``policy``."""
    if len(policy) != feature_map.num_states:
        raise ValueError("policy and feature map cover different state sets")
    phi = feature_map.table[dataset.s, dataset.a]
    phi_next = feature_map.table[dataset.s_next, policy.actions[dataset.s_next]]
    return phi, phi_next


def build_covariance_bundle(
    dataset: TransitionDataset,
    feature_map: FeatureMap,
    policy: Policy,
    lambda_reg: float,
    theta_star: np.ndarray | None = None,
    gamma: float | None = None,
) -> CovarianceBundle:
    dataset.check(feature_map.num_states, feature_map.num_actions)
    phi, phi_next = dataset_features(dataset, feature_map, policy)
    return bundle_from_features(phi, phi_next, dataset.r, lambda_reg, theta_star, gamma)


def population_bundle(
    mdp: DiscountedMDP,
    feature_map: FeatureMap,
    policy: Policy,
    pair_dist: np.ndarray,
    lambda_reg: float = 0.0,
) -> CovarianceBundle:
    """Exact-expectation bundle: sums over ``(s, a)`` weighted by ``pair_dist``.

    This is the infinite-data object; ``lambda_reg = 0`` is allowed here as
    long as the weighted Gram is positive definite.
    """
    if lambda_reg < 0:
        raise ValueError("lambda_reg must be non-negative")
    feature_map.check_compatible(mdp.num_states, mdp.num_actions)
    mu = np.asarray(pair_dist, dtype=float).reshape(-1)
    Phi = feature_map.matrix()
    P = pair_transition_matrix(mdp, policy)
    weighted = Phi * mu[:, None]
    lam = Phi.T @ weighted
    lam = 0.5 * (lam + lam.T) + lambda_reg * np.eye(feature_map.dim)
    cross = weighted.T @ (P @ Phi)
    phi_t_r = weighted.T @ mdp.reward_mean.reshape(-1)
    return CovarianceBundle(lam, cross, phi_t_r, float(lambda_reg), n=0)


# ---------------------------------------------------------------------------
# CSV


CSV_HEADER = ["s", "a", "r", "s_next", "source_tag"]


def write_dataset_csv(dataset: TransitionDataset, path, comment: str | None = None) -> None:
    with open(path, "w", newline="") as fh:
        if comment:
            fh.write(f"# {comment}\n")
        w = csv.writer(fh)
        w.writerow(CSV_HEADER)
        for t in dataset:
            w.writerow([t.s, t.a, repr(t.r), t.s_next, t.source_tag])


def read_dataset_csv(path) -> TransitionDataset:
    with open(path, newline="") as fh:
        rows = [line for line in fh if not line.startswith("#")]
    reader = csv.reader(rows)
    header = next(reader)
    if header != CSV_HEADER:
        raise ValueError(f"unexpected dataset header {header}")
    body = list(reader)
    return TransitionDataset(
        [int(r[0]) for r in body], [int(r[1]) for r in body], [float(r[2]) for r in body],
        [int(r[3]) for r in body], [r[4] for r in body], provenance=f"read from {Path(path).name}",
    )


def write_matrix_csv(matrix: np.ndarray, path, comment: str | None = None) -> None:
    m = np.atleast_2d(matrix)
    with open(path, "w", newline="") as fh:
        if comment:
            fh.write(f"# {comment}\n")
        w = csv.writer(fh)
        w.writerow([f"c{j}" for j in range(m.shape[1])])
        for row in m:
            w.writerow([repr(float(x)) for x in row])


def write_bundle_csvs(bundle: CovarianceBundle, directory, comment: str | None = None) -> list[Path]:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    out = []
    for name in ("lambda_hat", "cross", "amplifier"):
        p = directory / f"{name}.csv"
        write_matrix_csv(getattr(bundle, name), p, comment)
        out.append(p)
    return out
