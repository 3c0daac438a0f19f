"""Feature maps phi(s, a) for tabular MDPs.

Every :class:`FeatureMap` here is tabular: it stores the full ``(S, A, d)``
table, so evaluation is a lookup and the map can be enumerated for exact
(population) computations. The synthetic Gaussian regime has no states at
all and is exposed as a raw vector stream instead.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterator

import numpy as np

NORM_TOL = 1e-12


@dataclass(frozen=True, eq=False)
class RffConfig:
    """Parameters of ``x -> cos(sqrt(2 gamma_rff) W x + u)``."""

    weight_matrix: np.ndarray  # (dim, input_dim)
    offset: np.ndarray  # (dim,), entries in [0, 2 pi]
    gamma_rff: float
    scale_const: float = 1.0
    median_sq_dist: float = float("nan")
    median_pairs: int = 10_000

    @property
    def dim(self) -> int:
        return self.weight_matrix.shape[0]

    @property
    def input_dim(self) -> int:
        return self.weight_matrix.shape[1]

    def transform(self, x: np.ndarray, normalize: bool = True) -> np.ndarray:
        """Map raw rows ``x`` (n, input_dim) to features (n, dim).

        With ``normalize`` the output is divided by ``sqrt(dim)`` so that
        every feature vector has Euclidean norm at most one.
        """
        x = np.atleast_2d(np.asarray(x, dtype=float))
        z = np.cos(np.sqrt(2.0 * self.gamma_rff) * x @ self.weight_matrix.T + self.offset)
        return z / np.sqrt(self.dim) if normalize else z


@dataclass(frozen=True, eq=False)
class FeatureMap:
    """Tabular feature map with ``table[s, a]`` the feature vector of ``(s, a)``."""

    table: np.ndarray
    kind: str = "custom"
    norm_bound_enforced: bool = True
    rff: RffConfig | None = field(default=None, repr=False)

    def __post_init__(self):
        t = np.array(self.table, dtype=float, copy=True)
        if t.ndim != 3:
            raise ValueError(f"feature table must have shape (S, A, d), got {t.shape}")
        t.setflags(write=False)
        object.__setattr__(self, "table", t)
        if self.norm_bound_enforced:
            worst = np.linalg.norm(t, axis=2).max()
            if worst > 1.0 + NORM_TOL:
                raise ValueError(f"feature norm {worst:.6g} exceeds 1 with norm bound enforced")

    @property
    def dim(self) -> int:
        return self.table.shape[2]

    @property
    def num_states(self) -> int:
        return self.table.shape[0]

    @property
    def num_actions(self) -> int:
        return self.table.shape[1]

    def __call__(self, s, a) -> np.ndarray:
        return self.table[s, a]

    def matrix(self) -> np.ndarray:
        """All features stacked in row-major ``(s, a)`` order, shape ``(S*A, d)``."""
        return self.table.reshape(-1, self.dim)

    def policy_matrix(self, actions: np.ndarray) -> np.ndarray:
        """Rows ``phi(s, pi(s))`` for every state."""
        return self.table[np.arange(self.num_states), actions]

    def check_compatible(self, num_states: int, num_actions: int) -> None:
        if (self.num_states, self.num_actions) != (num_states, num_actions):
            raise ValueError(
                f"feature map covers {self.num_states}x{self.num_actions} pairs, "
                f"MDP has {num_states}x{num_actions}"
            )


def one_hot_features(mdp) -> FeatureMap:
    """Indicator features, ``d = |S||A|``, row-major (s, a) order."""
    S, A = mdp.num_states, mdp.num_actions
    return FeatureMap(np.eye(S * A).reshape(S, A, S * A), kind="onehot")


def state_action_encoding(num_states: int, num_actions: int) -> np.ndarray:
    """Raw encodings: one-hot state concatenated with one-hot action, shape ``(S, A, S+A)``."""
    enc = np.zeros((num_states, num_actions, num_states + num_actions))
    for s in range(num_states):
        enc[s, :, s] = 1.0
        enc[s, np.arange(num_actions), num_states + np.arange(num_actions)] = 1.0
    return enc


def median_sq_distance(points: np.ndarray, num_pairs: int, rng: np.random.Generator) -> float:
    """Median squared distance over ``num_pairs`` random pairs of distinct indices.

    When the corpus has at most ``num_pairs`` index pairs, all of them are used.
    """
    x = np.atleast_2d(np.asarray(points, dtype=float))
    n = len(x)
    if n < 2 or len(np.unique(x, axis=0)) < 2:
        raise ValueError("median heuristic needs at least two distinct points")
    if n * (n - 1) // 2 <= num_pairs:
        i, j = np.triu_indices(n, k=1)
    else:
        i = rng.integers(n, size=num_pairs)
        j = (i + rng.integers(1, n, size=num_pairs)) % n
    return float(np.median(((x[i] - x[j]) ** 2).sum(axis=1)))


def make_rff_config(
    data_sample: np.ndarray,
    dim: int,
    scale_const: float = 1.0,
    rng_seed: int = 0,
    median_pairs: int = 10_000,
) -> RffConfig:
    """Draw ``W`` and ``u`` and set ``gamma_rff = scale_const / D_median``."""
    rng = np.random.default_rng(rng_seed)
    x = np.atleast_2d(np.asarray(data_sample, dtype=float))
    d_med = median_sq_distance(x, median_pairs, rng)
    if d_med <= 0:
        raise ValueError("median squared distance is zero; sample more distinct points")
    W = rng.standard_normal((dim, x.shape[1]))
    u = rng.uniform(0.0, 2.0 * np.pi, size=dim)
    return RffConfig(W, u, scale_const / d_med, scale_const, d_med, median_pairs)


def random_fourier_features(
    data_sample: np.ndarray,
    num_states: int,
    num_actions: int,
    dim: int,
    scale_const: float = 1.0,
    rng_seed: int = 0,
    normalize: bool = True,
    median_pairs: int = 10_000,
    config: RffConfig | None = None,
) -> FeatureMap:
    """Random Fourier features over one-hot state/action encodings.

    ``data_sample`` holds raw encodings (rows of :func:`state_action_encoding`)
    drawn from the data, used only for the bandwidth median heuristic. Pass a
    prepared ``config`` to skip that step.
    """
    if config is None:
        config = make_rff_config(data_sample, dim, scale_const, rng_seed, median_pairs)
    enc = state_action_encoding(num_states, num_actions)
    table = config.transform(enc.reshape(-1, enc.shape[-1]), normalize=normalize)
    return FeatureMap(
        table.reshape(num_states, num_actions, config.dim),
        kind="rff",
        norm_bound_enforced=normalize,
        rff=config,
    )


def gaussian_synthetic_features(d: int, rng_seed: int, block: int = 1024) -> Iterator[np.ndarray]:
    """Endless stream of i.i.d. ``N(0, I_d)`` vectors.

    Draws are made in blocks; the stream depends only on ``(d, rng_seed)``.
    """
    if d < 1:
        raise ValueError("d must be positive")
    rng = np.random.default_rng(rng_seed)
    while True:
        yield from rng.standard_normal((block, d))


def spectral_features(
    mdp,
    policy,
    k: int,
    include_value: bool = False,
) -> FeatureMap:
    """Rank-``k`` features from the leading singular directions of the successor matrix.

    The successor matrix ``(I - gamma P_pi)^-1`` acts on state-action pairs;
    its top ``k`` left singular vectors span the directions along which
    rewards are most amplified into values. With ``include_value`` the exact
    ``Q^pi`` is placed in the span first, making the class realizable while
    still not closed under the Bellman operator. Rows are rescaled by a common
    factor so the largest feature norm is one.
    """
    from .mdp import exact_q_value, pair_transition_matrix

    n = mdp.num_pairs
    if not 1 <= k <= n:
        raise ValueError(f"k must lie in [1, {n}]")
    succ = np.linalg.inv(np.eye(n) - mdp.gamma * pair_transition_matrix(mdp, policy))
    U = np.linalg.svd(succ)[0]
    if include_value:
        q = exact_q_value(mdp, policy).q.reshape(-1)
        basis = np.column_stack([q, U[:, : k - 1]])
        U = np.linalg.qr(basis)[0]
    else:
        U = U[:, :k]
    # Fix the sign convention so the map is reproducible across LAPACK builds.
    signs = np.sign(U[np.argmax(np.abs(U), axis=0), np.arange(U.shape[1])])
    U = U * signs
    U = U / np.linalg.norm(U, axis=1).max()
    return FeatureMap(U.reshape(mdp.num_states, mdp.num_actions, -1), kind="spectral")


# ---------------------------------------------------------------------------
# Serialization


def feature_map_to_dict(fm: FeatureMap) -> dict:
    out = {"kind": fm.kind, "num_states": fm.num_states, "num_actions": fm.num_actions,
           "dim": fm.dim, "norm_bound_enforced": fm.norm_bound_enforced}
    if fm.kind == "onehot":
        return out
    if fm.rff is not None:
        out["rff"] = {
            "weight_matrix": fm.rff.weight_matrix.tolist(),
            "offset": fm.rff.offset.tolist(),
            "gamma_rff": fm.rff.gamma_rff,
            "scale_const": fm.rff.scale_const,
            "median_sq_dist": fm.rff.median_sq_dist,
            "median_pairs": fm.rff.median_pairs,
        }
        return out
    out["table"] = fm.table.tolist()
    return out


def feature_map_from_dict(data: dict) -> FeatureMap:
    S, A = data["num_states"], data["num_actions"]
    if data["kind"] == "onehot":
        return FeatureMap(np.eye(S * A).reshape(S, A, S * A), kind="onehot")
    if "rff" in data:
        r = data["rff"]
        cfg = RffConfig(
            np.array(r["weight_matrix"], dtype=float),
            np.array(r["offset"], dtype=float),
            r["gamma_rff"], r["scale_const"], r["median_sq_dist"], r["median_pairs"],
        )
        return random_fourier_features(None, S, A, cfg.dim, config=cfg,
                                       normalize=data["norm_bound_enforced"])
    return FeatureMap(np.array(data["table"], dtype=float), kind=data["kind"],
                      norm_bound_enforced=data["norm_bound_enforced"])


def save_feature_map(fm: FeatureMap, path) -> None:
    Path(path).write_text(json.dumps(feature_map_to_dict(fm), indent=1) + "\n")


def load_feature_map(path) -> FeatureMap:
    return feature_map_from_dict(json.loads(Path(path).read_text()))
