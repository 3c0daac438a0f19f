"""Tabular discounted MDPs, deterministic policies, exact values and rollouts.

States and actions are integer ids. State-action pairs are flattened in
row-major order, ``index = s * num_actions + a``, everywhere in the package.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from pathlib import Path
from typing import NamedTuple

import numpy as np

from .errors import ChainError, NumericalError

PROB_TOL = 1e-12
MAX_PAIRS = 10_000
# Reward noise is a Gaussian clipped at this many standard deviations.
NOISE_CLIP = 5.0


def _frozen(x, dtype=float) -> np.ndarray:
    arr = np.array(x, dtype=dtype, copy=True)
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True, eq=False)
class DiscountedMDP:
    """Finite MDP ``(S, A, P, R, gamma, mu_init)``.

    ``transition[s, a, s2]`` is ``P(s2 | s, a)``; ``reward_mean[s, a]`` the
    mean reward. Realized rewards add clipped Gaussian noise with standard
    deviation ``reward_noise_std[s, a]`` (zero gives deterministic rewards).
    """

    transition: np.ndarray
    reward_mean: np.ndarray
    gamma: float
    init_dist: np.ndarray
    reward_noise_std: np.ndarray | float = 0.0

    def __post_init__(self):
        P = _frozen(self.transition)
        if P.ndim != 3 or P.shape[0] != P.shape[2]:
            raise ValueError(f"transition must have shape (S, A, S), got {P.shape}")
        S, A, _ = P.shape
        if S < 1 or A < 1:
            raise ValueError("need at least one state and one action")
        if np.any(P < 0):
            raise ValueError("transition probabilities must be non-negative")
        row_err = np.abs(P.sum(axis=2) - 1.0).max()
        if row_err > PROB_TOL:
            raise ValueError(f"transition rows must sum to 1 (max error {row_err:.3e})")
        R = _frozen(self.reward_mean)
        if R.shape != (S, A):
            raise ValueError(f"reward_mean must have shape {(S, A)}, got {R.shape}")
        if not np.all(np.isfinite(R)):
            raise ValueError("reward_mean must be finite")
        noise = _frozen(np.broadcast_to(np.asarray(self.reward_noise_std, dtype=float), (S, A)))
        if np.any(noise < 0) or not np.all(np.isfinite(noise)):
            raise ValueError("reward_noise_std must be finite and non-negative")
        mu = _frozen(self.init_dist)
        if mu.shape != (S,):
            raise ValueError(f"init_dist must have shape {(S,)}, got {mu.shape}")
        if np.any(mu < 0) or abs(mu.sum() - 1.0) > PROB_TOL:
            raise ValueError("init_dist must be a probability vector")
        gamma = float(self.gamma)
        if not 0.0 <= gamma < 1.0:
            raise ValueError(f"gamma must lie in [0, 1), got {gamma}")
        object.__setattr__(self, "transition", P)
        object.__setattr__(self, "reward_mean", R)
        object.__setattr__(self, "reward_noise_std", noise)
        object.__setattr__(self, "init_dist", mu)
        object.__setattr__(self, "gamma", gamma)

    @property
    def num_states(self) -> int:
        return self.transition.shape[0]

    @property
    def num_actions(self) -> int:
        return self.transition.shape[1]

    @property
    def num_pairs(self) -> int:
        return self.num_states * self.num_actions

    def theory_mode_violations(self) -> list[str]:
        """Conditions of the bounded-reward theory that this instance breaks.

        Violations are reported, never enforced.
        """
        out = []
        lo, hi = self.reward_mean.min(), self.reward_mean.max()
        if lo < 0.0 or hi > 1.0:
            out.append(f"mean rewards span [{lo:g}, {hi:g}], outside [0, 1]")
        if np.any(self.reward_noise_std > 0):
            out.append("rewards are stochastic; realized rewards may leave [0, 1]")
        return out

    def __eq__(self, other):
        if not isinstance(other, DiscountedMDP):
            return NotImplemented
        return (
            self.gamma == other.gamma
            and np.array_equal(self.transition, other.transition)
            and np.array_equal(self.reward_mean, other.reward_mean)
            and np.array_equal(self.reward_noise_std, other.reward_noise_std)
            and np.array_equal(self.init_dist, other.init_dist)
        )

    __hash__ = None


@dataclass(frozen=True, eq=False)
class Policy:
    """Deterministic policy stored as a table ``actions[s]``."""

    actions: np.ndarray

    def __post_init__(self):
        acts = _frozen(self.actions, dtype=np.int64)
        if acts.ndim != 1:
            raise ValueError("policy table must be one-dimensional")
        object.__setattr__(self, "actions", acts)

    def __call__(self, s):
        return self.actions[s]

    def __len__(self):
        return len(self.actions)

    def __eq__(self, other):
        if not isinstance(other, Policy):
            return NotImplemented
        return np.array_equal(self.actions, other.actions)

    __hash__ = None

    def check(self, mdp: DiscountedMDP) -> None:
        if len(self.actions) != mdp.num_states:
            raise ValueError(
                f"policy covers {len(self.actions)} states, MDP has {mdp.num_states}"
            )
        if np.any(self.actions < 0) or np.any(self.actions >= mdp.num_actions):
            raise ValueError("policy action out of range")

    def pair_indices(self, num_actions: int) -> np.ndarray:
        """Flat (s, pi(s)) indices for every state."""
        return np.arange(len(self.actions)) * num_actions + self.actions


@dataclass(frozen=True)
class ValueTable:
    q: np.ndarray
    v: np.ndarray
    scalar_value: float


class Trajectory(NamedTuple):
    states: np.ndarray
    actions: np.ndarray
    rewards: np.ndarray
    next_states: np.ndarray


class MonteCarloEstimate(NamedTuple):
    mean: float
    stderr: float
    horizon: int


# ---------------------------------------------------------------------------
# Transition operators and exact values


def state_transition_matrix(mdp: DiscountedMDP, policy: Policy) -> np.ndarray:
    """``P_pi[s, s2] = P(s2 | s, pi(s))``."""
    policy.check(mdp)
    return mdp.transition[np.arange(mdp.num_states), policy.actions]


def pair_transition_matrix(mdp: DiscountedMDP, policy: Policy) -> np.ndarray:
    """Kernel on state-action pairs: ``P((s,a), (s2,a2)) = P(s2|s,a) [a2 = pi(s2)]``."""
    policy.check(mdp)
    S, A = mdp.num_states, mdp.num_actions
    out = np.zeros((S * A, S * A))
    out[:, policy.pair_indices(A)] = mdp.transition.reshape(S * A, S)
    return out


def exact_q_value(mdp: DiscountedMDP, policy: Policy) -> ValueTable:
    """Solve ``Q = R + gamma P_pi Q`` with a dense LU solve."""
    policy.check(mdp)
    n = mdp.num_pairs
    if n > MAX_PAIRS:
        raise ValueError(f"|S||A| = {n} exceeds the dense-solve cap of {MAX_PAIRS}")
    P = pair_transition_matrix(mdp, policy)
    r = mdp.reward_mean.reshape(-1)
    system = np.eye(n) - mdp.gamma * P
    q = np.linalg.solve(system, r)
    residual = np.abs(q - r - mdp.gamma * (P @ q)).max()
    scale = max(1.0, np.abs(q).max())
    if not residual <= 1e-10 * scale:
        raise NumericalError(f"Bellman residual {residual:.3e} after linear solve")
    Q = q.reshape(mdp.num_states, mdp.num_actions)
    v = Q[np.arange(mdp.num_states), policy.actions]
    return ValueTable(q=Q, v=v, scalar_value=float(mdp.init_dist @ v))


def stochastic_state_values(mdp: DiscountedMDP, action_probs: np.ndarray) -> np.ndarray:
    """State values of a stochastic policy given as ``action_probs[s, a]``."""
    pi = np.asarray(action_probs, dtype=float)
    P = np.einsum("sa,sat->st", pi, mdp.transition)
    r = np.einsum("sa,sa->s", pi, mdp.reward_mean)
    return np.linalg.solve(np.eye(mdp.num_states) - mdp.gamma * P, r)


def epsilon_greedy_probs(policy: Policy, epsilon: float, num_actions: int) -> np.ndarray:
    probs = np.full((len(policy), num_actions), epsilon / num_actions)
    probs[np.arange(len(policy)), policy.actions] += 1.0 - epsilon
    return probs


def optimal_q(mdp: DiscountedMDP, tol: float = 1e-12, max_iter: int = 100_000) -> np.ndarray:
    """Optimal action values by value iteration."""
    q = np.zeros((mdp.num_states, mdp.num_actions))
    for _ in range(max_iter):
        q_new = mdp.reward_mean + mdp.gamma * mdp.transition @ q.max(axis=1)
        if np.abs(q_new - q).max() <= tol:
            return q_new
        q = q_new
    raise NumericalError("value iteration did not converge")


def greedy_policy(q: np.ndarray) -> Policy:
    """Greedy policy; ties go to the lowest action index."""
    return Policy(np.argmax(np.asarray(q), axis=1))


def stationary_distribution(mdp: DiscountedMDP, policy: Policy, gap_tol: float = 1e-8) -> np.ndarray:
    """Stationary distribution of the policy-induced chain, as a ``(S, A)`` array.

    All mass for state ``s`` sits on ``(s, pi(s))``. Raises :class:`ChainError`
    when the chain has more than one eigenvalue on the unit circle
    (reducible or periodic).
    """
    P = state_transition_matrix(mdp, policy)
    S = mdp.num_states
    eigvals, eigvecs = np.linalg.eig(P.T)
    order = np.argsort(-np.abs(eigvals))
    mods = np.abs(eigvals[order])
    if S > 1 and mods[1] > 1.0 - gap_tol:
        kind = "periodic" if abs(eigvals[order[1]] - 1.0) > gap_tol else "reducible"
        raise ChainError(
            f"policy chain looks {kind}: second eigenvalue modulus {mods[1]:.12f} "
            f"(eigen-gap below {gap_tol:g})"
        )
    mu = np.real(eigvecs[:, order[0]])
    mu = np.abs(mu) / np.abs(mu).sum()
    # Polish: solve mu (I - P) = 0 with the normalisation row appended.
    system = np.vstack([(np.eye(S) - P).T, np.ones((1, S))])
    rhs = np.zeros(S + 1)
    rhs[-1] = 1.0
    mu = np.linalg.lstsq(system, rhs, rcond=None)[0]
    mu = np.clip(mu, 0.0, None)
    mu /= mu.sum()
    residual = np.abs(mu @ P - mu).sum()
    if residual > 1e-10:
        raise NumericalError(f"stationary residual {residual:.3e}")
    out = np.zeros((S, mdp.num_actions))
    out[np.arange(S), policy.actions] = mu
    return out


# ---------------------------------------------------------------------------
# Sampling


def _sample_next_states(mdp: DiscountedMDP, s, a, rng: np.random.Generator) -> np.ndarray:
    cdf = np.cumsum(mdp.transition[s, a], axis=-1)
    u = rng.random(len(s))
    nxt = (u[:, None] >= cdf).sum(axis=1)
    return np.minimum(nxt, mdp.num_states - 1)


def _sample_rewards(mdp: DiscountedMDP, s, a, rng: np.random.Generator) -> np.ndarray:
    z = np.clip(rng.standard_normal(len(s)), -NOISE_CLIP, NOISE_CLIP)
    return mdp.reward_mean[s, a] + mdp.reward_noise_std[s, a] * z


def _choose_actions(states, policy, epsilon, num_actions, rng):
    n = len(states)
    if policy is None:
        return rng.integers(num_actions, size=n)
    actions = policy.actions[states]
    if epsilon > 0:
        explore = rng.random(n) < epsilon
        actions = np.where(explore, rng.integers(num_actions, size=n), actions)
    return actions


def simulate_episodes(
    mdp: DiscountedMDP,
    policy: Policy | None,
    num_episodes: int,
    horizon: int,
    rng: np.random.Generator,
    epsilon: float = 0.0,
) -> Trajectory:
    """Run ``num_episodes`` fixed-horizon episodes in lock step.

    ``policy=None`` picks actions uniformly at random; otherwise actions follow
    ``policy`` with probability ``1 - epsilon``. Returned arrays have shape
    ``(num_episodes, horizon)``.
    """
    if horizon < 1:
        raise ValueError("horizon must be at least 1")
    if policy is not None:
        policy.check(mdp)
    shape = (num_episodes, horizon)
    states = np.empty(shape, dtype=np.int64)
    actions = np.empty(shape, dtype=np.int64)
    rewards = np.empty(shape)
    next_states = np.empty(shape, dtype=np.int64)
    s = rng.choice(mdp.num_states, size=num_episodes, p=mdp.init_dist)
    for h in range(horizon):
        a = _choose_actions(s, policy, epsilon, mdp.num_actions, rng)
        r = _sample_rewards(mdp, s, a, rng)
        s2 = _sample_next_states(mdp, s, a, rng)
        states[:, h], actions[:, h], rewards[:, h], next_states[:, h] = s, a, r, s2
        s = s2
    return Trajectory(states, actions, rewards, next_states)


def rollout(mdp: DiscountedMDP, policy: Policy, horizon: int, rng_seed: int) -> Trajectory:
    """One trajectory of length ``horizon`` from ``s0 ~ mu_init``."""
    batch = simulate_episodes(mdp, policy, 1, horizon, np.random.default_rng(rng_seed))
    return Trajectory(*(x[0] for x in batch))


def truncation_horizon(gamma: float, r_max: float, tol: float) -> int:
    """Smallest horizon whose discarded tail ``gamma^H r_max / (1 - gamma)`` is within ``tol``."""
    if r_max <= 0 or gamma == 0.0:
        return 1
    h = math.log(tol * (1.0 - gamma) / r_max) / math.log(gamma)
    return max(1, math.ceil(h))


def monte_carlo_value(
    mdp: DiscountedMDP,
    policy: Policy,
    num_trajectories: int,
    horizon: int | None = None,
    rng_seed: int = 0,
    tol: float = 1e-6,
    epsilon: float = 0.0,
    batch_size: int = 20_000,
) -> MonteCarloEstimate:
    """Mean truncated discounted return from ``mu_init`` with its standard error.

    When ``horizon`` is omitted it is chosen so the truncation bias is below
    ``tol`` (using the largest reward magnitude plus five noise deviations).
    """
    if horizon is None:
        r_max = np.abs(mdp.reward_mean).max() + NOISE_CLIP * mdp.reward_noise_std.max()
        horizon = truncation_horizon(mdp.gamma, r_max, tol)
    rng = np.random.default_rng(rng_seed)
    returns = []
    discounts = mdp.gamma ** np.arange(horizon)
    remaining = num_trajectories
    while remaining > 0:
        n = min(batch_size, remaining)
        returns.append(_discounted_returns(mdp, policy, n, horizon, rng, discounts, epsilon))
        remaining -= n
    g = np.concatenate(returns)
    stderr = float(g.std(ddof=1) / math.sqrt(len(g))) if len(g) > 1 else float("inf")
    return MonteCarloEstimate(float(g.mean()), stderr, horizon)


def _discounted_returns(mdp, policy, n, horizon, rng, discounts, epsilon):
    # Streams rewards instead of storing whole episodes.
    total = np.zeros(n)
    s = rng.choice(mdp.num_states, size=n, p=mdp.init_dist)
    for h in range(horizon):
        a = _choose_actions(s, policy, epsilon, mdp.num_actions, rng)
        total += discounts[h] * _sample_rewards(mdp, s, a, rng)
        s = _sample_next_states(mdp, s, a, rng)
    return total


# ---------------------------------------------------------------------------
# Serialization


def mdp_to_dict(mdp: DiscountedMDP) -> dict:
    return {
        "num_states": mdp.num_states,
        "num_actions": mdp.num_actions,
        "gamma": mdp.gamma,
        "init_dist": mdp.init_dist.tolist(),
        "transition": [[row.tolist() for row in P_s] for P_s in mdp.transition],
        "reward": mdp.reward_mean.tolist(),
        "reward_noise_std": mdp.reward_noise_std.tolist(),
    }


def mdp_from_dict(data: dict) -> DiscountedMDP:
    mdp = DiscountedMDP(
        transition=np.array(data["transition"], dtype=float),
        reward_mean=np.array(data["reward"], dtype=float),
        gamma=data["gamma"],
        init_dist=np.array(data["init_dist"], dtype=float),
        reward_noise_std=np.array(data.get("reward_noise_std", 0.0), dtype=float),
    )
    if (mdp.num_states, mdp.num_actions) != (data["num_states"], data["num_actions"]):
        raise ValueError("declared num_states/num_actions disagree with the tables")
    return mdp


def save_mdp(mdp: DiscountedMDP, path) -> None:
    """Write an MDP as indented JSON; floats use shortest round-trip repr."""
    Path(path).write_text(json.dumps(mdp_to_dict(mdp), indent=1) + "\n")


def load_mdp(path) -> DiscountedMDP:
    return mdp_from_dict(json.loads(Path(path).read_text()))


def save_policy(policy: Policy, path) -> None:
    Path(path).write_text(json.dumps({"actions": policy.actions.tolist()}) + "\n")


def load_policy(path) -> Policy:
    return Policy(json.loads(Path(path).read_text())["actions"])
