"""Small tabular MDP families used by the experiment harness."""

from __future__ import annotations

import numpy as np

from .mdp import DiscountedMDP


def random_mdp(
    num_states: int,
    num_actions: int,
    gamma: float,
    rng_seed: int,
    concentration: float = 1.0,
    reward_noise_std: float = 0.0,
) -> DiscountedMDP:
    """Dense random MDP: Dirichlet transition rows, uniform [0, 1] mean rewards."""
    rng = np.random.default_rng(rng_seed)
    P = rng.dirichlet(np.full(num_states, concentration), size=(num_states, num_actions))
    R = rng.uniform(size=(num_states, num_actions))
    init = np.full(num_states, 1.0 / num_states)
    return DiscountedMDP(P, R, gamma, init, reward_noise_std)


def ergodic_chain(
    num_states: int,
    gamma: float,
    rng_seed: int,
    num_actions: int = 2,
    move_prob: float = 0.7,
    reward_noise_std: float = 0.0,
) -> DiscountedMDP:
    """Ring of states. Action ``a`` moves ``a - (A-1)/2``-ish steps with probability ``move_prob``.

    With the remaining probability the agent stays or moves one step either
    way, so every deterministic policy induces an irreducible aperiodic chain.
    Rewards are uniform on [0, 1].
    """
    rng = np.random.default_rng(rng_seed)
    S, A = num_states, num_actions
    P = np.zeros((S, A, S))
    rest = (1.0 - move_prob) / 3.0
    for s in range(S):
        for a in range(A):
            step = 1 if a % 2 == 0 else -1
            step *= 1 + a // 2
            P[s, a, (s + step) % S] += move_prob
            P[s, a, s] += rest
            P[s, a, (s + 1) % S] += rest
            P[s, a, (s - 1) % S] += rest
    R = rng.uniform(size=(S, A))
    init = np.full(S, 1.0 / S)
    return DiscountedMDP(P, R, gamma, init, reward_noise_std)


_MOVES = [(-1, 0), (1, 0), (0, -1), (0, 1)]


def two_room_gridworld(
    height: int = 5,
    room_width: int = 4,
    gamma: float = 0.95,
    slip: float = 0.1,
    reward_noise_std: float = 0.0,
) -> DiscountedMDP:
    """Two rooms joined by a one-cell door in the middle row of the dividing wall.

    Actions are up/down/left/right; with probability ``slip`` a uniformly
    random move happens instead. Bumping into a wall leaves the agent in
    place. Reward 1 is paid for any action taken in the far corner of the
    right room; the episode does not terminate. Episodes start in the left room.
    """
    width = 2 * room_width + 1
    wall_col = room_width
    door_row = height // 2
    cells = [(r, c) for r in range(height) for c in range(width)
             if c != wall_col or r == door_row]
    index = {cell: i for i, cell in enumerate(cells)}
    S, A = len(cells), 4
    P = np.zeros((S, A, S))
    for (r, c), s in index.items():
        for a in range(A):
            for b, (dr, dc) in enumerate(_MOVES):
                p = (1.0 - slip) * (a == b) + slip / A
                nxt = index.get((r + dr, c + dc), s)
                P[s, a, nxt] += p
    R = np.zeros((S, A))
    R[index[(height - 1, width - 1)], :] = 1.0
    init = np.array([1.0 if c < wall_col else 0.0 for (_, c) in cells])
    return DiscountedMDP(P, R, gamma, init / init.sum(), reward_noise_std)
