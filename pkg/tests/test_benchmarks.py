import itertools

import numpy as np
import pytest

from opeval.benchmarks import ergodic_chain, random_mdp, two_room_gridworld
from opeval.mdp import Policy, stationary_distribution


def test_random_mdp_shapes_and_seed():
    a = random_mdp(5, 3, 0.9, 1, concentration=0.3)
    assert a.transition.shape == (5, 3, 5) and a == random_mdp(5, 3, 0.9, 1, concentration=0.3)
    assert a != random_mdp(5, 3, 0.9, 2, concentration=0.3)


def test_chain_is_ergodic_for_every_policy():
    mdp = ergodic_chain(5, 0.9, 0, num_actions=2)
    for actions in itertools.product(range(2), repeat=5):
        mu = stationary_distribution(mdp, Policy(np.array(actions)))
        assert mu.sum() == pytest.approx(1.0) and mu.max(axis=1).min() > 0


def test_gridworld_layout():
    mdp = two_room_gridworld(height=3, room_width=2)
    assert mdp.num_states == 3 * 5 - 2
    assert mdp.reward_mean.sum() == 4.0  # one rewarding cell, all four actions
    assert np.all(mdp.init_dist[mdp.reward_mean[:, 0] > 0] == 0)
