import json

import numpy as np
import pytest

from tmlmc.core import (Divergence, MinDomain, TabularMDP, UncertaintySpec, greedy_policy,
                        load_mdp, min_nonzero_entry, save_mdp, support_table, value_vector)
from tmlmc.envs import garnet
from tmlmc.robustdp import robust_value_iteration


def _mdp(P, gamma=0.9):
    P = np.asarray(P, dtype=float)
    S, A = P.shape[:2]
    return TabularMDP(P, [0.0, 1.0], np.full((S, A, 2), 0.5), gamma, 1.0)


def test_value_vector_and_policy_examples():
    assert np.array_equal(value_vector(np.zeros((3, 2))), np.zeros(3))
    q = np.array([[1.0, 2.0], [3.0, 0.0]])
    assert np.array_equal(value_vector(q), [2.0, 3.0])
    assert np.array_equal(greedy_policy(q), [1, 0])
    assert np.array_equal(greedy_policy(np.zeros((4, 3))), np.zeros(4))


def test_value_vector_on_robot_optimum(robot):
    q, _ = robust_value_iteration(robot, UncertaintySpec("tv", 0.2))
    V = value_vector(q)
    for s in range(robot.num_states):
        assert V[s] == max(q[s, a] for a in range(robot.num_actions))


def test_greedy_policy_invariances(rng):
    for _ in range(50):
        q = rng.normal(size=(6, 4))
        pi = greedy_policy(q)
        assert np.array_equal(greedy_policy(q + rng.normal()), pi)
        assert np.array_equal(greedy_policy(q * rng.uniform(0.1, 10)), pi)
        V = value_vector(q)
        assert np.all(V[:, None] >= q)
        assert np.array_equal(V, q[np.arange(6), pi])


def test_min_nonzero_entry_examples():
    det = np.zeros((2, 2, 2))
    det[:, :, 0] = 1.0
    assert min_nonzero_entry(_mdp(det)) == 1.0
    P = np.full((2, 2, 2), 0.5)
    P[0, 0] = [0.2, 0.8]
    assert min_nonzero_entry(_mdp(P)) == 0.2
    g = garnet(5, 4, seed=7)
    scan = min(x for x in g.transition.ravel().tolist() if x > 0)
    assert min_nonzero_entry(g) == scan


@pytest.mark.parametrize("bad", [
    dict(transition=np.full((2, 1, 2), 0.6)),
    dict(transition=np.array([[[1.2, -0.2]], [[0.5, 0.5]]])),
    dict(reward_dist=np.full((2, 1, 2), 0.4)),
    dict(reward_support=[0.0, 2.0]),
    dict(reward_support=[1.0, 1.0]),
    dict(gamma=1.0),
    dict(gamma=0.0),
    dict(transition=np.full((2, 1, 3), 1 / 3)),
])
def test_construction_rejects(bad):
    kw = dict(transition=np.full((2, 1, 2), 0.5), reward_support=[0.0, 1.0],
              reward_dist=np.full((2, 1, 2), 0.5), gamma=0.9, r_max=1.0)
    kw.update(bad)
    with pytest.raises(ValueError):
        TabularMDP(**kw)


def test_construction_tolerance_and_readonly():
    P = np.full((2, 1, 2), 0.5)
    P[0, 0] = [0.5 + 5e-10, 0.5]
    m = _mdp(P)
    with pytest.raises(ValueError):
        m.transition[0, 0, 0] = 0.0
    P[0, 0] = [0.5 + 5e-9, 0.5]
    with pytest.raises(ValueError):
        _mdp(P)


def test_uncertainty_spec_validation():
    spec = UncertaintySpec("kl", 0.3)
    assert spec.divergence is Divergence.KL and spec.min_domain is MinDomain.SUPPORT
    for bad in (-0.1, float("nan"), float("inf")):
        with pytest.raises(ValueError):
            UncertaintySpec("tv", bad)
    with pytest.raises(ValueError):
        UncertaintySpec("hellinger", 0.1)


def test_json_round_trip(tmp_path, garnet_small):
    path = tmp_path / "g.json"
    save_mdp(garnet_small, path)
    back = load_mdp(path)
    assert np.array_equal(back.transition, garnet_small.transition)
    assert np.array_equal(back.reward_dist, garnet_small.reward_dist)
    assert back.gamma == garnet_small.gamma and back.r_max == garnet_small.r_max
    data = json.loads(path.read_text())
    assert set(data) == {"num_states", "num_actions", "gamma", "r_max", "transition",
                         "reward_support", "reward_dist"}
    data["num_states"] = 99
    path.write_text(json.dumps(data))
    with pytest.raises(ValueError):
        load_mdp(path)


def test_support_table_layout():
    rows = np.array([[[0.0, 0.3, 0.7], [1.0, 0.0, 0.0]]])
    support, probs, cdf = support_table(rows)
    assert support.shape == (1, 2, 2)
    assert np.array_equal(support[0, 0], [1, 2]) and np.allclose(probs[0, 0], [0.3, 0.7])
    # padding repeats the last live index with zero probability and cdf 1
    assert np.array_equal(support[0, 1], [0, 0]) and np.array_equal(probs[0, 1], [1.0, 0.0])
    assert np.array_equal(cdf[0, 1], [1.0, 1.0]) and cdf[0, 0, -1] == 1.0


def test_with_gamma_copies(robot):
    m = robot.with_gamma(0.5)
    assert m.gamma == 0.5 and robot.gamma == 0.9
    assert np.array_equal(m.transition, robot.transition)
