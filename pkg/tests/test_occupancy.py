import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from rewardlab.errors import DimensionError
from rewardlab.instances import bandit_skeleton, random_mdp
from rewardlab.mdp import TabularMDP, Trajectory, evaluate_policy, random_policies, trajectory_return
from rewardlab.occupancy import (affine_hull_of_policies, embed_policies, embed_policy, embed_trajectory,
                                 flow_residual, index_pair, pair_index, policy_from_occupancy, realizable,
                                 vectorize)

from oracles import power_series_occupancy


def _mdp(seed, n_states=5, n_actions=2):
    rng = np.random.default_rng(seed)
    return rng, random_mdp(rng, n_states, n_actions, float(rng.uniform(0.5, 0.95)))


def test_index_bijection():
    for s in range(4):
        for a in range(3):
            assert index_pair(pair_index(s, a, 3), 3) == (s, a)
    assert pair_index(2, 1, 3) == 7


def test_single_state_single_action_mass():
    mdp = TabularMDP(np.ones((1, 1, 1)), np.ones(1), 0.9)
    assert embed_policy(mdp, [[1.0]]).mass == pytest.approx([10.0])


@pytest.mark.parametrize("p", [0.0, 0.3, 1.0])
def test_bandit_mass_split(p):
    m = embed_policy(bandit_skeleton(0.5), [[p, 1 - p]]).mass
    assert m == pytest.approx([2 * p, 2 - 2 * p], abs=1e-12)


def test_embedding_matches_forward_propagation():
    _, mdp = _mdp(1)
    pi = random_policies(np.random.default_rng(0), 1, 5, 2)[0]
    ref = power_series_occupancy(mdp.transition, mdp.initial, pi, mdp.gamma)
    assert np.allclose(embed_policy(mdp, pi).table(), ref, atol=1e-10)


def test_reward_dot_mass_equals_j_for_many_rewards():
    rng, mdp = _mdp(2)
    pi = random_policies(rng, 1, 5, 2)[0]
    m = embed_policy(mdp, pi).mass
    for _ in range(20):
        r = rng.uniform(-1, 1, size=(5, 2))
        assert vectorize(r) @ m == pytest.approx(evaluate_policy(mdp, r, pi).j, abs=1e-9)


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 10_000), st.floats(-3, 3), st.floats(-3, 3))
def test_mass_conservation_and_linearity(seed, alpha, beta):
    rng, mdp = _mdp(seed, 3, 3)
    pi = random_policies(rng, 1, 3, 3)[0]
    m = embed_policy(mdp, pi)
    assert m.total() == pytest.approx(1 / (1 - mdp.gamma), rel=1e-11)
    r1, r2 = rng.uniform(-1, 1, size=(2, 3, 3))
    lhs = vectorize(alpha * r1 + beta * r2) @ m.mass
    rhs = alpha * evaluate_policy(mdp, r1, pi).j + beta * evaluate_policy(mdp, r2, pi).j
    assert lhs == pytest.approx(rhs, abs=1e-9)


def test_trajectory_embeddings():
    const = embed_trajectory(Trajectory.constant(0, 1), 0.5, 1, 3)
    assert const.mass == pytest.approx([0, 2, 0])
    alt = embed_trajectory(Trajectory(((0, 0), (0, 1)), tail="cycle", cycle_start=0), 0.5, 1, 2)
    assert alt.mass == pytest.approx([4 / 3, 2 / 3])
    one = embed_trajectory(Trajectory(((0, 1),), tail="zero"), 0.5, 1, 2)
    assert one.mass == pytest.approx([0, 1])


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 10_000), st.sampled_from(["repeat", "zero", "cycle"]))
def test_trajectory_return_equals_reward_dot_mass(seed, tail):
    rng = np.random.default_rng(seed)
    steps = tuple((int(s), int(a)) for s, a in zip(rng.integers(0, 3, 6), rng.integers(0, 2, 6)))
    traj = Trajectory(steps, tail=tail, cycle_start=2 if tail == "cycle" else None)
    r = rng.uniform(-1, 1, size=(3, 2))
    gamma = float(rng.uniform(0.3, 0.95))
    assert vectorize(r) @ embed_trajectory(traj, gamma, 3, 2).mass == \
        pytest.approx(trajectory_return(r, gamma, traj), abs=1e-9)


def test_hull_dimensions():
    assert affine_hull_of_policies(bandit_skeleton(0.5, 2), 20).dim == 1
    assert affine_hull_of_policies(bandit_skeleton(0.5, 3), 20).dim == 2


def test_hull_contains_fresh_policies():
    for seed in range(3):
        rng, mdp = _mdp(seed, 4, 2)
        hull = affine_hull_of_policies(mdp, 50, seed)
        assert hull.dim <= mdp.n_pairs - 1
        fresh = embed_policies(mdp, random_policies(rng, 1000, 4, 2))
        assert hull.contains(fresh, 1e-8).all()


def test_openness_proxy():
    rng, mdp = _mdp(7, 3, 2)
    hull = affine_hull_of_policies(mdp, 50)
    pi = 0.05 + 0.9 * random_policies(rng, 1, 3, 2)[0]
    pi /= pi.sum(axis=1, keepdims=True)
    m = embed_policy(mdp, pi).mass
    for _ in range(10):
        d = hull.basis.T @ rng.standard_normal(hull.dim)
        d /= np.linalg.norm(d)
        ok = False
        for step in (1e-3, 1e-4, 1e-5):
            cand = m + step * d
            if realizable(mdp, cand):
                back = embed_policy(mdp, policy_from_occupancy(cand, 3, 2)).mass
                ok = np.allclose(back, cand, atol=1e-9)
                if ok:
                    break
        assert ok


def test_flow_residual_detects_non_occupancies():
    rng, mdp = _mdp(3, 3, 2)
    m = embed_policy(mdp, random_policies(rng, 1, 3, 2)[0]).mass
    assert flow_residual(mdp, m) < 1e-12
    bad = m.copy()
    bad[0] += 0.1
    assert not realizable(mdp, bad)


def test_csv_dump_and_dimension_checks():
    occ = embed_policy(bandit_skeleton(0.5), [[0.5, 0.5]])
    text = occ.to_csv(("s0",), ("a1", "a2"))
    assert text.splitlines()[0] == "index,state,action,mass"
    assert text.splitlines()[2] == "1,s0,a2,1.0"
    with pytest.raises(DimensionError):
        embed_trajectory(Trajectory.constant(2, 0), 0.5, 1, 2)
