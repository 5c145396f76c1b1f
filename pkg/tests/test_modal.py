import numpy as np
import pytest

from rewardlab.errors import DimensionError, GuardError, InvariantError, ScheduleError
from rewardlab.instances import (FOUR_ROOMS, ONE_WAY_DOOR, OPEN_5X5, UNSAFE_SHORTCUT, build_gridworld,
                                 one_way_door_amdp, random_mdp, reversing_reachability_family, stay_bonus)
from rewardlab.mdp import TabularMDP, batch_j, random_policies
from rewardlab.modal import (Affordance, AffordanceMDP, AffordanceModalReward, FixedModalReward, ModalForm,
                             ReachabilityModalReward, affordance_optimal_values, can_reach, check_vacuous,
                             count_crossings, ground_truth_modal_solution, learn_affordance_mdp, LearnerConfig,
                             marginalize, realize_contingent, resolved_reward, reward_estimate_gap,
                             witness_infeasible)
from rewardlab.occupancy import embed_policy
from rewardlab.solvers import optimal_values

from oracles import all_deterministic, bfs_distance, bfs_reachable, loop_value_iteration, power_series_values


def _random_tau(seed, s=4, a=2):
    return random_mdp(np.random.default_rng(seed), s, a, 0.8)


def test_fixed_modal_reward_ignores_tau():
    base = np.random.default_rng(0).normal(size=(4, 2))
    m = FixedModalReward(base, 4, 2)
    for seed in range(3):
        assert np.allclose(realize_contingent(m, _random_tau(seed).transition), base, rtol=0, atol=1e-15)
    with pytest.raises(DimensionError):
        m.table3(np.ones((3, 2, 3)) / 3)


def test_marginalize_and_arity():
    tau = _random_tau(1).transition
    r3 = np.random.default_rng(2).normal(size=(4, 2, 4))
    expect = np.array([[sum(tau[s, a, t] * r3[s, a, t] for t in range(4)) for a in range(2)] for s in range(4)])
    assert np.allclose(marginalize(r3, tau), expect)


def test_reachability_penalty_matches_bfs():
    g = build_gridworld(ONE_WAY_DOOR, 0.9)
    start = g.states_with("S")
    tau = g.mdp.transition
    reach = np.isin(np.arange(g.mdp.n_states), bfs_reachable(tau, set(start)))
    assert np.array_equal(can_reach(tau, start), reach)
    base = np.zeros((g.mdp.n_states, 4))
    m = ReachabilityModalReward(base, tuple(start), 1.0, g.mdp.n_states, 4)
    r3 = m.table3(tau)
    for t in range(g.mdp.n_states):
        assert np.all(r3[:, :, t] == (0.0 if reach[t] else -1.0))
    assert g.char(int(np.flatnonzero(~reach)[0])) in "D.G"
    cur = ReachabilityModalReward(base, tuple(start), 2.0, g.mdp.n_states, 4, on="current").table3(tau)
    assert np.all(cur[~reach] == -2.0) and np.all(cur[reach] == 0.0)
    with pytest.raises(InvariantError):
        ReachabilityModalReward(base, tuple(start), 1.0, g.mdp.n_states, 4, on="later")


def test_affordance_values_match_value_iteration_oracle():
    mdp = _random_tau(3)
    rng = np.random.default_rng(4)
    affs = (Affordance(rng.normal(size=(4, 2)), 0.6), Affordance(rng.normal(size=(4, 2, 4)), 0.95))
    amdp = AffordanceMDP(mdp, ModalForm("tanh_gate", rng.normal(size=(4, 2)), 1), affs)
    vals = affordance_optimal_values(amdp)
    v0, _ = loop_value_iteration(mdp.transition, affs[0].reward, 0.6)
    v1, _ = loop_value_iteration(mdp.transition, marginalize(affs[1].reward, mdp.transition), 0.95)
    assert np.allclose(vals[0], v0, atol=1e-8) and np.allclose(vals[1], v1, atol=1e-8)
    # resolved reward plugs V_1 at the next state into the gate
    expect = np.einsum("sat,sat->sa", mdp.transition, amdp.form.base_reward[:, :, None] * np.tanh(v1)[None, None])
    assert np.allclose(resolved_reward(amdp), expect, atol=1e-8)


def test_zero_affordance_gives_zero_gate():
    g = build_gridworld(OPEN_5X5, 0.9)
    amdp = AffordanceMDP(g.mdp, ModalForm("tanh_gate", np.ones((25, 4))),
                         (Affordance(np.zeros((25, 4)), 0.9),))
    assert np.all(affordance_optimal_values(amdp)[0] == 0.0)
    assert np.all(resolved_reward(amdp) == 0.0)


def test_modal_form_validation_and_lipschitz():
    base = np.array([[2.0, -3.0]])
    assert ModalForm("tanh_gate", base, scale=0.5).lipschitz() == 1.5
    assert ModalForm("value_penalty", base, scale=-2.0).lipschitz() == 2.0
    assert ModalForm("fixed", base).lipschitz() == 0.0
    with pytest.raises(InvariantError):
        ModalForm("sigmoid", base)
    with pytest.raises(InvariantError):
        Affordance(base, 1.0)
    sk = TabularMDP(np.ones((1, 2, 1)), np.ones(1), 0.5)
    with pytest.raises(InvariantError):
        AffordanceMDP(sk, ModalForm("tanh_gate", base, affordance_index=0), ())


def test_lipschitz_bound_holds_on_perturbations():
    rng = np.random.default_rng(7)
    base3 = rng.normal(size=(3, 2, 3))
    for kind in ("tanh_gate", "value_penalty"):
        form = ModalForm(kind, base3, scale=1.7)
        v = rng.normal(size=3)
        dv = 1e-3 * rng.normal(size=3)
        diff = np.abs(form.apply(base3, (v + dv)[None, None]) - form.apply(base3, v[None, None]))
        assert diff.max() <= form.lipschitz() * np.abs(dv).max() + 1e-15


def test_four_rooms_affordance_detects_reachability():
    g = build_gridworld(FOUR_ROOMS, 0.9)
    start = g.states_with("S")
    amdp = AffordanceMDP(g.mdp, ModalForm("fixed", np.zeros((g.mdp.n_states, 4))),
                         (Affordance(g.entering_reward({"S": 1.0}), 0.9),))
    v = affordance_optimal_values(amdp)[0]
    reach = np.isin(np.arange(g.mdp.n_states), bfs_reachable(g.mdp.transition, set(start)))
    assert np.array_equal(v > 1e-12, reach)
    assert (~reach).sum() > 0


def test_unsafe_affordance_decays_with_distance():
    g = build_gridworld(UNSAFE_SHORTCUT, 0.9)
    gamma1 = 0.7
    aff = Affordance(g.occupancy_reward({"U": 1.0}), gamma1)
    base = g.entering_reward({"G": 1.0})
    amdp = AffordanceMDP(g.mdp, ModalForm("value_penalty", base), (aff,))
    v = affordance_optimal_values(amdp)[0]
    dist = bfs_distance(g.mdp.transition, set(g.states_with("U")))
    assert np.allclose(v, gamma1**dist / (1 - gamma1), atol=1e-9)
    # the modal policy never lands on the unsafe cell, while the base-optimal policy does
    u = g.states_with("U")[0]
    enter = g.mdp.transition[:, :, u]

    def unsafe_mass(pi):
        m = embed_policy(g.mdp, pi).mass.reshape(g.mdp.n_states, 4)
        return (1 - g.mdp.gamma) * float((m * enter).sum())

    pi_modal, _ = ground_truth_modal_solution(amdp)
    assert unsafe_mass(optimal_values(g.mdp, base).policy) == pytest.approx(0.09)
    assert unsafe_mass(pi_modal) == 0.0


def test_q_learning_without_affordances_converges():
    g = build_gridworld(OPEN_5X5, 0.7)
    amdp = AffordanceMDP(g.mdp, ModalForm("fixed", g.entering_reward({"G": 1.0})), ())
    state = learn_affordance_mdp(amdp, 20000, LearnerConfig(horizon=20), seed=0)
    _, vals = ground_truth_modal_solution(amdp)
    assert np.max(np.abs(state.q_modal - vals.q)) < 1e-2


def test_two_affordances_learned_at_own_discounts():
    g = build_gridworld(("S..", "...", "..G"), 0.9)
    r = g.entering_reward({"G": 1.0})
    affs = (Affordance(r, 0.5), Affordance(r, 0.8))
    # a gate that pays near G keeps the behaviour policy visiting G, where both values are anchored
    amdp = AffordanceMDP(g.mdp, ModalForm("tanh_gate", r, 1), affs)
    state = learn_affordance_mdp(amdp, 20000, LearnerConfig(horizon=20), seed=1)
    truth = affordance_optimal_values(amdp)
    for est, v in zip(state.affordance_values(), truth):
        assert np.max(np.abs(est - v)) < 1e-2
    assert np.max(np.abs(truth[0] - truth[1])) > 1.0
    gap, bound = reward_estimate_gap(amdp, state)
    assert gap <= bound + 1e-12


def test_learner_determinism_and_schedules():
    _, amdp = one_way_door_amdp()
    a = learn_affordance_mdp(amdp, 30, seed=5)
    b = learn_affordance_mdp(amdp, 30, seed=5)
    assert np.array_equal(a.q_modal, b.q_modal) and np.array_equal(a.visits, b.visits)
    eps = np.array(a.epsilons)
    assert np.all(np.diff(eps) <= 0) and np.all((eps >= 0.05) & (eps <= 1.0))
    for bad in [dict(omega=0.5), dict(omega=1.2), dict(eps_floor=0.0), dict(eps_power=0.0), dict(horizon=0)]:
        with pytest.raises(ScheduleError):
            LearnerConfig(**bad)


def test_vacuous_on_reversing_family():
    fam = reversing_reachability_family()
    n_s = fam[0].n_states
    modal = ReachabilityModalReward(stay_bonus(n_s), (0,), 5.0, n_s, 2)
    v = check_vacuous(modal, fam, sample_budget=64, seed=0)
    assert v.outcome == "NonVacuous"
    assert witness_infeasible(modal, fam, v)
    assert {lk["tau"] for lk in v.witness["links"]} == {0, 1}
    # every witness policy is deterministic
    assert all(set(np.ravel(lk["lower"])) <= {0.0, 1.0} for lk in v.witness["links"])


def test_vacuous_when_reward_is_fixed_or_family_trivial():
    fam = reversing_reachability_family()
    n_s = fam[0].n_states
    assert check_vacuous(FixedModalReward(stay_bonus(n_s), n_s, 2), fam, 64).outcome == "VacuousOnFamily"
    modal = ReachabilityModalReward(stay_bonus(n_s), (0,), 5.0, n_s, 2)
    one = check_vacuous(modal, fam[:1], 64)
    assert one.outcome == "VacuousOnFamily"
    assert np.allclose(one.reward, realize_contingent(modal, fam[0].transition))
    with pytest.raises(InvariantError):
        check_vacuous(modal, [], 64)
    with pytest.raises(GuardError):
        check_vacuous(modal, fam, sample_budget=10**6)


def test_nonvacuous_exhaustive_oracle():
    # brute force over all deterministic policies: no scaled candidate reward reproduces both orderings
    fam = reversing_reachability_family()
    n_s = fam[0].n_states
    modal = ReachabilityModalReward(stay_bonus(n_s), (0,), 5.0, n_s, 2)
    pis = np.array(list(all_deterministic(n_s, 2)))
    orders = [np.sign(np.subtract.outer(j, j)) for j in
              (batch_j(m, realize_contingent(modal, m.transition)[None], pis)[:, 0] for m in fam)]
    # the two contingent rewards must themselves disagree somewhere, otherwise one table would do
    assert np.any(orders[0] != orders[1])
    # each witness link is an ordering the modal reward really induces under its tau
    v = check_vacuous(modal, fam, sample_budget=64, seed=0)
    for lk in v.witness["links"]:
        mdp = fam[lk["tau"]]
        r = realize_contingent(modal, mdp.transition)
        lo = power_series_values(mdp.transition, r, np.array(lk["lower"]), mdp.gamma) @ mdp.initial
        hi = power_series_values(mdp.transition, r, np.array(lk["upper"]), mdp.gamma) @ mdp.initial
        assert (hi - lo > 1e-9) if lk["strict"] else abs(hi - lo) <= 1e-9


def test_contingent_ordering_agreement():
    fam = list(reversing_reachability_family()) + [build_gridworld(ONE_WAY_DOOR, 0.9).mdp]
    for mdp in fam:
        n_s, n_a = mdp.n_states, mdp.n_actions
        modal = ReachabilityModalReward(np.random.default_rng(n_s).normal(size=(n_s, n_a)), (0,), 1.0, n_s, n_a)
        r3 = modal.table3(mdp.transition)
        pis = random_policies(np.random.default_rng(0), 40, n_s, n_a)
        fixed = batch_j(mdp, realize_contingent(modal, mdp.transition)[None], pis)[:, 0]
        # expected reward assembled entry by entry from the (s, a, s') rule
        r_sa = np.array([[sum(mdp.transition[s, a, t] * modal.evaluate(s, a, t, mdp.transition)
                              for t in range(n_s)) for a in range(n_a)] for s in range(n_s)])
        assert (r3.shape == (n_s, n_a, n_s))
        direct = np.array([power_series_values(mdp.transition, r_sa, p, mdp.gamma) @ mdp.initial for p in pis])
        assert np.array_equal(np.argsort(fixed, kind="stable"), np.argsort(direct, kind="stable"))
        assert np.allclose(fixed, direct, atol=1e-9)


def test_count_crossings_ground_truth():
    g, amdp = one_way_door_amdp()
    pi, _ = ground_truth_modal_solution(amdp)
    door = g.states_with("D")
    west = [s for s in range(g.mdp.n_states) if g.cells[s][1] < g.cells[door[0]][1]]
    assert count_crossings(pi, g.mdp, west, door) == 0
    base_pi = optimal_values(g.mdp, amdp.form.base_reward).policy
    assert count_crossings(base_pi, g.mdp, west, door) > 0


def test_affordance_modal_reward_tracks_tau():
    g, amdp = one_way_door_amdp()
    modal = AffordanceModalReward(amdp)
    assert np.allclose(realize_contingent(modal, g.mdp.transition), resolved_reward(amdp))
