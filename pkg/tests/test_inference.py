import time

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy.special import expit

from gcn_shaping.gridworlds import MOVES, build_fourrooms, build_fourrooms_traps, build_two_arm_chain
from gcn_shaping.inference import (OptimalityModel, alpha_beta_potential, backward_messages,
                                   fixed_point_potential, forward_messages, posterior_marginals,
                                   potential_from_messages)
from gcn_shaping.mdp import MdpSpec, random_mdp
from oracles import enumerate_alpha_beta


def two_state_chain():
    P = np.zeros((2, 1, 2))
    P[0, 0, 1] = P[1, 0, 1] = 1.0
    R = np.array([[0.0], [1.0]])
    return MdpSpec(P, R, 0.9, np.array([1.0, 0.0]))


def single_state(num_actions=3):
    P = np.ones((1, num_actions, 1))
    return MdpSpec(P, np.zeros((1, num_actions)), 0.9, np.ones(1), max_steps=20)


def test_two_state_chain_matches_enumeration():
    mdp = two_state_chain()
    a, b = forward_messages(mdp, horizon=3), backward_messages(mdp, horizon=3)
    brute = enumerate_alpha_beta(mdp, 3)
    assert np.allclose(a.unnormalized() * b.unnormalized(), brute, rtol=1e-12, atol=0)
    # only trajectory: 0 -> 1 -> 1 with factors sigmoid(0) sigmoid(1)^2
    assert brute[0, 0, 0] == pytest.approx(expit(0) * expit(1) ** 2, rel=1e-15)


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 2**32 - 1), st.integers(1, 4), st.integers(1, 3), st.integers(1, 4))
def test_messages_match_enumeration(seed, S, A, T):
    mdp = random_mdp(np.random.default_rng(seed), S, A)
    om = OptimalityModel.from_mdp(mdp)
    prod = forward_messages(mdp, om, T).unnormalized() * backward_messages(mdp, om, T).unnormalized()
    brute = enumerate_alpha_beta(mdp, T)
    assert np.allclose(prod, brute, rtol=1e-10, atol=1e-300)


def test_per_transition_messages_match_enumeration():
    mdp = build_two_arm_chain()
    # a grid world would be too large to enumerate; build a small arrival-reward MDP instead
    rng = np.random.default_rng(5)
    P = rng.random((3, 2, 3))
    P /= P.sum(2, keepdims=True)
    arrival = np.array([0.0, 1.0, -1.0])
    R = P @ arrival - P[np.arange(3), :, np.arange(3)] * arrival[:, None]
    small = MdpSpec(P, R, 0.9, np.array([0.5, 0.5, 0.0]), arrival_reward=arrival)
    om = OptimalityModel.from_mdp(small)
    prod = forward_messages(small, om, 4).unnormalized() * backward_messages(small, om, 4).unnormalized()
    assert np.allclose(prod, enumerate_alpha_beta(small, 4, per_transition=True), rtol=1e-10, atol=0)
    assert mdp.arrival_reward is None


def test_horizon_one_backward_is_base_case():
    mdp = random_mdp(np.random.default_rng(0), 4, 2)
    b = backward_messages(mdp, horizon=1)
    f = expit(mdp.reward)
    assert np.allclose(b.values[0], f / f.sum(), atol=1e-15)


def test_uniform_rewards_give_constant_beta():
    rng = np.random.default_rng(1)
    base = random_mdp(rng, 5, 3)
    mdp = MdpSpec(base.transition, np.full((5, 3), 0.7), 0.9, base.start)
    b = backward_messages(mdp, horizon=8)
    assert np.allclose(b.values, 1.0 / 15, atol=1e-15)


def test_single_state_alpha_uniform_and_potential_one():
    mdp = single_state()
    a = forward_messages(mdp)
    assert np.allclose(a.values, 1.0 / 3, atol=1e-15)
    assert np.array_equal(alpha_beta_potential(mdp).phi, [1.0])


def test_unreachable_states_get_zero_alpha():
    P = np.zeros((3, 1, 3))
    P[0, 0, 1] = P[1, 0, 0] = 1.0
    P[2, 0, 0] = 1.0  # state 2 leads in but is never entered
    mdp = MdpSpec(P, np.zeros((3, 1)), 0.9, np.array([1.0, 0, 0]), max_steps=10)
    a = forward_messages(mdp)
    assert np.all(a.values[:, 2, :] == 0.0)


def test_slices_normalised_and_nonnegative():
    mdp = random_mdp(np.random.default_rng(2), 6, 3)
    for m in (forward_messages(mdp), backward_messages(mdp)):
        assert np.all(m.values >= 0)
        assert np.allclose(m.values.sum(axis=(1, 2)), 1.0, atol=1e-12)
        assert np.all(np.isfinite(m.log_scale))


def test_long_horizon_is_stable():
    mdp = build_two_arm_chain()
    a, b = forward_messages(mdp, horizon=10_000), backward_messages(mdp, horizon=10_000)
    for m in (a, b):
        assert np.all(np.isfinite(m.values)) and np.all(np.isfinite(m.log_scale))
    phi = potential_from_messages(a, b).phi
    assert np.all(np.isfinite(phi)) and phi.max() == 1.0


def test_posterior_shape_mismatch():
    mdp = random_mdp(np.random.default_rng(3), 3, 2)
    with pytest.raises(ValueError):
        posterior_marginals(forward_messages(mdp, horizon=3), backward_messages(mdp, horizon=4))


def test_unknown_collapse_mode():
    mdp = random_mdp(np.random.default_rng(3), 3, 2)
    with pytest.raises(ValueError):
        alpha_beta_potential(mdp, mode="last")


def test_fourrooms_potential_peaks_at_goal_and_runs_fast():
    mdp = build_fourrooms()
    t0 = time.perf_counter()
    phi = alpha_beta_potential(mdp)
    assert time.perf_counter() - t0 < 10.0
    assert np.argmax(phi.phi) == mdp.layout.states_of("G")[0]
    assert phi.provenance == "alpha-beta" and phi.phi.max() == 1.0 and phi.phi.min() >= 0.0


@pytest.mark.parametrize("mode", ["conditional", "joint"])
def test_traps_below_free_neighbours(mode):
    mdp = build_fourrooms_traps()
    lay = mdp.layout
    phi = alpha_beta_potential(mdp, mode=mode).phi
    idx = lay.state_index()
    traps = set(lay.states_of("X"))
    for trap in traps:
        r, c = lay.cells[trap]
        for dr, dc in MOVES:
            nb = idx.get((r + dr, c + dc))
            if nb is not None and nb not in traps:
                assert phi[trap] < phi[nb]


def test_fixed_point_potential():
    mdp = build_fourrooms()
    phi = fixed_point_potential(mdp)
    assert phi.phi.max() == 1.0 and np.all(phi.phi >= 0)
    # the stationary messages still rank the goal's room above the start room
    goal, start = mdp.layout.states_of("G")[0], mdp.layout.states_of("S")[0]
    assert phi.phi[goal] > phi.phi[start]


def test_vectorised_oracle_agrees_with_loop_oracle():
    from oracles import enumerate_alpha_beta_vec

    mdp = random_mdp(np.random.default_rng(8), 3, 2)
    assert np.allclose(enumerate_alpha_beta_vec(mdp, 3, chunk=17), enumerate_alpha_beta(mdp, 3), rtol=1e-13, atol=0)
