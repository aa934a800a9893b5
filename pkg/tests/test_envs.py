import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from fedrag.envs import (CartPoleEnv, CartPoleParams, CartPoleState, PolicyTable, SimulationDivergence,
                         TabularMDP, X_LIMIT, cartpole_accelerations, cartpole_energy, cartpole_reset,
                         cartpole_step, random_policy, tabular_random)


def test_reset_is_deterministic_per_stream():
    p = CartPoleParams()
    a = cartpole_reset(p, np.random.default_rng(4))
    b = cartpole_reset(p, np.random.default_rng(4))
    assert a == b


def test_reset_reward_is_near_zero():
    p = CartPoleParams()
    s = cartpole_reset(p, np.random.default_rng(0))
    assert (1 + math.cos(s.theta)) / 2 < 1e-3


def test_reset_perturbation_bound():
    p = CartPoleParams()
    rng = np.random.default_rng(1)
    thetas = np.array([cartpole_reset(p, rng).theta for _ in range(10_000)])
    assert np.all(np.abs(thetas - math.pi) <= 0.05)


def test_upright_equilibrium():
    p = CartPoleParams()
    x_acc, th_acc = cartpole_accelerations(CartPoleState(0.0, 0.0, 0.0, 0.0), p, 0.0)
    assert x_acc == 0.0 and th_acc == 0.0
    s, reward, done = cartpole_step(CartPoleState(0.0, 0.0, 0.0, 0.0), p, 0.0)
    assert reward == 1.0
    assert (s.x, s.x_dot, s.theta, s.theta_dot) == (0.0, 0.0, 0.0, 0.0)
    assert not done


def run_uncontrolled(theta0, dt, repeat, steps=125):
    p = CartPoleParams(dt=dt, action_repeat=repeat)
    s = CartPoleState(0.0, 0.0, theta0, 0.0)
    energies = [cartpole_energy(s, p)]
    for _ in range(steps):
        s, _, _ = cartpole_step(s, p, 0.0)
        energies.append(cartpole_energy(s, p))
        assert abs(s.x) < X_LIMIT
    return np.array(energies)


def test_energy_drift_against_finer_integrator():
    # a pendulum swing of about 0.5 rad, 125 steps at dt = 0.02
    coarse = run_uncontrolled(math.pi - 0.5, 0.02, 1)
    fine = run_uncontrolled(math.pi - 0.5, 0.002, 10)
    e0 = abs(coarse[0])
    assert np.max(np.abs(coarse - coarse[0])) / e0 < 0.01
    assert np.max(np.abs(fine - fine[0])) / e0 < 0.001
    assert abs(coarse[-1] - fine[-1]) / e0 < 0.01


def test_episode_length_and_reward_range():
    env = CartPoleEnv(CartPoleParams(), np.random.default_rng(0))
    env.reset()
    rng = np.random.default_rng(1)
    n, done = 0, False
    while not done:
        _, r, done = env.step(rng.uniform(-1, 1, 1))
        assert 0.0 <= r <= 1.0
        n += 1
    assert n == 125 == env.horizon


def test_step_before_reset():
    with pytest.raises(RuntimeError):
        CartPoleEnv(CartPoleParams()).step([0.0])


def test_force_is_clipped():
    p = CartPoleParams()
    s = CartPoleState(0.0, 0.0, math.pi, 0.0)
    assert cartpole_step(s, p, 5.0)[0] == cartpole_step(s, p, 1.0)[0]


def test_wall_clamp():
    p = CartPoleParams()
    s = CartPoleState(0.0, 0.0, math.pi, 0.0)
    for _ in range(125):
        s, _, _ = cartpole_step(s, p, 1.0)
        assert abs(s.x) <= X_LIMIT


def test_divergence_is_reported():
    with pytest.raises(SimulationDivergence):
        cartpole_step(CartPoleState(0.0, math.nan, 0.0, 0.0), CartPoleParams(), 0.0)


def test_pole_length_heterogeneity_witness():
    actions = np.random.default_rng(3).uniform(-1, 1, 125)
    finals = []
    for length in (0.9, 1.0):
        p = CartPoleParams(pole_length=length)
        s = CartPoleState(0.0, 0.0, math.pi - 0.01, 0.0)
        for a in actions:
            s, _, _ = cartpole_step(s, p, a)
        finals.append(np.array([s.x, s.x_dot, s.theta, s.theta_dot]))
    assert np.max(np.abs(finals[0] - finals[1])) > 0.0


def test_invalid_params():
    with pytest.raises(ValueError):
        CartPoleParams(pole_length=0.0)
    with pytest.raises(ValueError):
        CartPoleParams(action_repeat=0)


def test_tabular_same_seed_same_mdp():
    a, b = tabular_random(5, 6, 3, 0.9), tabular_random(5, 6, 3, 0.9)
    assert np.array_equal(a.next_state, b.next_state) and np.array_equal(a.reward, b.reward)


def test_tabular_self_loop_chain():
    mdp = tabular_random(0, 2, 1, 0.9, self_loops=True)
    hand = TabularMDP(np.array([[0], [1]]), mdp.reward.copy(), 0.9)
    assert np.array_equal(mdp.next_state, hand.next_state)


def test_tabular_reward_bounds():
    rng = np.random.default_rng(0)
    for _ in range(1000):
        mdp = tabular_random(rng, int(rng.integers(2, 9)), int(rng.integers(1, 4)), 0.99)
        assert mdp.reward.min() >= 0.0 and mdp.reward.max() <= 1.0


def test_tabular_validation():
    with pytest.raises(ValueError):
        TabularMDP(np.array([[2], [0]]), np.zeros((2, 1)), 0.9)
    with pytest.raises(ValueError):
        TabularMDP(np.array([[1], [0]]), np.zeros((2, 1)), 1.0)
    with pytest.raises(ValueError):
        tabular_random(0, 1, 1, 0.9)
    with pytest.raises(ValueError):
        PolicyTable(np.array([[0.5, 0.6]]))


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 2**32 - 1), st.integers(2, 8), st.integers(1, 3), st.booleans())
def test_generated_instances_satisfy_invariants(seed, n, m, det):
    mdp = tabular_random(seed, n, m, 0.9)
    assert mdp.next_state.shape == (n, m)
    assert 0 <= mdp.next_state.min() and mdp.next_state.max() < n
    pi = random_policy(seed, n, m, deterministic=det)
    assert np.all(np.abs(pi.probs.sum(axis=1) - 1.0) <= 1e-12)
    if det:
        assert set(np.unique(pi.probs)) <= {0.0, 1.0}


@settings(max_examples=30, deadline=None)
@given(st.floats(-1, 1), st.floats(-math.pi, math.pi), st.floats(-2, 2))
def test_step_reward_in_unit_interval(force, theta, theta_dot):
    _, r, _ = cartpole_step(CartPoleState(0.0, 0.0, theta, theta_dot), CartPoleParams(), force)
    assert 0.0 <= r <= 1.0
