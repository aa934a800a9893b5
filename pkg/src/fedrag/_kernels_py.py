"""Pure-Python/numpy fallback for the compiled kernels in ``_kernels.pyx``."""
import math

import numpy as np


def rag_sweep(next_state, expected_reward, pi, dist, gamma):
    n = next_state.shape[0]
    # transition-weighted projection: P[i, s'] = sum_a pi(a|i) [next(i, a) == s']
    proj = np.zeros((n, n))
    np.add.at(proj, (np.repeat(np.arange(n), next_state.shape[1]), next_state.ravel()), pi.ravel())
    out = np.abs(expected_reward[:, None] - expected_reward[None, :]) + gamma * (proj @ dist @ proj.T)
    upper = np.triu(out)
    return upper + np.triu(out, 1).T


def value_sweep(next_state, reward, pi, value, gamma):
    return np.sum(pi * (reward + gamma * value[next_state]), axis=1)


def cartpole_advance(state, force, length, cart_mass, pole_mass, gravity, dt, repeats, x_limit):
    x, x_dot, theta, theta_dot = (float(v) for v in state)
    total_mass = cart_mass + pole_mass
    polemass_length = pole_mass * length
    reward_sum = 0.0
    diverged = False
    for _ in range(repeats):
        sin_t = math.sin(theta)
        cos_t = math.cos(theta)
        temp = (-force - polemass_length * theta_dot * theta_dot * sin_t) / total_mass
        theta_acc = (gravity * sin_t + cos_t * temp) / (
            length * (4.0 / 3.0 - pole_mass * cos_t * cos_t / total_mass))
        x_acc = (force + polemass_length * (theta_dot * theta_dot * sin_t - theta_acc * cos_t)) / total_mass
        x_dot = x_dot + dt * x_acc
        x = x + dt * x_dot
        theta_dot = theta_dot + dt * theta_acc
        theta = theta + dt * theta_dot
        if not all(math.isfinite(v) for v in (x, x_dot, theta, theta_dot)):
            diverged = True
        if x > x_limit:
            x = x_limit
            x_dot = 0.0
        elif x < -x_limit:
            x = -x_limit
            x_dot = 0.0
        reward_sum += (1.0 + math.cos(theta)) / 2.0
    state[0] = x
    state[1] = x_dot
    state[2] = theta
    state[3] = theta_dot
    if diverged:
        return float("nan")
    return reward_sum / repeats
