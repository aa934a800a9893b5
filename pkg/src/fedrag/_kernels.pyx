# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled inner loops: RAG operator sweep, policy evaluation sweep, cart-pole integrator.

Semantics mirror ``fedrag._kernels_py`` exactly; the cart-pole integrator uses
the same operation order so both backends produce identical trajectories.
"""
import numpy as np

from libc.math cimport sin, cos, fabs, isfinite


def rag_sweep(const long long[:, ::1] next_state,
              const double[::1] expected_reward,
              const double[:, ::1] pi,
              const double[:, ::1] dist,
              double gamma):
    cdef Py_ssize_t n = next_state.shape[0]
    cdef Py_ssize_t m = next_state.shape[1]
    cdef Py_ssize_t i, j, a, b
    cdef long long si
    cdef double acc, pa, val
    out = np.empty((n, n), dtype=np.float64)
    cdef double[:, ::1] o = out
    for i in range(n):
        for j in range(i, n):
            acc = 0.0
            for a in range(m):
                pa = pi[i, a]
                si = next_state[i, a]
                for b in range(m):
                    acc += pa * pi[j, b] * dist[si, next_state[j, b]]
            val = fabs(expected_reward[i] - expected_reward[j]) + gamma * acc
            o[i, j] = val
            o[j, i] = val
    return out


def value_sweep(const long long[:, ::1] next_state,
                const double[:, ::1] reward,
                const double[:, ::1] pi,
                const double[::1] value,
                double gamma):
    cdef Py_ssize_t n = next_state.shape[0]
    cdef Py_ssize_t m = next_state.shape[1]
    cdef Py_ssize_t s, a
    cdef double acc
    out = np.empty(n, dtype=np.float64)
    cdef double[::1] o = out
    for s in range(n):
        acc = 0.0
        for a in range(m):
            acc += pi[s, a] * (reward[s, a] + gamma * value[next_state[s, a]])
        o[s] = acc
    return out


def cartpole_advance(double[::1] state, double force, double length,
                     double cart_mass, double pole_mass, double gravity,
                     double dt, int repeats, double x_limit):
    """Advance (x, x_dot, theta, theta_dot) in place; return the mean upright reward."""
    cdef double x = state[0]
    cdef double x_dot = state[1]
    cdef double theta = state[2]
    cdef double theta_dot = state[3]
    cdef double total_mass = cart_mass + pole_mass
    cdef double polemass_length = pole_mass * length
    cdef double sin_t, cos_t, temp, theta_acc, x_acc
    cdef double reward_sum = 0.0
    cdef bint diverged = False
    cdef int k
    for k in range(repeats):
        sin_t = sin(theta)
        cos_t = cos(theta)
        temp = (-force - polemass_length * theta_dot * theta_dot * sin_t) / total_mass
        theta_acc = (gravity * sin_t + cos_t * temp) / (
            length * (4.0 / 3.0 - pole_mass * cos_t * cos_t / total_mass))
        x_acc = (force + polemass_length * (theta_dot * theta_dot * sin_t - theta_acc * cos_t)) / total_mass
        x_dot = x_dot + dt * x_acc
        x = x + dt * x_dot
        theta_dot = theta_dot + dt * theta_acc
        theta = theta + dt * theta_dot
        # checked before the wall clamp, which would otherwise hide an infinite velocity
        if not (isfinite(x) and isfinite(x_dot) and isfinite(theta) and isfinite(theta_dot)):
            diverged = True
        if x > x_limit:
            x = x_limit
            x_dot = 0.0
        elif x < -x_limit:
            x = -x_limit
            x_dot = 0.0
        reward_sum += (1.0 + cos(theta)) / 2.0
    state[0] = x
    state[1] = x_dot
    state[2] = theta
    state[3] = theta_dot
    if diverged:
        return float("nan")
    return reward_sum / repeats
