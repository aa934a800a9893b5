"""Environment family: parameterized cart-pole swing-up and random deterministic tabular MDPs."""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from fedrag import kernels

OBS_DIM = 5
ACTION_DIM = 1
FORCE_SCALE = 10.0
X_LIMIT = 2.4


class SimulationDivergence(RuntimeError):
    pass


@dataclass(frozen=True)
class CartPoleParams:
    pole_length: float = 1.0
    cart_mass: float = 1.0
    pole_mass: float = 0.1
    gravity: float = 9.8
    dt: float = 0.01
    action_repeat: int = 8
    episode_agent_steps: int = 125

    def __post_init__(self):
        if not self.pole_length > 0:
            raise ValueError(f"pole_length must be > 0, got {self.pole_length}")
        if not self.dt > 0:
            raise ValueError(f"dt must be > 0, got {self.dt}")
        if self.action_repeat < 1 or self.episode_agent_steps < 1:
            raise ValueError("action_repeat and episode_agent_steps must be >= 1")
        if self.cart_mass <= 0 or self.pole_mass <= 0:
            raise ValueError("masses must be positive")


@dataclass
class CartPoleState:
    x: float
    x_dot: float
    theta: float
    theta_dot: float
    steps_taken: int = 0

    def observation(self) -> np.ndarray:
        return np.array([self.x, self.x_dot, math.cos(self.theta), math.sin(self.theta), self.theta_dot])


def cartpole_reset(params: CartPoleParams, rng: np.random.Generator) -> CartPoleState:
    """Pole hanging down with a small uniform perturbation."""
    u = rng.uniform(-0.05, 0.05, size=4)
    return CartPoleState(x=0.01 * u[1], x_dot=0.01 * u[2], theta=math.pi + u[0], theta_dot=0.01 * u[3])


def cartpole_step(state: CartPoleState, params: CartPoleParams, force: float
                  ) -> tuple[CartPoleState, float, bool]:
    force = min(1.0, max(-1.0, float(force)))
    buf = np.array([state.x, state.x_dot, state.theta, state.theta_dot])
    reward = kernels.cartpole_advance(buf, FORCE_SCALE * force, params.pole_length, params.cart_mass,
                                      params.pole_mass, params.gravity, params.dt,
                                      params.action_repeat, X_LIMIT)
    if not math.isfinite(reward):
        raise SimulationDivergence(f"non-finite cart-pole state after step {state.steps_taken}")
    steps = state.steps_taken + 1
    nxt = CartPoleState(float(buf[0]), float(buf[1]), float(buf[2]), float(buf[3]), steps)
    return nxt, reward, steps >= params.episode_agent_steps


def cartpole_accelerations(state: CartPoleState, params: CartPoleParams, force: float) -> tuple[float, float]:
    """(x_acc, theta_acc) of the frictionless cart-pole for a normalized force in [-1, 1]."""
    f = FORCE_SCALE * force
    total = params.cart_mass + params.pole_mass
    sin_t, cos_t = math.sin(state.theta), math.cos(state.theta)
    temp = (-f - params.pole_mass * params.pole_length * state.theta_dot ** 2 * sin_t) / total
    theta_acc = (params.gravity * sin_t + cos_t * temp) / (
        params.pole_length * (4.0 / 3.0 - params.pole_mass * cos_t ** 2 / total))
    x_acc = (f + params.pole_mass * params.pole_length
             * (state.theta_dot ** 2 * sin_t - theta_acc * cos_t)) / total
    return x_acc, theta_acc


def cartpole_energy(state: CartPoleState, params: CartPoleParams) -> float:
    """Total mechanical energy; the pole is a uniform rod with half-length ``pole_length``."""
    mc, mp, l = params.cart_mass, params.pole_mass, params.pole_length
    kinetic = (0.5 * (mc + mp) * state.x_dot ** 2
               + mp * l * state.x_dot * state.theta_dot * math.cos(state.theta)
               + 0.5 * mp * l ** 2 * state.theta_dot ** 2 * (4.0 / 3.0))
    return kinetic + mp * params.gravity * l * math.cos(state.theta)


class CartPoleEnv:
    """Single-owner episodic wrapper around the cart-pole functions."""

    obs_dim = OBS_DIM
    action_dim = ACTION_DIM

    def __init__(self, params: CartPoleParams, rng: np.random.Generator | None = None):
        self.params = params
        self.rng = rng if rng is not None else np.random.default_rng()
        self.state: CartPoleState | None = None

    @property
    def horizon(self) -> int:
        return self.params.episode_agent_steps

    def reset(self) -> np.ndarray:
        self.state = cartpole_reset(self.params, self.rng)
        return self.state.observation()

    def step(self, action) -> tuple[np.ndarray, float, bool]:
        if self.state is None:
            raise RuntimeError("step() called before reset()")
        self.state, reward, done = cartpole_step(self.state, self.params, float(np.ravel(action)[0]))
        return self.state.observation(), reward, done


@dataclass
class TabularMDP:
    next_state: np.ndarray  # (n, m) int64
    reward: np.ndarray      # (n, m) in [0, 1]
    gamma: float

    def __post_init__(self):
        self.next_state = np.ascontiguousarray(self.next_state, dtype=np.int64)
        self.reward = np.ascontiguousarray(self.reward, dtype=np.float64)
        n, m = self.next_state.shape
        if n < 1 or m < 1:
            raise ValueError("MDP needs at least one state and one action")
        if self.reward.shape != (n, m):
            raise ValueError(f"reward table shape {self.reward.shape} != {(n, m)}")
        if self.next_state.min() < 0 or self.next_state.max() >= n:
            raise ValueError("next-state entries out of range")
        if not 0.0 <= self.gamma < 1.0:
            raise ValueError(f"gamma must be in [0, 1), got {self.gamma}")

    @property
    def n_states(self) -> int:
        return self.next_state.shape[0]

    @property
    def n_actions(self) -> int:
        return self.next_state.shape[1]


@dataclass
class PolicyTable:
    probs: np.ndarray = field(repr=False)

    def __post_init__(self):
        self.probs = np.ascontiguousarray(self.probs, dtype=np.float64)
        if self.probs.ndim != 2 or np.any(self.probs < 0):
            raise ValueError("policy table must be a nonnegative (states, actions) array")
        if np.any(np.abs(self.probs.sum(axis=1) - 1.0) > 1e-12):
            raise ValueError("policy rows must sum to 1")


def tabular_random(seed, n_states: int, n_actions: int, gamma: float,
                   self_loops: bool = False) -> TabularMDP:
    """Uniform random next states and rewards in [0, 1]; ``self_loops`` forces next(s, a) = s."""
    if n_states < 2:
        raise ValueError("n_states must be >= 2")
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    nxt = rng.integers(0, n_states, size=(n_states, n_actions))
    if self_loops:
        nxt = np.repeat(np.arange(n_states)[:, None], n_actions, axis=1)
    reward = rng.uniform(0.0, 1.0, size=(n_states, n_actions))
    return TabularMDP(nxt, reward, gamma)


def random_policy(seed, n_states: int, n_actions: int, deterministic: bool = False) -> PolicyTable:
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    if deterministic:
        probs = np.zeros((n_states, n_actions))
        probs[np.arange(n_states), rng.integers(0, n_actions, size=n_states)] = 1.0
        return PolicyTable(probs)
    probs = rng.dirichlet(np.ones(n_actions), size=n_states)
    probs /= probs.sum(axis=1, keepdims=True)
    return PolicyTable(probs)
