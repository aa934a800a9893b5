"""Behavioral-metric losses for the state encoder.

The embedding distance has non-zero self-distance::

    d(u, v) = |u|^2 + |v|^2 + K * angle(u, v)

Reward and latent-dynamics models output Gaussian heads whose standard
deviations are bounded through a scaled sigmoid. The RAG loss regresses the
embedding distance of state pairs against the debiased reward gap plus the
discounted distance of predicted next embeddings, and the federated variant
adds a proximal pull toward the last broadcast global encoder.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from fedrag.nn import Mlp, MlpSpec, ParamVector, ShapeError, mlp_init

ANGLE_EPS = 1e-8


class InsufficientBatchError(ValueError):
    pass


@dataclass(frozen=True)
class MetricHyper:
    K: float = 0.1
    gamma: float = 0.99
    lam: float = 0.0
    alpha_rag: float = 0.5
    pairing: str = "shifted"
    sigma_min: float = 0.1
    sigma_max: float = 10.0
    nll_mode: bool = False

    def __post_init__(self):
        if self.K < 0 or self.lam < 0 or self.alpha_rag < 0:
            raise ValueError("K, lam and alpha_rag must be >= 0")
        if not 0.0 <= self.gamma < 1.0:
            raise ValueError(f"gamma must be in [0, 1), got {self.gamma}")
        if self.pairing not in ("shifted", "shuffled"):
            raise ValueError(f"unknown pairing {self.pairing!r}")
        if not 0.0 < self.sigma_min < self.sigma_max:
            raise ValueError("need 0 < sigma_min < sigma_max")


def angular_distance(u, v) -> float:
    """Angle between ``u`` and ``v`` in [0, pi]; 0 if either is (nearly) the zero vector.

    Uses the half-angle form 2*atan2(|u|v| - v|u||, |u|v| + v|u||), which stays
    accurate near 0 and pi where arccos of the cosine loses half its digits.
    """
    u = np.asarray(u, dtype=np.float64)
    v = np.asarray(v, dtype=np.float64)
    nu, nv = np.linalg.norm(u), np.linalg.norm(v)
    if nu < ANGLE_EPS or nv < ANGLE_EPS:
        return 0.0
    a, b = u * nv, v * nu
    return 2.0 * math.atan2(float(np.linalg.norm(a - b)), float(np.linalg.norm(a + b)))


def embed_distance(u, v, K: float) -> float:
    u = np.asarray(u, dtype=np.float64)
    v = np.asarray(v, dtype=np.float64)
    if u.shape != v.shape:
        raise ShapeError(f"embedding shapes differ: {u.shape} vs {v.shape}")
    return float(u @ u) + float(v @ v) + K * angular_distance(u, v)


def embed_distance_batch(U: np.ndarray, V: np.ndarray, K: float
                         ) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Row-wise distances and their gradients with respect to ``U`` and ``V``.

    The angle is treated as flat (zero gradient) where it is clamped or where
    either norm is below the degeneracy threshold.
    """
    nu = np.sqrt(np.einsum("ij,ij->i", U, U))
    nv = np.sqrt(np.einsum("ij,ij->i", V, V))
    dot = np.einsum("ij,ij->i", U, V)
    live = (nu >= ANGLE_EPS) & (nv >= ANGLE_EPS)
    prod = nu * nv
    denom = np.maximum(prod, ANGLE_EPS)
    c_raw = dot / denom
    A, Bv = U * nv[:, None], V * nu[:, None]
    half = np.arctan2(np.linalg.norm(A - Bv, axis=1), np.linalg.norm(A + Bv, axis=1))
    theta = np.where(live, 2.0 * half, 0.0)
    dist = nu * nu + nv * nv + K * theta

    sin_t = np.sin(theta)
    smooth = live & (np.abs(c_raw) < 1.0) & (sin_t > 0.0)
    with np.errstate(divide="ignore", invalid="ignore"):
        dtheta_dc = np.where(smooth, -1.0 / sin_t, 0.0)
        scaled = prod > ANGLE_EPS
        safe_nu2 = np.where(nu > 0, nu * nu, 1.0)
        safe_nv2 = np.where(nv > 0, nv * nv, 1.0)
        dc_dU = V / denom[:, None] - np.where(scaled, c_raw / safe_nu2, 0.0)[:, None] * U
        dc_dV = U / denom[:, None] - np.where(scaled, c_raw / safe_nv2, 0.0)[:, None] * V
    coef = (K * dtheta_dc)[:, None]
    gU = 2.0 * U + np.where(smooth[:, None], coef * dc_dU, 0.0)
    gV = 2.0 * V + np.where(smooth[:, None], coef * dc_dV, 0.0)
    return dist, gU, gV


def bounded_sigma(pre: np.ndarray, lo: float, hi: float) -> tuple[np.ndarray, np.ndarray]:
    """Scaled sigmoid and its derivative."""
    s = 1.0 / (1.0 + np.exp(-pre))
    return lo + (hi - lo) * s, (hi - lo) * s * (1.0 - s)


class RewardModel:
    """Embedding -> Gaussian reward head (mean, bounded std)."""

    def __init__(self, net: Mlp, sigma_min: float = 0.1, sigma_max: float = 10.0):
        if net.spec.output_dim != 2:
            raise ShapeError("reward model network must have 2 outputs")
        self.net = net
        self.sigma_min = sigma_min
        self.sigma_max = sigma_max

    @classmethod
    def create(cls, embed_dim: int, hidden: tuple[int, ...], rng, sigma_min=0.1, sigma_max=10.0,
               activation: str = "relu") -> "RewardModel":
        spec = MlpSpec(embed_dim, hidden, 2, (activation,) * len(hidden) + ("identity",))
        return cls(mlp_init(spec, rng), sigma_min, sigma_max)

    def forward(self, z: np.ndarray):
        out, cache = self.net.forward(z)
        sigma, dsig = bounded_sigma(out[:, 1], self.sigma_min, self.sigma_max)
        return out[:, 0], sigma, (cache, dsig)

    def backward(self, aux, g_mu: np.ndarray, g_sigma: np.ndarray):
        cache, dsig = aux
        g_out = np.stack([g_mu, g_sigma * dsig], axis=1)
        return self.net.backward(cache, g_out)


class DynamicsModel:
    """(embedding, action) -> Gaussian next-embedding head (mean vector, bounded scalar std)."""

    def __init__(self, net: Mlp, embed_dim: int, sigma_min: float = 0.1, sigma_max: float = 10.0):
        if net.spec.output_dim != embed_dim + 1:
            raise ShapeError("dynamics model network must output embed_dim + 1 values")
        self.net = net
        self.embed_dim = embed_dim
        self.sigma_min = sigma_min
        self.sigma_max = sigma_max

    @classmethod
    def create(cls, embed_dim: int, action_dim: int, hidden: tuple[int, ...], rng, sigma_min=0.1,
               sigma_max=10.0, activation: str = "relu") -> "DynamicsModel":
        spec = MlpSpec(embed_dim + action_dim, hidden, embed_dim + 1,
                       (activation,) * len(hidden) + ("identity",))
        return cls(mlp_init(spec, rng), embed_dim, sigma_min, sigma_max)

    def forward(self, z: np.ndarray, actions: np.ndarray):
        out, cache = self.net.forward(np.concatenate([z, actions], axis=1))
        n = self.embed_dim
        sigma, dsig = bounded_sigma(out[:, n], self.sigma_min, self.sigma_max)
        return out[:, :n], sigma, (cache, dsig)

    def backward(self, aux, g_mu: np.ndarray, g_sigma: np.ndarray):
        """Returns (param grads, grad wrt embedding input)."""
        cache, dsig = aux
        g_out = np.concatenate([g_mu, (g_sigma * dsig)[:, None]], axis=1)
        grads, g_in = self.net.backward(cache, g_out)
        return grads, g_in[:, :self.embed_dim]


def reward_model_loss(model: RewardModel, z: np.ndarray, rewards: np.ndarray, nll_mode: bool = False
                      ) -> tuple[float, np.ndarray]:
    """Mean of ((r - mu) / (2 sigma))^2 over the batch; embeddings are constants."""
    mu, sigma, aux = model.forward(z)
    B = mu.shape[0]
    resid = rewards - mu
    loss = float(np.mean((resid / (2.0 * sigma)) ** 2))
    g_mu = -resid / (2.0 * sigma ** 2 * B)
    g_sigma = -resid ** 2 / (2.0 * sigma ** 3 * B)
    if nll_mode:
        loss += float(np.mean(np.log(sigma)))
        g_sigma = g_sigma + 1.0 / (sigma * B)
    grads, _ = model.backward(aux, g_mu, g_sigma)
    return loss, grads


def dynamics_model_loss(model: DynamicsModel, z: np.ndarray, actions: np.ndarray,
                        target: np.ndarray, nll_mode: bool = False) -> tuple[float, np.ndarray]:
    """Mean over batch and coordinates of ((target - mu) / (2 sigma))^2.

    ``target`` is the target-encoder embedding of the next observation and is
    a constant here, as is ``z``.
    """
    mu, sigma, aux = model.forward(z, actions)
    B, n = mu.shape
    resid = target - mu
    s = sigma[:, None]
    loss = float(np.mean((resid / (2.0 * s)) ** 2))
    g_mu = -resid / (2.0 * s ** 2 * B * n)
    g_sigma = np.sum(-resid ** 2 / (2.0 * s ** 3), axis=1) / (B * n)
    if nll_mode:
        loss += float(np.mean(np.log(sigma)))
        g_sigma = g_sigma + 1.0 / (sigma * B)
    grads, _ = model.backward(aux, g_mu, g_sigma)
    return loss, grads


def make_pairs(batch_size: int, pairing: str = "shifted", rng: np.random.Generator | None = None
               ) -> tuple[np.ndarray, np.ndarray]:
    if batch_size < 2:
        raise InsufficientBatchError(f"need at least 2 samples to form pairs, got {batch_size}")
    first = np.arange(batch_size)
    if pairing == "shifted":
        return first, np.roll(first, -1)
    if pairing == "shuffled":
        if rng is None:
            raise ValueError("shuffled pairing needs an rng")
        return first, rng.permutation(batch_size)
    raise ValueError(f"unknown pairing {pairing!r}")


def rag_loss_embeddings(z: np.ndarray, actions: np.ndarray, rewards: np.ndarray,
                        dynamics: DynamicsModel, reward_model: RewardModel, hyper: MetricHyper,
                        pairs: tuple[np.ndarray, np.ndarray]) -> tuple[float, np.ndarray]:
    """RAG loss as a function of the batch embeddings ``z``; returns (loss, dL/dz).

    Model parameters are frozen here; gradients reach ``z`` through the
    embedding distance and through the model inputs.
    """
    first, second = pairs
    if z.shape[0] < 2:
        raise InsufficientBatchError("RAG loss needs a batch of at least 2")
    mu_next, _, dyn_aux = dynamics.forward(z, actions)
    _, sigma_r, rew_aux = reward_model.forward(z)

    d_cur, g_cur_i, g_cur_j = embed_distance_batch(z[first], z[second], hyper.K)
    d_nxt, g_nxt_i, g_nxt_j = embed_distance_batch(mu_next[first], mu_next[second], hyper.K)
    gap = d_cur - hyper.gamma * d_nxt
    target = (rewards[first] - rewards[second]) ** 2 - sigma_r[first] ** 2 - sigma_r[second] ** 2
    err = gap * gap - target
    P = err.shape[0]
    loss = float(np.mean(err * err))

    g_err = 2.0 * err / P
    g_gap = (g_err * 2.0 * gap)[:, None]
    dz = np.zeros_like(z)
    dz[first] += g_gap * g_cur_i
    dz[second] += g_gap * g_cur_j
    dmu = np.zeros_like(mu_next)
    dmu[first] -= hyper.gamma * g_gap * g_nxt_i
    dmu[second] -= hyper.gamma * g_gap * g_nxt_j
    dsig = np.zeros_like(sigma_r)
    dsig[first] += g_err * 2.0 * sigma_r[first]
    dsig[second] += g_err * 2.0 * sigma_r[second]

    _, dz_dyn = dynamics.backward(dyn_aux, dmu, np.zeros(z.shape[0]))
    _, dz_rew = reward_model.backward(rew_aux, np.zeros(z.shape[0]), dsig)
    return loss, dz + dz_dyn + dz_rew


def rag_loss(encoder: Mlp, dynamics: DynamicsModel, reward_model: RewardModel, obs: np.ndarray,
             actions: np.ndarray, rewards: np.ndarray, hyper: MetricHyper,
             pairs: tuple[np.ndarray, np.ndarray] | None = None,
             rng: np.random.Generator | None = None) -> tuple[float, np.ndarray]:
    """Returns (loss, gradient wrt the encoder's flat parameters)."""
    if obs.shape[0] < 2:
        raise InsufficientBatchError("RAG loss needs a batch of at least 2")
    if pairs is None:
        pairs = make_pairs(obs.shape[0], hyper.pairing, rng)
    z, cache = encoder.forward(obs)
    loss, dz = rag_loss_embeddings(z, actions, rewards, dynamics, reward_model, hyper, pairs)
    grads, _ = encoder.backward(cache, dz)
    return loss, grads


def proximal_penalty(omega: ParamVector, omega_global: ParamVector | None, lam: float
                     ) -> tuple[float, np.ndarray | None]:
    """(lam / 2) * |omega - omega_global|^2 and its gradient; (0, None) when inactive."""
    if omega_global is None:
        return 0.0, None
    omega.check_layout(omega_global)
    if lam == 0.0:
        return 0.0, None
    diff = omega.values - omega_global.values
    return 0.5 * lam * float(diff @ diff), lam * diff


def fedrag_loss(encoder: Mlp, omega_global: ParamVector | None, dynamics: DynamicsModel,
                reward_model: RewardModel, obs: np.ndarray, actions: np.ndarray, rewards: np.ndarray,
                hyper: MetricHyper, pairs=None, rng=None) -> tuple[float, np.ndarray]:
    loss, grads = rag_loss(encoder, dynamics, reward_model, obs, actions, rewards, hyper, pairs, rng)
    pen, g_pen = proximal_penalty(encoder.params, omega_global, hyper.lam)
    if g_pen is None:
        return loss, grads
    return loss + pen, grads + g_pen
