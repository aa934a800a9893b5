"""Per-client soft actor-critic with an encoder-conditioned actor and twin critics.

One call to :func:`client_update_step` performs the composite local update:
critic + weighted FedRAG loss on (critics, encoder), reward and dynamics
model regression, delayed actor/temperature updates and soft target updates.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from fedrag import metric
from fedrag.metric import DynamicsModel, MetricHyper, RewardModel
from fedrag.nn import (AdamState, Mlp, MlpSpec, ParamVector, ShapeError, adam_step, load_checkpoint,
                       mlp_init, sample_squashed_gaussian, save_checkpoint, squashed_gaussian_backward)


class BufferNotReady(RuntimeError):
    pass


@dataclass(frozen=True)
class NetSizes:
    encoder_hidden: tuple[int, ...] = (256, 256)
    embed_dim: int = 50
    critic_hidden: tuple[int, ...] = (256, 256)
    actor_hidden: tuple[int, ...] = (256, 256)
    model_hidden: tuple[int, ...] = (256,)
    activation: str = "relu"


@dataclass(frozen=True)
class TrainHyper:
    gamma: float = 0.99
    batch_size: int = 128
    buffer_capacity: int = 20_000
    lr: float = 5e-4
    lr_log_alpha: float = 1e-4
    lr_models: float = 1e-4
    models_alpha_mode: str = "lr"  # "lr": alpha_P is the model learning rate; "weight": loss weight
    tau_phi: float = 0.05
    tau_q: float = 0.01
    target_q_freq: int = 2
    actor_freq: int = 2
    alpha_rag: float = 0.5
    init_alpha: float = 0.1
    log_std_min: float = -10.0
    log_std_max: float = 2.0
    twin_critics: bool = True
    target_entropy: float | None = None  # defaults to -|A|

    def __post_init__(self):
        positive = dict(batch_size=self.batch_size, buffer_capacity=self.buffer_capacity,
                        lr=self.lr, lr_log_alpha=self.lr_log_alpha, lr_models=self.lr_models,
                        tau_phi=self.tau_phi, tau_q=self.tau_q, target_q_freq=self.target_q_freq,
                        actor_freq=self.actor_freq, init_alpha=self.init_alpha)
        bad = [k for k, v in positive.items() if not v > 0]
        if bad:
            raise ValueError(f"hyperparameters must be positive: {bad}")
        if self.alpha_rag < 0:
            raise ValueError("alpha_rag must be >= 0")
        if not 0.0 <= self.gamma < 1.0:
            raise ValueError(f"gamma must be in [0, 1), got {self.gamma}")
        if self.models_alpha_mode not in ("lr", "weight"):
            raise ValueError(f"unknown models_alpha_mode {self.models_alpha_mode!r}")
        if not self.log_std_min < self.log_std_max:
            raise ValueError("log_std_min must be < log_std_max")


@dataclass
class Batch:
    obs: np.ndarray
    actions: np.ndarray
    rewards: np.ndarray
    next_obs: np.ndarray

    def __len__(self):
        return self.rewards.shape[0]


class ReplayBuffer:
    """Fixed-capacity FIFO ring of transitions."""

    def __init__(self, capacity: int, obs_dim: int, action_dim: int):
        if capacity < 1:
            raise ValueError("capacity must be >= 1")
        self.capacity = capacity
        self.obs = np.zeros((capacity, obs_dim))
        self.actions = np.zeros((capacity, action_dim))
        self.rewards = np.zeros(capacity)
        self.next_obs = np.zeros((capacity, obs_dim))
        self.cursor = 0
        self.size = 0

    def __len__(self):
        return self.size

    def push(self, obs, action, reward, next_obs):
        i = self.cursor
        self.obs[i] = obs
        self.actions[i] = action
        self.rewards[i] = reward
        self.next_obs[i] = next_obs
        self.cursor = (i + 1) % self.capacity
        self.size = min(self.size + 1, self.capacity)

    def ready(self, batch_size: int) -> bool:
        return self.size >= batch_size

    def sample(self, batch_size: int, rng: np.random.Generator) -> Batch:
        if not self.ready(batch_size):
            raise BufferNotReady(f"buffer holds {self.size} transitions, need {batch_size}")
        idx = rng.choice(self.size, size=batch_size, replace=False)
        return Batch(self.obs[idx], self.actions[idx], self.rewards[idx], self.next_obs[idx])


def soft_update(target: ParamVector, online: ParamVector, tau: float) -> None:
    """target <- tau * online + (1 - tau) * target, in place."""
    target.check_layout(online)
    target.values *= 1.0 - tau
    target.values += tau * online.values


class SacAgent:
    """Network bundle and optimizer state of one client."""

    def __init__(self, obs_dim: int, action_dim: int, sizes: NetSizes, hyper: TrainHyper,
                 metric_hyper: MetricHyper, rng: np.random.Generator):
        self.obs_dim = obs_dim
        self.action_dim = action_dim
        self.sizes = sizes
        self.hyper = hyper
        self.metric_hyper = metric_hyper
        act = sizes.activation
        n = sizes.embed_dim

        def spec(inp, hidden, out):
            return MlpSpec(inp, tuple(hidden), out, (act,) * len(hidden) + ("identity",))

        self.encoder = mlp_init(spec(obs_dim, sizes.encoder_hidden, n), rng)
        self.encoder_target = self.encoder.copy()
        self.actor = mlp_init(spec(n, sizes.actor_hidden, 2 * action_dim), rng)
        n_critics = 2 if hyper.twin_critics else 1
        self.critics = [mlp_init(spec(n + action_dim, sizes.critic_hidden, 1), rng) for _ in range(n_critics)]
        self.critic_targets = [c.copy() for c in self.critics]
        self.reward_model = RewardModel.create(n, sizes.model_hidden, rng, metric_hyper.sigma_min,
                                               metric_hyper.sigma_max, act)
        self.dynamics = DynamicsModel.create(n, action_dim, sizes.model_hidden, rng, metric_hyper.sigma_min,
                                             metric_hyper.sigma_max, act)
        self.log_alpha = np.array([math.log(hyper.init_alpha)])

        model_lr = hyper.lr_models if hyper.models_alpha_mode == "lr" else hyper.lr
        self.encoder_opt = AdamState.zeros(len(self.encoder.params), hyper.lr)
        self.actor_opt = AdamState.zeros(len(self.actor.params), hyper.lr)
        self.critic_opts = [AdamState.zeros(len(c.params), hyper.lr) for c in self.critics]
        self.reward_opt = AdamState.zeros(len(self.reward_model.net.params), model_lr)
        self.dynamics_opt = AdamState.zeros(len(self.dynamics.net.params), model_lr)
        self.alpha_opt = AdamState.zeros(1, hyper.lr_log_alpha)
        self.update_count = 0

    @property
    def alpha(self) -> float:
        return float(np.exp(self.log_alpha[0]))

    @property
    def target_entropy(self) -> float:
        h = self.hyper.target_entropy
        return -float(self.action_dim) if h is None else h

    # parameter inventory used by checkpoints and federation tests
    def named_nets(self) -> dict[str, Mlp]:
        nets = {"encoder": self.encoder, "encoder_target": self.encoder_target, "actor": self.actor,
                "reward_model": self.reward_model.net, "dynamics": self.dynamics.net}
        for i, (c, t) in enumerate(zip(self.critics, self.critic_targets)):
            nets[f"critic{i}"] = c
            nets[f"critic_target{i}"] = t
        return nets

    def named_optimizers(self) -> dict[str, AdamState]:
        opts = {"encoder": self.encoder_opt, "actor": self.actor_opt, "reward_model": self.reward_opt,
                "dynamics": self.dynamics_opt, "log_alpha": self.alpha_opt}
        for i, o in enumerate(self.critic_opts):
            opts[f"critic{i}"] = o
        return opts

    def policy_head(self, z: np.ndarray):
        """Actor forward: (mean, log_std, cache, dlog_std/draw)."""
        out, cache = self.actor.forward(z)
        A = self.action_dim
        lo, hi = self.hyper.log_std_min, self.hyper.log_std_max
        t = np.tanh(out[:, A:])
        log_std = lo + 0.5 * (hi - lo) * (t + 1.0)
        return out[:, :A], log_std, cache, 0.5 * (hi - lo) * (1.0 - t * t)

    def sample_policy(self, z: np.ndarray, noise: np.ndarray):
        mean, log_std, cache, dls = self.policy_head(z)
        sample = sample_squashed_gaussian(mean, log_std, noise, (self.hyper.log_std_min, self.hyper.log_std_max))
        return sample, cache, dls

    def q_values(self, nets: list[Mlp], z: np.ndarray, actions: np.ndarray, keep_cache: bool = False):
        x = np.concatenate([z, actions], axis=1)
        outs = [net.forward(x) for net in nets]
        qs = [o[0][:, 0] for o in outs]
        return (qs, [o[1] for o in outs]) if keep_cache else qs


def select_action(agent: SacAgent, obs: np.ndarray, deterministic: bool = False,
                  rng: np.random.Generator | None = None) -> np.ndarray:
    z = agent.encoder(np.asarray(obs, dtype=np.float64)[None, :])
    mean, log_std, _, _ = agent.policy_head(z)
    if deterministic:
        return np.tanh(mean[0])
    noise = rng.standard_normal(mean.shape)
    sample = sample_squashed_gaussian(mean, log_std, noise, (agent.hyper.log_std_min, agent.hyper.log_std_max))
    return sample.action[0]


def min_q(qs: list[np.ndarray]) -> tuple[np.ndarray, np.ndarray]:
    """Element-wise minimum over critics and the index of the chosen critic."""
    if len(qs) == 1:
        return qs[0], np.zeros(qs[0].shape, dtype=np.int64)
    stacked = np.stack(qs)
    idx = np.argmin(stacked, axis=0)
    return np.take_along_axis(stacked, idx[None, :], axis=0)[0], idx


def critic_target(agent: SacAgent, batch: Batch, gamma: float, noise: np.ndarray,
                  z_next: np.ndarray | None = None) -> np.ndarray:
    """Soft Bellman target from target encoder and target critics (a constant)."""
    if z_next is None:
        z_next = agent.encoder_target(batch.next_obs)
    sample, _, _ = agent.sample_policy(z_next, noise)
    q_next, _ = min_q(agent.q_values(agent.critic_targets, z_next, sample.action))
    return batch.rewards + gamma * (q_next - agent.alpha * sample.log_prob)


def critic_loss_embeddings(agent: SacAgent, z: np.ndarray, actions: np.ndarray, y: np.ndarray):
    """Returns (loss, [critic grads], dL/dz)."""
    qs, caches = agent.q_values(agent.critics, z, actions, keep_cache=True)
    B, nc = y.shape[0], len(qs)
    loss = sum(float(np.sum((q - y) ** 2)) for q in qs) / (B * nc)
    grads, dz = [], np.zeros_like(z)
    n = z.shape[1]
    for q, net, cache in zip(qs, agent.critics, caches):
        g, g_in = net.backward(cache, (2.0 * (q - y) / (B * nc))[:, None])
        grads.append(g)
        dz += g_in[:, :n]
    return loss, grads, dz


def critic_loss(agent: SacAgent, batch: Batch, gamma: float, noise: np.ndarray):
    """Mean squared soft-Bellman error over batch and critics.

    Returns (loss, {"critic0": ..., "critic1": ..., "encoder": ...}).
    """
    y = critic_target(agent, batch, gamma, noise)
    z, cache = agent.encoder.forward(batch.obs)
    loss, grads, dz = critic_loss_embeddings(agent, z, batch.actions, y)
    out = {f"critic{i}": g for i, g in enumerate(grads)}
    out["encoder"], _ = agent.encoder.backward(cache, dz)
    return loss, out


def actor_loss_embeddings(agent: SacAgent, z: np.ndarray, noise: np.ndarray):
    """Returns (loss, actor grads, log_prob) with z and critics held fixed."""
    sample, cache, dls = agent.sample_policy(z, noise)
    qs, qcaches = agent.q_values(agent.critics, z, sample.action, keep_cache=True)
    q, idx = min_q(qs)
    B = z.shape[0]
    alpha = agent.alpha
    loss = float(np.mean(alpha * sample.log_prob - q))
    n = z.shape[1]
    g_action = np.zeros_like(sample.action)
    for i, (net, qc) in enumerate(zip(agent.critics, qcaches)):
        chosen = (idx == i)
        if not chosen.any():
            continue
        _, g_in = net.backward(qc, np.where(chosen, -1.0 / B, 0.0)[:, None])
        g_action += g_in[:, n:]
    g_mean, g_ls = squashed_gaussian_backward(sample, g_action, np.full(B, alpha / B))
    grads, _ = agent.actor.backward(cache, np.concatenate([g_mean, g_ls * dls], axis=1))
    return loss, grads, sample.log_prob


def actor_loss(agent: SacAgent, batch: Batch, noise: np.ndarray):
    z = agent.encoder(batch.obs)
    loss, grads, _ = actor_loss_embeddings(agent, z, noise)
    return loss, grads


def alpha_loss_from_log_prob(agent: SacAgent, log_prob: np.ndarray) -> tuple[float, np.ndarray]:
    """mean(-alpha * (log_prob + target_entropy)); gradient wrt log_alpha."""
    alpha = agent.alpha
    slack = log_prob + agent.target_entropy
    loss = float(np.mean(-alpha * slack))
    return loss, np.array([loss])  # d/dlog_alpha of -exp(log_alpha)*c equals the loss itself


def alpha_loss(agent: SacAgent, batch: Batch, noise: np.ndarray) -> tuple[float, np.ndarray]:
    z = agent.encoder(batch.obs)
    sample, _, _ = agent.sample_policy(z, noise)
    return alpha_loss_from_log_prob(agent, sample.log_prob)


def _apply(net: Mlp, grads: np.ndarray, opt: AdamState):
    adam_step(net.params.values, grads, opt)
    net.touch()


def _soft(target: Mlp, online: Mlp, tau: float):
    soft_update(target.params, online.params, tau)
    target.touch()


@dataclass
class UpdateInfo:
    critic_loss: float
    rag_loss: float
    reward_loss: float
    dynamics_loss: float
    actor_loss: float | None = None
    alpha_loss: float | None = None
    extras: dict = field(default_factory=dict)


def client_update_step(agent: SacAgent, buffer: ReplayBuffer, omega_global: ParamVector | None,
                       rng: np.random.Generator) -> UpdateInfo:
    """One local gradient step on every network of the client."""
    hp, mh = agent.hyper, agent.metric_hyper
    batch = buffer.sample(hp.batch_size, rng)
    B = len(batch)
    A = agent.action_dim
    noise_next = rng.standard_normal((B, A))
    pairs = metric.make_pairs(B, mh.pairing, rng if mh.pairing == "shuffled" else None)

    z_next_target = agent.encoder_target(batch.next_obs)
    y = critic_target(agent, batch, hp.gamma, noise_next, z_next_target)
    z, enc_cache = agent.encoder.forward(batch.obs)

    # encoder + critics: L_Q + alpha_RAG * L_FedRAG
    c_loss, c_grads, dz_q = critic_loss_embeddings(agent, z, batch.actions, y)
    r_loss, dz_rag = metric.rag_loss_embeddings(z, batch.actions, batch.rewards, agent.dynamics,
                                                agent.reward_model, mh, pairs)
    enc_grads, _ = agent.encoder.backward(enc_cache, dz_q + hp.alpha_rag * dz_rag)
    pen, g_pen = metric.proximal_penalty(agent.encoder.params, omega_global, mh.lam)
    if g_pen is not None:
        enc_grads = enc_grads + hp.alpha_rag * g_pen
        r_loss += pen

    # reward / dynamics models on detached embeddings
    weight = 1.0 if hp.models_alpha_mode == "lr" else hp.lr_models
    rw_loss, rw_grads = metric.reward_model_loss(agent.reward_model, z, batch.rewards, mh.nll_mode)
    dy_loss, dy_grads = metric.dynamics_model_loss(agent.dynamics, z, batch.actions, z_next_target,
                                                   mh.nll_mode)

    for net, g, opt in zip(agent.critics, c_grads, agent.critic_opts):
        _apply(net, g, opt)
    _apply(agent.encoder, enc_grads, agent.encoder_opt)
    _apply(agent.reward_model.net, weight * rw_grads, agent.reward_opt)
    _apply(agent.dynamics.net, weight * dy_grads, agent.dynamics_opt)

    agent.update_count += 1
    info = UpdateInfo(c_loss, r_loss, rw_loss, dy_loss)
    if agent.update_count % hp.actor_freq == 0:
        noise = rng.standard_normal((B, A))
        a_loss, a_grads, log_prob = actor_loss_embeddings(agent, z, noise)
        al_loss, al_grad = alpha_loss_from_log_prob(agent, log_prob)
        _apply(agent.actor, a_grads, agent.actor_opt)
        adam_step(agent.log_alpha, al_grad, agent.alpha_opt)
        info.actor_loss, info.alpha_loss = a_loss, al_loss
    if agent.update_count % hp.target_q_freq == 0:
        for t, c in zip(agent.critic_targets, agent.critics):
            _soft(t, c, hp.tau_q)
    _soft(agent.encoder_target, agent.encoder, hp.tau_phi)
    return info


CHECKPOINT_FORMAT = "fedrag-agent"


def save_agent(agent: SacAgent, path, header: dict | None = None) -> None:
    """Checkpoint all parameters and optimizer moments (the replay buffer is not saved)."""
    tensors: dict[str, np.ndarray] = {}
    for name, net in agent.named_nets().items():
        tensors[f"net.{name}"] = net.params.values
    for name, opt in agent.named_optimizers().items():
        tensors[f"opt.{name}.m"] = opt.m
        tensors[f"opt.{name}.v"] = opt.v
    tensors["log_alpha"] = agent.log_alpha
    head = {
        "format": CHECKPOINT_FORMAT,
        "obs_dim": agent.obs_dim,
        "action_dim": agent.action_dim,
        "sizes": {k: (list(v) if isinstance(v, tuple) else v) for k, v in vars(agent.sizes).items()},
        "hyper": dict(vars(agent.hyper)),
        "metric_hyper": dict(vars(agent.metric_hyper)),
        "specs": {name: net.spec.to_dict() for name, net in agent.named_nets().items()},
        "optimizer_steps": {name: opt.t for name, opt in agent.named_optimizers().items()},
        "update_count": agent.update_count,
    }
    head.update(header or {})
    save_checkpoint(path, tensors, head)


def load_agent(path) -> tuple[SacAgent, dict]:
    tensors, head = load_checkpoint(path)
    if head.get("format") != CHECKPOINT_FORMAT:
        raise ValueError(f"{path}: not an agent checkpoint")
    sizes = NetSizes(**{k: (tuple(v) if isinstance(v, list) else v) for k, v in head["sizes"].items()})
    agent = SacAgent(head["obs_dim"], head["action_dim"], sizes, TrainHyper(**head["hyper"]),
                     MetricHyper(**head["metric_hyper"]), np.random.default_rng(0))
    for name, net in agent.named_nets().items():
        if net.spec.to_dict() != head["specs"][name]:
            raise ShapeError(f"{path}: spec mismatch for {name}")
        net.set_values(tensors[f"net.{name}"])
    for name, opt in agent.named_optimizers().items():
        opt.m[:] = tensors[f"opt.{name}.m"]
        opt.v[:] = tensors[f"opt.{name}.v"]
        opt.t = int(head["optimizer_steps"][name])
    agent.log_alpha[:] = tensors["log_alpha"]
    agent.update_count = int(head["update_count"])
    return agent, head
