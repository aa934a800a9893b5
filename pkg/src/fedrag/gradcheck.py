"""Central finite-difference checks of every analytic loss gradient.

Nets are small (dims <= 16) with tanh hidden units so the losses are smooth
where they are probed; relu backprop is exercised separately in the tests.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from fedrag import agent as sac
from fedrag import metric
from fedrag.agent import Batch, NetSizes, SacAgent, TrainHyper
from fedrag.metric import MetricHyper
from fedrag.nn import ParamVector

STEP = 1e-5
TOLERANCE = 1e-4
# gradient entries smaller than this are compared absolutely
FLOOR = 1e-7


@dataclass
class GradCheckResult:
    name: str
    n_params: int
    max_rel_err: float

    @property
    def passed(self) -> bool:
        return self.max_rel_err < TOLERANCE

    def line(self) -> str:
        return f"{self.name:<10} params={self.n_params:<5d} max_rel_err={self.max_rel_err:.3e} " \
               f"{'pass' if self.passed else 'FAIL'}"


def relative_error(analytic: np.ndarray, numeric: np.ndarray, floor: float = FLOOR) -> float:
    scale = np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), floor)
    return float(np.max(np.abs(analytic - numeric) / scale))


def numeric_gradient(f: Callable[[], float], values: np.ndarray, h: float = STEP,
                     on_change: Callable[[], None] | None = None) -> np.ndarray:
    """Central differences of ``f`` with respect to ``values`` (perturbed in place)."""
    grad = np.empty_like(values)
    for i in range(values.size):
        old = values[i]
        values[i] = old + h
        if on_change:
            on_change()
        plus = f()
        values[i] = old - h
        if on_change:
            on_change()
        minus = f()
        values[i] = old
        grad[i] = (plus - minus) / (2.0 * h)
    if on_change:
        on_change()
    return grad


def small_agent(rng: np.random.Generator, obs_dim: int = 5, action_dim: int = 2) -> SacAgent:
    sizes = NetSizes(encoder_hidden=(12,), embed_dim=6, critic_hidden=(12, 10), actor_hidden=(10,),
                     model_hidden=(12,), activation="tanh")
    hyper = TrainHyper(batch_size=6, init_alpha=0.3)
    mh = MetricHyper(K=0.1, gamma=0.9, lam=0.05, sigma_min=0.1, sigma_max=10.0, nll_mode=False)
    a = SacAgent(obs_dim, action_dim, sizes, hyper, mh, rng)
    # decorrelate targets from online nets so every path carries signal
    for net in a.critic_targets + [a.encoder_target]:
        net.set_values(net.params.values + 0.1 * rng.standard_normal(len(net.params)))
    return a


def random_batch(rng: np.random.Generator, agent: SacAgent, size: int = 6) -> Batch:
    return Batch(rng.standard_normal((size, agent.obs_dim)),
                 rng.uniform(-0.9, 0.9, (size, agent.action_dim)),
                 rng.uniform(0.0, 1.0, size),
                 rng.standard_normal((size, agent.obs_dim)))


def _check(name, values, analytic, f, touch) -> GradCheckResult:
    numeric = numeric_gradient(f, values, on_change=touch)
    return GradCheckResult(name, values.size, relative_error(analytic, numeric))


def run_gradchecks(seed: int = 0) -> list[GradCheckResult]:
    rng = np.random.default_rng(seed)
    ag = small_agent(rng)
    batch = random_batch(rng, ag)
    B, A = len(batch), ag.action_dim
    noise = rng.standard_normal((B, A))
    results = []

    # critic loss: critics and encoder
    _, grads = sac.critic_loss(ag, batch, ag.hyper.gamma, noise)
    for key, net in [("critic0", ag.critics[0]), ("critic1", ag.critics[1]), ("encoder", ag.encoder)]:
        results.append(_check(f"L_Q[{key}]", net.params.values, grads[key],
                              lambda: sac.critic_loss(ag, batch, ag.hyper.gamma, noise)[0], net.touch))

    _, g_actor = sac.actor_loss(ag, batch, noise)
    results.append(_check("L_pi", ag.actor.params.values, g_actor,
                          lambda: sac.actor_loss(ag, batch, noise)[0], ag.actor.touch))

    _, g_alpha = sac.alpha_loss(ag, batch, noise)
    results.append(_check("L_alpha", ag.log_alpha, g_alpha, lambda: sac.alpha_loss(ag, batch, noise)[0], None))

    z = ag.encoder(batch.obs)
    _, g_rew = metric.reward_model_loss(ag.reward_model, z, batch.rewards)
    results.append(_check("L_R", ag.reward_model.net.params.values, g_rew,
                          lambda: metric.reward_model_loss(ag.reward_model, z, batch.rewards)[0],
                          ag.reward_model.net.touch))

    target = ag.encoder_target(batch.next_obs)
    _, g_dyn = metric.dynamics_model_loss(ag.dynamics, z, batch.actions, target)
    results.append(_check("L_P", ag.dynamics.net.params.values, g_dyn,
                          lambda: metric.dynamics_model_loss(ag.dynamics, z, batch.actions, target)[0],
                          ag.dynamics.net.touch))

    omega_g = ParamVector(ag.encoder.params.values + 0.2 * rng.standard_normal(len(ag.encoder.params)),
                          ag.encoder.params.manifest)
    pairs = metric.make_pairs(B, "shifted")

    def fedrag():
        return metric.fedrag_loss(ag.encoder, omega_g, ag.dynamics, ag.reward_model, batch.obs, batch.actions,
                                  batch.rewards, ag.metric_hyper, pairs)

    results.append(_check("L_FedRAG", ag.encoder.params.values, fedrag()[1], lambda: fedrag()[0],
                          ag.encoder.touch))
    return results


def merge_by_loss(results: list[GradCheckResult]) -> list[GradCheckResult]:
    """Collapse per-network rows (e.g. L_Q[critic0]) into one row per loss."""
    merged: dict[str, GradCheckResult] = {}
    for r in results:
        key = r.name.split("[")[0]
        if key in merged:
            m = merged[key]
            merged[key] = GradCheckResult(key, m.n_params + r.n_params, max(m.max_rel_err, r.max_rel_err))
        else:
            merged[key] = GradCheckResult(key, r.n_params, r.max_rel_err)
    return list(merged.values())
