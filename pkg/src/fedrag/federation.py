"""Synchronous in-process federation: encoder averaging, broadcast, and the FeSAC baseline."""
from __future__ import annotations

import itertools
from dataclasses import dataclass
from enum import Enum
from typing import Callable

import numpy as np

from fedrag.agent import ReplayBuffer, SacAgent
from fedrag.nn import ParamVector, mlp_init


class Mode(str, Enum):
    LOCAL = "local"
    FEDAVG = "fedavg"
    FEDRAG = "fedrag"
    FESAC = "fesac"


class AggregationError(ValueError):
    pass


class BroadcastError(ValueError):
    pass


class SchedulingError(RuntimeError):
    pass


@dataclass(frozen=True)
class EncoderUpload:
    """The only payload a client sends in fedavg/fedrag mode."""
    client_id: int
    omega: ParamVector


@dataclass(frozen=True)
class CriticUpload:
    client_id: int
    critics: tuple[ParamVector, ...]


@dataclass
class Client:
    client_id: int
    agent: SacAgent
    buffer: ReplayBuffer
    env: object
    rng: np.random.Generator
    omega_global: ParamVector | None = None
    episodes_done: int = 0

    def upload_encoder(self) -> EncoderUpload:
        return EncoderUpload(self.client_id, self.agent.encoder.params.copy())

    def upload_critics(self) -> CriticUpload:
        return CriticUpload(self.client_id, tuple(c.params.copy() for c in self.agent.critics))


@dataclass
class ServerState:
    omega_global: ParamVector
    q_global: list[ParamVector] | None = None
    round: int = 0


@dataclass
class RoundEvent:
    round: int
    episode: int
    mode: str
    encoder_spread: float


def aggregate_mean(uploads: list[ParamVector]) -> ParamVector:
    """Element-wise arithmetic mean of parameter vectors with identical manifests."""
    if not uploads:
        raise AggregationError("cannot aggregate an empty upload list")
    base = uploads[0]
    for u in uploads[1:]:
        if not u.same_layout(base):
            raise AggregationError("uploads have different manifests")
    # accumulate offsets from the first upload so identical uploads average exactly
    acc = np.zeros_like(base.values)
    for u in uploads[1:]:
        acc += u.values - base.values
    return ParamVector(base.values + acc / len(uploads), list(base.manifest))


def broadcast_replace(clients: list[Client], omega_global: ParamVector, reset_optimizer: bool = False) -> None:
    """Set every client's encoder and target encoder to ``omega_global``.

    Adam moments for the encoder are preserved unless ``reset_optimizer``.
    """
    for c in clients:
        if not c.agent.encoder.params.same_layout(omega_global):
            raise BroadcastError(f"client {c.client_id}: encoder manifest differs from the global encoder")
    for c in clients:
        c.agent.encoder.set_values(omega_global.values)
        c.agent.encoder_target.set_values(omega_global.values)
        c.omega_global = omega_global.copy()
        if reset_optimizer:
            c.agent.encoder_opt.reset()


def fesac_aggregate(q_global: list[ParamVector], q_client: list[ParamVector], epsilon: float
                    ) -> list[ParamVector]:
    """Q_bar <- epsilon * Q_k + (1 - epsilon) * Q_bar for each critic of the pair."""
    if not 0.0 < epsilon <= 1.0:
        raise AggregationError(f"epsilon must be in (0, 1], got {epsilon}")
    if len(q_global) != len(q_client):
        raise AggregationError("critic count mismatch")
    out = []
    for g, q in zip(q_global, q_client):
        if not g.same_layout(q):
            raise AggregationError("critic manifests differ")
        out.append(ParamVector(epsilon * q.values + (1.0 - epsilon) * g.values, list(g.manifest)))
    return out


def encoder_spread(clients: list[Client]) -> float:
    """Largest pairwise L2 distance between client encoders."""
    spread = 0.0
    for a, b in itertools.combinations(clients, 2):
        spread = max(spread, float(np.sqrt(a.agent.encoder.params.sq_distance(b.agent.encoder.params))))
    return spread


def init_server(clients: list[Client], mode: Mode, rng: np.random.Generator) -> ServerState:
    """Create the server's global encoder and synchronize clients to it (no-op for local mode)."""
    template = clients[0].agent.encoder
    omega = ParamVector(np.zeros(len(template.params)), template.params.manifest)
    omega.values[:] = mlp_init(template.spec, rng).params.values
    server = ServerState(omega)
    if mode in (Mode.FEDAVG, Mode.FEDRAG):
        broadcast_replace(clients, omega)
    elif mode == Mode.FESAC:
        server.q_global = [aggregate_mean([c.agent.critic_targets[i].params for c in clients])
                           for i in range(len(clients[0].agent.critic_targets))]
    return server


Transport = Callable[[object], object]


def run_round(server: ServerState, clients: list[Client], mode: Mode, epsilon: float | None = None,
              reset_optimizer: bool = False, transport: Transport | None = None) -> RoundEvent:
    """Execute one synchronous federation round at a barrier.

    ``transport`` sees every payload crossing the client/server boundary and
    may be used to record or inspect traffic.
    """
    mode = Mode(mode)
    counts = {c.episodes_done for c in clients}
    if len(counts) != 1:
        raise SchedulingError(f"clients reached the barrier at different episode counts: {sorted(counts)}")
    episode = counts.pop()
    spread = encoder_spread(clients)
    send = transport or (lambda payload: payload)
    ordered = sorted(clients, key=lambda c: c.client_id)

    if mode in (Mode.FEDAVG, Mode.FEDRAG):
        uploads = [send(c.upload_encoder()) for c in ordered]
        server.omega_global = aggregate_mean([u.omega for u in uploads])
        broadcast_replace(ordered, send(server.omega_global), reset_optimizer)
    elif mode == Mode.FESAC:
        eps = 1.0 / len(clients) if epsilon is None else epsilon
        q_bar = server.q_global
        if q_bar is None:
            raise SchedulingError("FeSAC server has no global critic")
        for c in ordered:
            q_bar = fesac_aggregate(q_bar, list(send(c.upload_critics()).critics), eps)
        server.q_global = q_bar
        for c in ordered:
            received = send(tuple(q.copy() for q in q_bar))
            for target, q in zip(c.agent.critic_targets, received):
                target.set_values(q.values)
    server.round += 1
    return RoundEvent(server.round, episode, mode.value, spread)
