"""Experiment driver: lockstep client episodes, periodic federation and cross-environment evaluation."""
from __future__ import annotations

import csv
import io
import logging
import time
from dataclasses import astuple, dataclass, fields
from pathlib import Path

import numpy as np

from fedrag.agent import ReplayBuffer, SacAgent, client_update_step, save_agent, select_action
from fedrag.config import ExperimentConfig, to_ini
from fedrag.envs import ACTION_DIM, OBS_DIM, CartPoleEnv, CartPoleParams, SimulationDivergence
from fedrag.federation import Client, Mode, RoundEvent, Transport, encoder_spread, init_server, run_round

log = logging.getLogger(__name__)

EVAL_STREAM = 0xE7A1


@dataclass
class MetricsRow:
    episode: int
    round: int
    client_id: int
    eval_env_id: int
    same_env: bool
    mean_return: float
    std_return: float
    encoder_spread: float
    wall_seconds: float


METRICS_COLUMNS = [f.name for f in fields(MetricsRow)]
ROUND_COLUMNS = ["round", "episode", "mode", "encoder_spread"]


def _fmt(v) -> str:
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, float):
        return repr(v)
    return str(v)


def format_metrics(rows: list[MetricsRow]) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(METRICS_COLUMNS)
    for row in rows:
        writer.writerow([_fmt(v) for v in astuple(row)])
    return buf.getvalue()


def write_metrics(rows: list[MetricsRow], path) -> None:
    path = Path(path)
    try:
        path.write_text(format_metrics(rows))
    except OSError as exc:
        raise OSError(f"cannot write metrics file {path}: {exc}") from exc


def read_metrics(path) -> list[MetricsRow]:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise OSError(f"cannot read metrics file {path}: {exc}") from exc
    reader = csv.reader(io.StringIO(text))
    header = next(reader)
    if header != METRICS_COLUMNS:
        raise ValueError(f"{path}: unexpected metrics header {header}")
    rows = []
    for rec in reader:
        rows.append(MetricsRow(int(rec[0]), int(rec[1]), int(rec[2]), int(rec[3]), rec[4] == "true",
                               float(rec[5]), float(rec[6]), float(rec[7]), float(rec[8])))
    return rows


def write_rounds(events: list[RoundEvent], path) -> None:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(ROUND_COLUMNS)
    for e in events:
        writer.writerow([e.round, e.episode, e.mode, repr(e.encoder_spread)])
    Path(path).write_text(buf.getvalue())


def client_streams(seed: int, client_id: int) -> tuple[np.random.Generator, ...]:
    """(init, train, env) generators derived from seed XOR client id."""
    children = np.random.SeedSequence(seed ^ client_id).spawn(3)
    return tuple(np.random.default_rng(c) for c in children)


def build_clients(cfg: ExperimentConfig) -> list[Client]:
    clients = []
    for k, params in enumerate(cfg.env_params):
        init_rng, train_rng, env_rng = client_streams(cfg.seed, k)
        agent = SacAgent(OBS_DIM, ACTION_DIM, cfg.sizes, cfg.train, cfg.metric, init_rng)
        buffer = ReplayBuffer(cfg.train.buffer_capacity, OBS_DIM, ACTION_DIM)
        clients.append(Client(k, agent, buffer, CartPoleEnv(params, env_rng), train_rng))
    return clients


def run_training_episode(client: Client, init_random_steps: int) -> float:
    agent, env, rng = client.agent, client.env, client.rng
    obs = env.reset()
    total = 0.0
    done = False
    while not done:
        if client.buffer.size < init_random_steps:
            action = rng.uniform(-1.0, 1.0, size=agent.action_dim)
        else:
            action = select_action(agent, obs, deterministic=False, rng=rng)
        next_obs, reward, done = env.step(action)
        client.buffer.push(obs, action, reward, next_obs)
        total += reward
        if client.buffer.ready(agent.hyper.batch_size):
            client_update_step(agent, client.buffer, client.omega_global, rng)
        obs = next_obs
    client.episodes_done += 1
    return total


def evaluate_policy(agent: SacAgent, env, episodes: int, seed) -> tuple[float, float]:
    """Deterministic-action returns: (sample mean, population std).

    ``env`` must expose ``reset()``, ``step(action)`` and a settable ``rng``;
    it is reseeded from ``seed`` so evaluation never touches training streams.
    """
    env.rng = np.random.default_rng(seed)
    returns = []
    for _ in range(episodes):
        obs = env.reset()
        total, done = 0.0, False
        while not done:
            obs, reward, done = env.step(select_action(agent, obs, deterministic=True))
            total += reward
        returns.append(total)
    arr = np.array(returns)
    return float(arr.mean()), float(arr.std())


def eval_seed(seed: int, episode: int, client_id: int, env_id: int) -> np.random.SeedSequence:
    return np.random.SeedSequence([seed, EVAL_STREAM, episode, client_id, env_id])


@dataclass
class RunResult:
    rows: list[MetricsRow]
    rounds: list[RoundEvent]
    clients: list[Client]
    out_dir: Path | None


def run_experiment(cfg: ExperimentConfig, out_dir=None, transport: Transport | None = None,
                   progress: bool = False) -> RunResult:
    """Run the full protocol; writes metrics.csv, rounds.csv, config.ini and checkpoints when ``out_dir`` is set."""
    out = Path(out_dir) if out_dir is not None else None
    if out is not None:
        out.mkdir(parents=True, exist_ok=True)
        (out / "config.ini").write_text(to_ini(cfg))
    start = time.perf_counter()
    clock = (lambda: time.perf_counter() - start) if cfg.wall_clock else (lambda: 0.0)

    clients = build_clients(cfg)
    server = init_server(clients, cfg.mode, np.random.default_rng(np.random.SeedSequence([cfg.seed, 0x5E7])))
    rows: list[MetricsRow] = []
    events: list[RoundEvent] = []

    def flush():
        if out is not None:
            write_metrics(rows, out / "metrics.csv")
            write_rounds(events, out / "rounds.csv")

    try:
        for episode in range(1, cfg.total_episodes + 1):
            train_returns = [run_training_episode(c, cfg.init_random_steps) for c in clients]
            if episode % cfg.eval_period == 0:
                rows.extend(evaluate_all(cfg, clients, episode, server.round, clock))
                if progress:
                    same = [r.mean_return for r in rows[-len(clients) ** 2:] if r.same_env]
                    log.info("episode %d: train %s, eval same-env %s", episode,
                             np.round(train_returns, 1).tolist(), np.round(same, 1).tolist())
            if cfg.mode != Mode.LOCAL and episode % cfg.fed_period == 0:
                events.append(run_round(server, clients, cfg.mode, cfg.fesac_epsilon,
                                        cfg.reset_optimizer_on_broadcast, transport))
    except SimulationDivergence:
        flush()
        raise
    flush()
    if out is not None:
        save_checkpoints(cfg, clients, out / "checkpoints")
    return RunResult(rows, events, clients, out)


def evaluate_all(cfg: ExperimentConfig, clients: list[Client], episode: int, round_index: int, clock
                 ) -> list[MetricsRow]:
    spread = encoder_spread(clients)
    rows = []
    for c in clients:
        for env_id, params in enumerate(cfg.env_params):
            env = CartPoleEnv(params)
            mean, std = evaluate_policy(c.agent, env, cfg.eval_episodes,
                                        eval_seed(cfg.seed, episode, c.client_id, env_id))
            rows.append(MetricsRow(episode, round_index, c.client_id, env_id, env_id == c.client_id,
                                   mean, std, spread, float(clock())))
    return rows


def save_checkpoints(cfg: ExperimentConfig, clients: list[Client], directory) -> list[Path]:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    paths = []
    for c in clients:
        path = directory / f"client{c.client_id}.ckpt"
        save_agent(c.agent, path, {"seed": cfg.seed, "client_id": c.client_id, "mode": cfg.mode.value,
                                   "episodes": c.episodes_done,
                                   "pole_length": cfg.env_params[c.client_id].pole_length})
        paths.append(path)
    return paths


def evaluate_checkpoint(agent: SacAgent, env_params: list[CartPoleParams], episodes: int, seed: int
                        ) -> list[tuple[int, float, float]]:
    out = []
    for env_id, params in enumerate(env_params):
        mean, std = evaluate_policy(agent, CartPoleEnv(params), episodes,
                                    np.random.SeedSequence([seed, EVAL_STREAM, env_id]))
        out.append((env_id, mean, std))
    return out


def quartile_episodes(rows: list[MetricsRow], total_episodes: int) -> tuple[list[int], list[int]]:
    """Evaluation episodes in the first and final quarter of training."""
    episodes = sorted({r.episode for r in rows})
    first = [e for e in episodes if e <= total_episodes / 4] or episodes[:1]
    final = [e for e in episodes if e > 3 * total_episodes / 4] or episodes[-1:]
    return first, final


def summarize(rows: list[MetricsRow], total_episodes: int, client_id: int | None = None) -> dict[str, float]:
    """Quartile means of same-env and cross-env returns, pooled over clients unless ``client_id`` is given."""
    if client_id is not None:
        rows = [r for r in rows if r.client_id == client_id]
    if not rows:
        return {}
    first, final = quartile_episodes(rows, total_episodes)

    def pooled(eps, same):
        vals = [r.mean_return for r in rows if r.episode in eps and r.same_env == same]
        return float(np.mean(vals)) if vals else float("nan")

    return {"same_first_quartile": pooled(first, True), "same_final_quartile": pooled(final, True),
            "cross_first_quartile": pooled(first, False), "cross_final_quartile": pooled(final, False)}
