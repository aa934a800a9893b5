from dataclasses import replace

import numpy as np
import pytest

from fedrag import harness
from fedrag.agent import NetSizes, SacAgent, TrainHyper, load_agent
from fedrag.envs import CartPoleEnv, CartPoleParams, SimulationDivergence
from fedrag.harness import (METRICS_COLUMNS, MetricsRow, evaluate_policy, format_metrics, read_metrics,
                            run_experiment, summarize, write_metrics)
from fedrag.metric import MetricHyper


class ConstantRewardEnv:
    def __init__(self, c, horizon=125):
        self.c, self.horizon, self.rng, self.t = c, horizon, None, 0

    def reset(self):
        self.t = 0
        return self.rng.standard_normal(5)

    def step(self, action):
        self.t += 1
        return self.rng.standard_normal(5), self.c, self.t >= self.horizon


def small_agent(seed=0):
    sizes = NetSizes((8,), 4, (8,), (8,), (8,))
    return SacAgent(5, 1, sizes, TrainHyper(), MetricHyper(), np.random.default_rng(seed))


def test_evaluate_constant_reward():
    mean, std = evaluate_policy(small_agent(), ConstantRewardEnv(0.3), 4, 0)
    assert mean == pytest.approx(125 * 0.3, abs=1e-12) and std == 0.0


def test_evaluate_single_episode_and_bounds():
    mean, std = evaluate_policy(small_agent(), CartPoleEnv(CartPoleParams()), 1, 5)
    assert std == 0.0 and 0.0 <= mean <= 125.0


def test_evaluation_is_reproducible_and_isolated():
    env = CartPoleEnv(CartPoleParams(), np.random.default_rng(0))
    ag = small_agent()
    a = evaluate_policy(ag, env, 3, 9)
    b = evaluate_policy(ag, CartPoleEnv(CartPoleParams()), 3, 9)
    assert a == b


def test_metrics_file_roundtrip(tmp_path):
    write_metrics([], tmp_path / "empty.csv")
    assert (tmp_path / "empty.csv").read_text() == ",".join(METRICS_COLUMNS) + "\n"
    rows = [MetricsRow(16, 4, 0, 1, False, 12.345678901234567, 0.1, 3.5, 0.0),
            MetricsRow(16, 4, 1, 1, True, 1e-20, 0.0, 3.5, 1.25)]
    write_metrics(rows, tmp_path / "m.csv")
    back = read_metrics(tmp_path / "m.csv")
    assert back == rows
    write_metrics(back, tmp_path / "m2.csv")
    assert (tmp_path / "m.csv").read_bytes() == (tmp_path / "m2.csv").read_bytes()


def test_metrics_io_errors_name_path(tmp_path):
    with pytest.raises(OSError, match="nope"):
        read_metrics(tmp_path / "nope" / "m.csv")
    with pytest.raises(OSError, match="nope"):
        write_metrics([], tmp_path / "nope" / "m.csv")


def test_run_writes_complete_outputs(tiny_config, tmp_path):
    cfg = tiny_config(episodes=8)
    res = run_experiment(cfg, tmp_path)
    assert len(res.rows) == cfg.n_clients ** 2 * (cfg.total_episodes // cfg.eval_period)
    assert len(res.rounds) == cfg.n_rounds == 4
    assert [e.episode for e in res.rounds] == [2, 4, 6, 8]
    for r in res.rows:
        assert r.same_env == (r.client_id == r.eval_env_id) and r.std_return >= 0
    assert read_metrics(tmp_path / "metrics.csv") == res.rows
    assert (tmp_path / "rounds.csv").read_text().splitlines()[0] == "round,episode,mode,encoder_spread"
    for k in range(cfg.n_clients):
        agent, head = load_agent(tmp_path / "checkpoints" / f"client{k}.ckpt")
        assert head["client_id"] == k and head["episodes"] == 8
    # rows logged at an evaluation episode come before that episode's federation round
    assert {r.round for r in res.rows if r.episode == 4} == {1}


def test_rounds_leave_encoders_identical(tiny_config):
    res = run_experiment(tiny_config(episodes=4))
    ref = res.clients[0].agent.encoder.params.values.tobytes()
    for c in res.clients:
        assert c.agent.encoder.params.values.tobytes() == ref
        assert c.agent.encoder_target.params.values.tobytes() == ref


def test_local_single_client_has_no_rounds(tiny_config):
    res = run_experiment(tiny_config(mode="local", n=1, episodes=4, lengths="1.0"))
    assert res.rounds == [] and len(res.rows) == 1


def test_same_seed_same_bytes(tiny_config, tmp_path):
    cfg = tiny_config(episodes=4)
    run_experiment(cfg, tmp_path / "a")
    run_experiment(cfg, tmp_path / "b")
    for name in ("metrics.csv", "rounds.csv", "config.ini", "checkpoints/client0.ckpt"):
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()


def test_wall_clock_is_the_only_difference(tiny_config):
    cfg = tiny_config(episodes=4)
    a = run_experiment(replace(cfg, wall_clock=True)).rows
    b = run_experiment(cfg).rows
    assert [replace(r, wall_seconds=0.0) for r in a] == b
    assert all(r.wall_seconds > 0 for r in a)


def test_different_seed_differs(tiny_config):
    a = run_experiment(tiny_config(episodes=4, seed=0)).rows
    b = run_experiment(tiny_config(episodes=4, seed=1)).rows
    assert format_metrics(a) != format_metrics(b)


def test_fedrag_lambda_zero_equals_fedavg(tiny_config):
    a = run_experiment(tiny_config(episodes=4, lam=0.0))
    b = run_experiment(tiny_config(episodes=4, mode="fedavg"))
    assert format_metrics(a.rows) == format_metrics(b.rows)
    c = run_experiment(tiny_config(episodes=4, lam=0.5))
    assert format_metrics(a.rows) != format_metrics(c.rows)


def test_fesac_mode_runs(tiny_config):
    res = run_experiment(tiny_config(episodes=4, mode="fesac"))
    assert len(res.rounds) == 2 and res.rounds[0].mode == "fesac"


def test_divergence_flushes_partial_metrics(tiny_config, tmp_path, monkeypatch):
    cfg = tiny_config(episodes=8)
    original = harness.run_training_episode
    calls = {"n": 0}

    def flaky(client, init_steps):
        calls["n"] += 1
        if calls["n"] > 2 * 5:
            raise SimulationDivergence("blew up")
        return original(client, init_steps)

    monkeypatch.setattr(harness, "run_training_episode", flaky)
    with pytest.raises(SimulationDivergence):
        run_experiment(cfg, tmp_path)
    rows = read_metrics(tmp_path / "metrics.csv")
    assert {r.episode for r in rows} == {4}
    assert not (tmp_path / "checkpoints").exists()


def test_client_streams_are_independent_and_reproducible():
    a = [g.integers(0, 2**32) for g in harness.client_streams(5, 0)]
    b = [g.integers(0, 2**32) for g in harness.client_streams(5, 0)]
    c = [g.integers(0, 2**32) for g in harness.client_streams(5, 1)]
    assert a == b and a != c and len(set(a)) == 3


def test_summarize_quartiles():
    rows = []
    for ep, val in [(16, 1.0), (32, 2.0), (48, 3.0), (160, 8.0), (176, 9.0), (192, 10.0)]:
        rows.append(MetricsRow(ep, 0, 0, 0, True, val, 0.0, 0.0, 0.0))
        rows.append(MetricsRow(ep, 0, 0, 1, False, -val, 0.0, 0.0, 0.0))
    s = summarize(rows, 200)
    assert s["same_first_quartile"] == 2.0 and s["same_final_quartile"] == 9.0
    assert s["cross_final_quartile"] == -9.0
    assert summarize(rows, 200, client_id=3) == {}


def test_evaluate_checkpoint(tiny_config, tmp_path):
    cfg = tiny_config(episodes=4)
    run_experiment(cfg, tmp_path)
    agent, _ = load_agent(tmp_path / "checkpoints" / "client1.ckpt")
    out = harness.evaluate_checkpoint(agent, list(cfg.env_params), 2, 0)
    assert [e for e, _, _ in out] == [0, 1]
    assert out == harness.evaluate_checkpoint(agent, list(cfg.env_params), 2, 0)
