import pytest

from fedrag.config import parse_config

TINY_INI = """
[experiment]
mode = {mode}
seed = {seed}
n_clients = {n}
total_episodes = {episodes}
fed_period = 2
eval_period = 4
eval_episodes = 2
wall_clock = false

[envs]
pole_lengths = {lengths}

[nn_core]
encoder_hidden = 16
embed_dim = 6
critic_hidden = 16
actor_hidden = 16
model_hidden = 16

[sac_agent]
batch_size = 16
init_random_steps = 64

[metric]
lambda = {lam}
"""


def tiny_ini(mode="fedrag", seed=0, n=2, episodes=8, lam=0.001, lengths=None):
    if lengths is None:
        lengths = ", ".join(str(0.9 + 0.1 * k / max(n - 1, 1)) for k in range(n))
    return TINY_INI.format(mode=mode, seed=seed, n=n, episodes=episodes, lam=lam, lengths=lengths)


@pytest.fixture
def tiny_config():
    def make(**kw):
        return parse_config(tiny_ini(**kw))
    return make


ACCEPTANCE_LINES: list[str] = []


def record_acceptance(number: int, passed: bool, detail: str) -> str:
    line = f"criterion {number:>2}: {'PASS' if passed else 'FAIL'}  {detail}"
    ACCEPTANCE_LINES.append(line)
    print(line)
    return line


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(line)
