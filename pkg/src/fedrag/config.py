"""Experiment configuration: INI files with one section per module, defaulted and validated.

Example::

    [experiment]
    mode = fedrag
    n_clients = 2
    total_episodes = 200

    [envs]
    pole_lengths = 0.9, 1.0

    [metric]
    lambda = 0.001
"""
from __future__ import annotations

import configparser
from dataclasses import dataclass, field, fields, replace
from pathlib import Path

import numpy as np

from fedrag.agent import NetSizes, TrainHyper
from fedrag.envs import CartPoleParams
from fedrag.federation import Mode
from fedrag.metric import MetricHyper


class ConfigError(ValueError):
    pass


ENV_FAMILIES = ("cartpole-swingup",)
RESERVED_ENV_FAMILIES = ("cheetah-run", "finger-spin", "walker-walk")


@dataclass(frozen=True)
class ExperimentConfig:
    mode: Mode = Mode.FEDRAG
    seed: int = 0
    n_clients: int = 2
    total_episodes: int = 200
    fed_period: int = 4
    eval_period: int = 16
    eval_episodes: int = 5
    fesac_epsilon: float | None = None
    reset_optimizer_on_broadcast: bool = False
    init_random_steps: int = 1000
    wall_clock: bool = True
    env: str = "cartpole-swingup"
    env_params: tuple[CartPoleParams, ...] = field(default_factory=lambda: (
        CartPoleParams(pole_length=0.9), CartPoleParams(pole_length=1.0)))
    sizes: NetSizes = NetSizes()
    train: TrainHyper = TrainHyper()
    # the literal squared-residual model losses drive sigma to its upper bound; see README
    metric: MetricHyper = MetricHyper(lam=0.001, nll_mode=True)

    def __post_init__(self):
        object.__setattr__(self, "mode", Mode(self.mode))
        if self.n_clients < 1:
            raise ConfigError("n_clients must be >= 1")
        if self.total_episodes < 1 or self.fed_period < 1 or self.eval_period < 1 or self.eval_episodes < 1:
            raise ConfigError("episode counts and periods must be >= 1")
        if len(self.env_params) != self.n_clients:
            raise ConfigError(f"{len(self.env_params)} environment parameter sets for {self.n_clients} clients")
        if self.env not in ENV_FAMILIES:
            raise ConfigError(f"unsupported env family {self.env!r}")
        if self.init_random_steps < 0:
            raise ConfigError("init_random_steps must be >= 0")
        if self.fesac_epsilon is not None and not 0.0 < self.fesac_epsilon <= 1.0:
            raise ConfigError("fesac_epsilon must be in (0, 1]")
        if self.mode == Mode.FEDAVG and self.metric.lam != 0.0:
            object.__setattr__(self, "metric", replace(self.metric, lam=0.0))
        if self.metric.gamma != self.train.gamma:
            object.__setattr__(self, "metric", replace(self.metric, gamma=self.train.gamma))
        if self.metric.alpha_rag != self.train.alpha_rag:
            object.__setattr__(self, "train", replace(self.train, alpha_rag=self.metric.alpha_rag))

    @property
    def n_rounds(self) -> int:
        return 0 if self.mode == Mode.LOCAL else self.total_episodes // self.fed_period

    @property
    def n_evaluations(self) -> int:
        return self.total_episodes // self.eval_period


def _bool(text: str) -> bool:
    t = text.strip().lower()
    if t in ("1", "true", "yes", "on"):
        return True
    if t in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {text!r}")


def _ints(text: str) -> tuple[int, ...]:
    return tuple(int(v) for v in text.replace(",", " ").split())


def _floats(text: str) -> tuple[float, ...]:
    return tuple(float(v) for v in text.replace(",", " ").split())


EXPERIMENT_KEYS = {
    "mode": str, "seed": int, "n_clients": int, "total_episodes": int, "fed_period": int,
    "eval_period": int, "eval_episodes": int, "fesac_epsilon": float,
    "reset_optimizer_on_broadcast": _bool, "wall_clock": _bool,
}
ENV_KEYS = {
    "env": str, "pole_lengths": _floats, "pole_length_rule": str, "cart_mass": float, "pole_mass": float,
    "gravity": float, "dt": float, "action_repeat": int, "episode_agent_steps": int,
}
NN_KEYS = {
    "encoder_hidden": _ints, "embed_dim": int, "critic_hidden": _ints, "actor_hidden": _ints,
    "model_hidden": _ints, "activation": str,
}
SAC_KEYS = {
    "gamma": float, "batch_size": int, "buffer_capacity": int, "lr": float, "lr_log_alpha": float,
    "lr_models": float, "models_alpha_mode": str, "tau_phi": float, "tau_q": float, "target_q_freq": int,
    "actor_freq": int, "init_alpha": float, "log_std_min": float, "log_std_max": float,
    "twin_critics": _bool, "target_entropy": float, "init_random_steps": int,
}
METRIC_KEYS = {
    "K": float, "lambda": float, "alpha_rag": float, "pairing": str, "sigma_min": float,
    "sigma_max": float, "nll_mode": _bool,
}
SECTIONS = {"experiment": EXPERIMENT_KEYS, "envs": ENV_KEYS, "nn_core": NN_KEYS, "sac_agent": SAC_KEYS,
            "metric": METRIC_KEYS}


def parse_config(text: str, source: str = "<string>") -> ExperimentConfig:
    parser = configparser.ConfigParser(interpolation=None)
    parser.optionxform = str  # keep key case (K)
    try:
        parser.read_string(text, source=source)
    except configparser.Error as exc:
        raise ConfigError(f"{source}: parse error: {exc}") from exc

    values: dict[str, dict] = {s: {} for s in SECTIONS}
    for section in parser.sections():
        if section not in SECTIONS:
            raise ConfigError(f"{source}: unknown section [{section}]")
        schema = SECTIONS[section]
        for key, raw in parser.items(section):
            if key not in schema:
                raise ConfigError(f"{source}: unknown key {key!r} in [{section}]")
            try:
                values[section][key] = schema[key](raw)
            except ValueError as exc:
                raise ConfigError(f"{source}: bad value for {section}.{key}: {raw!r} ({exc})") from exc
    try:
        return _build(values)
    except ConfigError as exc:
        raise ConfigError(f"{source}: {exc}") from exc
    except ValueError as exc:
        raise ConfigError(f"{source}: invalid configuration: {exc}") from exc


def load_config(path) -> ExperimentConfig:
    path = Path(path)
    if not path.is_file():
        raise ConfigError(f"config file not found: {path}")
    return parse_config(path.read_text(), str(path))


def _build(values: dict[str, dict]) -> ExperimentConfig:
    exp = dict(values["experiment"])
    envs = dict(values["envs"])
    sac = dict(values["sac_agent"])
    met = dict(values["metric"])

    n_clients = exp.get("n_clients", 2)
    seed = exp.get("seed", 0)
    env_family = envs.pop("env", "cartpole-swingup")
    if env_family in RESERVED_ENV_FAMILIES:
        raise ConfigError(f"env family {env_family!r} is reserved but not implemented")
    lengths = envs.pop("pole_lengths", None)
    rule = envs.pop("pole_length_rule", None)
    if lengths is not None and rule is not None:
        raise ConfigError("give either pole_lengths or pole_length_rule, not both")
    if rule is not None:
        lengths = _sample_lengths(rule, n_clients, seed)
    elif lengths is None:
        lengths = (0.9, 1.0) if n_clients == 2 else tuple(np.linspace(0.9, 1.0, n_clients)) if n_clients > 1 else (1.0,)
    if len(lengths) != n_clients:
        raise ConfigError(f"{len(lengths)} pole lengths listed for {n_clients} clients")
    env_params = tuple(CartPoleParams(pole_length=float(l), **envs) for l in lengths)

    init_random_steps = sac.pop("init_random_steps", 1000)
    train = TrainHyper(**sac)
    metric_kwargs = {"lam": met.pop("lambda", 0.001), "nll_mode": met.pop("nll_mode", True), **met,
                     "gamma": train.gamma}
    metric = MetricHyper(**metric_kwargs)
    sizes = NetSizes(**values["nn_core"])
    return ExperimentConfig(env=env_family, env_params=env_params, sizes=sizes, train=train, metric=metric,
                            init_random_steps=init_random_steps, **exp)


def _sample_lengths(rule: str, n: int, seed: int) -> tuple[float, ...]:
    parts = rule.split(":")
    if len(parts) != 3 or parts[0] != "uniform":
        raise ConfigError(f"pole_length_rule must look like 'uniform:LO:HI', got {rule!r}")
    lo, hi = float(parts[1]), float(parts[2])
    if not 0 < lo <= hi:
        raise ConfigError("pole_length_rule bounds must satisfy 0 < LO <= HI")
    rng = np.random.default_rng(np.random.SeedSequence([seed, 0x9013]))
    return tuple(float(v) for v in rng.uniform(lo, hi, size=n))


def to_ini(cfg: ExperimentConfig) -> str:
    """Render a config back to INI text (parses to an equal config)."""
    def fmt(v):
        if isinstance(v, bool):
            return "true" if v else "false"
        if isinstance(v, tuple):
            return ", ".join(repr(x) for x in v)
        if isinstance(v, Mode):
            return v.value
        return repr(v) if isinstance(v, float) else str(v)

    p0 = cfg.env_params[0]
    lines = ["[experiment]"]
    for key in EXPERIMENT_KEYS:
        v = getattr(cfg, key)
        if v is not None:
            lines.append(f"{key} = {fmt(v)}")
    lines += ["", "[envs]", f"env = {cfg.env}",
              f"pole_lengths = {fmt(tuple(p.pole_length for p in cfg.env_params))}"]
    for f in fields(CartPoleParams):
        if f.name != "pole_length":
            lines.append(f"{f.name} = {fmt(getattr(p0, f.name))}")
    lines += ["", "[nn_core]"] + [f"{f.name} = {fmt(getattr(cfg.sizes, f.name))}" for f in fields(NetSizes)]
    lines += ["", "[sac_agent]"]
    for f in fields(TrainHyper):
        v = getattr(cfg.train, f.name)
        if f.name != "alpha_rag" and v is not None:
            lines.append(f"{f.name} = {fmt(v)}")
    lines.append(f"init_random_steps = {cfg.init_random_steps}")
    lines += ["", "[metric]"]
    for f in fields(MetricHyper):
        if f.name == "gamma":
            continue
        key = "lambda" if f.name == "lam" else f.name
        lines.append(f"{key} = {fmt(getattr(cfg.metric, f.name))}")
    return "\n".join(lines) + "\n"
