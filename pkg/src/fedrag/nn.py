"""Small numpy network toolkit: MLPs with analytic backprop, Adam, squashed Gaussians.

Parameters of every network live in one flat float64 array (a ``ParamVector``);
layer weights and biases are reshaped views into it, so federation, soft
updates, L2 penalties and checkpoints all operate on the flat array directly.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

ACTIVATIONS = ("relu", "tanh", "identity")
LOG_2PI = math.log(2.0 * math.pi)
SQUASH_EPS = 1e-6
CHECKPOINT_MAGIC = "FEDRAG-CKPT 1"


class ShapeError(ValueError):
    pass


class InvalidSpecError(ValueError):
    pass


class StaleCacheError(RuntimeError):
    """Raised when a backward pass is given a cache from an outdated forward pass."""


@dataclass
class ParamVector:
    values: np.ndarray
    manifest: list[tuple[str, tuple[int, ...]]]

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float64)
        self.manifest = [(name, tuple(int(d) for d in dims)) for name, dims in self.manifest]
        expected = sum(int(np.prod(dims)) for _, dims in self.manifest)
        if self.values.ndim != 1 or self.values.size != expected:
            raise ShapeError(
                f"parameter vector of size {self.values.size} does not match manifest size {expected}")

    def __len__(self):
        return self.values.size

    def tensors(self) -> dict[str, np.ndarray]:
        """Named views into ``values`` (writes go through to the flat array)."""
        out, offset = {}, 0
        for name, dims in self.manifest:
            size = int(np.prod(dims))
            out[name] = self.values[offset:offset + size].reshape(dims)
            offset += size
        return out

    def copy(self) -> "ParamVector":
        return ParamVector(self.values.copy(), list(self.manifest))

    def same_layout(self, other: "ParamVector") -> bool:
        return self.manifest == other.manifest

    def check_layout(self, other: "ParamVector"):
        if not self.same_layout(other):
            raise ShapeError("parameter manifests differ")

    def sq_distance(self, other: "ParamVector") -> float:
        self.check_layout(other)
        diff = self.values - other.values
        return float(diff @ diff)


@dataclass(frozen=True)
class MlpSpec:
    input_dim: int
    hidden_dims: tuple[int, ...]
    output_dim: int
    activations: tuple[str, ...] | None = None

    def __post_init__(self):
        object.__setattr__(self, "hidden_dims", tuple(int(h) for h in self.hidden_dims))
        dims = self.dims
        if any(d < 1 for d in dims):
            raise InvalidSpecError(f"all layer dimensions must be >= 1, got {dims}")
        n_layers = len(dims) - 1
        acts = self.activations
        if acts is None:
            acts = ("relu",) * (n_layers - 1) + ("identity",)
        acts = tuple(acts)
        if len(acts) != n_layers:
            raise InvalidSpecError(f"need {n_layers} activations, got {len(acts)}")
        bad = [a for a in acts if a not in ACTIVATIONS]
        if bad:
            raise InvalidSpecError(f"unknown activation(s) {bad}")
        object.__setattr__(self, "activations", acts)

    @property
    def dims(self) -> tuple[int, ...]:
        return (int(self.input_dim), *self.hidden_dims, int(self.output_dim))

    @property
    def manifest(self) -> list[tuple[str, tuple[int, ...]]]:
        out = []
        dims = self.dims
        for i in range(len(dims) - 1):
            out.append((f"W{i}", (dims[i], dims[i + 1])))
            out.append((f"b{i}", (dims[i + 1],)))
        return out

    @property
    def n_params(self) -> int:
        return sum(int(np.prod(d)) for _, d in self.manifest)

    def to_dict(self) -> dict:
        return {"input_dim": self.input_dim, "hidden_dims": list(self.hidden_dims),
                "output_dim": self.output_dim, "activations": list(self.activations)}

    @classmethod
    def from_dict(cls, d: dict) -> "MlpSpec":
        return cls(d["input_dim"], tuple(d["hidden_dims"]), d["output_dim"], tuple(d["activations"]))


@dataclass
class MlpCache:
    owner_id: int
    version: int
    inputs: list[np.ndarray] = field(default_factory=list)
    outputs: list[np.ndarray] = field(default_factory=list)
    squeeze: bool = False


class Mlp:
    """Fully connected network ``y = act_L(... act_0(x W0 + b0) ...)``."""

    def __init__(self, spec: MlpSpec, params: ParamVector):
        if params.manifest != spec.manifest:
            raise ShapeError("parameter manifest does not match the network spec")
        self.spec = spec
        self.params = params
        self.version = 0
        self._bind()

    def _bind(self):
        t = self.params.tensors()
        n = len(self.spec.dims) - 1
        self.weights = [t[f"W{i}"] for i in range(n)]
        self.biases = [t[f"b{i}"] for i in range(n)]

    def touch(self):
        """Record an in-place parameter change; outstanding caches become stale."""
        self.version += 1

    def set_values(self, values: np.ndarray):
        values = np.asarray(values, dtype=np.float64)
        if values.shape != self.params.values.shape:
            raise ShapeError("parameter vector shape mismatch")
        self.params.values[:] = values
        self.touch()

    def copy(self) -> "Mlp":
        return Mlp(self.spec, self.params.copy())

    def __call__(self, x: np.ndarray) -> np.ndarray:
        return self.forward(x)[0]

    def forward(self, x: np.ndarray) -> tuple[np.ndarray, MlpCache]:
        x = np.asarray(x, dtype=np.float64)
        squeeze = x.ndim == 1
        if squeeze:
            x = x[None, :]
        if x.ndim != 2 or x.shape[1] != self.spec.input_dim:
            raise ShapeError(f"expected input dim {self.spec.input_dim}, got shape {x.shape}")
        cache = MlpCache(id(self), self.version, squeeze=squeeze)
        h = x
        for W, b, act in zip(self.weights, self.biases, self.spec.activations):
            cache.inputs.append(h)
            a = h @ W + b
            if act == "relu":
                h = np.maximum(a, 0.0)
            elif act == "tanh":
                h = np.tanh(a)
            else:
                h = a
            cache.outputs.append(h)
        return (h[0] if squeeze else h), cache

    def backward(self, cache: MlpCache, grad_output: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """Reverse-mode gradients of ``sum(output * grad_output)``.

        Returns the flat parameter gradient (aligned with ``params.values``)
        and the gradient with respect to the input.
        """
        if cache.owner_id != id(self) or cache.version != self.version:
            raise StaleCacheError("cache does not belong to the current parameters of this network")
        g = np.asarray(grad_output, dtype=np.float64)
        if cache.squeeze:
            g = g[None, :]
        if g.shape != cache.outputs[-1].shape:
            raise ShapeError(f"grad_output shape {g.shape} != output shape {cache.outputs[-1].shape}")
        grads = np.empty_like(self.params.values)
        gw = ParamVector(grads, self.params.manifest).tensors()
        for i in range(len(self.weights) - 1, -1, -1):
            act = self.spec.activations[i]
            out = cache.outputs[i]
            if act == "relu":
                g = g * (out > 0.0)
            elif act == "tanh":
                g = g * (1.0 - out * out)
            gw[f"W{i}"][...] = cache.inputs[i].T @ g
            gw[f"b{i}"][...] = g.sum(axis=0)
            g = g @ self.weights[i].T
        return grads, (g[0] if cache.squeeze else g)


def mlp_init(spec: MlpSpec, seed) -> Mlp:
    """Fan-in uniform weights (bound 1/sqrt(fan_in)), zero biases."""
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    params = ParamVector(np.zeros(spec.n_params), spec.manifest)
    net = Mlp(spec, params)
    for W in net.weights:
        bound = 1.0 / math.sqrt(W.shape[0])
        W[...] = rng.uniform(-bound, bound, size=W.shape)
    return net


def flatten_params(nets: Sequence[Mlp]) -> ParamVector:
    if not nets:
        return ParamVector(np.zeros(0), [])
    manifest = [(f"{k}.{name}", dims) for k, net in enumerate(nets) for name, dims in net.params.manifest]
    return ParamVector(np.concatenate([net.params.values for net in nets]), manifest)


def unflatten_params(flat: ParamVector, specs: Sequence[MlpSpec]) -> list[Mlp]:
    expected = [(f"{k}.{name}", dims) for k, spec in enumerate(specs) for name, dims in spec.manifest]
    if flat.manifest != expected:
        raise ShapeError("flat parameter manifest does not match the given specs")
    nets, offset = [], 0
    for spec in specs:
        size = spec.n_params
        nets.append(Mlp(spec, ParamVector(flat.values[offset:offset + size].copy(), spec.manifest)))
        offset += size
    return nets


@dataclass
class AdamState:
    m: np.ndarray
    v: np.ndarray
    t: int = 0
    lr: float = 5e-4
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    @classmethod
    def zeros(cls, size: int, lr: float = 5e-4, beta1: float = 0.9, beta2: float = 0.999,
              eps: float = 1e-8) -> "AdamState":
        return cls(np.zeros(size), np.zeros(size), 0, lr, beta1, beta2, eps)

    def reset(self):
        self.m[:] = 0.0
        self.v[:] = 0.0
        self.t = 0


def adam_step(values: np.ndarray, grads: np.ndarray, state: AdamState) -> None:
    """Bias-corrected Adam update, applied in place to ``values`` and ``state``."""
    grads = np.asarray(grads, dtype=np.float64)
    if grads.shape != values.shape or state.m.shape != values.shape:
        raise ShapeError(f"Adam shape mismatch: params {values.shape}, grads {grads.shape}")
    state.t += 1
    state.m *= state.beta1
    state.m += (1.0 - state.beta1) * grads
    state.v *= state.beta2
    state.v += (1.0 - state.beta2) * grads * grads
    m_hat = state.m / (1.0 - state.beta1 ** state.t)
    v_hat = state.v / (1.0 - state.beta2 ** state.t)
    values -= state.lr * m_hat / (np.sqrt(v_hat) + state.eps)


@dataclass
class SquashedSample:
    action: np.ndarray
    log_prob: np.ndarray
    log_std: np.ndarray
    std_noise: np.ndarray  # exp(log_std) * noise


def sample_squashed_gaussian(mean: np.ndarray, log_std: np.ndarray, noise: np.ndarray,
                             log_std_bounds: tuple[float, float] = (-10.0, 2.0)) -> SquashedSample:
    """``action = tanh(mean + exp(log_std) * noise)`` with its tanh-corrected log-density.

    The last axis indexes action dimensions; ``log_prob`` sums over it.
    """
    log_std = np.clip(log_std, *log_std_bounds)
    std_noise = np.exp(log_std) * noise
    action = np.tanh(mean + std_noise)
    gauss = -0.5 * noise * noise - log_std - 0.5 * LOG_2PI
    log_prob = np.sum(gauss - np.log(1.0 - action * action + SQUASH_EPS), axis=-1)
    return SquashedSample(action, log_prob, log_std, std_noise)


def squashed_gaussian_backward(sample: SquashedSample, grad_action: np.ndarray | None,
                               grad_log_prob: np.ndarray | None) -> tuple[np.ndarray, np.ndarray]:
    """Gradients with respect to (mean, log_std) through the reparameterized sample."""
    a = sample.action
    one_minus = 1.0 - a * a
    g_pre = np.zeros_like(a)
    g_ls = np.zeros_like(a)
    if grad_action is not None:
        g_pre += grad_action * one_minus
    if grad_log_prob is not None:
        glp = np.asarray(grad_log_prob)[..., None]
        g_pre += glp * (2.0 * a * one_minus / (one_minus + SQUASH_EPS))
        g_ls -= glp
    g_ls += g_pre * sample.std_noise
    return g_pre, g_ls


def save_checkpoint(path, tensors: dict[str, np.ndarray], header: dict) -> None:
    """Write a checkpoint: a magic line, a JSON header line, then raw float64 data."""
    path = Path(path)
    manifest = [[name, list(np.shape(arr))] for name, arr in tensors.items()]
    head = dict(header)
    head["manifest"] = manifest
    payload = b"".join(np.ascontiguousarray(arr, dtype="<f8").tobytes() for arr in tensors.values())
    try:
        with open(path, "wb") as fh:
            fh.write((CHECKPOINT_MAGIC + "\n").encode())
            fh.write((json.dumps(head, sort_keys=True) + "\n").encode())
            fh.write(payload)
    except OSError as exc:
        raise OSError(f"cannot write checkpoint {path}: {exc}") from exc


def load_checkpoint(path) -> tuple[dict[str, np.ndarray], dict]:
    path = Path(path)
    try:
        with open(path, "rb") as fh:
            magic = fh.readline().decode().strip()
            if magic != CHECKPOINT_MAGIC:
                raise ValueError(f"{path}: not a checkpoint file")
            header = json.loads(fh.readline().decode())
            data = np.frombuffer(fh.read(), dtype="<f8")
    except OSError as exc:
        raise OSError(f"cannot read checkpoint {path}: {exc}") from exc
    tensors, offset = {}, 0
    for name, dims in header["manifest"]:
        size = int(np.prod(dims)) if dims else 1
        if offset + size > data.size:
            raise ValueError(f"{path}: truncated checkpoint data")
        tensors[name] = data[offset:offset + size].reshape(dims).astype(np.float64)
        offset += size
    if offset != data.size:
        raise ValueError(f"{path}: trailing data after manifest")
    return tensors, header
