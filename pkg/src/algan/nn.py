"""MLP building blocks for the generator and discriminator.

Weights are stored ``[in x out]`` so a layer computes ``x @ W + b`` on row
batches.  Spectral normalization keeps a persistent right singular vector
estimate ``u`` (length ``out``) that is refined by power iteration outside the
differentiation graph.
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

from . import tensor as T
from .errors import ConfigError, DimensionError, TrainingError
from .tensor import Tensor

MODES = ("train", "eval")


def _check_mode(mode: str) -> None:
    if mode not in MODES:
        raise ValueError(f"mode must be one of {MODES}, got {mode!r}")


class DenseLayer:
    def __init__(self, weight: np.ndarray, bias: np.ndarray):
        self.weight = Tensor(weight, requires_grad=True)
        self.bias = Tensor(bias, requires_grad=True)

    @property
    def in_dim(self) -> int:
        return self.weight.shape[0]

    @property
    def out_dim(self) -> int:
        return self.weight.shape[1]

    def forward(self, x: Tensor, mode: str) -> Tensor:
        return x @ self.weight + self.bias

    def parameters(self):
        return [("weight", self.weight), ("bias", self.bias)]

    def buffers(self) -> dict[str, np.ndarray]:
        return {}

    def arch(self) -> dict:
        return {"type": "dense", "in": self.in_dim, "out": self.out_dim}


def _l2_normalize(v: np.ndarray, eps: float) -> np.ndarray:
    return v / max(float(np.linalg.norm(v)), eps)


class SpectralDenseLayer:
    """Dense layer whose effective weight is ``W / sigma_hat``.

    ``sigma_hat = v^T W u`` where ``v = normalize(W u)``.  In train mode each
    forward first runs ``n_power_iters`` power-iteration updates of ``u``;
    in eval mode ``u`` is left untouched.
    """

    def __init__(self, inner: DenseLayer, u: np.ndarray, n_power_iters: int = 1, eps: float = 1e-12):
        if n_power_iters < 1:
            raise ConfigError("must be a positive integer", "n_power_iters")
        if u.shape != (inner.out_dim,):
            raise DimensionError(f"u must have shape ({inner.out_dim},), got {u.shape}")
        self.inner = inner
        self.u = _l2_normalize(np.array(u, dtype=np.float64), eps)
        self.n_power_iters = int(n_power_iters)
        self.eps = eps
        self.last_sigma = float("nan")

    @property
    def in_dim(self) -> int:
        return self.inner.in_dim

    @property
    def out_dim(self) -> int:
        return self.inner.out_dim

    def power_iterate(self, n: int | None = None) -> None:
        w = self.inner.weight.data
        for _ in range(self.n_power_iters if n is None else n):
            v = _l2_normalize(w @ self.u, self.eps)
            self.u = _l2_normalize(w.T @ v, self.eps)

    def effective_weight(self, mode: str = "eval") -> Tensor:
        _check_mode(mode)
        if mode == "train":
            self.power_iterate()
        w = self.inner.weight
        v = _l2_normalize(w.data @ self.u, self.eps)
        sigma_hat = float(v @ w.data @ self.u)
        self.last_sigma = sigma_hat
        if sigma_hat < self.eps:
            return T.scale(w, 1.0 / self.eps)
        return _divide_by_spectral_estimate(w, v, self.u, sigma_hat)

    def forward(self, x: Tensor, mode: str) -> Tensor:
        return x @ self.effective_weight(mode) + self.inner.bias

    def parameters(self):
        return self.inner.parameters()

    def buffers(self) -> dict[str, np.ndarray]:
        return {"u": self.u}

    def arch(self) -> dict:
        return {
            "type": "spectral_dense",
            "in": self.in_dim,
            "out": self.out_dim,
            "n_power_iters": self.n_power_iters,
        }


def _divide_by_spectral_estimate(w: Tensor, v: np.ndarray, u: np.ndarray, sigma: float) -> Tensor:
    """``W / (v^T W u)`` as one graph node; ``u`` and ``v`` are constants.

    d/dW = G / sigma - <G, W> v u^T / sigma^2.
    """
    wd = w.data

    def bw(g):
        coeff = float(np.vdot(g, wd)) / (sigma * sigma)
        return (g / sigma - coeff * np.outer(v, u),)

    return T.record("spectral_normalize", wd / sigma, (w,), bw)


def spectral_normalize(layer: SpectralDenseLayer, mode: str = "train") -> Tensor:
    """Run the layer's power iteration (in train mode) and return ``W / sigma_hat``."""
    return layer.effective_weight(mode)


class BatchNormLayer:
    def __init__(self, dim: int, momentum: float = 0.1, eps: float = 1e-5):
        self.gamma = Tensor(np.ones(dim), requires_grad=True)
        self.beta = Tensor(np.zeros(dim), requires_grad=True)
        self.running_mean = np.zeros(dim)
        self.running_var = np.ones(dim)
        self.momentum = float(momentum)
        self.eps = float(eps)
        # last normalized (pre-scale) activations, kept for inspection
        self.last_normalized: np.ndarray | None = None

    @property
    def in_dim(self) -> int:
        return self.gamma.shape[0]

    out_dim = in_dim

    def forward(self, x: Tensor, mode: str) -> Tensor:
        if mode == "train":
            n = x.shape[0]
            mean = x.mean(axis=0)
            centered = x - mean
            var = (centered * centered).mean(axis=0)
            xhat = centered / T.sqrt(var + self.eps)
            m = self.momentum
            self.running_mean = (1.0 - m) * self.running_mean + m * mean.data
            unbiased = var.data * n / (n - 1) if n > 1 else var.data
            self.running_var = (1.0 - m) * self.running_var + m * unbiased
        else:
            xhat = (x - self.running_mean) / np.sqrt(self.running_var + self.eps)
        self.last_normalized = xhat.data
        return xhat * self.gamma + self.beta

    def parameters(self):
        return [("gamma", self.gamma), ("beta", self.beta)]

    def buffers(self) -> dict[str, np.ndarray]:
        return {"running_mean": self.running_mean, "running_var": self.running_var}

    def arch(self) -> dict:
        return {"type": "batch_norm", "dim": self.in_dim, "momentum": self.momentum, "eps": self.eps}


class Activation:
    KINDS = ("relu", "leaky_relu", "sigmoid", "identity")

    def __init__(self, kind: str, slope: float = 0.2):
        if kind not in self.KINDS:
            raise ConfigError(f"unknown activation {kind!r}", "activation")
        self.kind = kind
        self.slope = float(slope)

    in_dim = out_dim = None

    def forward(self, x: Tensor, mode: str) -> Tensor:
        if self.kind == "relu":
            return T.relu(x)
        if self.kind == "leaky_relu":
            return T.leaky_relu(x, self.slope)
        if self.kind == "sigmoid":
            return T.sigmoid(x)
        return x

    def parameters(self):
        return []

    def buffers(self) -> dict[str, np.ndarray]:
        return {}

    def arch(self) -> dict:
        return {"type": "activation", "kind": self.kind, "slope": self.slope}


class Network:
    """Ordered stack of layers applied left to right."""

    def __init__(self, layers: Sequence):
        self.layers = list(layers)
        dims = [(layer.in_dim, layer.out_dim) for layer in self.layers if layer.in_dim is not None]
        if not dims:
            raise ConfigError("network has no shaped layers", "layers")
        for (_, out), (nxt, _) in zip(dims, dims[1:]):
            if out != nxt:
                raise DimensionError(f"layer dimensions do not compose: {out} -> {nxt}")
        self.in_dim = dims[0][0]
        self.out_dim = dims[-1][1]

    def forward(self, x, mode: str = "train") -> Tensor:
        _check_mode(mode)
        x = T.as_tensor(x)
        if x.ndim != 2 or x.shape[1] != self.in_dim:
            raise DimensionError(f"network expects input [n x {self.in_dim}], got {x.shape}")
        for layer in self.layers:
            x = layer.forward(x, mode)
        return x

    __call__ = forward

    def parameters(self) -> list[tuple[str, Tensor]]:
        return [
            (f"layers.{i}.{name}", p)
            for i, layer in enumerate(self.layers)
            for name, p in layer.parameters()
        ]

    def spectral_layers(self) -> list[SpectralDenseLayer]:
        return [layer for layer in self.layers if isinstance(layer, SpectralDenseLayer)]

    def zero_grad(self) -> None:
        for _, p in self.parameters():
            p.grad = None

    def requires_grad_(self, flag: bool) -> None:
        for _, p in self.parameters():
            p.requires_grad = flag

    def state_dict(self) -> dict[str, np.ndarray]:
        state = {name: p.data.copy() for name, p in self.parameters()}
        for i, layer in enumerate(self.layers):
            for name, arr in layer.buffers().items():
                state[f"layers.{i}.{name}"] = np.array(arr, copy=True)
        return state

    def load_state_dict(self, state: dict[str, np.ndarray]) -> None:
        expected = set(self.state_dict())
        if set(state) != expected:
            missing = sorted(expected - set(state))
            extra = sorted(set(state) - expected)
            raise ConfigError(f"state mismatch; missing={missing} unexpected={extra}", "state")
        for name, p in self.parameters():
            if state[name].shape != p.shape:
                raise DimensionError(f"{name}: expected {p.shape}, got {state[name].shape}")
            p.data = np.array(state[name], dtype=np.float64, copy=True)
        for i, layer in enumerate(self.layers):
            for name in layer.buffers():
                setattr(layer, name, np.array(state[f"layers.{i}.{name}"], dtype=np.float64, copy=True))

    def arch(self) -> list[dict]:
        return [layer.arch() for layer in self.layers]

    @classmethod
    def from_arch(cls, arch: Iterable[dict]) -> "Network":
        layers = []
        for spec in arch:
            kind = spec["type"]
            if kind == "dense":
                layers.append(DenseLayer(np.zeros((spec["in"], spec["out"])), np.zeros(spec["out"])))
            elif kind == "spectral_dense":
                inner = DenseLayer(np.zeros((spec["in"], spec["out"])), np.zeros(spec["out"]))
                u = np.ones(spec["out"]) / np.sqrt(spec["out"])
                layers.append(SpectralDenseLayer(inner, u, spec["n_power_iters"]))
            elif kind == "batch_norm":
                layers.append(BatchNormLayer(spec["dim"], spec["momentum"], spec["eps"]))
            elif kind == "activation":
                layers.append(Activation(spec["kind"], spec["slope"]))
            else:
                raise ConfigError(f"unknown layer type {kind!r}", "arch")
        return cls(layers)


def init_params(
    layer_dims: Sequence[int],
    rng_seed: int,
    *,
    activation: str = "relu",
    slope: float = 0.2,
    batch_norm: bool = False,
    spectral: bool = False,
    n_power_iters: int = 1,
    bn_momentum: float = 0.1,
    bn_eps: float = 1e-5,
    init_std: float = 0.02,
) -> Network:
    """Build an MLP over ``layer_dims`` with N(0, init_std^2) weights and zero biases.

    Hidden layers are ``dense -> [batch_norm] -> activation``; the last dense
    layer is linear and never batch-normalized.
    """
    dims = list(layer_dims)
    if len(dims) < 2 or any(int(d) <= 0 for d in dims):
        raise ConfigError(f"need at least two positive dimensions, got {dims}", "layer_dims")
    rng = np.random.default_rng(rng_seed)
    layers: list = []
    for i, (d_in, d_out) in enumerate(zip(dims[:-1], dims[1:])):
        dense = DenseLayer(rng.normal(0.0, init_std, size=(d_in, d_out)), np.zeros(d_out))
        if spectral:
            layers.append(SpectralDenseLayer(dense, rng.normal(size=d_out), n_power_iters))
        else:
            layers.append(dense)
        if i < len(dims) - 2:
            if batch_norm:
                layers.append(BatchNormLayer(d_out, bn_momentum, bn_eps))
            layers.append(Activation(activation, slope))
    return Network(layers)


def build_generator(latent_dim: int, out_dim: int, hidden: Sequence[int] = (512, 1024), seed: int = 0) -> Network:
    """Batch-normalized ReLU MLP with a linear output layer."""
    return init_params([latent_dim, *hidden, out_dim], seed, activation="relu", batch_norm=True)


def build_discriminator(
    in_dim: int, hidden: Sequence[int] = (1024, 512), seed: int = 0, slope: float = 0.2
) -> Network:
    """Spectrally normalized Leaky-ReLU MLP emitting one raw logit per row."""
    return init_params([in_dim, *hidden, 1], seed, activation="leaky_relu", slope=slope, spectral=True)


# -- optimizer -----------------------------------------------------------------


@dataclass
class AdamState:
    lr: float
    beta1: float = 0.0
    beta2: float = 0.9
    eps: float = 1e-8
    t: int = 0
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)

    def __post_init__(self):
        if not self.lr > 0:
            raise ConfigError("learning rate must be positive", "lr")
        if not (0.0 <= self.beta1 < 1.0 and 0.0 <= self.beta2 < 1.0):
            raise ConfigError("betas must lie in [0, 1)", "betas")


def adam_step(state: AdamState, params: Sequence[tuple[str, Tensor]], grads: Sequence[np.ndarray | None] | None = None) -> None:
    """One bias-corrected Adam update applied in place to ``params``.

    ``grads`` defaults to each parameter's ``.grad``; a missing gradient is
    treated as zero.  All gradients are checked before any parameter moves.
    """
    if grads is None:
        grads = [p.grad for _, p in params]
    if len(grads) != len(params):
        raise DimensionError(f"{len(params)} parameters but {len(grads)} gradients")
    step = state.t + 1
    resolved = []
    for (name, p), g in zip(params, grads):
        g = np.zeros_like(p.data) if g is None else np.asarray(g, dtype=np.float64)
        if g.shape != p.shape:
            raise DimensionError(f"{name}: gradient shape {g.shape} != parameter shape {p.shape}")
        if not np.all(np.isfinite(g)):
            raise TrainingError(f"non-finite gradient for {name} at step {step}")
        resolved.append(g)
    state.t = step
    b1, b2 = state.beta1, state.beta2
    c1 = 1.0 - b1**step
    c2 = 1.0 - b2**step
    for (name, p), g in zip(params, resolved):
        m = state.m.get(name)
        v = state.v.get(name)
        if m is None:
            m = state.m[name] = np.zeros_like(p.data)
            v = state.v[name] = np.zeros_like(p.data)
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * (g * g)
        denom = v / c2
        np.sqrt(denom, out=denom)
        denom += state.eps
        update = m / c1
        update /= denom
        update *= state.lr
        p.data = p.data - update


# -- checkpoints ---------------------------------------------------------------


def save_checkpoint(path: str | os.PathLike, networks: dict[str, Network], metadata: dict | None = None,
                    arrays: dict[str, np.ndarray] | None = None) -> None:
    """Write networks (architecture, parameters, buffers), metadata and extra arrays to one ``.npz``."""
    payload: dict[str, np.ndarray] = {}
    header = {"networks": {name: net.arch() for name, net in networks.items()}, "metadata": metadata or {}}
    payload["__header__"] = np.array(json.dumps(header, sort_keys=True))
    for name, net in networks.items():
        for key, arr in net.state_dict().items():
            payload[f"net/{name}/{key}"] = arr
    for key, arr in (arrays or {}).items():
        payload[f"arr/{key}"] = np.asarray(arr)
    with open(path, "wb") as fh:
        np.savez(fh, **payload)


def load_checkpoint(path: str | os.PathLike) -> tuple[dict[str, Network], dict, dict[str, np.ndarray]]:
    """Inverse of :func:`save_checkpoint`: ``(networks, metadata, arrays)``."""
    with np.load(path, allow_pickle=False) as data:
        header = json.loads(str(data["__header__"]))
        networks = {}
        for name, arch in header["networks"].items():
            net = Network.from_arch(arch)
            prefix = f"net/{name}/"
            net.load_state_dict({k[len(prefix):]: data[k] for k in data.files if k.startswith(prefix)})
            networks[name] = net
        arrays = {k[4:]: data[k] for k in data.files if k.startswith("arr/")}
    return networks, header["metadata"], arrays
