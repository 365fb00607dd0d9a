"""Toy dual encoder and projection head: tanh MLPs followed by row
normalization, with hand-written backward passes."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DimMismatch, NonFinite, ZeroRow
from .numerics import ZERO_NORM, EmbeddingBatch, as_matrix


@dataclass
class MLP:
    """Dense layers ``h = x @ W + b`` with tanh between layers (not after
    the last one)."""

    weights: list[np.ndarray]
    biases: list[np.ndarray]

    def __post_init__(self):
        for k in range(1, len(self.weights)):
            if self.weights[k - 1].shape[1] != self.weights[k].shape[0]:
                raise DimMismatch(f"layer {k} input dim does not chain")

    @property
    def input_dim(self) -> int:
        return self.weights[0].shape[0]

    @property
    def output_dim(self) -> int:
        return self.weights[-1].shape[1]

    def named_arrays(self, prefix: str) -> dict[str, np.ndarray]:
        out = {}
        for k, (w, b) in enumerate(zip(self.weights, self.biases)):
            out[f"{prefix}.{k}.weight"] = w
            out[f"{prefix}.{k}.bias"] = b
        return out

    def copy(self) -> "MLP":
        return MLP([w.copy() for w in self.weights], [b.copy() for b in self.biases])

    def flat(self) -> np.ndarray:
        return np.concatenate([a.ravel() for wb in zip(self.weights, self.biases) for a in wb])

    def with_flat(self, theta) -> "MLP":
        theta = np.asarray(theta, dtype=np.float64)
        weights, biases, pos = [], [], 0
        for w, b in zip(self.weights, self.biases):
            weights.append(theta[pos : pos + w.size].reshape(w.shape))
            pos += w.size
            biases.append(theta[pos : pos + b.size].reshape(b.shape))
            pos += b.size
        return MLP(weights, biases)


EncoderParams = MLP
ProjectionHead = MLP


def flat_grads(grads) -> np.ndarray:
    return np.concatenate([a.ravel() for gw, gb in grads for a in (gw, gb)])


def init_encoder(seed, input_dim: int, hidden_dims, output_dim: int) -> MLP:
    """Glorot-uniform weights, zero biases, deterministic per seed."""
    dims = [input_dim, *hidden_dims, output_dim]
    if min(dims) < 1:
        raise DimMismatch(f"all dims must be >= 1, got {dims}")
    rng = np.random.default_rng(seed)
    weights, biases = [], []
    for fan_in, fan_out in zip(dims[:-1], dims[1:]):
        a = np.sqrt(6.0 / (fan_in + fan_out))
        weights.append(rng.uniform(-a, a, size=(fan_in, fan_out)))
        biases.append(np.zeros(fan_out))
    return MLP(weights, biases)


def init_projection_head(seed, dim: int, hidden_dim: int | None = None) -> MLP:
    return init_encoder(seed, dim, [hidden_dim or 2 * dim], dim)


def identity_head(dim: int) -> MLP:
    return MLP([np.eye(dim)], [np.zeros(dim)])


@dataclass
class ForwardCache:
    inputs: list[np.ndarray]  # input to each layer
    out: np.ndarray  # un-normalized output
    norms: np.ndarray
    z: np.ndarray


def _forward(params: MLP, x: np.ndarray) -> ForwardCache:
    if x.shape[1] != params.input_dim:
        raise DimMismatch(f"input dim {x.shape[1]} != encoder input dim {params.input_dim}")
    inputs = []
    h = x
    last = len(params.weights) - 1
    for k, (w, b) in enumerate(zip(params.weights, params.biases)):
        inputs.append(h)
        h = h @ w + b
        if k < last:
            h = np.tanh(h)
    norms = np.sqrt(np.einsum("ij,ij->i", h, h))
    if not np.all(np.isfinite(norms)):
        raise NonFinite("encoder output is not finite")
    bad = np.flatnonzero(norms <= ZERO_NORM)
    if bad.size:
        raise ZeroRow(int(bad[0]))
    return ForwardCache(inputs, h, norms, h / norms[:, None])


def _backward(params: MLP, cache: ForwardCache, grad_z: np.ndarray):
    grad_z = np.asarray(grad_z, dtype=np.float64)
    if grad_z.shape != cache.z.shape:
        raise DimMismatch(f"gradient shape {grad_z.shape} != output shape {cache.z.shape}")
    z = cache.z
    # Jacobian of u -> u/|u| is (I - z z^T)/|u|
    g = (grad_z - np.einsum("ij,ij->i", grad_z, z)[:, None] * z) / cache.norms[:, None]
    grads = [None] * len(params.weights)
    for k in range(len(params.weights) - 1, -1, -1):
        inp = cache.inputs[k]
        grads[k] = (inp.T @ g, g.sum(axis=0))
        g = g @ params.weights[k].T
        if k > 0:
            # inp = tanh(pre-activation); d tanh = 1 - tanh^2
            g = g * (1.0 - inp * inp)
    return grads, g


def encode(params: MLP, raw, with_cache: bool = False):
    cache = _forward(params, as_matrix(raw))
    batch = EmbeddingBatch(cache.z, normalized=True)
    return (batch, cache) if with_cache else batch


def encoder_backward(params: MLP, cache: ForwardCache, grad_z):
    """Parameter gradients as a list of (grad_weight, grad_bias) per layer."""
    grads, _ = _backward(params, cache, grad_z)
    return grads


def project(head: MLP, z, with_cache: bool = False):
    return encode(head, z, with_cache=with_cache)


def project_backward(head: MLP, cache: ForwardCache, grad_q):
    """Returns (head parameter gradients, gradient w.r.t. the head input)."""
    return _backward(head, cache, grad_q)
