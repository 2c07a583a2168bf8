"""Minimal fully-connected networks with hand-rolled reverse-mode gradients.

Everything is float64 numpy. Networks are stored as plain parameter
containers; forward/backward are free functions so that they stay pure and
safe to call from concurrent rollouts.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np


class DimensionError(ValueError):
    """Input/parameter shapes are incompatible."""


class TrainingError(RuntimeError):
    """Non-finite values encountered during an update."""


CHECKPOINT_VERSION = 1


@dataclass
class MlpParams:
    """Weights and biases of a feed-forward net.

    weights[i] has shape (fan_in, fan_out) so activations are computed as
    x @ W + b. ``activations`` holds one tag ('tanh' or 'relu') per hidden
    layer; the output layer is linear.
    """

    weights: list[np.ndarray]
    biases: list[np.ndarray]
    activations: list[str]

    def __post_init__(self):
        if len(self.weights) != len(self.biases):
            raise DimensionError("weights/biases length mismatch")
        if len(self.activations) != len(self.weights) - 1:
            raise DimensionError("need one activation tag per hidden layer")
        for i in range(len(self.weights) - 1):
            if self.weights[i].shape[1] != self.weights[i + 1].shape[0]:
                raise DimensionError(
                    f"layer {i} output dim {self.weights[i].shape[1]} != "
                    f"layer {i + 1} input dim {self.weights[i + 1].shape[0]}"
                )
        for tag in self.activations:
            if tag not in ("tanh", "relu"):
                raise DimensionError(f"unknown activation {tag!r}")

    @property
    def in_dim(self) -> int:
        return self.weights[0].shape[0]

    @property
    def out_dim(self) -> int:
        return self.weights[-1].shape[1]

    def copy(self) -> "MlpParams":
        return MlpParams(
            [w.copy() for w in self.weights],
            [b.copy() for b in self.biases],
            list(self.activations),
        )


@dataclass
class GradientBundle:
    """Per-parameter gradients, shape-identical to an MlpParams."""

    weights: list[np.ndarray]
    biases: list[np.ndarray]


def init_mlp(sizes, rng, activation="tanh") -> MlpParams:
    """Uniform fan-in initialization: entries ~ U[-1/sqrt(fan_in), +1/sqrt(fan_in)]."""
    weights, biases = [], []
    for n_in, n_out in zip(sizes[:-1], sizes[1:]):
        bound = 1.0 / np.sqrt(n_in)
        weights.append(rng.uniform(-bound, bound, size=(n_in, n_out)))
        biases.append(rng.uniform(-bound, bound, size=n_out))
    return MlpParams(weights, biases, [activation] * (len(sizes) - 2))


def _apply_act(tag: str, z: np.ndarray) -> np.ndarray:
    if tag == "tanh":
        return np.tanh(z)
    return np.maximum(z, 0.0)


def _act_grad(tag: str, h: np.ndarray) -> np.ndarray:
    # derivative expressed through the post-activation value h
    if tag == "tanh":
        return 1.0 - h * h
    return (h > 0.0).astype(float)


def forward(params: MlpParams, x: np.ndarray) -> np.ndarray:
    """Evaluate the net. x has shape (..., in_dim); output (..., out_dim)."""
    x = np.asarray(x, dtype=float)
    if x.shape[-1] != params.in_dim:
        raise DimensionError(
            f"input dim {x.shape[-1]} != expected {params.in_dim}"
        )
    h = x
    n = len(params.weights)
    for i in range(n):
        h = h @ params.weights[i]
        h += params.biases[i]
        if i < n - 1:
            tag = params.activations[i]
            if tag == "relu":
                np.maximum(h, 0.0, out=h)
            else:
                np.tanh(h, out=h)
    return h


def _forward_cached(params: MlpParams, x: np.ndarray):
    """Forward pass keeping post-activation values for backprop."""
    acts = [x]
    h = x
    n = len(params.weights)
    for i in range(n):
        h = h @ params.weights[i] + params.biases[i]
        if i < n - 1:
            h = _apply_act(params.activations[i], h)
        acts.append(h)
    return h, acts


def backward(params: MlpParams, x: np.ndarray, upstream: np.ndarray):
    """Exact gradients of sum(upstream * forward(params, x)).

    x and upstream may be batched (leading batch axis); gradients are summed
    over the batch. Returns (GradientBundle, gradient w.r.t. x).
    """
    x = np.asarray(x, dtype=float)
    was_vector = x.ndim == 1
    x = np.atleast_2d(x)
    upstream = np.atleast_2d(np.asarray(upstream, dtype=float))
    if x.shape[-1] != params.in_dim:
        raise DimensionError(f"input dim {x.shape[-1]} != {params.in_dim}")
    if upstream.shape[-1] != params.out_dim:
        raise DimensionError(
            f"upstream dim {upstream.shape[-1]} != {params.out_dim}"
        )
    _, acts = _forward_cached(params, x)

    n = len(params.weights)
    g_w = [None] * n
    g_b = [None] * n
    delta = upstream
    for i in range(n - 1, -1, -1):
        g_w[i] = acts[i].T @ delta
        g_b[i] = delta.sum(axis=0)
        delta = delta @ params.weights[i].T
        if i > 0:
            delta = delta * _act_grad(params.activations[i - 1], acts[i])
    dx = delta[0] if was_vector else delta
    return GradientBundle(g_w, g_b), dx


@dataclass
class OptimizerState:
    """First-order optimizer state; method is 'adam' or 'sgd'."""

    lr: float
    method: str = "adam"
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step: int = 0
    m_w: list = field(default_factory=list)
    v_w: list = field(default_factory=list)
    m_b: list = field(default_factory=list)
    v_b: list = field(default_factory=list)

    @classmethod
    def for_params(cls, params: MlpParams, lr=3e-4, method="adam"):
        st = cls(lr=lr, method=method)
        st.m_w = [np.zeros_like(w) for w in params.weights]
        st.v_w = [np.zeros_like(w) for w in params.weights]
        st.m_b = [np.zeros_like(b) for b in params.biases]
        st.v_b = [np.zeros_like(b) for b in params.biases]
        return st


def optimizer_step(state: OptimizerState, params: MlpParams, grads: GradientBundle):
    """One descent step; mutates state and params in place, returns both."""
    for g in grads.weights + grads.biases:
        if not np.all(np.isfinite(g)):
            raise TrainingError("non-finite gradient")
    if state.method == "sgd":
        for w, gw in zip(params.weights, grads.weights):
            w -= state.lr * gw
        for b, gb in zip(params.biases, grads.biases):
            b -= state.lr * gb
        state.step += 1
        return state, params
    state.step += 1
    t = state.step
    corr1 = 1.0 - state.beta1**t
    corr2 = 1.0 - state.beta2**t
    for tensors, gs, ms, vs in (
        (params.weights, grads.weights, state.m_w, state.v_w),
        (params.biases, grads.biases, state.m_b, state.v_b),
    ):
        for p, g, m, v in zip(tensors, gs, ms, vs):
            m *= state.beta1
            m += (1.0 - state.beta1) * g
            v *= state.beta2
            v += (1.0 - state.beta2) * g * g
            p -= state.lr * (m / corr1) / (np.sqrt(v / corr2) + state.eps)
    return state, params


def params_to_dict(params: MlpParams) -> dict:
    return {
        "version": CHECKPOINT_VERSION,
        "shapes": [list(w.shape) for w in params.weights],
        "weights": [w.ravel().tolist() for w in params.weights],  # row-major
        "biases": [b.tolist() for b in params.biases],
        "activations": list(params.activations),
    }


def params_from_dict(d: dict) -> MlpParams:
    if d.get("version") != CHECKPOINT_VERSION:
        raise ValueError(f"unsupported checkpoint version {d.get('version')}")
    weights = [
        np.array(flat, dtype=float).reshape(shape)
        for flat, shape in zip(d["weights"], d["shapes"])
    ]
    biases = [np.array(b, dtype=float) for b in d["biases"]]
    return MlpParams(weights, biases, list(d["activations"]))


def save_params(params: MlpParams, path) -> None:
    with open(path, "w") as f:
        json.dump(params_to_dict(params), f)


def load_params(path) -> MlpParams:
    with open(path) as f:
        return params_from_dict(json.load(f))
