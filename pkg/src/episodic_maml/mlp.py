"""Multilayer perceptron kernel: forward pass, cross-entropy loss, gradients
and Hessian-vector products, all in float64 numpy.

Parameters live in one flat read-only vector; ``MlpParameters.layers`` exposes
per-layer ``(weight, bias)`` views where ``weight`` has shape ``(out, in)``.
Gradients and HVPs are returned as ``MlpParameters`` of the same architecture,
so they support the usual vector arithmetic (``theta - alpha * grad``).
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Union

import numpy as np

from .errors import ShapeError

ACTIVATIONS = ("relu", "tanh")
LOG_PROB_FLOOR = np.log(1e-12)


@dataclass(frozen=True)
class MlpArchitecture:
    input_dim: int
    output_dim: int
    hidden_widths: tuple[int, ...] = (80, 80, 80)
    activation: str = "relu"

    def __post_init__(self):
        object.__setattr__(self, "hidden_widths", tuple(int(w) for w in self.hidden_widths))
        dims = (self.input_dim, *self.hidden_widths, self.output_dim)
        if any(int(d) < 1 for d in dims):
            raise ValueError(f"all layer widths must be >= 1, got {dims}")
        if self.activation not in ACTIVATIONS:
            raise ValueError(f"activation must be one of {ACTIVATIONS}, got {self.activation!r}")

    @property
    def layer_shapes(self) -> list[tuple[int, int]]:
        dims = (self.input_dim, *self.hidden_widths, self.output_dim)
        return [(dims[i + 1], dims[i]) for i in range(len(dims) - 1)]

    @property
    def n_params(self) -> int:
        return sum(o * i + o for o, i in self.layer_shapes)


@dataclass(frozen=True, eq=False)
class MlpParameters:
    architecture: MlpArchitecture
    vector: np.ndarray = field(repr=False)

    def __post_init__(self):
        vec = np.array(self.vector, dtype=np.float64, copy=True).reshape(-1)
        if vec.size != self.architecture.n_params:
            raise ShapeError(
                f"expected {self.architecture.n_params} parameters, got {vec.size}"
            )
        vec.setflags(write=False)
        object.__setattr__(self, "vector", vec)

    @classmethod
    def from_layers(cls, architecture: MlpArchitecture, layers) -> "MlpParameters":
        pieces = []
        for (out_dim, in_dim), (w, b) in zip(architecture.layer_shapes, layers, strict=True):
            w = np.asarray(w, dtype=np.float64)
            b = np.asarray(b, dtype=np.float64)
            if w.shape != (out_dim, in_dim) or b.shape != (out_dim,):
                raise ShapeError(
                    f"layer expects weight {(out_dim, in_dim)} and bias {(out_dim,)}, "
                    f"got {w.shape} and {b.shape}"
                )
            pieces += [w.ravel(), b]
        return cls(architecture, np.concatenate(pieces))

    @classmethod
    def zeros(cls, architecture: MlpArchitecture) -> "MlpParameters":
        return cls(architecture, np.zeros(architecture.n_params))

    @property
    def layers(self) -> list[tuple[np.ndarray, np.ndarray]]:
        out, offset = [], 0
        for out_dim, in_dim in self.architecture.layer_shapes:
            w = self.vector[offset:offset + out_dim * in_dim].reshape(out_dim, in_dim)
            offset += out_dim * in_dim
            b = self.vector[offset:offset + out_dim]
            offset += out_dim
            out.append((w, b))
        return out

    def like(self, vector: np.ndarray) -> "MlpParameters":
        return MlpParameters(self.architecture, vector)

    def _other(self, other) -> np.ndarray:
        if isinstance(other, MlpParameters):
            if other.architecture != self.architecture:
                raise ShapeError("parameter architectures differ")
            return other.vector
        return other

    def __add__(self, other):
        return self.like(self.vector + self._other(other))

    def __sub__(self, other):
        return self.like(self.vector - self._other(other))

    def __mul__(self, scalar: float):
        return self.like(self.vector * float(scalar))

    __rmul__ = __mul__

    def __truediv__(self, scalar: float):
        return self.like(self.vector / float(scalar))

    def __neg__(self):
        return self.like(-self.vector)

    def __eq__(self, other):
        if not isinstance(other, MlpParameters):
            return NotImplemented
        return self.architecture == other.architecture and np.array_equal(self.vector, other.vector)

    def dot(self, other) -> float:
        return float(self.vector @ self._other(other))

    def norm(self) -> float:
        return float(np.linalg.norm(self.vector))


@dataclass(frozen=True, eq=False)
class LabeledBatch:
    features: np.ndarray
    labels: np.ndarray

    def __post_init__(self):
        x = np.array(self.features, dtype=np.float64, copy=True)
        y = np.array(self.labels, dtype=np.int64, copy=True).reshape(-1)
        if x.ndim != 2:
            raise ShapeError(f"features must be 2-D, got shape {x.shape}")
        if x.shape[0] < 1 or x.shape[0] != y.shape[0]:
            raise ShapeError(f"{x.shape[0]} feature rows vs {y.shape[0]} labels")
        if not np.all(np.isfinite(x)):
            raise ValueError("features contain non-finite values")
        if np.any(y < 0):
            raise ValueError("labels must be non-negative")
        x.setflags(write=False)
        y.setflags(write=False)
        object.__setattr__(self, "features", x)
        object.__setattr__(self, "labels", y)

    def __len__(self) -> int:
        return self.labels.shape[0]


Batch = Union[LabeledBatch, np.ndarray]


def init_parameters(arch: MlpArchitecture, seed: int) -> MlpParameters:
    """Uniform fan-based (Glorot) weights, zero biases; deterministic per seed."""
    rng = np.random.default_rng(seed)
    layers = []
    for out_dim, in_dim in arch.layer_shapes:
        limit = np.sqrt(6.0 / (in_dim + out_dim))
        layers.append((rng.uniform(-limit, limit, size=(out_dim, in_dim)), np.zeros(out_dim)))
    return MlpParameters.from_layers(arch, layers)


def _features(params: MlpParameters, batch: Batch) -> np.ndarray:
    x = batch.features if isinstance(batch, LabeledBatch) else np.asarray(batch, dtype=np.float64)
    if x.ndim != 2 or x.shape[1] != params.architecture.input_dim:
        raise ShapeError(
            f"batch feature width {x.shape[-1] if x.ndim else '?'} does not match "
            f"input_dim {params.architecture.input_dim}"
        )
    return x


def _check_labels(params: MlpParameters, batch: LabeledBatch) -> np.ndarray:
    y = batch.labels
    if np.any(y >= params.architecture.output_dim):
        raise ValueError(f"label {y.max()} out of range for {params.architecture.output_dim} classes")
    return y


def _act(name: str, z: np.ndarray):
    """Return activation value, first and second derivative."""
    if name == "relu":
        a = np.maximum(z, 0.0)
        d1 = (z > 0).astype(np.float64)
        return a, d1, np.zeros_like(z)
    t = np.tanh(z)
    d1 = 1.0 - t * t
    return t, d1, -2.0 * t * d1


def _forward_trace(params: MlpParameters, x: np.ndarray):
    acts, pre, d1s, d2s = [x], [], [], []
    layers = params.layers
    for idx, (w, b) in enumerate(layers):
        z = acts[-1] @ w.T + b
        pre.append(z)
        if idx < len(layers) - 1:
            a, d1, d2 = _act(params.architecture.activation, z)
            acts.append(a)
            d1s.append(d1)
            d2s.append(d2)
    return acts, pre, d1s, d2s


def forward(params: MlpParameters, batch: Batch) -> np.ndarray:
    """Logits of shape (n, output_dim)."""
    x = _features(params, batch)
    return _forward_trace(params, x)[1][-1]


def log_softmax(logits: np.ndarray) -> np.ndarray:
    shifted = logits - logits.max(axis=1, keepdims=True)
    return shifted - np.log(np.exp(shifted).sum(axis=1, keepdims=True))


def softmax(logits: np.ndarray) -> np.ndarray:
    return np.exp(log_softmax(logits))


def nll_from_logits(logits: np.ndarray, labels: np.ndarray) -> float:
    """Mean categorical negative log-likelihood with probabilities floored at 1e-12."""
    logp = log_softmax(logits)[np.arange(len(labels)), labels]
    return float(-np.mean(np.maximum(logp, LOG_PROB_FLOOR)))


def loss(params: MlpParameters, batch: LabeledBatch) -> float:
    x = _features(params, batch)
    y = _check_labels(params, batch)
    return nll_from_logits(_forward_trace(params, x)[1][-1], y)


def _output_delta(logits: np.ndarray, y: np.ndarray):
    n = len(y)
    logp = log_softmax(logits)
    picked = logp[np.arange(n), y]
    value = float(-np.mean(np.maximum(picked, LOG_PROB_FLOOR)))
    probs = np.exp(logp)
    delta = probs.copy()
    delta[np.arange(n), y] -= 1.0
    # rows sitting on the clamp have zero gradient
    active = (picked > LOG_PROB_FLOOR).astype(np.float64)[:, None]
    return value, delta * active / n, probs, active


def loss_gradient(params: MlpParameters, batch: LabeledBatch) -> tuple[float, MlpParameters]:
    """Loss and its gradient with respect to every weight and bias (backprop)."""
    x = _features(params, batch)
    y = _check_labels(params, batch)
    acts, pre, d1s, _ = _forward_trace(params, x)
    value, delta, _, _ = _output_delta(pre[-1], y)
    layers = params.layers
    grads = [None] * len(layers)
    for idx in range(len(layers) - 1, -1, -1):
        w, _ = layers[idx]
        grads[idx] = (delta.T @ acts[idx], delta.sum(axis=0))
        if idx > 0:
            delta = (delta @ w) * d1s[idx - 1]
    return value, MlpParameters.from_layers(params.architecture, grads)


def _hvp_exact(params: MlpParameters, batch: LabeledBatch, v: MlpParameters) -> MlpParameters:
    # Forward-over-reverse (R-operator) pass through backprop.
    x = _features(params, batch)
    y = _check_labels(params, batch)
    acts, pre, d1s, d2s = _forward_trace(params, x)
    layers, vlayers = params.layers, v.layers
    n_layers = len(layers)

    r_acts = [np.zeros_like(x)]
    r_pre = []
    for idx, ((w, _), (vw, vb)) in enumerate(zip(layers, vlayers)):
        rz = r_acts[-1] @ w.T + acts[idx] @ vw.T + vb
        r_pre.append(rz)
        if idx < n_layers - 1:
            r_acts.append(d1s[idx] * rz)

    _, delta, probs, active = _output_delta(pre[-1], y)
    rz_out = r_pre[-1]
    r_delta = probs * (rz_out - (probs * rz_out).sum(axis=1, keepdims=True)) * active / len(y)

    out = [None] * n_layers
    for idx in range(n_layers - 1, -1, -1):
        w, _ = layers[idx]
        vw, _ = vlayers[idx]
        out[idx] = (r_delta.T @ acts[idx] + delta.T @ r_acts[idx], r_delta.sum(axis=0))
        if idx > 0:
            back = delta @ w
            r_delta = (r_delta @ w + delta @ vw) * d1s[idx - 1] + back * d2s[idx - 1] * r_pre[idx - 1]
            delta = back * d1s[idx - 1]
    return MlpParameters.from_layers(params.architecture, out)


def _hvp_central_difference(params: MlpParameters, batch: LabeledBatch, v: MlpParameters) -> MlpParameters:
    vmax = float(np.max(np.abs(v.vector)))
    if vmax == 0.0:
        return v.like(np.zeros_like(v.vector))
    r = 1e-4 * (1.0 + float(np.max(np.abs(params.vector)))) / (1.0 + vmax)
    _, g_plus = loss_gradient(params + r * v, batch)
    _, g_minus = loss_gradient(params - r * v, batch)
    return (g_plus - g_minus) / (2.0 * r)


def hessian_vector_product(
    params: MlpParameters,
    batch: LabeledBatch,
    v: MlpParameters | np.ndarray,
    method: str = "exact",
) -> MlpParameters:
    """Hessian of ``loss(params, batch)`` times ``v``.

    ``method="exact"`` differentiates the backward pass in direction ``v``;
    ``method="central"`` takes a central difference of ``loss_gradient``.
    """
    if not isinstance(v, MlpParameters):
        v = params.like(v)
    elif v.architecture != params.architecture:
        raise ShapeError("direction has a different architecture than params")
    if method == "exact":
        return _hvp_exact(params, batch, v)
    if method == "central":
        return _hvp_central_difference(params, batch, v)
    raise ValueError(f"unknown HVP method {method!r}")

