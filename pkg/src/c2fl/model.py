"""Feed-forward classifier with closed-form losses and gradients.

The network is a small fully connected feature extractor (ReLU hidden
layers, linear output layer) followed by a bias-free linear head, so every
gradient the protocol needs has an explicit closed form.  The head carries
no bias on purpose: the per-class gradients exchanged with the server are
plain C x d matrices, one row per class.

All functions are pure; parameter containers are immutable snapshots.
Batch reductions are single accumulations in fixed order, so identical
inputs give bit-identical outputs.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import rngs
from .errors import ConfigError, NumericError

Array = np.ndarray

# One linear layer: weight (out, in) and bias (out,).  The extractor is a
# tuple of such layers; ReLU is applied after every layer except the last.
Extractor = tuple[tuple[Array, Array], ...]

PROB_FLOOR = 1e-12


def _frozen(a, dtype=np.float64) -> Array:
    out = np.array(a, dtype=dtype)
    out.flags.writeable = False
    return out


def _check_finite(a: Array, what: str) -> None:
    if not np.all(np.isfinite(a)):
        raise NumericError(f"non-finite values in {what}")


@dataclass(frozen=True)
class ModelParams:
    """Extractor weights theta plus the bias-free classifier matrix phi (C x d)."""

    layers: Extractor
    phi: Array

    def __post_init__(self):
        if not self.layers:
            raise ConfigError("extractor needs at least one layer")
        frozen_layers = []
        prev_out = None
        for i, (w, b) in enumerate(self.layers):
            w = _frozen(w)
            b = _frozen(b)
            if w.ndim != 2 or b.ndim != 1 or w.shape[0] != b.shape[0]:
                raise ConfigError(f"layer {i}: weight {w.shape} / bias {b.shape} mismatch")
            if prev_out is not None and w.shape[1] != prev_out:
                raise ConfigError(
                    f"layer {i}: input dim {w.shape[1]} != previous output dim {prev_out}"
                )
            prev_out = w.shape[0]
            _check_finite(w, f"layer {i} weights")
            _check_finite(b, f"layer {i} bias")
            frozen_layers.append((w, b))
        phi = _frozen(self.phi)
        if phi.ndim != 2:
            raise ConfigError(f"classifier must be a matrix, got shape {phi.shape}")
        if phi.shape[1] != prev_out:
            raise ConfigError(
                f"classifier expects {phi.shape[1]}-dim features, extractor outputs {prev_out}"
            )
        _check_finite(phi, "classifier")
        object.__setattr__(self, "layers", tuple(frozen_layers))
        object.__setattr__(self, "phi", phi)

    @property
    def theta(self) -> Extractor:
        return self.layers

    @property
    def input_dim(self) -> int:
        return self.layers[0][0].shape[1]

    @property
    def feature_dim(self) -> int:
        return self.layers[-1][0].shape[0]

    @property
    def num_classes(self) -> int:
        return self.phi.shape[0]


@dataclass(frozen=True)
class Gradients:
    """Gradient of a scalar loss w.r.t. every entry of a ModelParams."""

    layers: tuple[tuple[Array, Array], ...]
    phi: Array


def init_params(
    input_dim: int,
    hidden_sizes: tuple[int, ...],
    feature_dim: int,
    num_classes: int,
    seed: int,
) -> ModelParams:
    """He-initialized extractor, small Gaussian classifier, zero biases."""
    g = rngs.generator(seed)
    sizes = [input_dim, *hidden_sizes, feature_dim]
    layers = []
    for fan_in, fan_out in zip(sizes[:-1], sizes[1:]):
        w = g.normal(0.0, np.sqrt(2.0 / fan_in), size=(fan_out, fan_in))
        layers.append((w, np.zeros(fan_out)))
    phi = g.normal(0.0, 0.01, size=(num_classes, feature_dim))
    return ModelParams(tuple(layers), phi)


def replace_classifier(params: ModelParams, phi: Array) -> ModelParams:
    """Same extractor, different head (used to evaluate the retrained head)."""
    return ModelParams(params.layers, phi)


def forward_features(theta: Extractor, x: Array) -> Array:
    """z = f_theta(x) for a single input vector."""
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 1 or x.shape[0] != theta[0][0].shape[1]:
        raise ConfigError(
            f"input of length {x.shape} does not match extractor input dim "
            f"{theta[0][0].shape[1]}"
        )
    return features_batch(theta, x[None, :])[0]


def features_batch(theta: Extractor, x: Array) -> Array:
    """Features for a batch, rows are samples."""
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 2 or x.shape[1] != theta[0][0].shape[1]:
        raise ConfigError(
            f"batch of shape {x.shape} does not match extractor input dim "
            f"{theta[0][0].shape[1]}"
        )
    h = x
    for w, b in theta[:-1]:
        h = np.maximum(h @ w.T + b, 0.0)
    w, b = theta[-1]
    return h @ w.T + b


def classify(phi: Array, z: Array) -> Array:
    """Logits p = phi . z for one feature vector."""
    phi = np.asarray(phi, dtype=np.float64)
    z = np.asarray(z, dtype=np.float64)
    if phi.ndim != 2 or z.ndim != 1 or phi.shape[1] != z.shape[0]:
        raise ConfigError(f"classifier {phi.shape} incompatible with feature {z.shape}")
    return phi @ z


def softmax(p: Array) -> Array:
    """Max-shifted softmax of a logit vector."""
    p = np.asarray(p, dtype=np.float64)
    e = np.exp(p - np.max(p))
    return e / np.sum(e)


def softmax_rows(p: Array) -> Array:
    """Row-wise max-shifted softmax of a logit matrix."""
    p = np.asarray(p, dtype=np.float64)
    e = np.exp(p - np.max(p, axis=1, keepdims=True))
    return e / np.sum(e, axis=1, keepdims=True)


def cross_entropy(p: Array, y: int) -> float:
    """-log softmax(p)[y], computed as logsumexp(p) - p[y]."""
    p = np.asarray(p, dtype=np.float64)
    if not 0 <= y < p.shape[0]:
        raise ConfigError(f"label {y} out of range for {p.shape[0]} classes")
    m = np.max(p)
    return float(m + np.log(np.sum(np.exp(p - m))) - p[y])


def kl_divergence(q: Array, p: Array) -> float:
    """KL(q || p) with the 0 log 0 convention; p is clamped below at 1e-12."""
    q = np.asarray(q, dtype=np.float64)
    p = np.asarray(p, dtype=np.float64)
    if q.shape != p.shape or q.ndim != 1:
        raise ConfigError(f"distribution length mismatch: {q.shape} vs {p.shape}")
    if np.any(q < 0) or np.any(p < 0):
        raise ConfigError("negative entries in a probability vector")
    if abs(q.sum() - 1.0) > 1e-6 or abs(p.sum() - 1.0) > 1e-6:
        raise ConfigError("probability vectors must sum to 1 within 1e-6")
    mask = q > 0
    terms = q[mask] * np.log(q[mask] / np.maximum(p[mask], PROB_FLOOR))
    return max(float(np.sum(terms)), 0.0)


def local_loss(p: Array, q_teacher: Array, y: int, beta: float) -> float:
    """Client objective: cross-entropy plus beta-weighted KL(teacher || student)."""
    if beta < 0:
        raise ConfigError(f"beta must be >= 0, got {beta}")
    ce = cross_entropy(p, y)
    if beta == 0.0:
        return ce
    return ce + beta * kl_divergence(q_teacher, softmax(p))


def classifier_gradient(phi: Array, z: Array, y: int) -> Array:
    """Analytic d(cross_entropy)/d(phi) for one feature: (softmax(phi z) - e_y) z^T."""
    p = classify(phi, z)
    if not 0 <= y < p.shape[0]:
        raise ConfigError(f"label {y} out of range for {p.shape[0]} classes")
    r = softmax(p)
    r[y] -= 1.0
    return np.outer(r, np.asarray(z, dtype=np.float64))


def backward_local(
    params: ModelParams,
    x: Array,
    y: Array,
    teacher_q: Array | None,
    beta: float,
) -> Gradients:
    """Mean gradient of the local loss over a batch, for theta and phi.

    teacher_q holds one teacher distribution per row of x; it may be None
    when beta is 0.
    """
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.int64)
    if x.ndim != 2 or x.shape[0] == 0:
        raise ConfigError("batch must be a non-empty matrix of samples")
    if y.shape != (x.shape[0],):
        raise ConfigError("labels must align with batch rows")
    if beta < 0:
        raise ConfigError(f"beta must be >= 0, got {beta}")
    if beta > 0 and teacher_q is None:
        raise ConfigError("teacher distributions required when beta > 0")
    n = x.shape[0]
    theta = params.layers

    # Forward pass, keeping pre-activations for the ReLU masks.
    hs = [x]
    pre = []
    for w, b in theta[:-1]:
        a = hs[-1] @ w.T + b
        pre.append(a)
        hs.append(np.maximum(a, 0.0))
    w_last, b_last = theta[-1]
    z = hs[-1] @ w_last.T + b_last
    logits = z @ params.phi.T
    s = softmax_rows(logits)

    # d(mean loss)/d(logits): CE term plus beta * (student - teacher).
    g = s.copy()
    g[np.arange(n), y] -= 1.0
    if beta > 0:
        g += beta * (s - np.asarray(teacher_q, dtype=np.float64))
    g /= n

    d_phi = g.T @ z
    dz = g @ params.phi
    d_w_last = dz.T @ hs[-1]
    d_b_last = dz.sum(axis=0)
    layer_grads = [(d_w_last, d_b_last)]
    dh = dz @ w_last
    for i in range(len(theta) - 2, -1, -1):
        da = dh * (pre[i] > 0)
        w, _ = theta[i]
        layer_grads.append((da.T @ hs[i], da.sum(axis=0)))
        dh = da @ w
    layer_grads.reverse()
    return Gradients(tuple(layer_grads), d_phi)


def sgd_step(params: ModelParams, grads: Gradients, lr: float) -> ModelParams:
    """Elementwise params - lr * grads."""
    if lr < 0:
        raise ConfigError(f"learning rate must be >= 0, got {lr}")
    if len(grads.layers) != len(params.layers):
        raise ConfigError("gradient structure does not match parameters")
    new_layers = []
    for (w, b), (dw, db) in zip(params.layers, grads.layers):
        if w.shape != dw.shape or b.shape != db.shape:
            raise ConfigError("gradient shape does not match parameter shape")
        new_layers.append((w - lr * dw, b - lr * db))
    if params.phi.shape != grads.phi.shape:
        raise ConfigError("classifier gradient shape mismatch")
    return ModelParams(tuple(new_layers), params.phi - lr * grads.phi)
