"""Independent reference implementations used to certify the package.

Everything here is written from the mathematical definitions with plain
loops, deliberately not sharing code paths with the package under test.
"""

from __future__ import annotations

import math

import numpy as np


def finite_difference(f, x: np.ndarray, eps: float = 1e-6) -> np.ndarray:
    """Central finite differences of a scalar function over a flat copy of x."""
    x = np.array(x, dtype=np.float64)
    flat = x.reshape(-1)
    grad = np.zeros_like(flat)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + eps
        hi = f(x)
        flat[i] = orig - eps
        lo = f(x)
        flat[i] = orig
        grad[i] = (hi - lo) / (2 * eps)
    return grad.reshape(x.shape)


def rel_err(a: np.ndarray, b: np.ndarray) -> float:
    """Relative error with an absolute floor so near-zero entries compare sanely."""
    a = np.asarray(a, dtype=np.float64).reshape(-1)
    b = np.asarray(b, dtype=np.float64).reshape(-1)
    scale = max(np.max(np.abs(a)), np.max(np.abs(b)), 1e-8)
    return float(np.max(np.abs(a - b)) / scale)


def softmax_ref(p) -> list[float]:
    e = [math.exp(v) for v in p]
    s = sum(e)
    return [v / s for v in e]


def cross_entropy_ref(p, y: int) -> float:
    return -math.log(softmax_ref(p)[y])


def kl_ref(q, p) -> float:
    total = 0.0
    for qi, pi in zip(q, p):
        if qi > 0:
            total += qi * math.log(qi / pi)
    return total


def cosine_ref(a, b) -> float:
    na = math.sqrt(sum(v * v for v in a))
    nb = math.sqrt(sum(v * v for v in b))
    if na < 1e-12 or nb < 1e-12:
        return 0.0
    return sum(x * y for x, y in zip(a, b)) / (na * nb)


def grad_match_ref(g_v: np.ndarray, g_agg: np.ndarray) -> float:
    rows = g_v.shape[0]
    return sum(1.0 - cosine_ref(g_v[j], g_agg[j]) for j in range(rows)) / rows


def pcl_ref(features: np.ndarray, labels: np.ndarray, protos: np.ndarray, tau: float) -> float:
    """Contrastive loss written exactly as a double loop over features."""
    n = features.shape[0]
    total = 0.0
    for i in range(n):
        pos = math.exp(cosine_ref(features[i], protos[labels[i]]) / tau)
        den = 0.0
        for j in range(n):
            if j != i:
                den += math.exp(cosine_ref(features[i], features[j]) / tau)
        total += -math.log(pos / den)
    return total


def pcl_interclass_ref(
    features: np.ndarray, labels: np.ndarray, protos: np.ndarray, tau: float
) -> float:
    """Variant with the positive pair in the denominator and only other-class
    features as negatives."""
    n = features.shape[0]
    total = 0.0
    for i in range(n):
        pos = math.exp(cosine_ref(features[i], protos[labels[i]]) / tau)
        den = pos
        for j in range(n):
            if labels[j] != labels[i]:
                den += math.exp(cosine_ref(features[i], features[j]) / tau)
        total += -math.log(pos / den)
    return total


def classifier_gradient_ref(phi: np.ndarray, z: np.ndarray, y: int) -> np.ndarray:
    logits = [float(row @ z) for row in phi]
    s = softmax_ref(logits)
    grad = np.zeros_like(phi)
    for j in range(phi.shape[0]):
        coef = s[j] - (1.0 if j == y else 0.0)
        grad[j] = coef * z
    return grad


def mlp_forward_ref(layers, x: np.ndarray) -> np.ndarray:
    h = x
    for idx, (w, b) in enumerate(layers):
        h = w @ h + b
        if idx < len(layers) - 1:
            h = np.maximum(h, 0.0)
    return h


def local_loss_ref(layers, phi, x, y, q, beta) -> float:
    z = mlp_forward_ref(layers, x)
    logits = [float(row @ z) for row in phi]
    loss = cross_entropy_ref(logits, y)
    if beta > 0:
        loss += beta * kl_ref(q, softmax_ref(logits))
    return loss


def nearest_centroid_accuracy(
    train_x, train_y, test_x, test_y, num_classes: int
) -> float:
    centroids = np.stack(
        [train_x[train_y == c].mean(axis=0) for c in range(num_classes)]
    )
    hits = 0
    for x, y in zip(test_x, test_y):
        pred = int(np.argmin(np.linalg.norm(centroids - x, axis=1)))
        hits += pred == y
    return hits / len(test_y)
