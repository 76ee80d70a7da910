"""One client's round of work: distillation training and class gradients.

A selected client trains the broadcast model on its local shard with a
cross-entropy plus teacher-KL objective, then reports the mean per-class
gradient of the server's retrained classifier over its post-update
features.  Only these class means ever leave the client; individual sample
gradients are averaged away before anything is returned.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import model, rngs
from .data import LabeledDataset
from .errors import ConfigError
from .model import Gradients, ModelParams
from .teacher import teacher_probs

Array = np.ndarray


@dataclass(frozen=True)
class ClientUpdate:
    """What a client sends back: trained params, averaged class gradients,
    shard size, and which classes it holds."""

    params: ModelParams
    class_gradients: dict[int, Array]
    num_samples: int
    classes_present: frozenset[int]

    def __post_init__(self):
        if self.num_samples < 1:
            raise ConfigError("client update must cover at least one sample")
        if not set(self.class_gradients) <= self.classes_present:
            raise ConfigError("gradient reported for a class the client lacks")
        shape = (self.params.num_classes, self.params.feature_dim)
        for c, g in self.class_gradients.items():
            if g.shape != shape:
                raise ConfigError(f"class {c} gradient has shape {g.shape}, want {shape}")
            if not np.all(np.isfinite(g)):
                raise ConfigError(f"class {c} gradient is not finite")


def soft_labels(teacher, data: LabeledDataset, scale: float) -> Array:
    """Teacher distribution per sample row, fetched once per round."""
    protos = teacher.class_prototypes()
    emb = teacher.sample_embeddings(data.ids, data.labels)
    out = np.empty((len(data), protos.num_classes))
    for i in range(len(data)):
        out[i] = teacher_probs(protos, emb[i], scale)
    return out


def local_train(
    global_params: ModelParams,
    data: LabeledDataset,
    teacher_q: Array | None,
    epochs: int,
    batch_size: int,
    lr: float,
    beta: float,
    seed: int,
    momentum: float = 0.0,
) -> ModelParams:
    """Seeded-shuffled mini-batch SGD on the distillation objective.

    teacher_q rows align with data rows; it may be None when beta is 0.
    With momentum 0 the velocity update is bit-identical to plain SGD.
    """
    if len(data) == 0:
        raise ConfigError("cannot train on an empty shard")
    if epochs < 1:
        raise ConfigError(f"epochs must be >= 1, got {epochs}")
    if batch_size < 1:
        raise ConfigError(f"batch_size must be >= 1, got {batch_size}")
    if not 0.0 <= momentum < 1.0:
        raise ConfigError(f"momentum must lie in [0, 1), got {momentum}")
    if beta > 0:
        if teacher_q is None:
            raise ConfigError("teacher distributions required when beta > 0")
        if teacher_q.shape != (len(data), global_params.num_classes):
            raise ConfigError("teacher distributions must align with shard rows")

    g = rngs.generator(seed)
    params = global_params
    vel_layers = [
        (np.zeros_like(w), np.zeros_like(b)) for w, b in global_params.layers
    ]
    vel_phi = np.zeros_like(global_params.phi)
    n = len(data)
    for _ in range(epochs):
        perm = g.permutation(n)
        for start in range(0, n, batch_size):
            idx = perm[start : start + batch_size]
            q = teacher_q[idx] if beta > 0 else None
            grads = model.backward_local(
                params, data.samples[idx], data.labels[idx], q, beta
            )
            vel_layers = [
                (momentum * vw + dw, momentum * vb + db)
                for (vw, vb), (dw, db) in zip(vel_layers, grads.layers)
            ]
            vel_phi = momentum * vel_phi + grads.phi
            params = model.sgd_step(
                params, Gradients(tuple(vel_layers), vel_phi), lr
            )
    return params


def compute_class_gradients(
    theta: model.Extractor,
    phi_hat: Array,
    data: LabeledDataset,
    per_class_cap: int,
    seed: int,
) -> dict[int, Array]:
    """Mean retrained-classifier gradient per locally present class.

    For each class the client holds, up to per_class_cap members are drawn
    without replacement (seeded, then index-sorted) and the cross-entropy
    gradient w.r.t. phi_hat is averaged over their features.  Only these
    means are returned; the average is irreversible for two or more
    samples.
    """
    if len(data) == 0:
        raise ConfigError("cannot compute gradients on an empty shard")
    if per_class_cap < 1:
        raise ConfigError(f"per_class_cap must be >= 1, got {per_class_cap}")
    phi_hat = np.asarray(phi_hat, dtype=np.float64)
    g = rngs.generator(seed)
    out: dict[int, Array] = {}
    for c in range(phi_hat.shape[0]):
        idx = np.where(data.labels == c)[0]
        if idx.size == 0:
            continue
        if idx.size > per_class_cap:
            idx = np.sort(g.choice(idx, size=per_class_cap, replace=False))
        z = model.features_batch(theta, data.samples[idx])
        r = model.softmax_rows(z @ phi_hat.T)
        r[:, c] -= 1.0
        out[c] = r.T @ z / idx.size
    return out


def run_client_round(
    global_params: ModelParams,
    phi_hat: Array,
    shard: LabeledDataset,
    teacher,
    logit_scale: float,
    epochs: int,
    batch_size: int,
    lr: float,
    beta: float,
    per_class_cap: int,
    seed: int,
    momentum: float = 0.0,
) -> ClientUpdate:
    """Full client round: train locally, then report averaged class gradients
    computed with the post-update extractor."""
    teacher_q = soft_labels(teacher, shard, logit_scale) if beta > 0 else None
    trained = local_train(
        global_params,
        shard,
        teacher_q,
        epochs,
        batch_size,
        lr,
        beta,
        rngs.derive_seed(seed, 0),
        momentum,
    )
    grads = compute_class_gradients(
        trained.layers,
        phi_hat,
        shard,
        per_class_cap,
        rngs.derive_seed(seed, 1),
    )
    present = frozenset(int(c) for c in np.unique(shard.labels))
    return ClientUpdate(trained, grads, len(shard), present)
