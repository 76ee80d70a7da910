"""Server round orchestration: selection, aggregation, feature synthesis,
and balanced classifier retraining.

Each round the server broadcasts the global model and the retrained head,
collects client updates, averages models by shard size and per-class
gradients uniformly over contributors, then optimizes a persistent bank of
federated features so their classifier gradients match the aggregated real
ones while staying close to their class prototype and away from the other
federated features.  The head is then retrained on the balanced bank.

Feature-synthesis gradients are analytic (derived below in code) and are
certified against central finite differences in the test suite.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import client as client_mod
from . import metrics as metrics_mod
from . import model, rngs
from .client import ClientUpdate
from .data import LabeledDataset
from .errors import ConfigError, DegenerateInputError
from .model import ModelParams
from .teacher import PrototypeTable

Array = np.ndarray

NORM_EPS = 1e-12
PCL_VARIANTS = ("literal", "interclass")
METHODS = ("fedavg", "clip2fl", "no_pcl", "no_kd")


@dataclass(frozen=True)
class FederatedFeatureBank:
    """C x m x d tensor of synthesized per-class features; persists across rounds."""

    features: Array

    def __post_init__(self):
        f = np.array(self.features, dtype=np.float64)
        if f.ndim != 3:
            raise ConfigError(f"bank must be C x m x d, got shape {f.shape}")
        if not np.all(np.isfinite(f)):
            raise ConfigError("bank features must be finite")
        f.flags.writeable = False
        object.__setattr__(self, "features", f)

    @property
    def num_classes(self) -> int:
        return self.features.shape[0]

    @property
    def per_class(self) -> int:
        return self.features.shape[1]

    @property
    def dim(self) -> int:
        return self.features.shape[2]

    def flat(self) -> tuple[Array, Array]:
        """(C*m, d) feature matrix plus the class label of each row."""
        c, m, d = self.features.shape
        labels = np.repeat(np.arange(c, dtype=np.int64), m)
        return self.features.reshape(c * m, d), labels


def init_bank(num_classes: int, per_class: int, dim: int, seed: int) -> FederatedFeatureBank:
    """Round-0 bank: small seeded Gaussian coordinates."""
    if per_class < 1 or dim < 1:
        raise ConfigError("bank needs per_class >= 1 and dim >= 1")
    g = rngs.generator(seed, rngs.BANK_INIT)
    return FederatedFeatureBank(0.1 * g.normal(size=(num_classes, per_class, dim)))


@dataclass(frozen=True)
class ServerState:
    """Everything that carries over between rounds."""

    global_params: ModelParams
    retrained_classifier: Array
    bank: FederatedFeatureBank
    round: int

    def __post_init__(self):
        phi_hat = np.array(self.retrained_classifier, dtype=np.float64)
        expect = (self.global_params.num_classes, self.global_params.feature_dim)
        if phi_hat.shape != expect:
            raise ConfigError(
                f"retrained classifier shape {phi_hat.shape}, expected {expect}"
            )
        if self.bank.num_classes != expect[0] or self.bank.dim != expect[1]:
            raise ConfigError("bank shape inconsistent with model")
        if self.round < 0:
            raise ConfigError("round must be >= 0")
        phi_hat.flags.writeable = False
        object.__setattr__(self, "retrained_classifier", phi_hat)


@dataclass(frozen=True)
class RoundConfig:
    """All per-round hyperparameters plus the method switch."""

    method: str = "clip2fl"
    client_fraction: float = 0.4
    epochs: int = 5
    batch_size: int = 32
    lr_local: float = 0.05
    momentum: float = 0.0
    beta: float = 3.0
    per_class_cap: int = 64
    logit_scale: float = 100.0
    feature_steps: int = 300
    feature_lr: float = 2.0
    eta_pcl: float = 1e-05
    tau: float = 1.0
    pcl_variant: str = "literal"
    retrain_steps: int = 300
    retrain_lr: float = 0.01
    retrain_batch: int | None = None

    def __post_init__(self):
        if self.method not in METHODS:
            raise ConfigError(f"unknown method {self.method!r}, expected one of {METHODS}")
        if not 0 < self.client_fraction <= 1:
            raise ConfigError(f"client_fraction must lie in (0, 1], got {self.client_fraction}")
        if self.tau <= 0:
            raise ConfigError(f"tau must be > 0, got {self.tau}")
        if self.eta_pcl < 0 or self.beta < 0:
            raise ConfigError("eta_pcl and beta must be >= 0")
        if self.feature_steps < 0 or self.retrain_steps < 0:
            raise ConfigError("step counts must be >= 0")
        if self.pcl_variant not in PCL_VARIANTS:
            raise ConfigError(
                f"unknown pcl_variant {self.pcl_variant!r}, expected one of {PCL_VARIANTS}"
            )


def select_clients(num_clients: int, fraction: float, round_index: int, seed: int) -> Array:
    """ceil(fraction * K) distinct client indices, seeded by (seed, round), sorted."""
    if not 0 < fraction <= 1:
        raise ConfigError(f"fraction must lie in (0, 1], got {fraction}")
    if num_clients < 1:
        raise ConfigError(f"num_clients must be >= 1, got {num_clients}")
    n_sel = math.ceil(fraction * num_clients)
    g = rngs.generator(seed, rngs.SELECTION, round_index)
    return np.sort(g.choice(num_clients, size=n_sel, replace=False)).astype(np.int64)


def aggregate_models(updates: list[ClientUpdate]) -> ModelParams:
    """Shard-size-weighted average of client parameters."""
    if not updates:
        raise ConfigError("cannot aggregate an empty update list")
    total = sum(u.num_samples for u in updates)
    weights = [u.num_samples / total for u in updates]
    first = updates[0].params
    layer_sums = [
        (np.zeros_like(w), np.zeros_like(b)) for w, b in first.layers
    ]
    phi_sum = np.zeros_like(first.phi)
    for wgt, u in zip(weights, updates):
        for i, (w, b) in enumerate(u.params.layers):
            layer_sums[i] = (layer_sums[i][0] + wgt * w, layer_sums[i][1] + wgt * b)
        phi_sum = phi_sum + wgt * u.params.phi
    return ModelParams(tuple(layer_sums), phi_sum)


def aggregate_gradients(per_client: list[dict[int, Array]]) -> dict[int, Array]:
    """Uniform mean per class over the clients that reported that class.

    Classes no selected client holds this round are absent from the result;
    stale values are never carried over.
    """
    contributors: dict[int, list[Array]] = {}
    shape = None
    for grads in per_client:
        for c, g in grads.items():
            if shape is None:
                shape = g.shape
            elif g.shape != shape:
                raise ConfigError(
                    f"class {c} gradient shape {g.shape} differs from {shape}"
                )
            contributors.setdefault(int(c), []).append(g)
    out = {}
    for c in sorted(contributors):
        mats = contributors[c]
        acc = np.zeros_like(mats[0])
        for m_ in mats:
            acc = acc + m_
        out[c] = acc / len(mats)
    return out


def federated_gradient(phi_hat: Array, bank: FederatedFeatureBank, c: int) -> Array:
    """Mean cross-entropy classifier gradient over class c's bank features."""
    phi_hat = np.asarray(phi_hat, dtype=np.float64)
    if not 0 <= c < bank.num_classes:
        raise ConfigError(f"class {c} out of range")
    v = bank.features[c]
    r = model.softmax_rows(v @ phi_hat.T)
    r[:, c] -= 1.0
    return r.T @ v / bank.per_class


def grad_match_loss(g_v: Array, g_agg: Array) -> float:
    """Mean over classifier rows of (1 - cosine); near-zero rows count 1."""
    g_v = np.asarray(g_v, dtype=np.float64)
    g_agg = np.asarray(g_agg, dtype=np.float64)
    if g_v.shape != g_agg.shape or g_v.ndim != 2:
        raise ConfigError(f"gradient shapes differ: {g_v.shape} vs {g_agg.shape}")
    nv = np.linalg.norm(g_v, axis=1)
    na = np.linalg.norm(g_agg, axis=1)
    ok = (nv >= NORM_EPS) & (na >= NORM_EPS)
    cos = np.zeros(g_v.shape[0])
    cos[ok] = np.sum(g_v[ok] * g_agg[ok], axis=1) / (nv[ok] * na[ok])
    return float(np.mean(1.0 - cos))


def _unit_rows(v: Array, what: str) -> tuple[Array, Array]:
    norms = np.linalg.norm(v, axis=1)
    if np.any(norms < NORM_EPS):
        raise DegenerateInputError(f"zero-norm vector in {what}")
    return v / norms[:, None], norms


def _pcl_terms(
    bank: FederatedFeatureBank,
    prototypes: PrototypeTable,
    tau: float,
    variant: str,
) -> tuple[float, Array]:
    """Contrastive loss over the whole bank plus its gradient w.r.t. features.

    Each bank feature is pulled toward its class prototype (numerator) and
    pushed from other bank features (denominator).  The default "literal"
    variant sums the denominator over every other feature; "interclass"
    restricts it to other-class features and includes the positive pair.
    Cosine similarities throughout; rows are stabilized by their max before
    exponentiation.
    """
    if prototypes.num_classes != bank.num_classes or prototypes.dim != bank.dim:
        raise ConfigError(
            f"prototypes {prototypes.prototypes.shape} do not match bank "
            f"({bank.num_classes} classes, dim {bank.dim})"
        )
    v, labels = bank.flat()
    n = v.shape[0]
    if n < 2:
        raise ConfigError("contrastive loss needs at least two bank features")
    u, norms = _unit_rows(v, "feature bank")
    f_hat, _ = _unit_rows(prototypes.prototypes, "prototypes")

    s = u @ u.T
    pos = np.sum(u * f_hat[labels], axis=1)
    if variant == "literal":
        mask = ~np.eye(n, dtype=bool)
        include_pos = False
    else:
        mask = labels[:, None] != labels[None, :]
        include_pos = True

    logits = s / tau
    pos_logit = pos / tau
    neg_inf = -np.inf
    masked = np.where(mask, logits, neg_inf)
    row_max = np.max(masked, axis=1)
    if include_pos:
        row_max = np.maximum(row_max, pos_logit)
    if np.any(~np.isfinite(row_max)):
        raise ConfigError("a bank feature has no negatives under this variant")
    e = np.where(mask, np.exp(logits - row_max[:, None]), 0.0)
    a = e.sum(axis=1)
    kappa = np.zeros(n)
    if include_pos:
        pe = np.exp(pos_logit - row_max)
        a = a + pe
        kappa = pe / a
    log_den = row_max + np.log(a)
    loss = float(np.sum(log_den - pos_logit))

    # Gradient w.r.t. v.  With W the row softmax weights over the denominator
    # and kappa the positive pair's weight (0 for the literal variant):
    #   dL/du_k = (1/tau) [ ((W + W^T) u)_k + (kappa_k - 1) f_hat_{c(k)} ]
    # then through u = v/|v|:
    #   dL/dv_k = (dL/du_k - (u_k . dL/du_k) u_k) / |v_k|
    w = e / a[:, None]
    m2 = w + w.T
    grad_u = m2 @ u + (kappa - 1.0)[:, None] * f_hat[labels]
    proj = np.sum(grad_u * u, axis=1)
    grad_v = (grad_u - proj[:, None] * u) / (tau * norms[:, None])
    return loss, grad_v.reshape(bank.features.shape)


def pcl_loss(
    bank: FederatedFeatureBank,
    prototypes: PrototypeTable,
    tau: float,
    variant: str = "literal",
) -> float:
    if tau <= 0:
        raise ConfigError(f"tau must be > 0, got {tau}")
    if variant not in PCL_VARIANTS:
        raise ConfigError(f"unknown pcl_variant {variant!r}")
    loss, _ = _pcl_terms(bank, prototypes, tau, variant)
    return loss


def grad_match_class(
    v: Array, c: int, phi_hat: Array, g_agg: Array
) -> tuple[float, Array]:
    """Matching loss for class c and its gradient w.r.t. v (m, d).

    The synthetic gradient is G = R^T v / m with R = softmax(v phi^T) minus
    one in column c, and the loss is the mean over classifier rows of
    (1 - cosine(G_row, g_agg_row)).  Rows where either norm is near zero
    contribute the constant 1 (zero gradient).
    """
    v = np.asarray(v, dtype=np.float64)
    phi_hat = np.asarray(phi_hat, dtype=np.float64)
    g_agg = np.asarray(g_agg, dtype=np.float64)
    m = v.shape[0]
    num_classes = phi_hat.shape[0]
    if g_agg.shape != phi_hat.shape:
        raise ConfigError("aggregated gradient shape must match classifier shape")
    s = model.softmax_rows(v @ phi_hat.T)
    r = s.copy()
    r[:, c] -= 1.0
    g = r.T @ v / m

    ng = np.linalg.norm(g, axis=1)
    na = np.linalg.norm(g_agg, axis=1)
    ok = (ng >= NORM_EPS) & (na >= NORM_EPS)
    cos = np.zeros(num_classes)
    cos[ok] = np.sum(g[ok] * g_agg[ok], axis=1) / (ng[ok] * na[ok])
    loss = float(np.mean(1.0 - cos))

    # dL/dG rows: -(a_hat - cos * g_hat) / (C |G_row|) on valid rows, 0 else.
    u = np.zeros_like(g)
    if np.any(ok):
        g_hat = g[ok] / ng[ok][:, None]
        a_hat = g_agg[ok] / na[ok][:, None]
        u[ok] = -(a_hat - cos[ok][:, None] * g_hat) / (num_classes * ng[ok][:, None])

    # Two paths into v: the explicit product G = R^T v / m, and the softmax
    # inside R.  t = v u^T / m is dL/dR; softmax backprop turns it into the
    # logit gradient, which maps back through phi.
    t = v @ u.T / m
    ts = t * s
    dz = ts - ts.sum(axis=1, keepdims=True) * s
    dv = r @ u / m + dz @ phi_hat
    return loss, dv


def synthesis_loss_and_grad(
    bank: FederatedFeatureBank,
    g_agg: dict[int, Array],
    phi_hat: Array,
    prototypes: PrototypeTable,
    eta_pcl: float,
    tau: float,
    variant: str,
) -> tuple[float, float, Array]:
    """(loss_grad, loss_pcl, d(total)/d(bank)) for the current bank.

    The matching term averages over the classes present in g_agg; the
    contrastive term always covers the whole bank.  Classes absent from
    g_agg receive only the contrastive signal.
    """
    grad = np.zeros_like(bank.features)
    loss_grad = 0.0
    present = sorted(g_agg)
    if present:
        for c in present:
            lc, dv = grad_match_class(bank.features[c], c, phi_hat, g_agg[c])
            loss_grad += lc
            grad[c] += dv / len(present)
        loss_grad /= len(present)
    loss_pcl, pcl_grad = _pcl_terms(bank, prototypes, tau, variant)
    grad += eta_pcl * pcl_grad
    return loss_grad, loss_pcl, grad


def optimize_features(
    bank: FederatedFeatureBank,
    g_agg: dict[int, Array],
    phi_hat: Array,
    prototypes: PrototypeTable,
    cfg: RoundConfig,
) -> tuple[FederatedFeatureBank, float, float]:
    """Plain gradient descent on matching + eta * contrastive.

    Returns the new bank and the two loss terms evaluated at the final
    features.
    """
    if not g_agg:
        raise ConfigError("no aggregated gradients; cannot synthesize features")
    v = bank.features.copy()
    for _ in range(cfg.feature_steps):
        _, _, g = synthesis_loss_and_grad(
            FederatedFeatureBank(v), g_agg, phi_hat, prototypes,
            cfg.eta_pcl, cfg.tau, cfg.pcl_variant,
        )
        v = v - cfg.feature_lr * g
    out = FederatedFeatureBank(v)
    loss_grad, loss_pcl, _ = synthesis_loss_and_grad(
        out, g_agg, phi_hat, prototypes, cfg.eta_pcl, cfg.tau, cfg.pcl_variant
    )
    return out, loss_grad, loss_pcl


def retrain_classifier(
    phi_init: Array,
    bank: FederatedFeatureBank,
    steps: int,
    lr: float,
    seed: int,
    batch_size: int | None = None,
) -> Array:
    """SGD on cross-entropy over the balanced bank, extractor untouched.

    batch_size None means full-batch steps (no randomness consumed).
    """
    if steps < 0:
        raise ConfigError(f"steps must be >= 0, got {steps}")
    phi = np.array(phi_init, dtype=np.float64)
    x, y = bank.flat()
    n = x.shape[0]
    g = rngs.generator(seed, rngs.RETRAIN) if batch_size else None
    for _ in range(steps):
        if batch_size and batch_size < n:
            idx = np.sort(g.choice(n, size=batch_size, replace=False))
            xb, yb = x[idx], y[idx]
        else:
            xb, yb = x, y
        r = model.softmax_rows(xb @ phi.T)
        r[np.arange(xb.shape[0]), yb] -= 1.0
        phi = phi - lr * (r.T @ xb / xb.shape[0])
    return phi


@dataclass(frozen=True)
class EvalContext:
    """Data the server evaluates against at the end of each round."""

    test: LabeledDataset
    train: LabeledDataset
    groups: dict[str, Array]
    probe: LabeledDataset | None = None


def run_round(
    state: ServerState,
    shards: tuple[LabeledDataset, ...],
    teacher,
    cfg: RoundConfig,
    master_seed: int,
    eval_ctx: EvalContext,
    client_map=map,
) -> tuple[ServerState, metrics_mod.RoundMetrics]:
    """One communication round; returns the next state and its metrics.

    client_map runs the per-client closures; any order-preserving map
    (including a thread pool's) gives identical results because each
    client's work is a pure function of the broadcast state and its seed.
    """
    t = state.round
    selected = select_clients(len(shards), cfg.client_fraction, t, master_seed)

    def one_client(k: int) -> ClientUpdate:
        return client_mod.run_client_round(
            state.global_params,
            state.retrained_classifier,
            shards[k],
            teacher,
            cfg.logit_scale,
            cfg.epochs,
            cfg.batch_size,
            cfg.lr_local,
            cfg.beta,
            cfg.per_class_cap,
            rngs.derive_seed(master_seed, rngs.CLIENT, t, int(k)),
            cfg.momentum,
        )

    updates = list(client_map(one_client, [int(k) for k in selected]))
    new_global = aggregate_models(updates)

    cka_mean = None
    if eval_ctx.probe is not None:
        feats = [
            model.features_batch(u.params.layers, eval_ctx.probe.samples)
            for u in updates
        ]
        cka_mean = metrics_mod.mean_pairwise_cka(feats)

    if cfg.method == "fedavg":
        eval_params = new_global
        new_state = ServerState(new_global, new_global.phi, state.bank, t + 1)
        accs = metrics_mod.groupwise_accuracy(eval_params, eval_ctx.test, eval_ctx.groups)
        return new_state, metrics_mod.RoundMetrics(
            round=t,
            acc_all=accs["all"],
            acc_many=accs["many"],
            acc_medium=accs["medium"],
            acc_few=accs["few"],
            grad_dissim={},
            feat_dissim={},
            loss_grad=None,
            loss_pcl=None,
            cka_mean=cka_mean,
        )

    phi_hat = state.retrained_classifier
    g_agg = aggregate_gradients([u.class_gradients for u in updates])
    prototypes = teacher.class_prototypes()
    new_bank, loss_grad, loss_pcl = optimize_features(
        state.bank, g_agg, phi_hat, prototypes, cfg
    )
    new_phi_hat = retrain_classifier(
        phi_hat,
        new_bank,
        cfg.retrain_steps,
        cfg.retrain_lr,
        rngs.derive_seed(master_seed, rngs.RETRAIN, t),
        cfg.retrain_batch,
    )
    new_state = ServerState(new_global, new_phi_hat, new_bank, t + 1)

    eval_params = model.replace_classifier(new_global, new_phi_hat)
    accs = metrics_mod.groupwise_accuracy(eval_params, eval_ctx.test, eval_ctx.groups)
    g_v = {c: federated_gradient(phi_hat, new_bank, c) for c in sorted(g_agg)}
    grad_dissim = metrics_mod.gradient_dissimilarity(g_v, g_agg, eval_ctx.groups)
    real_means = metrics_mod.class_mean_features(new_global.layers, eval_ctx.train)
    feat_dissim = metrics_mod.feature_dissimilarity(
        new_bank.features, real_means, eval_ctx.groups
    )
    return new_state, metrics_mod.RoundMetrics(
        round=t,
        acc_all=accs["all"],
        acc_many=accs["many"],
        acc_medium=accs["medium"],
        acc_few=accs["few"],
        grad_dissim=grad_dissim,
        feat_dissim=feat_dissim,
        loss_grad=loss_grad,
        loss_pcl=loss_pcl,
        cka_mean=cka_mean,
    )
