"""Evaluation instrumentation: accuracy by class group, representation
similarity, and the dissimilarity curves used to monitor feature synthesis.

All functions are pure; the same inputs always give the same values.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import model
from .data import LabeledDataset
from .errors import ConfigError, DegenerateInputError
from .model import ModelParams

Array = np.ndarray

NORM_EPS = 1e-12
GROUP_NAMES = ("many", "medium", "few")


def top1_accuracy(params: ModelParams, dataset: LabeledDataset) -> float:
    """Fraction of samples whose highest logit (lowest index on ties) is the label."""
    if len(dataset) == 0:
        raise ConfigError("cannot evaluate on an empty dataset")
    z = model.features_batch(params.layers, dataset.samples)
    pred = np.argmax(z @ params.phi.T, axis=1)
    return float(np.mean(pred == dataset.labels))


def groupwise_accuracy(
    params: ModelParams, dataset: LabeledDataset, groups: dict[str, Array]
) -> dict[str, float | None]:
    """Accuracy overall and restricted to each class group.

    A group with no test samples is reported as None rather than 0.  Every
    class present in the dataset must belong to some group.
    """
    if len(dataset) == 0:
        raise ConfigError("cannot evaluate on an empty dataset")
    covered = set()
    for name in GROUP_NAMES:
        covered.update(int(c) for c in groups.get(name, ()))
    present = set(int(c) for c in np.unique(dataset.labels))
    missing = present - covered
    if missing:
        raise ConfigError(f"classes {sorted(missing)} belong to no group")
    z = model.features_batch(params.layers, dataset.samples)
    pred = np.argmax(z @ params.phi.T, axis=1)
    hit = pred == dataset.labels
    out: dict[str, float | None] = {"all": float(np.mean(hit))}
    for name in GROUP_NAMES:
        member = np.isin(dataset.labels, np.asarray(groups.get(name, ()), dtype=np.int64))
        out[name] = float(np.mean(hit[member])) if np.any(member) else None
    return out


def linear_cka(x: Array, y: Array) -> float:
    """Linear centered kernel alignment between two feature matrices.

    Rows are samples; columns are (possibly different numbers of) features.
    1 means identical up to rotation/scale/offset, 0 means no alignment.
    """
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if x.ndim != 2 or y.ndim != 2 or x.shape[0] != y.shape[0]:
        raise ConfigError(f"feature matrices must share rows: {x.shape} vs {y.shape}")
    if x.shape[0] < 2:
        raise ConfigError("need at least two samples")
    xc = x - x.mean(axis=0)
    yc = y - y.mean(axis=0)
    xx = np.linalg.norm(xc.T @ xc)
    yy = np.linalg.norm(yc.T @ yc)
    if xx < NORM_EPS or yy < NORM_EPS:
        raise DegenerateInputError("zero-variance features in similarity computation")
    return float(np.linalg.norm(xc.T @ yc) ** 2 / (xx * yy))


def mean_pairwise_cka(feature_sets: list[Array]) -> float | None:
    """Mean linear CKA over all distinct pairs; degenerate pairs are skipped."""
    vals = []
    for i in range(len(feature_sets)):
        for j in range(i + 1, len(feature_sets)):
            try:
                vals.append(linear_cka(feature_sets[i], feature_sets[j]))
            except DegenerateInputError:
                continue
    return float(np.mean(vals)) if vals else None


def class_mean_features(theta, dataset: LabeledDataset) -> Array:
    """Per-class mean extractor output; classes without samples get zero rows."""
    z = model.features_batch(theta, dataset.samples)
    out = np.zeros((dataset.num_classes, z.shape[1]))
    for c in range(dataset.num_classes):
        idx = np.where(dataset.labels == c)[0]
        if idx.size:
            out[c] = z[idx].mean(axis=0)
    return out


def _row_dissim(vectors: Array, target: Array) -> float:
    """Mean over rows of (1 - cosine(row, target)); near-zero norms count 1."""
    nv = np.linalg.norm(vectors, axis=1)
    nt = np.linalg.norm(target)
    cos = np.zeros(vectors.shape[0])
    if nt >= NORM_EPS:
        ok = nv >= NORM_EPS
        cos[ok] = vectors[ok] @ target / (nv[ok] * nt)
    return float(np.mean(1.0 - cos))


def _group_average(per_class: dict[int, float], groups: dict[str, Array]) -> dict[str, float]:
    """Average per-class values inside each group; empty groups are omitted."""
    out = {}
    for name in GROUP_NAMES:
        members = [per_class[int(c)] for c in groups.get(name, ()) if int(c) in per_class]
        if members:
            out[name] = float(np.mean(members))
    return out


def feature_dissimilarity(
    bank_features: Array, real_means: Array, groups: dict[str, Array]
) -> dict[str, float]:
    """Cosine distance of each class's synthesized features from its real mean,
    averaged per class and then within each group."""
    bank_features = np.asarray(bank_features, dtype=np.float64)
    real_means = np.asarray(real_means, dtype=np.float64)
    if bank_features.ndim != 3 or real_means.shape != (
        bank_features.shape[0],
        bank_features.shape[2],
    ):
        raise ConfigError(
            f"bank {bank_features.shape} and means {real_means.shape} are inconsistent"
        )
    per_class = {
        c: _row_dissim(bank_features[c], real_means[c])
        for c in range(bank_features.shape[0])
    }
    return _group_average(per_class, groups)


def gradient_dissimilarity(
    g_v: dict[int, Array], g_agg: dict[int, Array], groups: dict[str, Array]
) -> dict[str, float]:
    """Per-class matching dissimilarity between synthetic and aggregated real
    gradients, averaged within each group.  The two maps must share keys."""
    from .server import grad_match_loss

    if set(g_v) != set(g_agg):
        raise ConfigError(
            f"class keys differ: {sorted(g_v)} vs {sorted(g_agg)}"
        )
    per_class = {int(c): grad_match_loss(g_v[c], g_agg[c]) for c in g_v}
    return _group_average(per_class, groups)


@dataclass(frozen=True)
class RoundMetrics:
    """One round's evaluation snapshot, serializable as a JSON object."""

    round: int
    acc_all: float
    acc_many: float | None
    acc_medium: float | None
    acc_few: float | None
    grad_dissim: dict[str, float]
    feat_dissim: dict[str, float]
    loss_grad: float | None
    loss_pcl: float | None
    cka_mean: float | None = None

    def __post_init__(self):
        for name in ("acc_all", "acc_many", "acc_medium", "acc_few"):
            v = getattr(self, name)
            if v is not None and not 0.0 <= v <= 1.0:
                raise ConfigError(f"{name} out of [0, 1]: {v}")
        for src in (self.grad_dissim, self.feat_dissim):
            for k, v in src.items():
                if not 0.0 <= v <= 2.0:
                    raise ConfigError(f"dissimilarity {k} out of [0, 2]: {v}")

    def to_json_dict(self) -> dict:
        out = {
            "round": self.round,
            "acc_all": self.acc_all,
            "acc_many": self.acc_many,
            "acc_medium": self.acc_medium,
            "acc_few": self.acc_few,
            "grad_dissim": dict(self.grad_dissim),
            "feat_dissim": dict(self.feat_dissim),
            "loss_grad": self.loss_grad,
            "loss_pcl": self.loss_pcl,
        }
        if self.cka_mean is not None:
            out["cka_mean"] = self.cka_mean
        return out
