"""Teacher embedding providers: class prototypes and per-sample vectors.

A teacher supplies unit-norm text embeddings for class names (built from a
prompt template) and unit-norm embeddings for individual samples.  Teacher
soft labels are the softmax of scaled cosine similarity between a sample
embedding and every class prototype.

Two providers are available: a seeded stub that fabricates a consistent
embedding geometry for self-contained runs, and a file provider that loads
vectors produced offline in the C2FL-EMB directory format.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import rngs
from .embfile import EmbeddingFile, read_embeddings
from .errors import ConfigError, FormatError

Array = np.ndarray

DEFAULT_PROMPT_TEMPLATE = "This is a {name}"
NORM_TOLERANCE = 1e-3


def render_prompt(template: str, name: str) -> str:
    if "{name}" not in template:
        raise ConfigError(f"prompt template must contain '{{name}}', got {template!r}")
    return template.replace("{name}", name)


def _unit(v: Array) -> Array:
    n = np.linalg.norm(v)
    if n == 0:
        raise ConfigError("cannot normalize a zero vector")
    return v / n


@dataclass(frozen=True)
class PrototypeTable:
    """Unit-norm class prototype per class, rows aligned with class index."""

    prototypes: Array

    def __post_init__(self):
        p = np.array(self.prototypes, dtype=np.float64)
        if p.ndim != 2:
            raise ConfigError(f"prototypes must be a matrix, got shape {p.shape}")
        norms = np.linalg.norm(p, axis=1)
        if np.any(np.abs(norms - 1.0) > NORM_TOLERANCE):
            raise ConfigError("prototypes must be unit norm")
        p.flags.writeable = False
        object.__setattr__(self, "prototypes", p)

    @property
    def num_classes(self) -> int:
        return self.prototypes.shape[0]

    @property
    def dim(self) -> int:
        return self.prototypes.shape[1]


def teacher_probs(prototypes: PrototypeTable, embedding: Array, scale: float) -> Array:
    """softmax(scale * cosine(embedding, prototype_c)) over classes."""
    if scale < 0:
        raise ConfigError(f"logit scale must be >= 0, got {scale}")
    e = np.asarray(embedding, dtype=np.float64)
    if e.shape != (prototypes.dim,):
        raise ConfigError(
            f"embedding shape {e.shape} does not match prototype dim {prototypes.dim}"
        )
    sims = prototypes.prototypes @ _unit(e)
    z = scale * sims
    ex = np.exp(z - np.max(z))
    return ex / ex.sum()


class StubTeacher:
    """Fabricated teacher with a stable per-class/per-sample geometry.

    Each class prototype is a normalized Gaussian draw keyed by the seed
    and a hash of the prompted class name, so renaming a class moves its
    prototype while every other class stays put.  A sample embedding is its
    class prototype plus sigma-scaled Gaussian noise keyed by the sample
    id, renormalized to unit length.
    """

    def __init__(
        self,
        class_names: tuple[str, ...],
        dim: int,
        seed: int,
        sigma: float,
        prompt_template: str = DEFAULT_PROMPT_TEMPLATE,
    ):
        if dim < 1:
            raise ConfigError(f"embedding dim must be >= 1, got {dim}")
        if sigma < 0:
            raise ConfigError(f"sigma must be >= 0, got {sigma}")
        self.dim = dim
        self.sigma = sigma
        self.seed = seed
        self.prompt_template = prompt_template
        protos = []
        for name in class_names:
            words = rngs.hash_words(render_prompt(prompt_template, name))
            g = rngs.generator(seed, rngs.TEACHER, 0, *words)
            protos.append(_unit(g.normal(size=dim)))
        self.prototypes = PrototypeTable(np.array(protos))

    def class_prototypes(self) -> PrototypeTable:
        return self.prototypes

    def sample_embedding(self, sample_id: int, label: int) -> Array:
        if not 0 <= label < self.prototypes.num_classes:
            raise ConfigError(f"label {label} out of range")
        g = rngs.generator(self.seed, rngs.TEACHER, 1, int(sample_id))
        noisy = self.prototypes.prototypes[label] + self.sigma * g.normal(size=self.dim)
        return _unit(noisy)

    def sample_embeddings(self, sample_ids: Array, labels: Array) -> Array:
        out = np.empty((len(sample_ids), self.dim))
        for i, (sid, lab) in enumerate(zip(sample_ids, labels)):
            out[i] = self.sample_embedding(int(sid), int(lab))
        return out


class FileTeacher:
    """Teacher backed by a C2FL-EMB directory produced offline.

    Class prototypes come from 'class:<name>' entries; sample vectors come
    from 'sample:<id>' entries.  Rows whose norm strays more than 1e-3 from
    unit length are renormalized with a warning; all other rows are used
    exactly as stored, preserving bit-equality with the file.
    """

    def __init__(self, path: str | Path, class_names: tuple[str, ...]):
        self._emb: EmbeddingFile = read_embeddings(path)
        self.dim = self._emb.dim
        self.prompt_template = self._emb.prompt_template
        protos = np.empty((len(class_names), self.dim))
        for c, name in enumerate(class_names):
            key = f"class:{name}"
            if key not in self._emb.entries:
                raise FormatError(f"embedding file lacks prototype {key!r}")
            protos[c] = self._fetch(key)
        self.prototypes = PrototypeTable(protos)

    def _fetch(self, key: str) -> Array:
        v = self._emb.row(key).astype(np.float64)
        n = np.linalg.norm(v)
        if n == 0:
            raise FormatError(f"embedding {key!r} is the zero vector")
        if abs(n - 1.0) > NORM_TOLERANCE:
            warnings.warn(
                f"embedding {key!r} has norm {n:.6f}; renormalizing",
                stacklevel=3,
            )
            return v / n
        return v

    def class_prototypes(self) -> PrototypeTable:
        return self.prototypes

    def sample_embedding(self, sample_id: int, label: int) -> Array:
        del label
        return self._fetch(f"sample:{sample_id}")

    def sample_embeddings(self, sample_ids: Array, labels: Array) -> Array:
        out = np.empty((len(sample_ids), self.dim))
        for i, (sid, lab) in enumerate(zip(sample_ids, labels)):
            out[i] = self.sample_embedding(int(sid), int(lab))
        return out
