"""Deterministic seed derivation.

Every random decision in a run flows from one master seed through
``numpy.random.SeedSequence`` spawn keys, so any component (the partition,
the bank init, one client's local pass in one round) can be reproduced in
isolation.  The generator algorithm is pinned to PCG64; results are
reproducible across platforms for a fixed numpy major version.

Stream tags used by the experiment runner (first spawn-key entry):

    DATASET     blob generation
    SUBSAMPLE   long-tail subsampling
    PARTITION   Dirichlet split across clients
    TEACHER     stub prototypes / sample embeddings
    MODEL_INIT  global model initialization
    BANK_INIT   federated feature bank initialization
    SELECTION   per-round client selection
    CLIENT      per-round, per-client work (local SGD, gradient resampling)
    RETRAIN     per-round classifier retraining batches
    PROBE       shared probe batch for representation-similarity metrics
"""

from __future__ import annotations

import hashlib

import numpy as np

(
    DATASET,
    SUBSAMPLE,
    PARTITION,
    TEACHER,
    MODEL_INIT,
    BANK_INIT,
    SELECTION,
    CLIENT,
    RETRAIN,
    PROBE,
) = range(10)

_WORD = 2**32


def seed_sequence(seed: int, *path: int) -> np.random.SeedSequence:
    """SeedSequence for the stream identified by (seed, path).

    Path entries must be non-negative and below 2**32.
    """
    key = tuple(int(p) for p in path)
    for p in key:
        if p < 0 or p >= _WORD:
            raise ValueError(f"spawn-key entry out of range: {p}")
    return np.random.SeedSequence(entropy=int(seed), spawn_key=key)


def generator(seed: int, *path: int) -> np.random.Generator:
    """PCG64 generator for the stream identified by (seed, path)."""
    return np.random.Generator(np.random.PCG64(seed_sequence(seed, *path)))


def derive_seed(seed: int, *path: int) -> int:
    """Fold a stream into a plain integer seed for APIs that take one."""
    return int(seed_sequence(seed, *path).generate_state(1, np.uint64)[0])


def hash_words(text: str) -> tuple[int, int]:
    """Two 32-bit words derived from a string, for use as spawn-key entries."""
    digest = hashlib.sha256(text.encode("utf-8")).digest()
    a = int.from_bytes(digest[:4], "little")
    b = int.from_bytes(digest[4:8], "little")
    return a, b
