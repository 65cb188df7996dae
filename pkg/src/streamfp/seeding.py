"""Deterministic named RNG sub-streams derived from a single master seed.

Every random consumer in the engine gets its own labeled stream, so adding
a new consumer never perturbs the draws of existing ones.
"""

import hashlib

import numpy as np


def _label_key(label: str) -> int:
    digest = hashlib.sha256(label.encode("utf-8")).digest()
    return int.from_bytes(digest[:8], "little")


def substream(master_seed: int, label: str) -> np.random.Generator:
    """Return an independent generator for ``label`` under ``master_seed``."""
    seq = np.random.SeedSequence([int(master_seed), _label_key(label)])
    return np.random.default_rng(seq)


def substream_indexed(master_seed: int, label: str, index: int) -> np.random.Generator:
    """Like :func:`substream` but with an extra integer coordinate.

    Used for per-sample / per-trial determinism (e.g. synthetic embeddings
    keyed by (task, sample index)).
    """
    seq = np.random.SeedSequence([int(master_seed), _label_key(label), int(index)])
    return np.random.default_rng(seq)
