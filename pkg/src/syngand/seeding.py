"""Labelled, order-independent RNG streams derived from one master seed."""
from __future__ import annotations

import zlib

import numpy as np


def _label_int(label) -> int:
    if isinstance(label, (int, np.integer)):
        return int(label)
    return zlib.crc32(str(label).encode("utf-8"))


def derive_rng(seed: int, *labels) -> np.random.Generator:
    """Stream for ``(seed, *labels)``; adding a new label never perturbs others."""
    entropy = [int(seed)] + [_label_int(x) for x in labels]
    return np.random.default_rng(np.random.SeedSequence(entropy))


def derive_seed(seed: int, *labels) -> int:
    return int(derive_rng(seed, *labels).integers(2 ** 63 - 1))
