"""Labeled, splittable random streams.

Every stochastic component draws from its own counter-based (Philox) stream
derived from a run seed plus a sequence of labels, so results do not depend
on execution order across components or worker processes.
"""

from __future__ import annotations

import hashlib

import numpy as np

_WORD = 2**32


def _label_words(label: object) -> list[int]:
    digest = hashlib.sha256(repr(label).encode("utf-8")).digest()
    return [int.from_bytes(digest[i : i + 4], "little") for i in range(0, 16, 4)]


def _entropy(seed: int, labels: tuple[object, ...]) -> list[int]:
    words = [int(seed) % _WORD, (int(seed) // _WORD) % _WORD]
    for label in labels:
        words.extend(_label_words(label))
    return words


def stream(seed: int, *labels: object) -> np.random.Generator:
    """Return the Philox stream keyed by ``(seed, *labels)``."""
    return np.random.Generator(np.random.Philox(np.random.SeedSequence(_entropy(seed, labels))))


def child_seed(seed: int, *labels: object) -> int:
    """Derive a deterministic integer sub-seed from ``(seed, *labels)``."""
    ss = np.random.SeedSequence(_entropy(seed, labels))
    return int(ss.generate_state(2, np.uint32).astype(np.uint64)[0])
