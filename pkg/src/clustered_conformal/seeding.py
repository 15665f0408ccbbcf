"""Labelled random streams derived from a single 64-bit master seed."""

from __future__ import annotations

import zlib

import numpy as np


def _key(label) -> int:
    if isinstance(label, str):
        return zlib.crc32(label.encode())
    return int(label)


def derive_seed(master: int, *labels) -> np.random.SeedSequence:
    """Seed sequence for the stream named by `labels` under `master`.

    Labels may be strings or non-negative ints; the same (master, labels)
    always yields the same stream, and distinct labels give independent ones.
    """
    return np.random.SeedSequence(entropy=int(master) & (2**64 - 1),
                                  spawn_key=tuple(_key(x) for x in labels))


def derive_rng(master: int, *labels) -> np.random.Generator:
    return np.random.default_rng(derive_seed(master, *labels))


def derive_int(master: int, *labels) -> int:
    """A 63-bit integer seed for APIs that take plain ints."""
    return int(derive_seed(master, *labels).generate_state(1, dtype=np.uint64)[0] >> np.uint64(1))
