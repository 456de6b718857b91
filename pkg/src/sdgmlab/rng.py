"""Seed management.

One master seed fans out to named sub-streams (init, sampling, dropout,
shuffling, ...) so adding or removing one consumer never perturbs the
draws seen by another.
"""

from __future__ import annotations

import hashlib

import numpy as np


def _name_words(name: str) -> list[int]:
    digest = hashlib.sha256(name.encode("utf-8")).digest()
    return [int.from_bytes(digest[i : i + 4], "little") for i in range(0, 16, 4)]


class RngHub:
    """Deterministic registry of named random streams under one master seed."""

    def __init__(self, master_seed: int):
        if not isinstance(master_seed, (int, np.integer)):
            raise TypeError(f"master seed must be an int, got {type(master_seed).__name__}")
        self.master_seed = int(master_seed)

    def stream(self, name: str) -> np.random.Generator:
        """Fresh generator for `name`; same (seed, name) always yields the same stream."""
        seq = np.random.SeedSequence([self.master_seed & 0xFFFFFFFF, *_name_words(name)])
        return np.random.default_rng(seq)

    def child(self, name: str, index: int) -> np.random.Generator:
        """Indexed sub-stream, e.g. one per epoch or per seed-replicate."""
        return self.stream(f"{name}/{index}")
