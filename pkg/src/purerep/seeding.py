"""Child-seed derivation from one master seed.

Every consumer of randomness asks for a generator by a stable stream name.
The generator for ``(master, name)`` is ``PCG64(SeedSequence(master,
spawn_key=(crc32(name),)))``, so adding a new stream never shifts the draws
of existing ones and the mapping is reproducible across processes.
"""
from __future__ import annotations

import zlib

import numpy as np


def child_seed_sequence(master: int, name: str) -> np.random.SeedSequence:
    return np.random.SeedSequence(int(master), spawn_key=(zlib.crc32(name.encode()),))


def child_rng(master: int, name: str) -> np.random.Generator:
    return np.random.Generator(np.random.PCG64(child_seed_sequence(master, name)))


def run_seeds(master: int, count: int) -> list[int]:
    """Seeds of a multi-seed run: master, master+1, ..."""
    return [int(master) + i for i in range(count)]
