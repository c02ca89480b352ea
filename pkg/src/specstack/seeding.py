"""Hierarchical seeds: every random unit derives its stream from the master seed."""

from __future__ import annotations

import numpy as np


def derive_seed(master: int, *keys: int) -> int:
    """A 32-bit seed that depends only on ``master`` and the integer ``keys``."""
    ss = np.random.SeedSequence(int(master), spawn_key=tuple(int(k) for k in keys))
    return int(ss.generate_state(1)[0])


def derive_rng(master: int, *keys: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence(int(master), spawn_key=tuple(int(k) for k in keys)))
