"""Deterministic seed derivation.

Every stochastic component takes an explicit integer seed. Child seeds are
derived by folding context tags (track index, step number, role) into a
SeedSequence, so independent streams never alias and runs are reproducible
bit for bit.
"""

from __future__ import annotations

import numpy as np


def derive_seed(*parts: int) -> int:
    """Collapse a root seed plus integer context tags into one child seed."""
    ss = np.random.SeedSequence([int(p) for p in parts])
    return int(ss.generate_state(1, dtype=np.uint64)[0] >> 1)


def rng_from(*parts: int) -> np.random.Generator:
    """Generator seeded from a root seed plus context tags."""
    return np.random.default_rng(np.random.SeedSequence([int(p) for p in parts]))
