"""
Seeding Module
Independent, reproducible random streams derived from one run seed.
"""

from typing import Dict

import numpy as np

# Fixed stream order; adding a stream must append to keep older runs reproducible
STREAMS = ("data", "split", "supernet", "batches", "augment", "eval")


def spawn_generators(seed: int) -> Dict[str, np.random.Generator]:
    """
    One numpy Generator per named stream, all children of SeedSequence(seed).

    Raises:
        ValueError: If seed is negative
    """
    if seed < 0:
        raise ValueError(f"seed cannot be negative, got {seed}")
    children = np.random.SeedSequence(seed).spawn(len(STREAMS))
    return {name: np.random.default_rng(child) for name, child in zip(STREAMS, children)}
