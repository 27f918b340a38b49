"""Deterministic per-component seed derivation.

A single master seed drives every random stream in a run (data generation,
parameter init, dropout, shuffling). Each component gets its own stream,
derived as

    derive_seed(master, label) = splitmix64(splitmix64(master) XOR fnv1a64(label))

so the streams are independent of each other and of the order in which
components consume them. Two runs that share a master seed and a label get
bit-identical streams on any platform.
"""

from __future__ import annotations

import numpy as np

_MASK64 = (1 << 64) - 1


def _splitmix64(z: int) -> int:
    z = (z + 0x9E3779B97F4A7C15) & _MASK64
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & _MASK64
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & _MASK64
    return (z ^ (z >> 31)) & _MASK64


def _fnv1a64(text: str) -> int:
    h = 0xCBF29CE484222325
    for byte in text.encode("utf-8"):
        h = ((h ^ byte) * 0x100000001B3) & _MASK64
    return h


def derive_seed(master: int, label: str) -> int:
    """64-bit seed for the component named `label` under `master`."""
    return _splitmix64(_splitmix64(master & _MASK64) ^ _fnv1a64(label))


def derive_rng(master: int, label: str) -> np.random.Generator:
    """Fresh generator for the component named `label` under `master`."""
    return np.random.default_rng(derive_seed(master, label))
