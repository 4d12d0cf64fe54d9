"""Seeded randomness. All stochastic code takes a numpy Generator backed by
PCG64, whose output stream is platform-independent for a fixed seed. Derived
streams come from SeedSequence spawning so one top-level seed governs a whole
experiment."""

from __future__ import annotations

import numpy as np


def make_rng(seed: int) -> np.random.Generator:
    return np.random.Generator(np.random.PCG64(seed))


def spawn_rngs(seed: int, n: int) -> list[np.random.Generator]:
    seqs = np.random.SeedSequence(seed).spawn(n)
    return [np.random.Generator(np.random.PCG64(s)) for s in seqs]
