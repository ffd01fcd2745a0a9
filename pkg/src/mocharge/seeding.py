"""Deterministic, order-independent random stream derivation.

Every random stream in the package is keyed by a tuple (master seed, stream
tag, *ids) fed to numpy's SeedSequence, so adding or reordering consumers
never shifts anybody else's stream. Tags are stable small integers.
"""

from __future__ import annotations

import numpy as np

TAG_EPISODE = 1  # sensor layout / battery / drain-rate draws
TAG_ACTION = 2  # policy exploration noise
TAG_DRAIN = 3  # consumption-doubling perturbation draws
TAG_NET_INIT = 4  # network parameter initialization
TAG_SHUFFLE = 5  # minibatch permutation
TAG_PITS = 6  # candidate-weight draws in task selection
TAG_MODEL = 7  # increment-model fitting
TAG_EVAL = 8  # evaluation seed derivation
TAG_ROLLOUT = 9  # per-iteration episode seed derivation


def seed_sequence(master: int, *ids: int) -> np.random.SeedSequence:
    return np.random.SeedSequence(entropy=(int(master), *[int(i) for i in ids]))


def generator(master: int, *ids: int) -> np.random.Generator:
    """A fresh Generator for the stream keyed by (master, *ids)."""
    return np.random.default_rng(seed_sequence(master, *ids))


def derive_ints(master: int, tag: int, count: int) -> list[int]:
    """count stable nonnegative ints derived from (master, tag)."""
    return [int(x) for x in seed_sequence(master, tag).generate_state(count)]
