#!/usr/bin/env python3

"""
Module: seeding.py

  Named random streams derived from one run seed.
  Each component (data, init, batching, vat, dec, ...) draws from its own
  numpy Generator so that changing one component's consumption of random
  numbers leaves the others untouched.
"""
import zlib

import numpy as np


STREAMS = ("data", "init", "batching", "vat", "dec", "meta-init", "dropout")


def stream_seed(seed: int, name: str, *extra: int) -> np.random.SeedSequence:
    """Return the SeedSequence of stream `name` for run `seed`.
    Optional integers in `extra` (e.g. an outer-loop index) derive sub-streams.
    """
    if seed < 0:
        raise ValueError(f"Seed must be non-negative, got {seed}.")
    return np.random.SeedSequence([int(seed), zlib.crc32(name.encode("utf-8")), *map(int, extra)])


def stream(seed: int, name: str, *extra: int) -> np.random.Generator:
    """Return a fresh Generator for stream `name`."""
    return np.random.default_rng(stream_seed(seed, name, *extra))


def int_seed(seed: int, name: str, *extra: int) -> int:
    """32-bit integer seed for libraries taking `random_state`, e.g. sklearn."""
    return int(stream_seed(seed, name, *extra).generate_state(1)[0])
