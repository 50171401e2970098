"""Deterministic random streams keyed by (seed, trajectory block).

Trajectories are grouped in fixed blocks of ``BLOCK_SIZE``. Block ``b`` of a
run with master seed ``s`` draws from a Philox generator keyed by
``SeedSequence(s, spawn_key=(b,))``, so the variates of trajectory ``i``
depend only on ``(s, i)`` and never on how many threads process the blocks
or how many trajectories the run asks for.
"""

from __future__ import annotations

from typing import NamedTuple

import numpy as np

from .errors import ContractViolation

BLOCK_SIZE = 1 << 15


class Variates(NamedTuple):
    u_mix: np.ndarray  # (B,) picks the pure component of a mixed state
    u_branch: np.ndarray  # (B, n) picks the eigen-branch at each step
    z: np.ndarray  # (B, n) standard normal noise
    v_accept: np.ndarray  # (B,) post-selection coin


def _check_seed(seed: int) -> int:
    seed = int(seed)
    if not 0 <= seed < 2**64:
        raise ContractViolation(f"seed must be a 64-bit unsigned integer, got {seed}")
    return seed


def block_stream(seed: int, block: int) -> np.random.Generator:
    return np.random.Generator(np.random.Philox(np.random.SeedSequence(_check_seed(seed), spawn_key=(int(block),))))


def block_variates(seed: int, block: int, steps: int) -> Variates:
    """All variates of one full block, drawn in a fixed order."""
    g = block_stream(seed, block)
    u_mix = g.random(BLOCK_SIZE)
    u_branch = g.random((BLOCK_SIZE, steps))
    z = g.standard_normal((BLOCK_SIZE, steps))
    v = g.random(BLOCK_SIZE)
    return Variates(u_mix, u_branch, z, v)


def block_ranges(trajectories: int, start: int = 0):
    """Yield (block, lo, hi): rows lo:hi of ``block`` belong to the run."""
    if trajectories < 1:
        raise ContractViolation("trajectories must be >= 1")
    end = start + trajectories
    b = start // BLOCK_SIZE
    while b * BLOCK_SIZE < end:
        lo = max(start - b * BLOCK_SIZE, 0)
        hi = min(end - b * BLOCK_SIZE, BLOCK_SIZE)
        yield b, lo, hi
        b += 1


def trajectory_stream(seed: int, index: int) -> np.random.Generator:
    """Independent generator for single-trajectory reference simulations."""
    return np.random.Generator(
        np.random.Philox(np.random.SeedSequence(_check_seed(seed), spawn_key=(2**32 + int(index),)))
    )
