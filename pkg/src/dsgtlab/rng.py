"""Counter-based random streams keyed by (master seed, node, iteration).

Every draw is a pure function of its key, so the order in which nodes are
evaluated (or the number of worker threads) cannot change the result.
"""

from __future__ import annotations

from functools import lru_cache

import numpy as np

__all__ = ["node_key", "stream"]

_MASK = (1 << 64) - 1


@lru_cache(maxsize=4096)
def node_key(master_seed: int, node: int) -> tuple[int, int]:
    """128-bit Philox key for a node, derived by hashing ``(master_seed, node)``."""
    state = np.random.SeedSequence(int(master_seed), spawn_key=(int(node),)).generate_state(2, np.uint64)
    return int(state[0]), int(state[1])


def stream(master_seed: int, node: int, iteration: int, draw: int = 0) -> np.random.Generator:
    """Generator positioned at ``(iteration, draw)`` within the node's stream.

    The Philox counter words are ``[0, draw, iteration, 0]``; a single
    iteration would have to consume 2**64 blocks before colliding with the
    next draw index.
    """
    key = np.array(node_key(master_seed, node), dtype=np.uint64)
    counter = np.array([0, int(draw) & _MASK, int(iteration) & _MASK, 0], dtype=np.uint64)
    return np.random.Generator(np.random.Philox(key=key, counter=counter))
