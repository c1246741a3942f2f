"""Deterministic RNG stream derivation.

Every random draw in the simulator comes from a numpy Generator keyed by a
(seed, tag, ...) tuple, so any part of a run can be reproduced in isolation
and node steps can execute in any order without changing results.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

# Stream tags, always the first element of a spawn key.
INIT_STREAM = 0    # model weight initialisation
DATA_STREAM = 1    # synthetic dataset generation
MASK_STREAM = 2    # probabilistic mask draws, keyed (tag, node, step, layer)
SELECT_STREAM = 3  # shared random node selection, keyed (tag, step)


def substream(seed: int, *key: int) -> np.random.Generator:
    """Generator for the stream identified by ``key`` under ``seed``."""
    spawn_key = tuple(int(k) for k in key)
    return np.random.default_rng(np.random.SeedSequence(int(seed), spawn_key=spawn_key))


@dataclass(frozen=True)
class ParamStream:
    """Per-(node, step) family of mask-draw streams, one substream per layer.

    Partitioning by layer means layers can be processed in any order, or in
    parallel, with bit-identical results.
    """

    seed: int
    node: int
    step: int

    def layer(self, layer_index: int) -> np.random.Generator:
        return substream(self.seed, MASK_STREAM, self.node, self.step, layer_index)
