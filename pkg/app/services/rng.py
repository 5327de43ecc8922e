"""
Random Streams
Counter-based, splittable random streams keyed by (seed, stream).
"""
from dataclasses import dataclass
from typing import List

import numpy as np


UINT64_MASK = (1 << 64) - 1


@dataclass(frozen=True)
class RngStream:
    """A reproducible random stream.

    The pair (seed, stream) is the Philox key, so the same pair always yields
    bit-identical draws and different pairs give independent sequences.
    """

    seed: int
    stream: int = 0

    def __post_init__(self):
        object.__setattr__(self, "seed", int(self.seed) & UINT64_MASK)
        object.__setattr__(self, "stream", int(self.stream) & UINT64_MASK)

    def generator(self) -> np.random.Generator:
        key = np.array([self.seed, self.stream], dtype=np.uint64)
        return np.random.Generator(np.random.Philox(key=key))

    def derive(self, index: int) -> "RngStream":
        """Child stream for task `index`; children of distinct parents do not collide."""
        state = np.random.SeedSequence(entropy=[self.seed, self.stream, int(index)]).generate_state(1, np.uint64)
        return RngStream(self.seed, int(state[0]))

    def spawn(self, k: int) -> List["RngStream"]:
        return [self.derive(i) for i in range(k)]
