"""Counter-based random streams keyed by purpose, layer and run.

Every stochastic decision in the package (parameter init, dropout masks,
fault sampling, data shuffling) draws from its own Philox stream whose key
is a hash of ``(root_seed, purpose, layer_index, run_index)``.  Two streams
that differ in any field are independent; identical fields give identical
sequences regardless of call order or thread.
"""

from __future__ import annotations

import enum
import struct
from dataclasses import dataclass, replace

import numpy as np

_MASK64 = (1 << 64) - 1


class Purpose(enum.IntEnum):
    INIT = 1
    DROPOUT_MASK = 2
    FAULT_INJECTION = 3
    DATA_SHUFFLE = 4


def derive_seed(root_seed: int, *words: int | float) -> int:
    """Mix extra words into a 64-bit seed.

    Floats are mixed by their IEEE-754 bit pattern so that e.g. a fault
    level of 0.1 always maps to the same child seed.
    """
    entropy = [int(root_seed) & _MASK64]
    for w in words:
        if isinstance(w, float):
            w = struct.unpack("<Q", struct.pack("<d", w))[0]
        entropy.append(int(w) & _MASK64)
    state = np.random.SeedSequence(entropy).generate_state(1, dtype=np.uint64)
    return int(state[0])


@dataclass(frozen=True)
class RngStream:
    root_seed: int
    purpose: Purpose
    layer_index: int = 0
    run_index: int = 0
    counter: int = 0

    def __post_init__(self):
        if self.layer_index < 0 or self.run_index < 0:
            raise ValueError("layer_index and run_index must be non-negative")
        if not 0 <= self.counter <= _MASK64:
            raise ValueError("counter must fit in 64 bits")

    def key(self) -> np.ndarray:
        ss = np.random.SeedSequence(
            [int(self.root_seed) & _MASK64, int(self.purpose), self.layer_index, self.run_index]
        )
        return ss.generate_state(2, dtype=np.uint64)

    def generator(self) -> np.random.Generator:
        """A fresh generator positioned at the start of this stream."""
        counter = np.array([self.counter, 0, 0, 0], dtype=np.uint64)
        return np.random.Generator(np.random.Philox(key=self.key(), counter=counter))

    def for_layer(self, layer_index: int) -> RngStream:
        return replace(self, layer_index=layer_index)

    def for_run(self, run_index: int) -> RngStream:
        return replace(self, run_index=run_index)
