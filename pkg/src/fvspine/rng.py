"""Counter-based random streams keyed by ``(seed, stream_id)``.

Each stream is a Philox-4x64 generator whose 128-bit key is the pair
``(seed, stream_id)``; the counter starts at zero.  Two streams with the same
key replay bit-identically regardless of process or thread, and distinct keys
give independent sequences without any shared state.

Stream ids inside one experiment follow ``replica << 20 | slot``: slots
``0 .. n-1`` drive particles, the top slots are reserved for per-replica
bookkeeping (initial draws, event ordering and targets).
"""

from __future__ import annotations

import numpy as np

PARTICLE_BITS = 20
INIT_SLOT = (1 << PARTICLE_BITS) - 2
CONTROL_SLOT = (1 << PARTICLE_BITS) - 1
_MASK64 = (1 << 64) - 1


def stream_id(replica: int, slot: int) -> int:
    if not 0 <= slot < (1 << PARTICLE_BITS):
        raise ValueError(f"slot {slot} out of range")
    return ((int(replica) << PARTICLE_BITS) | int(slot)) & _MASK64


class RngStream:
    """Single-owner random stream; do not share one instance between threads."""

    def __init__(self, seed: int, stream_id: int = 0):
        self.seed = int(seed) & _MASK64
        self.stream_id = int(stream_id) & _MASK64
        key = np.array([self.seed, self.stream_id], dtype=np.uint64)
        self._bitgen = np.random.Philox(key=key)
        self.generator = np.random.Generator(self._bitgen)

    @classmethod
    def for_particle(cls, seed: int, replica: int, particle: int) -> "RngStream":
        return cls(seed, stream_id(replica, particle))

    @property
    def counter(self) -> int:
        """Current 256-bit Philox counter folded into one integer."""
        words = self._bitgen.state["state"]["counter"]
        return sum(int(w) << (64 * i) for i, w in enumerate(words))

    def state(self) -> dict:
        return self._bitgen.state

    def set_state(self, state: dict) -> None:
        self._bitgen.state = state

    def normal(self, size=None) -> np.ndarray:
        return self.generator.standard_normal(size)

    def uniform(self, size=None) -> np.ndarray:
        return self.generator.random(size)

    def __repr__(self):
        return f"RngStream(seed={self.seed}, stream_id={self.stream_id})"
