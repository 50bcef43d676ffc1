"""Counter-based random streams.

Every stimulus gets its own stream keyed by ``(seed, stream_index)``. The
underlying bit generator is Philox4x64-10 with the 128-bit key
``seed << 64 | stream_index``, so a stream's values never depend on how many
other streams were drawn before it, on which thread, or in which order.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

_MASK64 = (1 << 64) - 1

#: Stimuli are stored on a fixed-point grid of this many steps per unit.
GRID = 1 << 24


@dataclass(frozen=True)
class RandomStream:
    seed: int
    stream_index: int = 0

    def generator(self) -> np.random.Generator:
        key = ((self.seed & _MASK64) << 64) | (self.stream_index & _MASK64)
        return np.random.Generator(np.random.Philox(key=key))

    def uniform(self, size) -> np.ndarray:
        """Uniform [0, 1) values on the 2**-24 grid (float32-exact)."""
        return self.generator().random(size, dtype=np.float32)

    def normal(self, size, mean: float = 0.0, sd: float = 1.0) -> np.ndarray:
        return self.generator().normal(mean, sd, size)


def stream(seed: int, index: int) -> np.random.Generator:
    return RandomStream(seed, index).generator()


def quantize(x: np.ndarray) -> np.ndarray:
    """Round values in [0, 1] to integers on the stimulus grid."""
    return np.rint(np.clip(x, 0.0, 1.0) * GRID).astype(np.int64)


def dequantize(q: np.ndarray, dtype=np.float32) -> np.ndarray:
    # exact: q <= 2**24 is representable in float32
    return (q.astype(dtype) * dtype(1.0 / GRID)).astype(dtype)


def fold_seed(*parts: int) -> int:
    """Deterministically combine integers into one 64-bit seed."""
    ss = np.random.SeedSequence([int(p) & _MASK64 for p in parts])
    return int(ss.generate_state(1, dtype=np.uint64)[0])
