"""Counter-based random streams for reproducible particle simulations.

Every draw is addressed by (seed, context, step, particle, column) and is
computed from a Philox counter position, never from sequential generator
state.  Consequences:

* identical (seed, particle, step) always yield identical draws,
* any partition of particles across workers produces identical output,
* per-particle rows are exact slices of the vectorized per-step block.

Gaussians are produced by inverse-CDF transform of one uniform each (the
ziggurat consumes a variable number of uniforms, which would break
position addressing).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.special import ndtri

_MASK64 = (1 << 64) - 1
# second key word decorrelates small seeds; any fixed odd constant works
_KEY_PAD = 0x9E3779B97F4A7C15
# Philox advances in blocks of 4 doubles; row strides are padded to match
_BLOCK = 4
_U_MIN = 2.0**-64


def _row_stride(width: int) -> int:
    return _BLOCK * ((width + _BLOCK - 1) // _BLOCK)


@dataclass(frozen=True)
class RngStream:
    """Deterministic substream factory keyed by a 64-bit seed.

    ``context`` separates independent draw families (0 is reserved for
    sampler dynamics, 1 for ensemble initialization).
    """

    seed: int

    def _bitgen(self, step: int, context: int, skip_blocks: int) -> np.random.Philox:
        counter = np.array([0, context & _MASK64, step & _MASK64, 0], dtype=np.uint64)
        bg = np.random.Philox(key=np.array([self.seed & _MASK64, _KEY_PAD], dtype=np.uint64),
                              counter=counter)
        if skip_blocks:
            bg.advance(int(skip_blocks))
        return bg

    def uniform_rows(self, step: int, start: int, stop: int, width: int,
                     context: int = 0) -> np.ndarray:
        """Uniform draws in (0, 1) for particles ``start..stop-1`` at one step.

        Returns an array of shape ``(stop - start, width)``.  Row ``i`` of the
        full block (``start=0, stop=J``) equals ``uniform_row(step, i, width)``
        bit for bit, whatever the chunking.
        """
        if stop <= start:
            return np.empty((0, width))
        stride = _row_stride(width)
        bg = self._bitgen(step, context, int(start) * stride // _BLOCK)
        flat = np.random.Generator(bg).random((stop - start) * stride)
        rows = flat.reshape(stop - start, stride)[:, :width]
        # random() lands in [0, 1); clamp away 0 so ndtri stays finite
        return np.maximum(rows, _U_MIN)

    def uniform_row(self, step: int, particle: int, width: int,
                    context: int = 0) -> np.ndarray:
        return self.uniform_rows(step, particle, particle + 1, width, context)[0]

    def normal_rows(self, step: int, start: int, stop: int, width: int,
                    context: int = 0) -> np.ndarray:
        """Standard Gaussian draws, one inverse-CDF transform per uniform."""
        return ndtri(self.uniform_rows(step, start, stop, width, context))

    def normal_row(self, step: int, particle: int, width: int,
                   context: int = 0) -> np.ndarray:
        return self.normal_rows(step, particle, particle + 1, width, context)[0]
