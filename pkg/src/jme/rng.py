"""Counter-based Gaussian noise streams.

Every random draw in the package goes through :class:`NoiseStream`. A stream is
identified by ``(master_seed, stream_id)``; trial ``k`` reads a fixed block of
the Philox counter space, so the values seen by a trial do not depend on how
trials are batched or distributed over workers.
"""

from __future__ import annotations

import numpy as np
from scipy.special import ndtri

# Stream ids used by the mechanisms.
FIRST_MOMENT = 0
SECOND_MOMENT = 1
CONCATENATED = 2
DATA = 3

_WORDS_PER_COUNTER = 4  # Philox4x64 emits four 64-bit words per counter step
_HALF_ULP = 2.0**-54


def philox_key(master_seed: int, stream_id: int) -> np.ndarray:
    """64-bit mix of (master_seed, stream_id) into a 128-bit Philox key."""
    seq = np.random.SeedSequence([int(master_seed) & 0xFFFFFFFFFFFFFFFF, int(stream_id)])
    return seq.generate_state(2, np.uint64)


class NoiseStream:
    """Standard normal blocks of fixed size per trial.

    ``block_size`` values are reserved per trial (padded to whole counter
    steps). Normals come from the inverse CDF of one uniform double each, which
    keeps the word consumption per value fixed.
    """

    def __init__(self, master_seed: int, stream_id: int, block_size: int):
        if block_size < 1:
            raise ValueError("block_size must be positive")
        self.key = philox_key(master_seed, stream_id)
        self.block_size = int(block_size)
        self._stride = -(-self.block_size // _WORDS_PER_COUNTER) * _WORDS_PER_COUNTER

    def uniforms(self, first_trial: int, n_trials: int) -> np.ndarray:
        counter = np.zeros(4, dtype=np.uint64)
        offset = first_trial * (self._stride // _WORDS_PER_COUNTER)
        counter[0] = offset & 0xFFFFFFFFFFFFFFFF
        counter[1] = offset >> 64
        gen = np.random.Generator(np.random.Philox(key=self.key, counter=counter))
        u = gen.random(n_trials * self._stride).reshape(n_trials, self._stride)
        return u[:, : self.block_size] + _HALF_ULP

    def normals(self, first_trial: int, n_trials: int) -> np.ndarray:
        """Array of shape (n_trials, block_size) of i.i.d. N(0, 1) values."""
        return ndtri(self.uniforms(first_trial, n_trials))


def trial_normals(master_seed: int, stream_id: int, trial: int, shape) -> np.ndarray:
    """Convenience: the standard normal block of one trial, reshaped."""
    size = int(np.prod(shape))
    return NoiseStream(master_seed, stream_id, size).normals(trial, 1).reshape(shape)
