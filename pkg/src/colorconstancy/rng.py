"""Counter-based random numbers.

Every random draw in the data pipeline is a pure function of a tuple of
integer keys (master seed, stream tag, object, frame, ...). This makes any
frame, pixel or spotlight reproducible in isolation and independent of the
order in which work is scheduled.
"""

from __future__ import annotations

import numpy as np

_GOLDEN = np.uint64(0x9E3779B97F4A7C15)
_M1 = np.uint64(0xBF58476D1CE4E5B9)
_M2 = np.uint64(0x94D049BB133111EB)

# stream tags keep unrelated consumers of the same master seed apart
STREAM_LIGHTING = 1
STREAM_PIXELS = 2
STREAM_INIT = 3
STREAM_TRAIN = 4
STREAM_PROBE = 5
STREAM_JITTER = 6


def _mix(z: np.ndarray) -> np.ndarray:
    # splitmix64 finalizer
    z = (z ^ (z >> np.uint64(30))) * _M1
    z = (z ^ (z >> np.uint64(27))) * _M2
    return z ^ (z >> np.uint64(31))


def hash_keys(*keys) -> np.ndarray:
    """Hash broadcastable integer key arrays to uint64 words."""
    arrays = np.broadcast_arrays(*[np.asarray(k, dtype=np.int64) for k in keys])
    with np.errstate(over="ignore"):
        h = np.full(arrays[0].shape, _GOLDEN, dtype=np.uint64)
        for a in arrays:
            h = _mix(h ^ (a.astype(np.uint64) + _GOLDEN))
    return h


def uniform(*keys) -> np.ndarray:
    """Uniform doubles in [0, 1) keyed by broadcastable integer arrays."""
    return (hash_keys(*keys) >> np.uint64(11)).astype(np.float64) * (1.0 / 9007199254740992.0)


def generator(*keys) -> np.random.Generator:
    """A numpy Generator whose seed is derived from integer keys."""
    seq = np.random.SeedSequence(entropy=[int(k) for k in keys])
    return np.random.Generator(np.random.PCG64(seq))
