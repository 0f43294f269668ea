"""Deterministic Gaussian sample streams.

All randomness in the library flows through :class:`GaussianStream`, which
wraps numpy's Philox counter-based bit generator.  Philox is keyed, so a
(seed, substream) pair fully determines the sample sequence; there is no
global RNG state anywhere.  Standard normals are produced by numpy's
ziggurat implementation, whose stream is pinned by numpy's stream
compatibility policy.  Seed logs are portable across machines running the
same numpy major version; the golden-value test in tests/test_streams.py
guards against silent stream changes.
"""

from __future__ import annotations

import numpy as np

__all__ = ["GaussianStream", "gaussian_fill"]

_U64 = np.uint64


class GaussianStream:
    """A reproducible stream of i.i.d. standard-normal samples.

    ``substream`` selects an independent stream under the same seed (it is
    the second word of the Philox key).  Perturbation code gives each
    parameter tensor its own substream, indexed by position in the
    ParamSet, so a tensor's perturbation depends only on (seed, index) and
    never on how many samples earlier tensors consumed.
    """

    def __init__(self, seed: int, substream: int = 0):
        if not 0 <= int(seed) < 2**64:
            raise ValueError(f"seed must be a 64-bit unsigned integer, got {seed}")
        self.seed = int(seed)
        self.substream = int(substream)
        key = np.array([self.seed, self.substream], dtype=_U64)
        self._gen = np.random.Generator(np.random.Philox(key=key))

    def normal(self, shape, dtype=np.float64) -> np.ndarray:
        """Draw a tensor of standard normals, advancing the stream."""
        return self._gen.standard_normal(shape, dtype=dtype)

    def integers(self, low: int, high: int, size=None):
        """Draw uniform integers in [low, high); used for batch indexing."""
        return self._gen.integers(low, high, size=size)

    def __repr__(self):  # pragma: no cover
        return f"GaussianStream(seed={self.seed}, substream={self.substream})"


def gaussian_fill(stream: GaussianStream, shape, dtype=np.float64) -> np.ndarray:
    """Fill a tensor of the given shape with standard normals from `stream`.

    Samples are laid out in row-major (C) order.  Empty shapes and
    non-positive dimensions are rejected: a perturbation of nothing is
    always a caller bug.
    """
    dims = tuple(int(s) for s in shape)
    if len(dims) == 0:
        raise ValueError("shape must have at least one dimension")
    if any(d < 1 for d in dims):
        raise ValueError(f"all dimensions must be >= 1, got {dims}")
    return stream.normal(dims, dtype=dtype)
