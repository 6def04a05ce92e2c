"""Counter-based deterministic random streams.

Every consumer (parameter init, field samplers, shuffling) draws from an
``Rng`` keyed by ``(seed, stream)``. The bit source is Philox-4x64, so a
given key yields the same sequence on every platform, and distinct streams
are independent.
"""

import numpy as np

_MASK64 = (1 << 64) - 1


def stream_id(*parts):
    """Pack small non-negative integers into one 64-bit stream id.

    Each part gets 16 bits except the last, which gets the remainder;
    e.g. ``stream_id(purpose, attempt, index)``.
    """
    sid = 0
    for p in parts[:-1]:
        if not 0 <= p < (1 << 16):
            raise ValueError(f"stream part {p} out of range")
        sid = (sid << 16) | p
    last = parts[-1] if parts else 0
    if last < 0:
        raise ValueError("negative stream part")
    shift = 64 - 16 * (len(parts) - 1)
    if last >= (1 << shift):
        raise ValueError(f"stream part {last} out of range")
    return ((sid << shift) | last) & _MASK64


class Rng:
    """Uniform and Gaussian variates from a Philox counter stream.

    Gaussians use Box-Muller on the uniform stream rather than numpy's
    ziggurat so the transform is fully specified.
    """

    def __init__(self, seed, stream=0):
        self.seed = int(seed) & _MASK64
        self.stream = int(stream) & _MASK64
        bitgen = np.random.Philox(key=np.array([self.seed, self.stream], dtype=np.uint64))
        self._gen = np.random.Generator(bitgen)

    def spawn(self, stream):
        return Rng(self.seed, stream)

    def uniform(self, low=0.0, high=1.0, size=None):
        u = self._gen.random(size)
        return low + (high - low) * u

    def normal(self, size=None):
        n = 1 if size is None else int(np.prod(size))
        m = (n + 1) // 2
        u1 = self._gen.random(m)
        u2 = self._gen.random(m)
        # 1 - u keeps the log argument in (0, 1]
        r = np.sqrt(-2.0 * np.log1p(-u1))
        theta = 2.0 * np.pi * u2
        z = np.concatenate([r * np.cos(theta), r * np.sin(theta)])[:n]
        if size is None:
            return float(z[0])
        return z.reshape(size)

    def permutation(self, n):
        # Sort keys drawn from the uniform stream; ties have probability ~0.
        keys = self._gen.random(n)
        return np.argsort(keys, kind="stable")
