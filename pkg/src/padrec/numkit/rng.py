"""SplitMix64 random stream: tiny, portable, and identical across platforms."""

import math

MASK64 = (1 << 64) - 1
_GAMMA = 0x9E3779B97F4A7C15


def _mix(z: int) -> int:
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9 & MASK64
    z = (z ^ (z >> 27)) * 0x94D049BB133111EB & MASK64
    return z ^ (z >> 31)


class Rng:
    """SplitMix64 generator; state is a single u64, draws are reproducible everywhere."""

    def __init__(self, seed: int):
        self.state = seed & MASK64
        self._spare_normal = None

    def next_u64(self) -> int:
        self.state = (self.state + _GAMMA) & MASK64
        return _mix(self.state)

    def uniform(self) -> float:
        """One f64 draw in [0, 1)."""
        return (self.next_u64() >> 11) * (1.0 / (1 << 53))

    def randint(self, n: int) -> int:
        """Uniform integer in [0, n)."""
        assert n >= 1
        return min(int(self.uniform() * n), n - 1)

    def normal(self) -> float:
        """Standard normal via Box-Muller (pair cached)."""
        if self._spare_normal is not None:
            z = self._spare_normal
            self._spare_normal = None
            return z
        u1 = 1.0 - self.uniform()  # (0, 1]
        u2 = self.uniform()
        r = math.sqrt(-2.0 * math.log(u1))
        self._spare_normal = r * math.sin(2.0 * math.pi * u2)
        return r * math.cos(2.0 * math.pi * u2)

    def normals(self, shape, scale: float = 1.0):
        """Array of iid normals scaled by `scale`."""
        import numpy as np

        flat = [self.normal() * scale for _ in range(int(np.prod(shape)))]
        return np.array(flat, dtype=np.float64).reshape(shape)

    def shuffle(self, items: list) -> None:
        """In-place Fisher-Yates shuffle."""
        for i in range(len(items) - 1, 0, -1):
            j = self.randint(i + 1)
            items[i], items[j] = items[j], items[i]

    def split(self) -> "Rng":
        """Independent child stream (clone-with-jump for parallel work)."""
        return Rng(self.next_u64())


def _tag_to_u64(tag) -> int:
    if isinstance(tag, str):  # FNV-1a over utf-8 bytes
        h = 0xCBF29CE484222325
        for b in tag.encode("utf-8"):
            h = ((h ^ b) * 0x100000001B3) & MASK64
        return h
    return tag & MASK64


def derive(seed: int, *tags) -> Rng:
    """Stateless per-task stream: mixes int/str tags into the seed, order-sensitive."""
    state = _mix(seed & MASK64)
    for t in tags:
        state = _mix((state ^ _tag_to_u64(t)) + _GAMMA & MASK64)
    return Rng(state)
