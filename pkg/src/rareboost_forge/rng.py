"""Counter-based random numbers: every draw is a pure hash of its coordinates.

A value depends only on ``(seed, *counters)``, never on how many values were
drawn before it, so rays, scans and files can be generated in any order or in
parallel and still agree bit for bit.
"""

import numpy as np

_GOLDEN = np.uint64(0x9E3779B97F4A7C15)
_M1 = np.uint64(0xBF58476D1CE4E5B9)
_M2 = np.uint64(0x94D049BB133111EB)
_MASK = (1 << 64) - 1


def splitmix64(x) -> np.ndarray:
    """Vectorised SplitMix64 finaliser over uint64 arrays (wrapping arithmetic)."""
    with np.errstate(over="ignore"):
        z = np.asarray(x, dtype=np.uint64) + _GOLDEN
        z = (z ^ (z >> np.uint64(30))) * _M1
        z = (z ^ (z >> np.uint64(27))) * _M2
        return z ^ (z >> np.uint64(31))


def splitmix64_scalar(x: int) -> int:
    """Plain-int reference implementation of :func:`splitmix64`."""
    z = (x + 0x9E3779B97F4A7C15) & _MASK
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & _MASK
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & _MASK
    return z ^ (z >> 31)


def mix(seed, *counters) -> np.ndarray:
    """Hash a seed and a sequence of (broadcastable) integer counters."""
    h = splitmix64(np.uint64(int(seed) & _MASK))
    for c in counters:
        h = splitmix64(h ^ np.asarray(c).astype(np.uint64))
    return h


def uniform(seed, *counters) -> np.ndarray:
    """Uniform doubles in [0, 1) from the top 53 bits of the hash."""
    return (mix(seed, *counters) >> np.uint64(11)).astype(np.float64) * (1.0 / 9007199254740992.0)


def normal(seed, *counters) -> np.ndarray:
    """Standard normal draws via Box-Muller on two independent sub-streams."""
    u1 = uniform(seed, *counters, 0)
    u2 = uniform(seed, *counters, 1)
    return np.sqrt(-2.0 * np.log1p(-u1)) * np.cos(2.0 * np.pi * u2)
