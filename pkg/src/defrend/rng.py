"""Counter-based random streams.

Every random decision in the pipeline is a pure function of a 64-bit seed
plus a handful of integer stream keys, so draws are order-independent and
safe to evaluate from parallel workers.  The mixer is the splitmix64
finalizer; the same arithmetic is re-implemented inside the numba kernels
(see _kernels.py) so python- and kernel-side streams agree.
"""

import numpy as np

_MASK = (1 << 64) - 1
_GOLDEN = 0x9E3779B97F4A7C15

# fixed stream tags (keep in sync with _kernels.py)
STREAM_LIGHT = 1
STREAM_MATERIAL = 2
STREAM_SCENE = 3
STREAM_SHADE = 4


def mix64(x: int) -> int:
    """splitmix64 finalizer on a 64-bit integer."""
    z = (x + _GOLDEN) & _MASK
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & _MASK
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & _MASK
    return z ^ (z >> 31)


def derive_seed(seed: int, *keys: int) -> int:
    """Fold integer keys into a seed, producing an independent child seed."""
    h = mix64(seed & _MASK)
    for k in keys:
        h = mix64((h ^ (k & _MASK)) & _MASK)
    return h


def uniforms(seed: int, n: int, *keys: int) -> np.ndarray:
    """n independent U[0,1) doubles for stream (seed, *keys), indexed 0..n-1."""
    base = np.uint64(derive_seed(seed, *keys))
    idx = np.arange(n, dtype=np.uint64)
    with np.errstate(over="ignore"):
        z = (base ^ idx) + np.uint64(_GOLDEN)
        z = (z ^ (z >> np.uint64(30))) * np.uint64(0xBF58476D1CE4E5B9)
        z = (z ^ (z >> np.uint64(27))) * np.uint64(0x94D049BB133111EB)
        z = z ^ (z >> np.uint64(31))
    return (z >> np.uint64(11)).astype(np.float64) * (1.0 / 9007199254740992.0)


def uniform(seed: int, *keys: int) -> float:
    """Single U[0,1) double for stream (seed, *keys)."""
    z = derive_seed(seed, *keys)
    return (z >> 11) * (1.0 / 9007199254740992.0)


def generator(seed: int, *keys: int) -> np.random.Generator:
    """Philox generator keyed by a derived seed, for bulk numpy draws."""
    return np.random.Generator(np.random.Philox(key=derive_seed(seed, *keys)))
