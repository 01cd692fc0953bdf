"""Counter-based SplitMix64 streams.

Every random draw in the package (splits, initial weights, analytic phases)
comes from here so that results are bit-reproducible without depending on
numpy's generator internals.  Algorithm ``splitmix64-ctr/v1``:

* the i-th 64-bit word (i = 0, 1, ...) of a stream with key ``K`` is
  ``mix64(K + (i + 1) * GAMMA mod 2**64)``, i.e. exactly the i-th output of a
  SplitMix64 generator seeded with ``K``;
* ``mix64`` is Stafford's variant 13 finalizer with constants
  ``0xBF58476D1CE4E5B9`` and ``0x94D049BB133111EB`` and shifts 30/27/31;
* the key of a labelled substream is ``mix64(seed + GAMMA * (label + 1))``
  (for ``seed`` reduced mod 2**64);
* uniforms on [0, 1) are ``(word >> 11) * 2**-53``;
* standard normals use Box-Muller on word pairs ``(2j, 2j+1)``:
  ``sqrt(-2 ln(1 - u0)) * cos(2 pi u1)``.
"""

import numpy as np

ALGORITHM = "splitmix64-ctr/v1"

GAMMA = 0x9E3779B97F4A7C15
_MASK = (1 << 64) - 1

# Substream labels.  Changing these changes every derived stream.
SPLIT = 1
INIT_W1 = 2
INIT_W2 = 3
PHASE_1 = 4
PHASE_2 = 5


def _mix64_array(z):
    z = z.astype(np.uint64, copy=True)
    z ^= z >> np.uint64(30)
    z *= np.uint64(0xBF58476D1CE4E5B9)
    z ^= z >> np.uint64(27)
    z *= np.uint64(0x94D049BB133111EB)
    z ^= z >> np.uint64(31)
    return z


def mix64(x: int) -> int:
    """SplitMix64 finalizer on a Python int."""
    z = x & _MASK
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & _MASK
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & _MASK
    return z ^ (z >> 31)


def stream_key(seed: int, label: int) -> int:
    return mix64((seed & _MASK) + GAMMA * (label + 1))


def words(key: int, count: int, offset: int = 0) -> np.ndarray:
    """Words ``offset .. offset+count-1`` of the stream with ``key``."""
    idx = np.arange(offset + 1, offset + count + 1, dtype=np.uint64)
    with np.errstate(over="ignore"):
        z = np.uint64(key & _MASK) + idx * np.uint64(GAMMA)
    return _mix64_array(z)


def uniform(key: int, count: int) -> np.ndarray:
    return (words(key, count) >> np.uint64(11)).astype(np.float64) * 2.0**-53


def normal(key: int, count: int) -> np.ndarray:
    u = (words(key, 2 * count) >> np.uint64(11)).astype(np.float64) * 2.0**-53
    u0, u1 = u[0::2], u[1::2]
    return np.sqrt(-2.0 * np.log1p(-u0)) * np.cos(2.0 * np.pi * u1)


def permutation(key: int, n: int) -> np.ndarray:
    """Uniform random permutation of ``range(n)``: stable argsort of ``n`` words."""
    return np.argsort(words(key, n), kind="stable")
