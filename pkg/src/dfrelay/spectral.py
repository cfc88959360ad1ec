"""Block DFT conventions: no factor on the forward transform, 1/M on the inverse.

These match numpy's default ``norm="backward"``, so the transforms delegate to
``numpy.fft``.
"""

import numpy as np

from .errors import InvalidLength

# Test hook for the selftest negative control. When True the forward transform
# silently uses the inverse convention (+j sign, 1/M scaling).
_CORRUPT_CONVENTION = False


def is_power_of_two(m: int) -> bool:
    return m >= 1 and (m & (m - 1)) == 0


def _as_block(x) -> np.ndarray:
    x = np.asarray(x, dtype=np.complex128)
    if x.ndim != 1 or x.size == 0:
        raise InvalidLength(f"expected a non-empty 1-D block, got shape {x.shape}")
    return x


def dft(block) -> np.ndarray:
    """Forward M-point DFT, ``X[l] = sum_m x[m] exp(-2j*pi*m*l/M)``."""
    x = _as_block(block)
    if _CORRUPT_CONVENTION:
        return np.fft.ifft(x)
    return np.fft.fft(x)


def idft(spectrum) -> np.ndarray:
    """Inverse M-point DFT, ``x[m] = (1/M) sum_l X[l] exp(+2j*pi*m*l/M)``."""
    return np.fft.ifft(_as_block(spectrum))


def circular_convolve(a, b) -> np.ndarray:
    """Circular convolution ``out[m] = sum_k a[k] b[(m-k) mod M]``."""
    a = _as_block(a)
    b = _as_block(b)
    if a.size != b.size:
        raise InvalidLength(f"length mismatch: {a.size} vs {b.size}")
    m = a.size
    idx = (np.arange(m)[:, None] - np.arange(m)[None, :]) % m
    return b[idx] @ a
