"""Gray-mapped QPSK: bit pair (b0, b1) -> sqrt(P/2) * ((1 - 2 b0) + j (1 - 2 b1))."""

import numpy as np

from .errors import InvalidConfig, InvalidLength, InvalidSymbol


def _check_power(power):
    if not power > 0:
        raise InvalidConfig(f"symbol power must be > 0, got {power}")


def modulate(bits, power: float = 1.0) -> np.ndarray:
    bits = np.asarray(bits, dtype=np.int8).ravel()
    if bits.size % 2:
        raise InvalidLength(f"odd number of bits: {bits.size}")
    _check_power(power)
    amp = np.sqrt(power / 2.0)
    return amp * ((1 - 2 * bits[0::2]) + 1j * (1 - 2 * bits[1::2]))


def hard_decide(block, power: float = 1.0) -> np.ndarray:
    """Nearest QPSK point; an exact zero component goes to the positive side."""
    _check_power(power)
    block = np.asarray(block, dtype=np.complex128)
    amp = np.sqrt(power / 2.0)
    re = np.where(block.real >= 0, amp, -amp)
    im = np.where(block.imag >= 0, amp, -amp)
    return re + 1j * im


def demodulate(symbols, power: float = 1.0, rtol: float = 1e-9) -> np.ndarray:
    """Inverse of :func:`modulate`. Inputs must already be constellation points."""
    _check_power(power)
    symbols = np.asarray(symbols, dtype=np.complex128).ravel()
    amp = np.sqrt(power / 2.0)
    off = np.maximum(np.abs(np.abs(symbols.real) - amp), np.abs(np.abs(symbols.imag) - amp))
    if np.any(off > rtol * amp):
        bad = int(np.argmax(off))
        raise InvalidSymbol(f"sample {bad} ({symbols[bad]}) is not a QPSK point at power {power}")
    bits = np.empty(2 * symbols.size, dtype=np.int8)
    bits[0::2] = symbols.real < 0
    bits[1::2] = symbols.imag < 0
    return bits
