"""Exponential-PDP Rayleigh multipath channels and cyclic-prefixed block transmission."""

from dataclasses import dataclass

import numpy as np

from .errors import CpTooShort, InvalidConfig, InvalidLength


@dataclass(frozen=True)
class PowerDelayProfile:
    """Exponential power delay profile sampled at the symbol rate.

    Tap ``l`` has average power ``(avg_power / delay_spread) * exp(-l * symbol_duration / delay_spread)``.
    The total power is not renormalized to ``avg_power`` unless ``normalize`` is set.
    """

    avg_power: float = 1.0
    delay_spread: float = 2.0
    num_taps: int = 3
    symbol_duration: float = 1.0
    normalize: bool = False

    def __post_init__(self):
        if self.avg_power < 0:
            raise InvalidConfig("avg_power must be >= 0")
        if self.delay_spread <= 0:
            raise InvalidConfig("delay_spread must be > 0")
        if self.num_taps < 1:
            raise InvalidConfig("num_taps must be >= 1")
        if self.symbol_duration <= 0:
            raise InvalidConfig("symbol_duration must be > 0")

    def powers(self) -> np.ndarray:
        """Per-tap powers for every tap index."""
        p = np.array([pdp_power(self, l) for l in range(self.num_taps)])
        return p


def pdp_power(pdp: PowerDelayProfile, l: int) -> float:
    if not 0 <= l < pdp.num_taps:
        raise IndexError(f"tap index {l} outside [0, {pdp.num_taps})")
    scale = pdp.avg_power / pdp.delay_spread
    p = scale * np.exp(-l * pdp.symbol_duration / pdp.delay_spread)
    if pdp.normalize and pdp.avg_power > 0:
        n = np.arange(pdp.num_taps)
        total = scale * np.exp(-n * pdp.symbol_duration / pdp.delay_spread).sum()
        p *= pdp.avg_power / total
    return float(p)


def complex_gaussian(rng: np.random.Generator, shape, var=1.0) -> np.ndarray:
    """Circularly-symmetric complex Gaussian samples with variance ``var``."""
    std = np.sqrt(np.asarray(var, dtype=float) / 2.0)
    return std * (rng.standard_normal(shape) + 1j * rng.standard_normal(shape))


def draw_channel(pdp: PowerDelayProfile, rng: np.random.Generator, size=None) -> np.ndarray:
    """Draw Rayleigh taps from ``pdp``.

    With ``size`` given, returns an array of shape ``(*size, num_taps)`` of
    independent channels; taps are always the last axis.
    """
    lead = () if size is None else tuple(np.atleast_1d(size))
    return complex_gaussian(rng, lead + (pdp.num_taps,), pdp.powers())


def freq_response(taps, m: int) -> np.ndarray:
    """M-point frequency response of taps along the last axis."""
    taps = np.asarray(taps, dtype=np.complex128)
    if taps.shape[-1] > m:
        raise InvalidLength(f"{taps.shape[-1]} taps do not fit in a block of {m}")
    return np.fft.fft(taps, n=m, axis=-1)


def transmit_over_channel(block, taps, l_cp: int, noise_var: float,
                          rng: np.random.Generator | None = None) -> np.ndarray:
    """Send one block through ``taps`` with a cyclic prefix of ``l_cp`` samples.

    The prefix is stripped at the receiver, so with ``noise_var == 0`` the
    output equals the circular convolution of the block with the taps.
    """
    block = np.asarray(block, dtype=np.complex128)
    taps = np.asarray(taps, dtype=np.complex128)
    if taps.ndim != 1 or taps.size < 1:
        raise InvalidLength("taps must be a non-empty 1-D sequence")
    if l_cp < taps.size - 1:
        raise CpTooShort(f"l_cp={l_cp} < L-1={taps.size - 1}")
    if l_cp > block.size:
        raise InvalidLength(f"l_cp={l_cp} longer than block of {block.size}")
    if noise_var < 0:
        raise InvalidConfig("noise_var must be >= 0")
    m = block.size
    tx = np.concatenate([block[m - l_cp:], block]) if l_cp else block
    rx = np.convolve(tx, taps)[l_cp:l_cp + m]
    if noise_var > 0:
        if rng is None:
            raise InvalidConfig("a random stream is required when noise_var > 0")
        rx = rx + complex_gaussian(rng, m, noise_var)
    return rx
