"""Per-tone MMSE feed-forward taps and hybrid time-domain decision feedback.

One set of formulas serves both hops. An :class:`EffectiveChannel` holds the
per-tone, per-branch response ``u`` seen by the equalizer: the source-relay
responses at the relay, or ``sum_i alpha_i G[i, j]`` at the destination.

Feed-forward taps are plain ``(M, N)`` complex arrays. For tone ``l`` the
equalizer output spectrum is ``sum_n R[n, l] * w[l, n]``.
"""

from dataclasses import dataclass, field

import numpy as np

from . import spectral
from .errors import InvalidConfig, InvalidLength, MissingTruth, SingularSystem
from .modem import hard_decide

COND_LIMIT = 1e12

MODES = ("linear", "genie", "detected-two-pass", "zero-prefix")


@dataclass
class EffectiveChannel:
    u: np.ndarray
    snr: float

    def __post_init__(self):
        self.u = np.asarray(self.u, dtype=np.complex128)
        if self.u.ndim == 1:
            self.u = self.u[:, None]
        if self.u.ndim != 2 or self.u.shape[0] < 1 or self.u.shape[1] < 1:
            raise InvalidLength(f"u must be (M, N) with M, N >= 1, got {self.u.shape}")
        if not self.snr > 0:
            raise InvalidConfig(f"snr must be > 0, got {self.snr}")

    @property
    def m(self) -> int:
        return self.u.shape[0]

    @property
    def n(self) -> int:
        return self.u.shape[1]

    def gain(self) -> np.ndarray:
        """Per-tone ``sum_n |u[l, n]|^2``."""
        return np.sum(np.abs(self.u) ** 2, axis=1)


@dataclass
class FeedbackTaps:
    """Feedback delays (strictly increasing, in ``[1, M-1]``) and their coefficients.

    The filter subtracts ``sum_k conj(coeffs[k]) * s[m - indices[k]]``.
    """

    indices: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=int))
    coeffs: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=complex))

    def __post_init__(self):
        self.indices = np.asarray(self.indices, dtype=int).ravel()
        self.coeffs = np.asarray(self.coeffs, dtype=np.complex128).ravel()
        if self.indices.size != self.coeffs.size:
            raise InvalidLength("indices and coeffs differ in length")
        if np.any(np.diff(self.indices) <= 0) or np.any(self.indices < 1):
            raise InvalidConfig(f"feedback indices must be strictly increasing and >= 1: {self.indices}")

    @property
    def b(self) -> int:
        return self.indices.size

    @classmethod
    def zeros(cls, indices) -> "FeedbackTaps":
        indices = np.asarray(indices, dtype=int).ravel()
        return cls(indices, np.zeros(indices.size, dtype=complex))


@dataclass
class FeedbackSystem:
    v_vec: np.ndarray
    v_mat: np.ndarray


def check_indices(indices, m: int) -> np.ndarray:
    indices = np.asarray(indices, dtype=int).ravel()
    if np.any(indices < 1) or np.any(indices > m - 1) or np.any(np.diff(indices) <= 0):
        raise InvalidConfig(f"feedback indices must be strictly increasing within [1, {m - 1}]")
    return indices


def default_indices(b: int) -> np.ndarray:
    """Consecutive delays ``1..b``."""
    return np.arange(1, b + 1)


def combined_response(fb: FeedbackTaps, m: int) -> np.ndarray:
    """``D[l] = 1 + sum_k conj(f_k) exp(-2j*pi*k*l/M)`` for every tone."""
    d = np.ones(m, dtype=np.complex128)
    if fb.b:
        l = np.arange(m)
        d += np.exp(-2j * np.pi * np.outer(l, fb.indices) / m) @ np.conj(fb.coeffs)
    return d


def ffe_taps(ch: EffectiveChannel, fb: FeedbackTaps | None = None) -> np.ndarray:
    """Closed-form MMSE feed-forward taps given the feedback filter."""
    fb = fb or FeedbackTaps()
    d = combined_response(fb, ch.m)
    denom = 1.0 / ch.snr + ch.gain()
    return np.conj(ch.u) * (d / denom)[:, None]


def ffe_taps_by_solve(ch: EffectiveChannel, fb: FeedbackTaps | None = None) -> np.ndarray:
    """Same taps as :func:`ffe_taps`, from a dense N x N solve on every tone."""
    fb = fb or FeedbackTaps()
    d = combined_response(fb, ch.m)
    a = np.conj(ch.u)  # (M, N); column vector per tone
    eye = np.eye(ch.n) / ch.snr
    lhs = eye[None, :, :] + a[:, :, None] * np.conj(a)[:, None, :]
    rhs = a * d[:, None]
    return np.linalg.solve(lhs, rhs[:, :, None])[:, :, 0]


def lag_coefficients(ch: EffectiveChannel) -> np.ndarray:
    """All ``v_k`` for ``k = 0..M-1``; negative lags wrap modulo M."""
    inv = 1.0 / (1.0 / ch.snr + ch.gain())
    return np.fft.fft(inv) / (ch.m * ch.snr)


def feedback_system(ch: EffectiveChannel, indices) -> FeedbackSystem:
    idx = check_indices(indices, ch.m)
    v = lag_coefficients(ch)
    v_vec = v[idx]
    v_mat = v[(idx[:, None] - idx[None, :]) % ch.m]
    return FeedbackSystem(v_vec, v_mat)


def solve_feedback(system: FeedbackSystem) -> np.ndarray:
    """Feedback coefficients ``f = -V^{-1} v``."""
    if system.v_vec.size == 0:
        return np.zeros(0, dtype=complex)
    if np.linalg.cond(system.v_mat) > COND_LIMIT:
        raise SingularSystem("feedback system is numerically singular")
    return -np.linalg.solve(system.v_mat, system.v_vec)


def design(ch: EffectiveChannel, indices=()) -> tuple[np.ndarray, FeedbackTaps]:
    """Jointly optimal feed-forward and feedback filters for ``ch``."""
    idx = np.asarray(indices, dtype=int).ravel()
    coeffs = solve_feedback(feedback_system(ch, idx))
    fb = FeedbackTaps(idx, coeffs)
    return ffe_taps(ch, fb), fb


def analytic_mse(ch: EffectiveChannel, w, fb: FeedbackTaps | None,
                 sigma_s2: float, sigma_n2: float) -> float:
    """E|z_m - s_m|^2 assuming correct past decisions in the feedback path."""
    fb = fb or FeedbackTaps()
    w = np.asarray(w)
    t = np.sum(w * ch.u, axis=1)
    d = combined_response(fb, ch.m)
    isi = np.sum(np.abs(t - d) ** 2)
    noise = np.sum(np.abs(w) ** 2)
    return float((sigma_s2 * isi + sigma_n2 * noise) / ch.m)


def _feedback_scan(soft0, fb, power, past, causal_only):
    """Sequential DFE scan over one block.

    ``past`` supplies decisions for wrapped indices and is overwritten in
    place with fresh decisions as the scan advances.
    """
    m = soft0.size
    z = soft0.copy()
    taps = np.conj(fb.coeffs)
    amp = np.sqrt(power / 2.0)
    for i in range(m):
        acc = 0j
        for k, c in zip(fb.indices, taps):
            j = i - k
            if j < 0:
                if causal_only:
                    continue
                j += m
            acc += c * past[j]
        zi = soft0[i] - acc
        z[i] = zi
        past[i] = complex(amp if zi.real >= 0 else -amp, amp if zi.imag >= 0 else -amp)
    return z, past


def equalize(received_spectra, w, fb: FeedbackTaps | None, power: float,
             mode: str = "detected-two-pass", truth=None, w_linear=None):
    """Equalize one block received on N branches.

    Parameters
    ----------
    received_spectra : array, shape (N, M)
        DFT of the CP-stripped block on every branch.
    w : array, shape (M, N)
        Feed-forward taps.
    fb : FeedbackTaps or None
        Feedback filter; empty means pure linear FDE and ``mode`` is ignored.
    power : float
        Symbol power used for hard decisions.
    mode : str
        ``genie`` feeds back ``truth`` circularly. ``detected-two-pass`` takes
        first-pass decisions from ``w_linear`` (or from the linear part of
        ``w`` when omitted) and then rescans with circular feedback.
        ``zero-prefix`` treats symbols before the block start as zero.

    Returns
    -------
    decisions, soft : ndarray
        Hard QPSK decisions and the soft equalizer outputs.
    """
    if mode not in MODES:
        raise InvalidConfig(f"unknown feedback mode {mode!r}")
    r = np.atleast_2d(np.asarray(received_spectra, dtype=np.complex128))
    w = np.asarray(w, dtype=np.complex128)
    if r.shape != w.T.shape:
        raise InvalidLength(f"spectra {r.shape} do not match taps {w.shape}")
    fb = fb or FeedbackTaps()
    m = r.shape[1]
    soft0 = spectral.idft(np.sum(r * w.T, axis=0))
    if fb.b == 0 or mode == "linear":
        return hard_decide(soft0, power), soft0

    if mode == "genie":
        if truth is None:
            raise MissingTruth("genie feedback needs the transmitted symbols")
        truth = np.asarray(truth, dtype=np.complex128)
        z = soft0.copy()
        for k, c in zip(fb.indices, np.conj(fb.coeffs)):
            z -= c * np.roll(truth, k)
        return hard_decide(z, power), z

    if mode == "zero-prefix":
        z, dec = _feedback_scan(soft0, fb, power, np.zeros(m, dtype=complex), causal_only=True)
        return dec, z

    # detected-two-pass
    if w_linear is None:
        lin = spectral.idft(np.sum(r * w.T, axis=0) / combined_response(fb, m))
    else:
        lin = spectral.idft(np.sum(r * np.asarray(w_linear).T, axis=0))
    past = hard_decide(lin, power)
    z, dec = _feedback_scan(soft0, fb, power, past, causal_only=False)
    return dec, z
