"""Reduced-scale oracle and invariant checks behind ``dfrelay selftest``."""

import sys
import time

import numpy as np

from . import spectral
from .channel import PowerDelayProfile, draw_channel, freq_response, transmit_over_channel
from .errors import NonConvergence
from .mmse_fde import (
    EffectiveChannel,
    analytic_mse,
    design,
    equalize,
    feedback_system,
    ffe_taps,
    ffe_taps_by_solve,
    solve_feedback,
)
from .modem import demodulate, modulate
from .power_alloc import kkt_residual, optimize_fde, optimize_fde_dfe


def direct_dft(x):
    m = len(x)
    k = np.arange(m)
    return np.exp(-2j * np.pi * np.outer(k, k) / m) @ x


def _crandn(rng, *shape):
    return rng.standard_normal(shape) + 1j * rng.standard_normal(shape)


def check_dft_direct_sum(rng):
    for m in (1, 2, 8, 64):
        x = _crandn(rng, m)
        ref = direct_dft(x)
        err = np.max(np.abs(spectral.dft(x) - ref)) / max(np.max(np.abs(ref)), 1e-300)
        assert err < 1e-12, f"M={m}: relative error {err:.2e}"


def check_round_trip(rng):
    for m in (2, 16, 512):
        x = _crandn(rng, m)
        err = np.max(np.abs(spectral.idft(spectral.dft(x)) - x)) / np.max(np.abs(x))
        assert err < 1e-12, f"M={m}: relative error {err:.2e}"


def check_parseval(rng):
    for m in (2, 16, 512):
        x = _crandn(rng, m)
        lhs = np.sum(np.abs(x) ** 2)
        rhs = np.sum(np.abs(spectral.dft(x)) ** 2) / m
        assert abs(lhs - rhs) <= 1e-10 * lhs, f"M={m}: {lhs} != {rhs}"


def check_convolution_theorem(rng):
    for m in (4, 32):
        a, b = _crandn(rng, m), _crandn(rng, m)
        lhs = spectral.dft(spectral.circular_convolve(a, b))
        rhs = spectral.dft(a) * spectral.dft(b)
        assert np.max(np.abs(lhs - rhs)) <= 1e-10 * np.max(np.abs(rhs))


def check_cp_circularity(rng):
    m, taps = 64, _crandn(rng, 5)
    x = _crandn(rng, m)
    padded = np.zeros(m, dtype=complex)
    padded[:taps.size] = taps
    out = transmit_over_channel(x, taps, 4, 0.0)
    ref = spectral.circular_convolve(x, padded)
    assert np.max(np.abs(out - ref)) <= 1e-12 * np.max(np.abs(ref))


def check_qpsk(rng):
    bits = rng.integers(0, 2, 256)
    for power in (0.5, 1.0, 2.0):
        assert np.array_equal(demodulate(modulate(bits, power), power), bits)


def check_ffe_oracle(rng):
    for _ in range(50):
        m, n = int(rng.integers(4, 65)), int(rng.integers(1, 5))
        ch = EffectiveChannel(_crandn(rng, m, n), float(rng.uniform(0.1, 100)))
        w, fb = design(ch, np.arange(1, min(3, m - 1) + 1))
        for f in (None, fb):
            a, b = ffe_taps(ch, f), ffe_taps_by_solve(ch, f)
            assert np.max(np.abs(a - b)) <= 1e-10 * np.max(np.abs(b))


def check_feedback_hand_example(rng):
    ch = EffectiveChannel(np.array([[1.0], [0.0]]), 1.0)
    sys_ = feedback_system(ch, [1])
    assert np.allclose(sys_.v_mat, [[0.75]], atol=1e-14)
    assert np.allclose(sys_.v_vec, [-0.25], atol=1e-14)
    f = solve_feedback(sys_)
    assert np.allclose(f, [1 / 3], atol=1e-14)


def check_analytic_mse(rng, blocks=2000):
    m, n, snr, power = 16, 2, 4.0, 1.0
    taps = [draw_channel(PowerDelayProfile(1.0, 2.0, 3), rng) for _ in range(n)]
    ch = EffectiveChannel(freq_response(np.array(taps), m).T, snr)
    w, fb = design(ch, [1, 2])
    sigma_n2 = power / snr
    target = analytic_mse(ch, w, fb, power, sigma_n2)
    per_block = np.empty(blocks)
    for b in range(blocks):
        s = modulate(rng.integers(0, 2, 2 * m), power)
        r = np.array([transmit_over_channel(s, t, 2, sigma_n2, rng) for t in taps])
        _, z = equalize(np.fft.fft(r, axis=1), w, fb, power, "genie", truth=s)
        per_block[b] = np.mean(np.abs(z - s) ** 2)
    se = per_block.std(ddof=1) / np.sqrt(blocks)
    assert abs(per_block.mean() - target) <= 3 * se, \
        f"Monte-Carlo {per_block.mean():.5f} vs closed form {target:.5f} (se {se:.1e})"


def check_kkt(rng, draws=10):
    for _ in range(draws):
        g = freq_response(draw_channel(PowerDelayProfile(1.0, 2.0, 3), rng, (2, 2)), 32)
        for solve in (lambda: optimize_fde(g, 10.0), lambda: optimize_fde_dfe(g, 10.0, [1, 2])):
            try:
                state = solve()
            except NonConvergence:
                continue
            res = kkt_residual(g, state, 10.0)
            assert res <= 1e-4, f"residual {res:.2e}"


CHECKS = [
    ("dft-direct-sum", check_dft_direct_sum),
    ("round-trip", check_round_trip),
    ("parseval", check_parseval),
    ("convolution-theorem", check_convolution_theorem),
    ("cp-circularity", check_cp_circularity),
    ("qpsk-round-trip", check_qpsk),
    ("ffe-oracle-equivalence", check_ffe_oracle),
    ("feedback-hand-example", check_feedback_hand_example),
    ("analytic-mse-monte-carlo", check_analytic_mse),
    ("kkt-certificate", check_kkt),
]


def run(corrupt_dft: bool = False, seed: int = 2024, out=sys.stdout) -> list[str]:
    """Run every check and return the names of the failing ones."""
    failures = []
    saved = spectral._CORRUPT_CONVENTION
    spectral._CORRUPT_CONVENTION = corrupt_dft
    try:
        for i, (name, check) in enumerate(CHECKS):
            rng = np.random.default_rng([seed, i])
            t0 = time.perf_counter()
            try:
                check(rng)
            except Exception as exc:  # report every failing check, not just the first
                failures.append(name)
                print(f"FAIL {name}: {type(exc).__name__}: {exc}", file=out)
            else:
                print(f"PASS {name} ({time.perf_counter() - t0:.2f}s)", file=out)
    finally:
        spectral._CORRUPT_CONVENTION = saved
    return failures
