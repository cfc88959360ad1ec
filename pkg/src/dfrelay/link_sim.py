"""Two-hop decode-and-forward link simulation and Monte-Carlo BER sweeps.

Random streams: trial ``t`` seeds ``numpy.random.SeedSequence([base_seed, t])``
and spawns five PCG64 children, used in order for source bits, source-relay
channels, relay noise, relay-destination channels and destination noise.
Draws therefore depend only on ``(base_seed, t)``; the same channels and
noise shapes are reused across SNR points, schemes and power allocations.
"""

import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, fields

import numpy as np

from . import spectral
from .channel import PowerDelayProfile, draw_channel, freq_response, transmit_over_channel
from .errors import InvalidConfig, NonConvergence
from .mmse_fde import MODES, EffectiveChannel, default_indices, design, equalize, ffe_taps
from .modem import demodulate, hard_decide, modulate
from .power_alloc import (
    SolverOptions,
    effective_channel_dest,
    equal_allocation,
    optimize_fde,
    optimize_fde_dfe,
)

SCHEMES = ("fde", "fde_dfe")
POWER_ALLOCS = ("epa", "opa")

# Equalizer design SNR used in place of an infinite SNR (noiseless test runs).
MAX_DESIGN_SNR = 1e12


@dataclass
class SimConfig:
    m: int = 512
    l_cp: int = 20
    n_r: int = 2
    n_d: int = 2
    l_h: int = 3
    l_g: int = 3
    sigma_t: float = 2.0
    avg_power: float = 1.0
    symbol_duration: float = 1.0
    normalize_pdp: bool = False
    p_s: float = 1.0
    p_r: float = 1.0
    snr_db_grid: list = field(default_factory=lambda: [0.0, 5.0, 10.0, 15.0, 20.0])
    scheme: str = "fde"
    power_alloc: str = "epa"
    feedback_mode: str = "detected-two-pass"
    b_h: int | None = None
    b_g: int | None = None
    epsilon: float = 1e-3
    max_iterations: int = 500
    trials: int = 100
    base_seed: int = 0

    def __post_init__(self):
        self.validate()

    @property
    def feedback_h(self) -> int:
        return self.l_h - 1 if self.b_h is None else self.b_h

    @property
    def feedback_g(self) -> int:
        return self.l_g - 1 if self.b_g is None else self.b_g

    def validate(self):
        def bad(key, msg):
            raise InvalidConfig(f"{key}: {msg}")

        if not spectral.is_power_of_two(self.m):
            bad("m", f"block size must be a power of two, got {self.m}")
        for key in ("n_r", "n_d", "l_h", "l_g"):
            if getattr(self, key) < 1:
                bad(key, "must be >= 1")
        if self.l_cp < max(self.l_h, self.l_g) - 1:
            bad("l_cp", f"cyclic prefix {self.l_cp} shorter than channel memory")
        if self.l_cp > self.m:
            bad("l_cp", "cyclic prefix longer than the block")
        if not 0 <= self.feedback_h <= self.l_h - 1:
            bad("b_h", f"must lie in [0, l_h - 1], got {self.feedback_h}")
        if not 0 <= self.feedback_g <= self.l_g - 1:
            bad("b_g", f"must lie in [0, l_g - 1], got {self.feedback_g}")
        if self.sigma_t <= 0:
            bad("sigma_t", "must be > 0")
        if self.p_s <= 0 or self.p_r <= 0:
            bad("p_s" if self.p_s <= 0 else "p_r", "transmit power must be > 0")
        if self.scheme not in SCHEMES:
            bad("scheme", f"expected one of {SCHEMES}")
        if self.power_alloc not in POWER_ALLOCS:
            bad("power_alloc", f"expected one of {POWER_ALLOCS}")
        if self.feedback_mode not in MODES or self.feedback_mode == "linear":
            bad("feedback_mode", "expected genie, detected-two-pass or zero-prefix")
        if self.epsilon <= 0:
            bad("epsilon", "must be > 0")
        if self.max_iterations < 1:
            bad("max_iterations", "must be >= 1")
        if self.trials < 1:
            bad("trials", "need at least one trial")
        if not self.snr_db_grid:
            bad("snr_db_grid", "empty SNR grid")
        self.snr_db_grid = [float(x) for x in self.snr_db_grid]

    def pdp(self, num_taps: int) -> PowerDelayProfile:
        return PowerDelayProfile(self.avg_power, self.sigma_t, num_taps,
                                 self.symbol_duration, self.normalize_pdp)


@dataclass(frozen=True)
class TrialResult:
    e2e_bit_errors: int
    relay_bit_errors: int
    bits: int
    opa_converged: bool = True
    opa_iterations: int = 0


@dataclass(frozen=True)
class BerRecord:
    scheme: str
    power_alloc: str
    n_r: int
    n_d: int
    l_h: int
    l_g: int
    sigma_t: float
    snr_db: float
    trials: int
    bits: int
    bit_errors: int
    relay_bit_errors: int
    ber: float
    ci95_halfwidth: float
    opa_nonconvergence_count: int


def ci95_halfwidth(ber: float, bits: int) -> float:
    return 1.96 * math.sqrt(ber * (1.0 - ber) / bits)


def trial_streams(base_seed: int, trial_index: int) -> list[np.random.Generator]:
    children = np.random.SeedSequence([base_seed, trial_index]).spawn(5)
    return [np.random.Generator(np.random.PCG64(c)) for c in children]


def noise_variance(power: float, snr_db: float) -> float:
    return power / 10.0 ** (snr_db / 10.0)


def _design_snr(power, noise_var):
    return MAX_DESIGN_SNR if noise_var == 0 else min(power / noise_var, MAX_DESIGN_SNR)


def _receive(ch: EffectiveChannel, spectra, indices, power, mode, truth):
    if indices.size == 0:
        w = ffe_taps(ch)
        return equalize(spectra, w, None, power)[0]
    w, fb = design(ch, indices)
    return equalize(spectra, w, fb, power, mode, truth=truth, w_linear=ffe_taps(ch))[0]


def run_trial(cfg: SimConfig, snr_db: float, trial_index: int,
              second_hop_noise: bool = True) -> TrialResult:
    """One block through source -> relay -> destination.

    ``snr_db = inf`` gives noiseless hops. ``second_hop_noise=False`` removes
    only the destination noise, which isolates error propagation.
    """
    rng_bits, rng_h, rng_n1, rng_g, rng_n2 = trial_streams(cfg.base_seed, trial_index)
    m = cfg.m
    dfe = cfg.scheme == "fde_dfe"

    bits = rng_bits.integers(0, 2, 2 * m, dtype=np.int8)
    s = modulate(bits, cfg.p_s)

    # first hop
    h = draw_channel(cfg.pdp(cfg.l_h), rng_h, cfg.n_r)
    var1 = noise_variance(cfg.p_s, snr_db)
    r = np.array([transmit_over_channel(s, h[i], cfg.l_cp, var1, rng_n1) for i in range(cfg.n_r)])
    ch1 = EffectiveChannel(freq_response(h, m).T, _design_snr(cfg.p_s, var1))
    idx_h = default_indices(cfg.feedback_h) if dfe else np.zeros(0, dtype=int)
    s_relay = _receive(ch1, np.fft.fft(r, axis=1), idx_h, cfg.p_s, cfg.feedback_mode, s)
    relay_bits = demodulate(s_relay, cfg.p_s)
    # the relay re-modulates its decisions at its own power
    s_relay = s_relay * np.sqrt(cfg.p_r / cfg.p_s)

    # second hop
    g_taps = draw_channel(cfg.pdp(cfg.l_g), rng_g, (cfg.n_r, cfg.n_d))
    g = freq_response(g_taps, m)
    var2 = var1 if second_hop_noise else 0.0
    snr_hat = _design_snr(cfg.p_r, var1)
    idx_g = default_indices(cfg.feedback_g) if dfe else np.zeros(0, dtype=int)

    converged, iterations = True, 0
    if cfg.power_alloc == "epa":
        alpha = equal_allocation(cfg.n_r)
    else:
        opts = SolverOptions(cfg.epsilon, cfg.max_iterations)
        try:
            if dfe:
                state = optimize_fde_dfe(g, snr_hat, idx_g, opts)
            else:
                state = optimize_fde(g, snr_hat, opts)
        except NonConvergence as exc:
            state = exc.state
            converged = False
        alpha, iterations = state.alpha, state.iterations

    combined = np.einsum("i,ijk->jk", alpha, g_taps)
    r2 = np.array([transmit_over_channel(s_relay, combined[j], cfg.l_cp, var2, rng_n2)
                   for j in range(cfg.n_d)])
    if cfg.power_alloc == "epa" or not converged:
        ch2 = effective_channel_dest(g, alpha, snr_hat)
        dest = _receive(ch2, np.fft.fft(r2, axis=1), idx_g, cfg.p_r, cfg.feedback_mode, s_relay)
    else:
        w, fb = state.w, state.fb
        w_lin = ffe_taps(effective_channel_dest(g, alpha, snr_hat)) if fb.b else None
        dest = equalize(np.fft.fft(r2, axis=1), w, fb, cfg.p_r, cfg.feedback_mode,
                        truth=s_relay, w_linear=w_lin)[0]
    dest_bits = demodulate(dest, cfg.p_r)

    return TrialResult(
        e2e_bit_errors=int(np.count_nonzero(dest_bits != bits)),
        relay_bit_errors=int(np.count_nonzero(relay_bits != bits)),
        bits=bits.size,
        opa_converged=converged,
        opa_iterations=iterations,
    )


def _run_chunk(cfg: SimConfig, snr_db: float, start: int, stop: int):
    e2e = relay = bits = nonconv = 0
    for t in range(start, stop):
        res = run_trial(cfg, snr_db, t)
        e2e += res.e2e_bit_errors
        relay += res.relay_bit_errors
        bits += res.bits
        nonconv += not res.opa_converged
    return e2e, relay, bits, nonconv


def _chunks(trials: int, workers: int):
    size = max(1, math.ceil(trials / (4 * workers)))
    return [(a, min(a + size, trials)) for a in range(0, trials, size)]


def run_sweep(cfg: SimConfig, threads: int = 1) -> list[BerRecord]:
    """Aggregate ``cfg.trials`` trials at every SNR point.

    ``threads`` caps the number of worker processes; the result does not
    depend on it because per-trial streams are fixed and counts are summed.
    """
    cfg.validate()
    jobs = [(snr, a, b) for snr in cfg.snr_db_grid for a, b in _chunks(cfg.trials, threads)]
    if threads > 1:
        with ProcessPoolExecutor(max_workers=threads) as pool:
            futures = [pool.submit(_run_chunk, cfg, *job) for job in jobs]
            parts = [f.result() for f in futures]
    else:
        parts = [_run_chunk(cfg, *job) for job in jobs]

    totals = {snr: np.zeros(4, dtype=np.int64) for snr in cfg.snr_db_grid}
    for (snr, _, _), part in zip(jobs, parts):
        totals[snr] += np.array(part, dtype=np.int64)

    records = []
    for snr in cfg.snr_db_grid:
        e2e, relay, bits, nonconv = (int(x) for x in totals[snr])
        ber = e2e / bits
        records.append(BerRecord(
            cfg.scheme, cfg.power_alloc, cfg.n_r, cfg.n_d, cfg.l_h, cfg.l_g,
            cfg.sigma_t, snr, cfg.trials, bits, e2e, relay, ber,
            ci95_halfwidth(ber, bits), nonconv,
        ))
    return records


def config_fields() -> dict:
    return {f.name: f for f in fields(SimConfig)}


def config_to_dict(cfg: SimConfig) -> dict:
    return asdict(cfg)
