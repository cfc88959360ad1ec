"""Relay antenna power allocation.

Equal allocation splits the relay power evenly. Optimum allocation solves the
non-convex MMSE problem under ``sum |alpha_i|^2 <= 1`` by iterating the KKT
conditions as a fixed point: taps from alpha, multiplier from the taps, then a
new alpha (and, with decision feedback, new feedback taps) from both.

Relay-destination responses are arrays ``g`` of shape ``(N_R, N_D, M)``.
The MSE objective is normalized to unit symbol power, so ``lambda`` is the
multiplier of that normalized problem.
"""

import logging
from dataclasses import dataclass, field, replace

import numpy as np

from .errors import InvalidConfig, NonConvergence, SingularSystem
from .mmse_fde import (
    COND_LIMIT,
    EffectiveChannel,
    FeedbackTaps,
    analytic_mse,
    check_indices,
    combined_response,
    ffe_taps,
)

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class SolverOptions:
    """Fixed-point solver settings.

    ``epsilon`` is the per-component step threshold. A state only counts as
    converged once the power constraint is also active to ``constraint_tol``;
    pass ``constraint_tol=np.inf`` to stop at the first small step. After the
    first small step the iteration is Anderson-accelerated with
    ``anderson_memory`` past residuals (0 disables it).
    """

    epsilon: float = 1e-3
    max_iterations: int = 500
    initial_alpha: np.ndarray | None = None
    constraint_tol: float = 1e-8
    anderson_memory: int = 5

    def __post_init__(self):
        if not self.epsilon > 0:
            raise InvalidConfig("epsilon must be > 0")
        if self.max_iterations < 1:
            raise InvalidConfig("max_iterations must be >= 1")
        if self.anderson_memory < 0:
            raise InvalidConfig("anderson_memory must be >= 0")


@dataclass
class KktState:
    alpha: np.ndarray
    lam: float
    w: np.ndarray
    fb: FeedbackTaps = field(default_factory=FeedbackTaps)
    iterations: int = 0
    converged: bool = False


def equal_allocation(n_r: int) -> np.ndarray:
    if n_r < 1:
        raise InvalidConfig(f"need at least one relay antenna, got {n_r}")
    return np.full(n_r, np.sqrt(1.0 / n_r), dtype=np.complex128)


def _check_g(g) -> np.ndarray:
    g = np.asarray(g, dtype=np.complex128)
    if g.ndim != 3:
        raise InvalidConfig(f"g must have shape (N_R, N_D, M), got {g.shape}")
    return g


def effective_channel_dest(g, alpha, snr_hat: float) -> EffectiveChannel:
    """Destination view ``u[l, j] = sum_i alpha_i G[i, j, l]``."""
    g = _check_g(g)
    alpha = np.asarray(alpha, dtype=np.complex128).ravel()
    if alpha.size != g.shape[0]:
        raise InvalidConfig(f"{alpha.size} weights for {g.shape[0]} relay antennas")
    return EffectiveChannel(np.einsum("i,ijl->lj", alpha, g), snr_hat)


def lambda_update(w, snr_hat: float, m: int) -> float:
    return float(np.sum(np.abs(w) ** 2) / (m * snr_hat))


def c_vectors(g, w) -> np.ndarray:
    """Rows ``C[l, i] = conj(sum_j w[l, j] G[i, j, l])``, shape ``(M, N_R)``."""
    return np.conj(np.einsum("lj,ijl->li", w, _check_g(g)))


def feedback_update(u, w, indices) -> np.ndarray:
    """Feedback taps stationary for the given feed-forward taps.

    ``f_k = (1/M) sum_l conj(T_l) exp(-2j*pi*k*l/M)`` with ``T_l = sum_j w[l, j] u[l, j]``.
    """
    indices = np.asarray(indices, dtype=int)
    t = np.sum(np.asarray(w) * np.asarray(u), axis=1)
    return np.fft.fft(np.conj(t))[indices] / t.size


def alpha_update(c, lam: float, m: int, fb: FeedbackTaps | None = None) -> np.ndarray:
    """Solve ``(m*lam*I + sum_l C_l C_l^H) alpha = sum_l C_l D_l``. Not normalized."""
    c = np.asarray(c, dtype=np.complex128)
    d = combined_response(fb or FeedbackTaps(), m)
    a = m * lam * np.eye(c.shape[1]) + c.T @ np.conj(c)
    if np.linalg.cond(a) > COND_LIMIT:
        raise SingularSystem("power allocation system is numerically singular")
    return np.linalg.solve(a, c.T @ d)


def _step(g, alpha, f, indices, snr_hat):
    """One sweep of the fixed-point map from ``(alpha, f)``."""
    m = g.shape[2]
    ch = effective_channel_dest(g, alpha, snr_hat)
    w = ffe_taps(ch, FeedbackTaps(indices, f))
    lam = lambda_update(w, snr_hat, m)
    f_new = feedback_update(ch.u, w, indices)
    fb_new = FeedbackTaps(indices, f_new)
    alpha_new = alpha_update(c_vectors(g, w), lam, m, fb_new)
    return alpha_new, fb_new, lam, w


def _to_real(z):
    return np.concatenate([z.real, z.imag])


def _to_complex(x):
    n = x.size // 2
    return x[:n] + 1j * x[n:]


def _solve(g, snr_hat, indices, opts: SolverOptions) -> KktState:
    g = _check_g(g)
    n_r, _, m = g.shape
    indices = check_indices(indices, m)
    if opts.initial_alpha is None:
        alpha = equal_allocation(n_r)
    else:
        alpha = np.asarray(opts.initial_alpha, dtype=np.complex128).ravel()
        if alpha.size != n_r:
            raise InvalidConfig(f"initial_alpha has {alpha.size} entries, expected {n_r}")
    f = np.zeros(indices.size, dtype=np.complex128)

    x = np.concatenate([alpha, f])
    xs, rs = [], []
    polishing = False
    prev_step = np.inf
    for it in range(1, opts.max_iterations + 1):
        alpha, f = x[:n_r], x[n_r:]
        alpha_new, fb_new, lam, w = _step(g, alpha, f, indices, snr_hat)
        fx = np.concatenate([alpha_new, fb_new.coeffs])
        step = float(np.max(np.abs(fx - x)))
        power_gap = abs(float(np.sum(np.abs(alpha_new) ** 2)) - 1.0)
        state = KktState(alpha_new, lam, w, fb_new, it, False)
        if log.isEnabledFor(logging.DEBUG):
            ch = effective_channel_dest(g, alpha, snr_hat)
            log.debug("iter %d step %.3e power gap %.3e mse %.6e", it, step, power_gap,
                      analytic_mse(ch, w, FeedbackTaps(indices, f), 1.0, 1.0 / snr_hat))
        if step < opts.epsilon and power_gap <= opts.constraint_tol:
            state.converged = True
            return state
        if step < opts.epsilon:
            polishing = True
        if not (polishing and opts.anderson_memory):
            x = fx
            continue
        # Anderson mixing on the real-stacked iterate; restart whenever the
        # residual grows so a bad extrapolation cannot run away.
        if step > prev_step:
            xs, rs = [], []
        prev_step = step
        xr, rr = _to_real(x), _to_real(fx - x)
        xs.append(xr)
        rs.append(rr)
        xs, rs = xs[-(opts.anderson_memory + 1):], rs[-(opts.anderson_memory + 1):]
        if len(rs) < 2:
            x = fx
            continue
        d_r = np.diff(np.array(rs), axis=0).T
        d_x = np.diff(np.array(xs), axis=0).T
        gamma = np.linalg.lstsq(d_r, rr, rcond=None)[0]
        x = _to_complex(xr + rr - (d_x + d_r) @ gamma)
    raise NonConvergence(f"no convergence in {opts.max_iterations} iterations", state)


def optimize_fde(g, snr_hat: float, opts: SolverOptions | None = None) -> KktState:
    """Optimum allocation and destination FDE taps without decision feedback."""
    return _solve(g, snr_hat, np.zeros(0, dtype=int), opts or SolverOptions())


def optimize_fde_dfe(g, snr_hat: float, indices, opts: SolverOptions | None = None) -> KktState:
    """Optimum allocation jointly with destination FDE and feedback taps."""
    return _solve(g, snr_hat, indices, opts or SolverOptions())


def _lagrangian_gradient(g, state: KktState, snr_hat: float, h: float) -> np.ndarray:
    alpha = np.asarray(state.alpha, dtype=np.complex128)

    def mse(a):
        ch = effective_channel_dest(g, a, snr_hat)
        return analytic_mse(ch, state.w, state.fb, 1.0, 1.0 / snr_hat)

    grad = np.empty(2 * alpha.size)
    for i in range(alpha.size):
        for part, direction in enumerate((1.0, 1j)):
            e = np.zeros_like(alpha)
            e[i] = h * direction
            grad[2 * i + part] = (mse(alpha + e) - mse(alpha - e)) / (2 * h)
    constraint = 2 * np.column_stack([alpha.real, alpha.imag]).ravel()
    return grad + state.lam * constraint


def kkt_residual(g, state: KktState, snr_hat: float, h: float = 1e-6) -> float:
    """Largest violation among stationarity, primal and dual feasibility."""
    g = _check_g(g)
    stationarity = float(np.max(np.abs(_lagrangian_gradient(g, state, snr_hat, h))))
    primal = abs(float(np.sum(np.abs(state.alpha) ** 2)) - 1.0)
    dual = max(0.0, -state.lam)
    return max(stationarity, primal, dual)


def rotate_phase(state: KktState, phi: float) -> KktState:
    """The equivalent optimum ``(alpha e^{j phi}, w e^{-j phi})``."""
    rot = np.exp(1j * phi)
    return replace(state, alpha=state.alpha * rot, w=state.w / rot)
