import numpy as np
import pytest

from dfrelay.channel import PowerDelayProfile, draw_channel, freq_response
from dfrelay.errors import InvalidConfig, NonConvergence, SingularSystem
from dfrelay.mmse_fde import (
    EffectiveChannel,
    FeedbackTaps,
    analytic_mse,
    design,
    feedback_system,
    ffe_taps,
    solve_feedback,
)
from dfrelay.power_alloc import (
    KktState,
    SolverOptions,
    alpha_update,
    c_vectors,
    effective_channel_dest,
    equal_allocation,
    kkt_residual,
    lambda_update,
    optimize_fde,
    optimize_fde_dfe,
    rotate_phase,
)

from conftest import crandn, rel_err

SNR = 10.0


def draw_g(rng, n_r=2, n_d=2, m=64, l_g=3, sigma_t=2.0):
    return freq_response(draw_channel(PowerDelayProfile(1.0, sigma_t, l_g), rng, (n_r, n_d)), m)


def mse_at(g, alpha, w, fb, snr=SNR):
    return analytic_mse(effective_channel_dest(g, alpha, snr), w, fb, 1.0, 1.0 / snr)


class TestEqualAllocation:
    def test_single(self):
        np.testing.assert_allclose(equal_allocation(1), [1.0])

    def test_four(self):
        np.testing.assert_allclose(equal_allocation(4), [0.5] * 4, rtol=1e-15)

    @pytest.mark.parametrize("n", [1, 2, 3, 7])
    def test_unit_power(self, n):
        assert np.sum(np.abs(equal_allocation(n)) ** 2) == pytest.approx(1.0, abs=1e-15)

    def test_invalid(self):
        with pytest.raises(InvalidConfig):
            equal_allocation(0)


class TestEffectiveChannel:
    def test_identical_antennas(self, rng):
        g1 = crandn(rng, 1, 3, 8)
        g = np.concatenate([g1, g1])
        ch = effective_channel_dest(g, equal_allocation(2), SNR)
        np.testing.assert_allclose(ch.u, np.sqrt(2) * g1[0].T)

    def test_selection(self, rng):
        g = crandn(rng, 3, 2, 8)
        ch = effective_channel_dest(g, [1, 0, 0], SNR)
        np.testing.assert_allclose(ch.u, g[0].T)
        assert ch.snr == SNR

    def test_mismatch(self, rng):
        with pytest.raises(InvalidConfig):
            effective_channel_dest(crandn(rng, 2, 2, 8), [1.0], SNR)


class TestLambda:
    def test_zero(self):
        assert lambda_update(np.zeros((8, 2)), SNR, 8) == 0

    def test_unit(self):
        w = np.full((4, 2), np.sqrt(4 * SNR / 8))
        assert lambda_update(w, SNR, 4) == pytest.approx(1.0)

    def test_homogeneous(self, rng):
        w = crandn(rng, 8, 2)
        c = 0.4 - 1.1j
        assert lambda_update(c * w, SNR, 8) == pytest.approx(abs(c) ** 2 * lambda_update(w, SNR, 8))


class TestCVectors:
    def test_zero_taps(self, rng):
        np.testing.assert_array_equal(c_vectors(crandn(rng, 2, 2, 8), np.zeros((8, 2))), 0)

    def test_single_destination_antenna(self, rng):
        g = crandn(rng, 3, 1, 8)
        np.testing.assert_allclose(c_vectors(g, np.ones((8, 1))), np.conj(g[:, 0, :]).T)

    def test_gradient_identity(self, rng):
        # d MSE / d conj(alpha) = (1/M) sum_l C_l (C_l^H alpha - D_l), checked by finite differences
        g = draw_g(rng, 3, 2, 16)
        alpha = crandn(rng, 3) / 3
        fb = FeedbackTaps([1, 2], crandn(rng, 2) / 4)
        w = crandn(rng, 16, 2)
        c = c_vectors(g, w)
        d = 1 + np.exp(-2j * np.pi * np.outer(np.arange(16), fb.indices) / 16) @ np.conj(fb.coeffs)
        analytic = (c.T @ (np.conj(c) @ alpha - d)) / 16
        h = 1e-6
        for i in range(3):
            e = np.zeros(3, dtype=complex)
            e[i] = h
            dx = (mse_at(g, alpha + e, w, fb) - mse_at(g, alpha - e, w, fb)) / (2 * h)
            dy = (mse_at(g, alpha + 1j * e, w, fb) - mse_at(g, alpha - 1j * e, w, fb)) / (2 * h)
            assert dx == pytest.approx(2 * analytic[i].real, rel=1e-6, abs=1e-9)
            assert dy == pytest.approx(2 * analytic[i].imag, rel=1e-6, abs=1e-9)


class TestAlphaUpdate:
    def test_zero_c(self):
        np.testing.assert_array_equal(alpha_update(np.zeros((8, 2)), 0.5, 8), 0)

    def test_scalar(self, rng):
        c = crandn(rng, 8, 1)
        expected = c.sum() / (8 * 0.3 + np.sum(np.abs(c) ** 2))
        np.testing.assert_allclose(alpha_update(c, 0.3, 8), [expected], rtol=1e-12)

    def test_dense_oracle(self, rng):
        for _ in range(20):
            c = crandn(rng, 16, 3)
            lam = rng.uniform(0.01, 1)
            a = 16 * lam * np.eye(3) + sum(np.outer(cl, np.conj(cl)) for cl in c)
            expected = np.linalg.inv(a) @ c.sum(axis=0)
            assert rel_err(alpha_update(c, lam, 16), expected) < 1e-10

    def test_with_feedback_weights(self, rng):
        c = crandn(rng, 8, 2)
        fb = FeedbackTaps([1], [0.2 + 0.1j])
        d = 1 + np.conj(fb.coeffs[0]) * np.exp(-2j * np.pi * np.arange(8) / 8)
        a = 8 * 0.2 * np.eye(2) + c.T @ np.conj(c)
        np.testing.assert_allclose(alpha_update(c, 0.2, 8, fb), np.linalg.solve(a, c.T @ d))

    def test_singular(self):
        c = np.zeros((8, 2))
        c[:, 0] = 1
        with pytest.raises(SingularSystem):
            alpha_update(c, 0.0, 8)


class TestOptimizeFde:
    def test_single_relay_antenna(self, rng):
        g = draw_g(rng, 1, 2, 32)
        state = optimize_fde(g, SNR)
        assert state.converged
        assert abs(state.alpha[0]) == pytest.approx(1.0, abs=1e-6)

    def test_symmetric_channel(self, rng):
        g1 = draw_g(rng, 1, 2, 8)
        g = np.concatenate([g1, g1])
        # brute force over real allocations on the unit circle
        thetas = np.linspace(0, np.pi / 2, 2001)

        def mse(theta):
            ch = effective_channel_dest(g, [np.cos(theta), np.sin(theta)], SNR)
            return analytic_mse(ch, ffe_taps(ch), None, 1.0, 1 / SNR)

        best = thetas[np.argmin([mse(t) for t in thetas])]
        assert best == pytest.approx(np.pi / 4, abs=1e-3)
        state = optimize_fde(g, SNR)
        np.testing.assert_allclose(np.abs(state.alpha), np.sqrt(0.5), atol=1e-4)

    def test_certified(self, rng):
        g = draw_g(rng)
        state = optimize_fde(g, SNR)
        assert kkt_residual(g, state, SNR) <= 1e-4
        assert abs(np.sum(np.abs(state.alpha) ** 2) - 1) <= 1e-8
        assert state.lam >= 0

    def test_custom_start(self, rng):
        g = draw_g(rng)
        start = np.array([0.6, 0.8j])
        state = optimize_fde(g, SNR, SolverOptions(initial_alpha=start))
        assert state.converged
        assert kkt_residual(g, state, SNR) <= 1e-4

    def test_plain_iteration_matches_reference_loop(self, rng):
        # Without acceleration or the constraint test the solver is the bare
        # fixed-point loop, written out here from the update equations.
        g = draw_g(rng, 2, 2, 32)
        m = 32
        alpha = equal_allocation(2)
        for it in range(1, 501):
            u = np.einsum("i,ijl->lj", alpha, g)
            w = np.conj(u) / (1 / SNR + np.sum(np.abs(u) ** 2, axis=1))[:, None]
            lam = np.sum(np.abs(w) ** 2) / (m * SNR)
            c = np.array([[np.conj(np.sum(w[l] * g[i, :, l])) for i in range(2)] for l in range(m)])
            a = m * lam * np.eye(2) + sum(np.outer(cl, np.conj(cl)) for cl in c)
            new = np.linalg.solve(a, c.sum(axis=0))
            done = np.all(np.abs(new - alpha) < 1e-3)
            alpha = new
            if done:
                break
        state = optimize_fde(g, SNR, SolverOptions(constraint_tol=np.inf, anderson_memory=0))
        assert state.iterations == it
        np.testing.assert_allclose(state.alpha, alpha, rtol=1e-12)

    def test_non_convergence_keeps_state(self, rng):
        g = draw_g(rng)
        with pytest.raises(NonConvergence) as info:
            optimize_fde(g, SNR, SolverOptions(max_iterations=2))
        assert isinstance(info.value.state, KktState)
        assert info.value.state.iterations == 2
        assert not info.value.state.converged

    def test_deterministic(self, rng):
        g = draw_g(rng)
        a = optimize_fde_dfe(g, SNR, [1, 2])
        b = optimize_fde_dfe(g, SNR, [1, 2])
        assert np.array_equal(a.alpha, b.alpha) and np.array_equal(a.w, b.w)
        assert a.iterations == b.iterations


class TestOptimizeFdeDfe:
    def test_empty_feedback_reduces_to_fde(self, rng):
        g = draw_g(rng)
        a = optimize_fde(g, SNR)
        b = optimize_fde_dfe(g, SNR, [])
        assert np.array_equal(a.alpha, b.alpha)
        assert np.array_equal(a.w, b.w)
        assert a.lam == b.lam and a.iterations == b.iterations

    def test_flat_channels_need_no_feedback(self, rng):
        g = np.repeat(crandn(rng, 2, 2, 1), 32, axis=2)
        state = optimize_fde_dfe(g, SNR, [1, 2])
        np.testing.assert_allclose(state.fb.coeffs, 0, atol=1e-12)

    def test_feedback_matches_closed_form(self, rng):
        g = draw_g(rng)
        state = optimize_fde_dfe(g, SNR, [1, 2])
        ch = effective_channel_dest(g, state.alpha, SNR)
        closed = solve_feedback(feedback_system(ch, [1, 2]))
        np.testing.assert_allclose(state.fb.coeffs, closed, atol=1e-5)

    def test_state_taps_consistent(self, rng):
        g = draw_g(rng)
        state = optimize_fde_dfe(g, SNR, [1, 2])
        ch = effective_channel_dest(g, state.alpha, SNR)
        assert rel_err(state.w, ffe_taps(ch, state.fb)) < 1e-6
        assert kkt_residual(g, state, SNR) <= 1e-4


class TestKktResidual:
    def test_equal_allocation_is_not_stationary(self):
        rng = np.random.default_rng(11)
        large = 0
        for _ in range(20):
            g = draw_g(rng)
            alpha = equal_allocation(2)
            ch = effective_channel_dest(g, alpha, SNR)
            w = ffe_taps(ch)
            state = KktState(alpha, lambda_update(w, SNR, 64), w)
            large += kkt_residual(g, state, SNR) > 1e-2
        assert large >= 18

    def test_phase_invariance(self, rng):
        g = draw_g(rng)
        for state in (optimize_fde(g, SNR), optimize_fde_dfe(g, SNR, [1, 2])):
            base_res = kkt_residual(g, state, SNR)
            base_mse = mse_at(g, state.alpha, state.w, state.fb)
            for phi in (0.3, 2.0, 5.9):
                rot = rotate_phase(state, phi)
                assert mse_at(g, rot.alpha, rot.w, rot.fb) == pytest.approx(base_mse, abs=1e-10)
                assert kkt_residual(g, rot, SNR) == pytest.approx(base_res, abs=1e-8)

    def test_negative_multiplier_counts(self, rng):
        g = draw_g(rng)
        state = optimize_fde(g, SNR)
        state.lam = -0.5
        assert kkt_residual(g, state, SNR) >= 0.5


def test_w_step_never_increases_mse(rng):
    g = draw_g(rng)
    alpha = crandn(rng, 2)
    alpha /= np.linalg.norm(alpha)
    fb = FeedbackTaps([1, 2], crandn(rng, 2) / 5)
    ch = effective_channel_dest(g, alpha, SNR)
    w_opt = ffe_taps(ch, fb)
    for _ in range(20):
        w_other = w_opt + 0.05 * crandn(rng, *w_opt.shape)
        assert mse_at(g, alpha, w_opt, fb) <= mse_at(g, alpha, w_other, fb)


def test_opa_not_worse_than_epa(rng):
    for _ in range(10):
        g = draw_g(rng)
        for idx in ([], [1, 2]):
            ch = effective_channel_dest(g, equal_allocation(2), SNR)
            w, fb = design(ch, idx)
            epa = analytic_mse(ch, w, fb, 1.0, 1 / SNR)
            state = optimize_fde_dfe(g, SNR, idx)
            assert mse_at(g, state.alpha, state.w, state.fb) <= epa + 1e-9
