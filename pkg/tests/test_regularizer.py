import numpy as np
import pytest

from conftest import random_params
from nrnn.errors import ConfigurationError, NumericalError
from nrnn.linalg import psd_sqrt
from nrnn.regularizer import (build_report, compute_Q_hat,
                              compute_Q_hat_hierarchy, compute_R_hat,
                              compute_R_hat_frobenius, compute_v_m,
                              hierarchy_residual_slope, loss_hessian_final,
                              mc_loss_ratio, delta_scaling_probe,
                              reference_instance, simulate_hierarchy,
                              verify_theorem1)
from nrnn.sde import (ModelParams, NoiseConfig, StepSchedule, drift,
                      jacobian_chain, jacobian_product, simulate,
                      uniform_schedule)
from nrnn.training import softmax


def make_instance(seed, d_h=3, d_x=2, d_y=3, m_steps=4, linear=False,
                  sigma1=0.7, sigma2=0.4):
    p = random_params(seed, d_h=d_h, d_x=d_x, d_y=d_y)
    if linear:
        p = ModelParams(A=p.A, W=np.zeros((d_h, d_h)), U=p.U, b=p.b, V=p.V)
    rng = np.random.default_rng(seed + 10_000)
    x_seq = rng.standard_normal((m_steps, d_x))
    schedule = StepSchedule(rng.uniform(0.1, 0.25, m_steps))
    n = NoiseConfig(epsilon=1.0, sigma1=sigma1, sigma2=sigma2)
    traj = simulate(x_seq, p, NoiseConfig(), schedule)
    chain = jacobian_chain(traj, x_seq, p, schedule)
    return x_seq, p, n, schedule, traj, chain


class TestLossHessian:
    def test_uniform_probabilities_closed_form(self):
        d_h, d_y = 3, 4
        p = ModelParams(A=np.zeros((d_h, d_h)), W=np.zeros((d_h, d_h)),
                        U=np.zeros((d_h, 1)), b=np.zeros(d_h),
                        V=np.zeros((d_y, d_h)))
        traj = simulate(np.zeros((2, 1)), p, NoiseConfig(), uniform_schedule(2))
        hess = loss_hessian_final(traj, p)
        # V = 0: logit factor is (1/d)I - (1/d^2) 11^T but V^T . V = 0.
        assert np.all(hess == 0.0)
        # check the logit-space factor directly through an identity readout
        p2 = ModelParams(A=np.zeros((d_y, d_y)), W=np.zeros((d_y, d_y)),
                         U=np.zeros((d_y, 1)), b=np.zeros(d_y), V=np.eye(d_y))
        traj2 = simulate(np.zeros((1, 1)), p2, NoiseConfig(), uniform_schedule(1))
        hess2 = loss_hessian_final(traj2, p2)
        expected = np.eye(d_y) / d_y - np.ones((d_y, d_y)) / d_y ** 2
        np.testing.assert_allclose(hess2, expected, atol=1e-14)

    def test_saturated_probabilities_vanish(self):
        d_h = 3
        p = ModelParams(A=np.zeros((d_h, d_h)), W=np.zeros((d_h, d_h)),
                        U=np.zeros((d_h, 1)), b=np.array([1.0, 0.0, 0.0]),
                        V=100.0 * np.eye(3))
        traj = simulate(np.zeros((1, 1)), p, NoiseConfig(),
                        uniform_schedule(1, 1.0))
        hess = loss_hessian_final(traj, p)
        assert np.max(np.abs(hess)) < 1e-12

    @pytest.mark.parametrize("seed", range(5))
    def test_matches_finite_difference_hessian(self, seed):
        x_seq, p, n, schedule, traj, chain = make_instance(seed)
        hess = loss_hessian_final(traj, p)
        label = 1  # cross-entropy Hessian in the state is label-free
        h_final = traj.final_state
        eps = 5e-4

        def loss_at(h):
            logits = p.V @ h
            shifted = logits - logits.max()
            return float(np.log(np.exp(shifted).sum()) - shifted[label])

        d_h = p.d_h
        fd = np.zeros((d_h, d_h))
        for i in range(d_h):
            for j in range(d_h):
                ei = np.zeros(d_h)
                ej = np.zeros(d_h)
                ei[i] = eps
                ej[j] = eps
                fd[i, j] = (loss_at(h_final + ei + ej) - loss_at(h_final + ei - ej)
                            - loss_at(h_final - ei + ej)
                            + loss_at(h_final - ei - ej)) / (4 * eps * eps)
        np.testing.assert_allclose(hess, fd, atol=1e-5)

    def test_psd_and_ones_annihilated(self):
        x_seq, p, n, schedule, traj, chain = make_instance(11)
        hess = loss_hessian_final(traj, p)
        eigs = np.linalg.eigvalsh(hess)
        assert eigs.min() > -1e-12
        probs = softmax(p.V @ traj.final_state)
        factor = np.diag(probs) - np.outer(probs, probs)
        np.testing.assert_allclose(factor @ np.ones(p.d_y), 0.0, atol=1e-14)


class TestRHat:
    def test_zero_diffusion(self):
        x_seq, p, _, schedule, traj, chain = make_instance(0)
        n0 = NoiseConfig(epsilon=1.0, sigma1=0.0, sigma2=0.0)
        value, per_step = compute_R_hat(traj, chain, p, n0, schedule)
        assert value == 0.0 and np.all(per_step == 0.0)

    def test_single_step_direct(self):
        x_seq, p, n, schedule, traj, chain = make_instance(1, m_steps=1)
        value, per_step = compute_R_hat(traj, chain, p, n, schedule)
        hess = loss_hessian_final(traj, p)
        sigma = n.sigma1 + n.sigma2 * drift(traj.states[0], x_seq[0], p)
        direct = schedule.deltas[0] * float(
            np.trace(np.diag(sigma) @ hess @ np.diag(sigma)))
        assert value == pytest.approx(direct, rel=1e-12)
        assert per_step.shape == (1,)

    @pytest.mark.parametrize("seed", range(10))
    def test_trace_equals_frobenius(self, seed):
        x_seq, p, n, schedule, traj, chain = make_instance(seed, m_steps=5)
        value, _ = compute_R_hat(traj, chain, p, n, schedule)
        frob = compute_R_hat_frobenius(traj, chain, p, n, schedule)
        assert frob == pytest.approx(value, rel=1e-8)

    def test_nonnegative(self):
        for seed in range(20):
            x_seq, p, n, schedule, traj, chain = make_instance(seed)
            value, _ = compute_R_hat(traj, chain, p, n, schedule)
            assert value >= -1e-10


def test_psd_sqrt_rejects_indefinite():
    mat = np.diag([1.0, -0.5])
    with pytest.raises(NumericalError):
        psd_sqrt(mat)


class TestVm:
    def test_linear_drift_vanishes(self):
        x_seq, p, n, schedule, traj, chain = make_instance(2, linear=True)
        for m in range(1, len(schedule)):
            assert np.all(compute_v_m(traj, chain, p, n, schedule, m) == 0.0)

    def test_zero_diffusion_vanishes(self):
        x_seq, p, _, schedule, traj, chain = make_instance(3)
        n0 = NoiseConfig(epsilon=1.0, sigma1=0.0, sigma2=0.0)
        for m in range(1, len(schedule)):
            np.testing.assert_allclose(
                compute_v_m(traj, chain, p, n0, schedule, m), 0.0, atol=1e-15)

    def test_matches_index_expanded_loop(self):
        x_seq, p, n, schedule, traj, chain = make_instance(4, d_h=2, d_x=1,
                                                           m_steps=3)
        m_steps = len(schedule)
        z_term = p.W @ traj.states[-1] + p.U @ x_seq[-1] + p.b
        t = np.tanh(z_term)
        curvature = -2.0 * t * (1.0 - t * t)
        for m in range(1, m_steps):
            sigma = n.sigma1 + n.sigma2 * drift(traj.states[m - 1], x_seq[m - 1], p)
            phi = jacobian_product(chain, m_steps - 2, m)
            expected = np.zeros(2)
            for comp in range(2):
                h_comp = curvature[comp] * np.outer(p.W[comp], p.W[comp])
                smat = np.diag(sigma)
                expected[comp] = np.trace(smat.T @ phi.T @ h_comp @ phi @ smat)
            np.testing.assert_allclose(
                compute_v_m(traj, chain, p, n, schedule, m), expected, rtol=1e-12)

    def test_index_range(self):
        x_seq, p, n, schedule, traj, chain = make_instance(5)
        with pytest.raises(ConfigurationError):
            compute_v_m(traj, chain, p, n, schedule, 0)
        with pytest.raises(ConfigurationError):
            compute_v_m(traj, chain, p, n, schedule, len(schedule))


class TestQHat:
    def test_linear_drift_zero(self):
        x_seq, p, n, schedule, traj, chain = make_instance(6, linear=True)
        assert compute_Q_hat(traj, chain, p, n, schedule, 0) == 0.0
        assert compute_Q_hat_hierarchy(traj, chain, p, n, schedule, 0) == 0.0

    def test_single_step_zero(self):
        x_seq, p, n, schedule, traj, chain = make_instance(7, m_steps=1)
        assert compute_Q_hat(traj, chain, p, n, schedule, 1) == 0.0


class TestHierarchy:
    def test_zero_diffusion_kills_perturbations(self):
        x_seq, p, _, schedule, traj, chain = make_instance(8)
        n0 = NoiseConfig(epsilon=1.0, sigma1=0.0, sigma2=0.0)
        state = simulate_hierarchy(x_seq, p, n0, schedule, rng_seed=0)
        assert np.all(state.h1 == 0.0) and np.all(state.h2 == 0.0)

    def test_linear_additive_second_order_vanishes(self):
        x_seq, p, n, schedule, traj, chain = make_instance(9, linear=True,
                                                           sigma1=0.8, sigma2=0.0)
        state = simulate_hierarchy(x_seq, p, n, schedule, rng_seed=1)
        assert np.all(state.h2 == 0.0)
        assert np.any(state.h1 != 0.0)
        assert state.h1[0] @ state.h1[0] == 0.0  # starts at zero

    def test_deterministic_branch_matches_simulate(self):
        x_seq, p, n, schedule, traj, chain = make_instance(10)
        state = simulate_hierarchy(x_seq, p, n, schedule, rng_seed=2)
        np.testing.assert_allclose(state.h0, traj.states, rtol=1e-13)

    def test_coupled_residual_is_third_order(self):
        x_seq, label, p, n, schedule = reference_instance()
        residuals, slope = hierarchy_residual_slope(
            x_seq, p, n, schedule, np.logspace(-1, -3, 5), n_paths=500,
            rng_seed=0)
        assert 2.7 <= slope <= 3.3

    def test_single_path_matches_batched_recursion(self):
        # simulate_hierarchy and the path-vectorized recursion inside the
        # residual check implement the same processes; weld them together.
        x_seq, label, p, n, schedule = reference_instance()
        xi = np.random.default_rng(5).standard_normal((len(schedule), p.d_h))
        state = simulate_hierarchy(x_seq, p, n, schedule, xi=xi)

        from nrnn.sde import drift_jacobian_h, get_activation
        act = get_activation(p.activation)
        h0 = np.zeros(p.d_h)
        h1 = np.zeros((1, p.d_h))
        h2 = np.zeros((1, p.d_h))
        for m in range(len(schedule)):
            delta = schedule.deltas[m]
            sq = np.sqrt(delta)
            z = p.W @ h0 + p.U @ x_seq[m] + p.b
            f = p.A @ h0 + act.fn(z)
            jac_f = drift_jacobian_h(h0, x_seq[m], p)
            j_m = np.eye(p.d_h) + delta * jac_f
            sig = n.sigma1 + n.sigma2 * f
            psi1 = 0.5 * act.d2(z) * (h1 @ p.W.T) ** 2
            psi2_noise = n.sigma2 * (h1 @ jac_f.T) * xi[m]
            h2 = h2 @ j_m.T + delta * psi1 + sq * psi2_noise
            h1 = h1 @ j_m.T + sq * sig * xi[m]
            h0 = h0 + delta * f
        np.testing.assert_allclose(state.h0[-1], h0, rtol=1e-13)
        np.testing.assert_allclose(state.h1[-1], h1[0], rtol=1e-12)
        np.testing.assert_allclose(state.h2[-1], h2[0], rtol=1e-12)


class TestVerify:
    def test_linear_additive_ratio_equals_r_half(self):
        # Affine dynamics with additive noise: the quadratic term is exact
        # and the odd orders vanish in expectation.
        x_seq, p, n, schedule, traj, chain = make_instance(12, linear=True,
                                                           sigma1=1.0, sigma2=0.0)
        r_hat, _ = compute_R_hat(traj, chain, p, n, schedule)
        assert compute_Q_hat(traj, chain, p, n, schedule, 0) == 0.0
        ratio, stderr = mc_loss_ratio(x_seq, 0, p, n, schedule, eps=0.05,
                                      n_paths=200_000, rng_seed=3)
        assert abs(ratio - 0.5 * r_hat) <= 3 * stderr

    def test_zero_diffusion_ratio_zero(self):
        x_seq, p, _, schedule, traj, chain = make_instance(13)
        n0 = NoiseConfig(epsilon=1.0, sigma1=0.0, sigma2=0.0)
        ratio, stderr = mc_loss_ratio(x_seq, 0, p, n0, schedule, eps=0.01,
                                      n_paths=1000, rng_seed=4)
        # all paths collapse onto one trajectory; ratio and stderr only
        # carry ulp-level noise from batched summation order
        assert abs(ratio) < 1e-8
        assert stderr < 1e-12

    def test_report_structure_and_consistency(self):
        x_seq, label, p, n, schedule = reference_instance()
        report = verify_theorem1(x_seq, label, p, n, schedule,
                                 eps_grid=[3e-2, 1e-2], n_paths=20_000,
                                 rng_seed=0, hierarchy_paths=300,
                                 scaling_levels=4)
        assert report["R_hat"] == pytest.approx(report["R_hat_frobenius"],
                                                rel=1e-8)
        assert len(report["mc_table"]) == 2
        for row in report["mc_table"]:
            assert row["stderr"] > 0
            assert isinstance(row["inconclusive"], bool)
        # both readings of the gradient-coupled term are recorded
        assert "Q_hat" in report and "Q_hat_hierarchy" in report
        assert 2.7 <= report["hierarchy_residual"]["slope"] <= 3.3

    def test_inconclusive_flag_set_when_noise_dominates(self):
        x_seq, label, p, n, schedule = reference_instance()
        report = verify_theorem1(x_seq, label, p, n, schedule,
                                 eps_grid=[1e-4], n_paths=50, rng_seed=0,
                                 hierarchy_paths=50, scaling_levels=2)
        # 50 paths at a tiny amplitude cannot resolve the effect
        assert report["mc_table"][0]["inconclusive"] is True

    def test_hierarchy_reading_is_the_true_coefficient(self):
        # Antithetic pairing cancels the odd orders, leaving standard errors
        # small enough to separate the two readings of the gradient-coupled
        # term: the step-coupled (hierarchy) value matches the expectation,
        # the decoupled printed form does not.
        x_seq, label, p, n, schedule = reference_instance()
        traj = simulate(x_seq, p, NoiseConfig(), schedule)
        chain = jacobian_chain(traj, x_seq, p, schedule)
        r_hat, _ = compute_R_hat(traj, chain, p, n, schedule)
        q_verbatim = compute_Q_hat(traj, chain, p, n, schedule, label)
        q_hier = compute_Q_hat_hierarchy(traj, chain, p, n, schedule, label)
        ratio, stderr = mc_loss_ratio(x_seq, label, p, n, schedule, eps=1e-2,
                                      n_paths=1_000_000, rng_seed=2,
                                      antithetic=True)
        dev_hier = abs(ratio - 0.5 * (q_hier + r_hat)) / stderr
        dev_verbatim = abs(ratio - 0.5 * (q_verbatim + r_hat)) / stderr
        assert dev_hier < 5.0
        assert dev_verbatim > 10.0


class TestDeltaScaling:
    def test_scale_mode_slopes(self):
        x_seq, label, p, n, schedule = reference_instance()
        out = delta_scaling_probe(x_seq, label, p, n, schedule, n_levels=5,
                                  mode="scale")
        assert abs(out["slope_R"] - 1.0) <= 0.3
        assert abs(out["slope_Q"] - 2.0) <= 0.5

    def test_subdivide_mode_reports_only(self):
        # Fixed-horizon refinement drives both terms to their continuum
        # limits, so the magnitudes flatten out instead of decaying.
        x_seq, label, p, n, schedule = reference_instance()
        out = delta_scaling_probe(x_seq, label, p, n, schedule, n_levels=4,
                                  mode="subdivide")
        assert abs(out["slope_R"]) < 0.5

    def test_unknown_mode(self):
        x_seq, label, p, n, schedule = reference_instance()
        with pytest.raises(ConfigurationError):
            delta_scaling_probe(x_seq, label, p, n, schedule, mode="bogus")


def test_report_dataclass_fields():
    x_seq, label, p, n, schedule = reference_instance()
    traj = simulate(x_seq, p, NoiseConfig(), schedule)
    chain = jacobian_chain(traj, x_seq, p, schedule)
    report = build_report(traj, chain, p, n, schedule, label)
    assert report.Delta == schedule.Delta
    assert report.per_step_R_contributions.shape == (len(schedule),)
    assert report.R_hat == pytest.approx(
        float(report.per_step_R_contributions.sum()))
