"""Density estimator contracts, engine agreement, bias/variance behavior."""

import math

import numpy as np
import pytest

from kinest.density import (
    DensityEstimate,
    bias_bound,
    estimate_density,
    mesh_slack,
    occupation_variance_bounds,
    supnorm_risk,
    variance_experiment,
)
from kinest.grids import EvalGrid
from kinest.kernels import ProductKernel, make_order_kernel, uniform_kernel
from kinest.models import free_model, harmonic_model
from kinest.rates import (
    RegimeKey,
    SmoothnessParams,
    bandwidth_from_smoothness,
    psi_variance_scale,
)
from kinest.simulate import Trajectory, simulate_em, stationary_start


def _constant_trajectory(z, n=50, dt=1e-4, d=1):
    X = np.full((n + 1, d), z[0], dtype=float)
    Y = np.full((n + 1, d), z[1], dtype=float)
    return Trajectory(dt=dt, n_steps=n, X=X, Y=Y, seed=0, model_id="const")


UNIFORM = ProductKernel(uniform_kernel(), uniform_kernel(), 1)


class TestEstimateDensity:
    def test_constant_path_off_support(self):
        traj = _constant_trajectory((0.0, 0.0))
        grid = EvalGrid.from_box([0.3, 0.3], [0.4, 0.4], 0.005)
        est = estimate_density(traj, UNIFORM, 0.2, 0.2, grid, engine="exact")
        assert np.all(est.values == 0.0)

    def test_constant_path_at_point(self):
        traj = _constant_trajectory((0.12, -0.3))
        grid = EvalGrid.from_box([0.12, -0.3], [0.12, -0.3], 0.05)
        est = estimate_density(traj, UNIFORM, 0.2, 0.4, grid, engine="exact")
        assert est.values.reshape(()) == pytest.approx(1.0 / (0.2 * 0.4), rel=1e-12)

    def test_binned_matches_exact(self):
        m = harmonic_model()
        traj = simulate_em(m, [0.0, 0.0], 400.0, 0.005, seed=12)
        grid = EvalGrid.from_box([-1.0, -1.0], [1.0, 1.0], 0.05)
        a = estimate_density(traj, UNIFORM, 0.3, 0.3, grid, engine="exact")
        b = estimate_density(traj, UNIFORM, 0.3, 0.3, grid, engine="binned",
                             bins_per_bandwidth=256)
        scale = float(np.max(np.abs(a.values)))
        assert np.max(np.abs(a.values - b.values)) < 6e-3 * scale

    def test_binned_matches_exact_higher_order(self):
        m = harmonic_model()
        traj = simulate_em(m, [0.0, 0.0], 200.0, 0.005, seed=13)
        grid = EvalGrid.from_box([-0.8, -0.8], [0.8, 0.8], 0.05)
        K = ProductKernel(make_order_kernel(3), make_order_kernel(2), 1)
        a = estimate_density(traj, K, 0.4, 0.3, grid, engine="exact")
        b = estimate_density(traj, K, 0.4, 0.3, grid, engine="binned",
                             bins_per_bandwidth=256)
        scale = float(np.max(np.abs(a.values)))
        assert np.max(np.abs(a.values - b.values)) < 6e-3 * scale

    def test_dimension_two_exact_engine(self):
        m = harmonic_model(d=2)
        traj = simulate_em(m, [0.0, 0.0, 0.0, 0.0], 20.0, 0.01, seed=3)
        grid = EvalGrid.from_box([-0.5] * 4, [0.5] * 4, 0.25)
        K = ProductKernel(uniform_kernel(), uniform_kernel(), 2)
        est = estimate_density(traj, K, 0.6, 0.6, grid)
        # direct reference sum over all samples and grid points
        pts = grid.points()
        ref = np.zeros(pts.shape[0])
        for k in range(traj.n_steps):
            ux = (pts[:, :2] - traj.X[k]) / 0.6
            uy = (pts[:, 2:] - traj.Y[k]) / 0.6
            inside = np.all(np.abs(ux) <= 0.5, axis=1) & np.all(np.abs(uy) <= 0.5, axis=1)
            ref += inside / 0.6**4
        ref *= traj.dt / traj.T
        assert np.allclose(est.values.reshape(-1), ref, atol=1e-10)

    def test_preconditions(self):
        traj = _constant_trajectory((0.0, 0.0), dt=0.05)
        grid = EvalGrid.from_box([-1, -1], [1, 1], 0.05)
        with pytest.raises(ValueError, match="dt"):
            estimate_density(traj, UNIFORM, 0.2, 0.2, grid)
        grid_coarse = EvalGrid.from_box([-1, -1], [1, 1], 0.2)
        traj_fine = _constant_trajectory((0.0, 0.0), dt=1e-4)
        with pytest.raises(ValueError, match="mesh"):
            estimate_density(traj_fine, UNIFORM, 0.2, 0.2, grid_coarse)
        with pytest.raises(ValueError, match="engine"):
            estimate_density(traj_fine, UNIFORM, 0.2, 0.2, grid, engine="fft")

    def test_mass_close_to_one(self):
        m = harmonic_model()
        traj = simulate_em(m, stationary_start(m, 0, 0.01, 1), 500.0, 0.01, seed=9)
        grid = EvalGrid.from_box([-3.2, -3.2], [3.2, 3.2], 0.1)
        est = estimate_density(traj, UNIFORM, 0.4, 0.4, grid, engine="exact")
        mass = float(est.values.sum()) * grid.mesh**2
        assert mass == pytest.approx(1.0, abs=0.02)


class TestSupnormRisk:
    def test_exact_match_gives_zero(self):
        grid = EvalGrid.from_box([-1, -1], [1, 1], 0.1)
        truth = lambda x, y: np.exp(-x[:, 0] ** 2 - y[:, 0] ** 2)
        est = DensityEstimate(grid, grid.evaluate(truth), 0.3, 0.3, 10.0, "k")
        assert supnorm_risk(est, truth) == 0.0

    def test_single_offset_value(self):
        grid = EvalGrid.from_box([0, 0], [0, 0], 0.1)
        est = DensityEstimate(grid, np.full((1, 1), 0.3), 0.3, 0.3, 10.0, "k")
        assert supnorm_risk(est, lambda x, y: np.zeros(x.shape[0])) == pytest.approx(0.3)

    def test_mesh_refinement_within_slack(self):
        m = harmonic_model()
        K = ProductKernel(make_order_kernel(2), make_order_kernel(2), 1)
        traj = simulate_em(m, stationary_start(m, 0, 0.01, 2), 300.0, 0.01, seed=14)
        truth = m.gibbs
        risks = {}
        for mesh in (0.02, 0.01):
            grid = EvalGrid.from_box([-1.0, 0.5], [1.0, 1.5], mesh)
            est = estimate_density(traj, K, 0.5, 0.5, grid, engine="exact")
            risks[mesh] = supnorm_risk(est, truth)
            if mesh == 0.02:
                slack = mesh_slack(est, K, truth_lipschitz=0.5)
        assert abs(risks[0.02] - risks[0.01]) < slack

    @pytest.mark.slow
    def test_paired_seed_risk_improves_with_horizon(self):
        """Sign test over 10 paired replications: risk at 10 T beats risk at T."""
        m = harmonic_model()
        params = SmoothnessParams(2.0, 2.0)
        grid = EvalGrid.from_box([-1.0, 0.5], [1.0, 1.5], 0.04)
        drops = 0
        n_pairs = 10
        for rep in range(n_pairs):
            risks = []
            for T in (300.0, 3000.0):
                key = RegimeKey(2.0, 2.0, 1, grid.eps_D)
                h1, h2 = bandwidth_from_smoothness(T, params, key, "density")
                dt = min(min(h1, h2) ** 2, m.dt_max)
                n = round(T / dt)
                traj = simulate_em(m, stationary_start(m, 0, 0.01, 100 + rep),
                                   n * dt, dt, seed=100 + rep)
                est = estimate_density(traj, UNIFORM, h1, h2, grid)
                risks.append(supnorm_risk(est, m.gibbs))
            drops += risks[1] < risks[0]
        # 9 of 10 one-sided sign successes correspond to p < 0.05 under a fair coin
        assert drops >= 9, f"risk dropped in only {drops}/10 pairs"


class TestBiasBound:
    def test_zero_limit(self):
        assert bias_bound(0.0, 0.0, SmoothnessParams(2.0, 2.0)) == 0.0

    def test_balanced_pair_equal_summands(self):
        params = SmoothnessParams(1.7, 2.9, L1=1.0, L2=1.0)
        key = RegimeKey(1.7, 2.9, 1, 0.0)
        h1, h2 = bandwidth_from_smoothness(1e4, params, key, "density")
        assert h1**1.7 == pytest.approx(h2**2.9, rel=1e-12)
        assert bias_bound(h1, h2, params) == pytest.approx(2 * h1**1.7, rel=1e-12)

    def test_carries_holder_constants(self):
        params = SmoothnessParams(2.0, 1.0, L1=3.0, L2=5.0)
        assert bias_bound(0.5, 0.25, params) == pytest.approx(3.0 * 0.25 + 5.0 * 0.25)

    def test_rejects_out_of_range(self):
        with pytest.raises(ValueError):
            bias_bound(1.5, 0.5, SmoothnessParams(2.0, 2.0))


@pytest.mark.slow
def test_empirical_bias_scales_quadratically():
    """Mean estimator bias at a point tracks h^2 for an order-1 kernel.

    The oracle is the Euler chain's own stationary Gaussian (exact discrete
    Lyapunov solution), which removes the O(dt) scheme bias from the
    measurement and isolates pure smoothing bias; common random numbers pair
    the bandwidth ladder.
    """
    from scipy import linalg

    from kinest import _fast
    from kinest.simulate import philox_rng

    m = harmonic_model()
    dt = 0.002
    A = np.array([[1.0, dt], [-dt, 1.0 - dt]])
    Q = np.array([[0.0, 0.0], [0.0, dt]])
    cov = linalg.solve_discrete_lyapunov(A, Q)
    prec = np.linalg.inv(cov)
    rho_em0 = 1.0 / (2 * math.pi * math.sqrt(np.linalg.det(cov)))
    coef = np.asarray(UNIFORM.k1.coefficients)
    hs = np.array([0.8, 0.8 / math.sqrt(2.0), 0.4])
    T, reps = 6000.0, 400
    n = int(round(T / dt))
    vals = np.zeros((reps, hs.size))
    for r in range(reps):
        rng = philox_rng(5000 + r)
        z0 = m.gibbs.sample(rng, 1)[0]
        out = np.zeros(hs.size)
        _fast.em_bump_averages_d1(
            m.fast_code, *m.fast_params, float(z0[0]), float(z0[1]), dt, n, rng,
            0.0, 0.0, hs, hs, coef, coef, out,
        )
        vals[r] = out / (hs * hs)
    bias = vals.mean(axis=0) - rho_em0
    assert np.all(bias < 0)  # peak value is smoothed downward
    slope = np.polyfit(np.log(hs), np.log(-bias), 1)[0]
    assert 1.8 <= slope <= 2.2, f"bias slope {slope}"
    del prec


class TestVarianceBounds:
    def test_composition_matches_scale_function(self):
        # the compliance composition is the square of the variance-scale function
        for s1, s2, d, T, refined in (
            (0.1, 0.3, 1, 50.0, False),
            (0.1, 0.3, 1, 50.0, True),
            (0.2, 0.2, 2, 200.0, False),
            (0.05, 0.5, 3, 1e4, True),
        ):
            bounds = occupation_variance_bounds(s1, s2, d, T, refined=refined)
            psi = psi_variance_scale(s1, s2, d, T, refined=refined)
            assert bounds["composition"] * T == pytest.approx(
                ((s1 * s2) ** d * psi) ** 2, rel=1e-12
            )

    def test_branch_table_d1(self):
        T = 100.0
        b = occupation_variance_bounds(0.25, 0.5, 1, T, refined=True)
        assert b["general_1"] * T == pytest.approx(0.25**2 * math.log(T))
        assert b["general_2"] * T == pytest.approx(0.25 ** (4 / 3) * 0.5**2)
        assert b["refined_1"] * T == pytest.approx(0.25**2 * 0.5)
        assert b["refined_2"] * T == pytest.approx(0.25**1.5 * 0.5**2)

    def test_rejects_bad_args(self):
        with pytest.raises(ValueError):
            occupation_variance_bounds(0.0, 0.5, 1, 100.0)
        with pytest.raises(ValueError):
            occupation_variance_bounds(0.5, 0.5, 1, 2.0)


class TestVarianceExperiment:
    def test_rejects_few_reps(self):
        with pytest.raises(ValueError):
            variance_experiment(free_model(), (0.0, 1.0), 0.25, 0.5, 30.0, reps=1)

    def test_time_average_below_marginal_variance(self):
        m = harmonic_model()
        probe = variance_experiment(m, (0.0, 0.0), 1.0, 1.0, 64.0, reps=100, seed0=5)
        # marginal variance of the bump under the stationary law (quadrature)
        xs = np.linspace(-0.5, 0.5, 201)
        X, Y = np.meshgrid(xs, xs, indexing="ij")
        w = m.gibbs(np.column_stack([X.ravel()]), np.column_stack([Y.ravel()]))
        dx = xs[1] - xs[0]
        mean_f = float(np.sum(w)) * dx * dx
        var_marginal = mean_f - mean_f**2
        assert probe.empirical_variance < var_marginal

    def test_refined_regime_flag_via_center(self):
        m = free_model()
        a = variance_experiment(m, (0.0, 1.0), 0.25, 0.5, 30.0, reps=10, seed0=1)
        b = variance_experiment(m, (0.0, 0.0), 0.25, 0.5, 30.0, reps=10, seed0=1)
        assert a.refined and not b.refined
        assert a.bounds["composition"] != b.bounds["composition"]

    @pytest.mark.slow
    def test_zero_velocity_center_never_less_variable(self):
        """At small velocity windows the general regime dominates the refined one."""
        m = free_model()
        seeds = list(range(500, 700))
        v0 = variance_experiment(m, (0.0, 0.0), 2**-5, 0.25, 128.0, reps=200, seeds=seeds)
        v1 = variance_experiment(m, (0.0, 1.0), 2**-5, 0.25, 128.0, reps=200, seeds=seeds)
        assert v0.empirical_variance >= v1.empirical_variance

    @pytest.mark.slow
    def test_refined_slope_smoke(self):
        m = free_model()
        seeds = list(range(900, 1050))
        out = [
            variance_experiment(m, (0.0, 1.0), s1, 1.5, 128.0, reps=150, seeds=seeds)
            for s1 in (2.0**-2, 2.0**-4, 2.0**-6)
        ]
        var = np.array([p.empirical_variance for p in out])
        s1s = np.array([p.s1 for p in out])
        slope = np.polyfit(np.log(s1s), np.log(var), 1)[0]
        assert slope >= 1.2
        chat = var[0] / out[0].bound
        assert all(p.empirical_variance <= chat * p.bound * (1 + 1e-9) for p in out)

    def test_generic_dimension_fallback(self):
        m = harmonic_model(d=2)
        probe = variance_experiment(
            m, (0.0, 0.0, 0.5, 0.5), 0.5, 0.5, 20.0, reps=4, seed0=2, dt=0.01
        )
        assert probe.refined
        assert probe.empirical_variance >= 0.0
