"""Path simulation: schemes, determinism, exact free sampler, start draws, file IO."""

import math

import numpy as np
import pytest

from kinest.models import AssumptionFlags, ModelSpec, harmonic_model
from kinest.simulate import (
    SimulationError,
    Trajectory,
    free_exact_batch,
    load_trajectory,
    philox_rng,
    save_trajectory,
    simulate_em,
    simulate_free_exact,
    stationary_start,
    trajectory_to_csv,
)


def _deterministic_model(gamma=0.0, grad=None, d=1):
    """Noise-free coefficient bundle for scheme checks."""
    return ModelSpec(
        d=d,
        damping=lambda x, y: gamma * np.eye(d),
        grad_potential=grad or (lambda x: np.zeros(d)),
        diffusion=lambda x, y: np.zeros((d, d)),
        flags=AssumptionFlags(erg_condition=False),
        model_id="deterministic",
        dt_max=1.0,
        fast_code=None,
    )


class TestEulerScheme:
    def test_free_deterministic_motion(self):
        m = _deterministic_model()
        traj = simulate_em(m, [1.0, 0.5], 2.0, 0.01, seed=1)
        k = np.arange(traj.n_steps + 1)
        assert np.allclose(traj.Y[:, 0], 0.5, atol=0)
        assert np.allclose(traj.X[:, 0], 1.0 + 0.5 * k * 0.01, rtol=1e-12)

    def test_exponential_velocity_decay(self):
        gamma, y0, T = 1.5, 2.0, 1.0
        m = _deterministic_model(gamma=gamma)
        errs = []
        for dt in (1e-3, 5e-4):
            traj = simulate_em(m, [0.0, y0], T, dt, seed=1)
            x_exact = y0 * (1 - math.exp(-gamma * T)) / gamma
            y_exact = y0 * math.exp(-gamma * T)
            errs.append(
                abs(traj.X[-1, 0] - x_exact) + abs(traj.Y[-1, 0] - y_exact)
            )
        assert errs[0] < 5e-3  # O(dt) accuracy
        assert errs[1] < 0.7 * errs[0]  # first-order refinement

    def test_position_increments_follow_velocity(self):
        traj = simulate_em(harmonic_model(), [0.3, -0.2], 5.0, 0.01, seed=4)
        dx = traj.X[1:, 0] - traj.X[:-1, 0]
        assert np.allclose(dx, traj.Y[:-1, 0] * traj.dt, atol=1e-14)

    def test_trapezoid_position_update(self):
        traj = simulate_em(harmonic_model(), [0.3, -0.2], 5.0, 0.01, seed=4,
                           position="trapezoid")
        dx = traj.X[1:, 0] - traj.X[:-1, 0]
        mid = 0.5 * (traj.Y[1:, 0] + traj.Y[:-1, 0]) * traj.dt
        assert np.allclose(dx, mid, atol=1e-14)

    def test_degenerate_noise_ratio_vanishes(self):
        # trapezoid update: sum (dX - Y dt)^2 / sum (dY)^2 = dt^2 / 4 exactly
        ratios = []
        for dt in (0.02, 0.01, 0.005):
            traj = simulate_em(harmonic_model(), [0.0, 0.0], 20.0, dt, seed=7,
                               position="trapezoid")
            num = np.sum((traj.X[1:, 0] - traj.X[:-1, 0] - traj.Y[:-1, 0] * dt) ** 2)
            den = np.sum((traj.Y[1:, 0] - traj.Y[:-1, 0]) ** 2)
            ratios.append(num / den)
        assert ratios[0] == pytest.approx(0.02**2 / 4, rel=1e-9)
        assert ratios[2] < ratios[1] < ratios[0]

    def test_seed_determinism_and_streams(self):
        a = simulate_em(harmonic_model(), [0.0, 0.0], 10.0, 0.01, seed=42)
        b = simulate_em(harmonic_model(), [0.0, 0.0], 10.0, 0.01, seed=42)
        c = simulate_em(harmonic_model(), [0.0, 0.0], 10.0, 0.01, seed=43)
        assert np.array_equal(a.X, b.X) and np.array_equal(a.Y, b.Y)
        assert not np.array_equal(a.Y, c.Y)

    def test_generic_path_matches_fast_path(self):
        m_fast = harmonic_model()
        m_slow = harmonic_model()
        m_slow.fast_code = None
        a = simulate_em(m_fast, [0.2, -0.1], 3.0, 0.01, seed=5)
        b = simulate_em(m_slow, [0.2, -0.1], 3.0, 0.01, seed=5)
        assert np.allclose(a.X, b.X, atol=1e-12)
        assert np.allclose(a.Y, b.Y, atol=1e-12)

    def test_dimension_two(self):
        m = harmonic_model(d=2)
        traj = simulate_em(m, [0.1, 0.2, 0.0, -0.1], 2.0, 0.01, seed=8)
        assert traj.X.shape == (201, 2)
        assert np.all(np.isfinite(traj.X))

    def test_explosion_reported_with_step(self):
        m = ModelSpec(
            d=1,
            damping=lambda x, y: np.zeros((1, 1)),
            grad_potential=lambda x: -np.asarray(x, dtype=float) ** 7,
            diffusion=lambda x, y: np.zeros((1, 1)),
            model_id="repulsive",
            dt_max=1.0,
            fast_code=None,
        )
        with np.errstate(over="ignore"), pytest.raises(SimulationError) as err:
            simulate_em(m, [1.5, 1.0], 20.0, 0.05, seed=1)
        assert err.value.step > 0

    def test_dt_and_divisibility_validation(self):
        with pytest.raises(ValueError, match="dt_max"):
            simulate_em(harmonic_model(), [0, 0], 1.0, 0.5, seed=1)
        with pytest.raises(ValueError, match="integral"):
            simulate_em(harmonic_model(), [0, 0], 1.0, 0.013, seed=1)


class TestFreeExact:
    def test_rejects_bad_sigma(self):
        with pytest.raises(ValueError):
            simulate_free_exact([0, 0], 1.0, 0.1, 0.0, seed=1)

    def test_small_time_collapse(self):
        x, y = free_exact_batch([0.4, -0.3], 1e-12, 1.0, 200, seed=2)
        assert np.allclose(x, 0.4, atol=1e-5)
        assert np.allclose(y, -0.3, atol=1e-5)

    def test_variance_at_t2_three_sigma(self):
        n = 100_000
        x, y = free_exact_batch([0.0, 0.0], 2.0, 1.0, n, seed=3)
        var_x = x.var(ddof=1)
        se = (8.0 / 3.0) * math.sqrt(2.0 / (n - 1))
        assert abs(var_x - 8.0 / 3.0) < 3 * se

    def test_trajectory_container(self):
        traj = simulate_free_exact([0.0, 0.0], 4.0, 0.25, 1.0, seed=9)
        assert traj.n_steps == 16
        assert traj.T == pytest.approx(4.0)
        assert traj.X.shape == (17, 1)

    def test_euler_weak_agreement_richardson(self):
        """Free-model Euler variances approach the exact values at first order."""
        n, t = 60_000, 1.0
        errs = []
        for dt in (0.05, 0.025):
            rng = philox_rng(77)
            x = np.zeros(n)
            y = np.zeros(n)
            for _ in range(int(round(t / dt))):
                x = x + y * dt
                y = y + math.sqrt(dt) * rng.standard_normal(n)
            errs.append(abs(x.var(ddof=1) - t**3 / 3.0))
        order = math.log2(errs[0] / errs[1])
        assert order > 0.5  # noisy but clearly first-order


class TestStationaryStart:
    def test_zero_burn_returns_anchor(self):
        z = stationary_start(harmonic_model(), 0.0, 0.01, seed=1, method="burn_in",
                             anchor=[0.7, -0.2])
        assert np.allclose(z, [0.7, -0.2])

    def test_gibbs_draw_moments(self):
        draws = np.array(
            [stationary_start(harmonic_model(), 0.0, 0.01, seed=s) for s in range(4000)]
        )
        se = math.sqrt(0.5 / 4000)
        assert abs(draws[:, 0].mean()) < 4 * se
        assert draws[:, 0].var() == pytest.approx(0.5, rel=0.1)
        assert draws[:, 1].var() == pytest.approx(0.5, rel=0.1)

    def test_distribution_matches_closed_form(self):
        from scipy import stats

        m = harmonic_model()
        for seed in (11, 12):
            draws = m.gibbs.sample(philox_rng(seed, stream=1), 1000)
            res = stats.kstest(draws[:, 1], "norm", args=(0.0, math.sqrt(0.5)))
            assert res.pvalue > 0.01
        a = m.gibbs.sample(philox_rng(11, stream=1), 10)
        b = m.gibbs.sample(philox_rng(12, stream=1), 10)
        assert not np.allclose(a, b)

    def test_burn_in_runs(self):
        z = stationary_start(harmonic_model(), 10.0, 0.01, seed=5, method="burn_in")
        assert z.shape == (2,)
        assert np.all(np.isfinite(z))

    def test_velocity_marginal_chi_square(self):
        """Long-run velocity histogram is consistent with the Gaussian marginal."""
        from scipy import stats

        traj = simulate_em(harmonic_model(), stationary_start(harmonic_model(), 0, 0.005, 1),
                           8000.0, 0.005, seed=22)
        ys = traj.Y[::2400, 0]  # thin by 12 time units to decorrelate
        edges = np.array([-np.inf, -1.0, -0.5, -0.2, 0.0, 0.2, 0.5, 1.0, np.inf])
        counts, _ = np.histogram(ys, bins=edges)
        probs = np.diff(stats.norm.cdf(edges, scale=math.sqrt(0.5)))
        res = stats.chisquare(counts, probs * len(ys))
        assert res.pvalue > 0.01


def test_mixing_proxy_monotone_in_damping():
    """Bounded-observable autocorrelation envelopes die out at damping-monotone lags.

    The position autocorrelation of an underdamped well oscillates, so the
    proxy is the first lag after which |autocorr| stays below 0.05 for good.
    """
    lags = []
    for gamma in (0.25, 0.5, 1.0):
        m = harmonic_model(gamma=gamma, sigma0=1.0)
        traj = simulate_em(m, stationary_start(m, 0, 0.01, 3), 20000.0, 0.01, seed=30)
        obs = np.tanh(traj.X[:, 0])
        obs = obs - obs.mean()
        var0 = float(np.mean(obs**2))
        step = 25  # lag resolution 0.25 time units
        max_lag = 4000  # 40 time units
        acs = np.array(
            [
                abs(float(np.mean(obs[:-lag] * obs[lag:])) / var0)
                for lag in range(step, max_lag + 1, step)
            ]
        )
        tail_max = np.maximum.accumulate(acs[::-1])[::-1]
        hit = np.argmax(tail_max < 0.05)
        assert tail_max[hit] < 0.05, f"no decay below 0.05 within 40 units at gamma={gamma}"
        lags.append((hit + 1) * step * traj.dt)
    assert lags[0] > lags[1] > lags[2], lags


class TestIO:
    def test_roundtrip(self, tmp_path):
        traj = simulate_em(harmonic_model(), [0.1, 0.2], 2.0, 0.01, seed=6)
        path = tmp_path / "traj.bin"
        save_trajectory(traj, path)
        back = load_trajectory(path)
        assert back.model_id == traj.model_id
        assert back.dt == traj.dt and back.n_steps == traj.n_steps
        assert np.array_equal(back.X, traj.X) and np.array_equal(back.Y, traj.Y)

    def test_csv_export(self, tmp_path):
        traj = simulate_em(harmonic_model(d=2), [0, 0, 0, 0], 1.0, 0.1, seed=6)
        path = tmp_path / "traj.csv"
        trajectory_to_csv(traj, path)
        lines = path.read_text().strip().splitlines()
        assert lines[0] == "t,x1,x2,y1,y2"
        assert len(lines) == traj.n_steps + 2

    def test_trajectory_shape_validation(self):
        with pytest.raises(ValueError):
            Trajectory(dt=0.1, n_steps=5, X=np.zeros((5, 1)), Y=np.zeros((5, 1)),
                       seed=0, model_id="x")
