import numpy as np
import pytest
import scipy.linalg

from mspde.errors import ConfigurationError, DomainError, MemoryBudgetError
from mspde.integrators import (
    CoupledState,
    Ensemble,
    SimOptions,
    StepKernel,
    default_dt,
    simulate_bundle,
    step_averaged,
    step_frozen,
    step_slow_fast,
)
from mspde.models import linear_bench, nemytskii_bench
from mspde.rngutil import substream
from mspde.spectral import (
    NoiseSpectrum,
    SpectralField,
    exact_ou_step,
    ou_decay,
    ou_noise_std,
    power_law_noise,
    power_law_operator,
)


def small_linear(n=2, c=None, K=None, f0=None):
    return linear_bench(n, c=c, K=K, f0=f0)


class TestStepSlowFast:
    def test_pure_linear_decay(self):
        # F=G=0, no noise: per-mode decay e^{-alpha dt} and e^{-beta dt/eps}
        m = small_linear(2)
        m.F.evaluate = lambda x, y: np.zeros_like(x)
        m.G.evaluate = lambda x, y: np.zeros_like(y)
        state = CoupledState(0.0, SpectralField(np.ones(2)), SpectralField(np.ones(2), "fast"))
        eps, dt = 0.5, 0.125
        new, _ = step_slow_fast(m, eps, dt, state, substream(0), noise=False)
        assert np.allclose(new.x.coeffs, np.exp(-m.opA.eigenvalues * dt), rtol=1e-14)
        assert np.allclose(new.y.coeffs, np.exp(-m.opB.eigenvalues * dt / eps), rtol=1e-14)

    def test_mean_matches_matrix_exponential(self):
        # eps=1, mode-1 coupling: the noiseless scheme converges at O(dt) to
        # the exact affine-ODE flow (computed via the augmented expm)
        c1, k1, f01 = 0.8, 0.6, 0.3
        m = linear_bench(1, c=[c1], K=np.array([[k1]]), f0=[f01])
        A = np.array([
            [-(m.opA.eigenvalues[0] + 0.5), c1, f01],
            [k1, -m.opB.eigenvalues[0], 0.0],
            [0.0, 0.0, 0.0],
        ])
        T = 1.0
        exact = scipy.linalg.expm(A * T) @ np.array([1.0, 0.5, 1.0])

        def terminal(dt):
            kern = StepKernel(m, 1.0, dt, noise=False)
            x, y = np.array([1.0]), np.array([0.5])
            for _ in range(int(round(T / dt))):
                x, y = kern.coupled(x, y, np.zeros(1), np.zeros(1))
            return x[0]

        err_coarse = abs(terminal(2.0**-7) - exact[0])
        err_fine = abs(terminal(2.0**-8) - exact[0])
        assert err_fine < 1e-3
        assert err_coarse / err_fine == pytest.approx(2.0, abs=0.35)  # first order

    def test_fast_ergodic_variance(self):
        # eps = 2^-8, K=0: time average of <Y,e1>^2 over [1/2, 1] hits the
        # stationary value lambda/(2 beta) within 5%
        m = small_linear(2)
        eps = 2.0**-8
        dt = eps / 4.0
        ens = Ensemble(m, eps, 1.0, dt, 32, substream(11, "erg"), with_averaged=False)
        acc, count = 0.0, 0
        while ens.k < ens.steps:
            ens.step()
            if ens.t >= 0.5:
                acc += float(np.mean(ens.y[:, 0] ** 2))
                count += 1
        target = m.q2.variances[0] / (2.0 * m.opB.eigenvalues[0])
        assert acc / count == pytest.approx(target, rel=0.05)

    def test_warns_when_dt_exceeds_recommendation(self):
        m = small_linear(2)
        state = CoupledState(0.0, SpectralField(np.zeros(2)), SpectralField(np.zeros(2), "fast"))
        with pytest.warns(UserWarning, match="drift-freezing"):
            step_slow_fast(m, 2.0**-6, 0.25, state, substream(0))

    def test_domain_errors(self):
        m = small_linear(2)
        state = CoupledState(0.0, SpectralField(np.zeros(2)), SpectralField(np.zeros(2), "fast"))
        with pytest.raises(DomainError):
            step_slow_fast(m, 0.0, 0.1, state, substream(0))
        with pytest.raises(DomainError):
            step_slow_fast(m, 0.5, -0.1, state, substream(0))


class TestStepFrozen:
    def test_matches_exact_ou_step_when_G_zero(self):
        m = small_linear(2)
        m.G.evaluate = lambda x, y: np.zeros_like(y)
        y = SpectralField(np.array([0.7, -0.4]), "fast")
        out_frozen = step_frozen(m, SpectralField(np.zeros(2)), 0.1, y, substream(21, "fz"))
        out_exact = exact_ou_step(m.opB, m.q2, 0.1, y,
                                  SpectralField(np.zeros(2), "fast"), substream(21, "fz"))
        assert np.array_equal(out_frozen.coeffs, out_exact.coeffs)

    def test_long_run_mean(self):
        # stationary mean of mode k is (Kx)_k / beta_k
        m = linear_bench(2, K=np.array([[2.0, 0.0], [0.0, 4.0]]))
        x = SpectralField(np.array([1.0, 1.0]))
        rng = substream(22, "mean")
        y = SpectralField(np.zeros(2), "fast")
        dt, burn, samples = 0.05, 200, 4000
        for _ in range(burn):
            y = step_frozen(m, x, dt, y, rng)
        vals = np.empty((samples, 2))
        for i in range(samples):
            y = step_frozen(m, x, dt, y, rng)
            vals[i] = y.coeffs
        target = m.closed_form.frozen_mean(x.coeffs)
        from mspde.averaging import batch_means_se
        se = batch_means_se(vals)
        assert np.all(np.abs(vals.mean(axis=0) - target) <= 3.0 * se)

    def test_same_seed_bit_identical(self):
        m = small_linear(2)
        x = SpectralField(np.ones(2))
        y0 = SpectralField(np.zeros(2), "fast")
        def run():
            rng = substream(23, "det")
            y = y0
            for _ in range(50):
                y = step_frozen(m, x, 0.05, y, rng)
            return y.coeffs
        assert np.array_equal(run(), run())


class TestStepAveraged:
    def test_exact_ou_transition_mean(self):
        # K=0, c=0, f0=0: Xbar is an OU with drift -(alpha_k + 1/2) x_k; a
        # noiseless step reproduces the exact transition mean at O(dt^2)
        m = small_linear(1)
        x = SpectralField(np.array([1.0]))
        dt = 1e-3
        out = step_averaged(m, m.closed_form.fbar, dt, x,
                            w1_increment=SpectralField(np.zeros(1)))
        a = m.opA.eigenvalues[0] + 0.5
        exact = np.exp(-a * dt)
        assert out.coeffs[0] == pytest.approx(exact, abs=5e-7)  # O(dt^2) splitting error

    def test_pure_semigroup_with_zero_drift(self):
        m = small_linear(2)
        x = SpectralField(np.array([1.0, 2.0]))
        out = step_averaged(m, lambda v: np.zeros_like(v), 0.25, x,
                            w1_increment=SpectralField(np.zeros(2)))
        assert np.allclose(out.coeffs, np.exp(-m.opA.eigenvalues * 0.25) * x.coeffs, rtol=1e-14)

    def test_replay_recorded_increments(self):
        # replaying the recorded slow draws through step_averaged reproduces
        # the bundle's averaged path exactly
        m = linear_bench(2, c=[0.5])
        opts = SimOptions(record_w1=True, n_outputs=9)
        bundle = simulate_bundle(m, 0.25, 0.5, 2.0**-6, substream(24, "rec"), opts)
        x = SpectralField(bundle.averaged[0])
        k = 0
        for t_idx in range(1, bundle.times.size):
            target_step = int(round(bundle.times[t_idx] / bundle.dt))
            while k < target_step:
                x = step_averaged(m, m.closed_form.fbar, bundle.dt, x,
                                  w1_increment=SpectralField(bundle.w1_record[k]))
                k += 1
            assert np.allclose(x.coeffs, bundle.averaged[t_idx], atol=1e-12)


class TestSimulateBundle:
    def test_smoke_grid_and_finiteness(self):
        m = linear_bench(3, c=[1.0])
        opts = SimOptions(gammas=(0.0, 0.25))
        bundle = simulate_bundle(m, 1.0, 1.0, 2.0**-6, substream(31, "smoke"), opts)
        assert bundle.times.size == 17
        assert bundle.times[-1] == pytest.approx(1.0)
        assert np.all(np.isfinite(bundle.slow))
        assert all(np.isfinite(v) for v in bundle.sup_gamma_dist.values())

    def test_averaged_equals_slow_when_fast_decoupled(self):
        # c = 0 makes F independent of y and Fbar = F: identical recursions
        m = linear_bench(3, f0=[0.4, 0.1, 0.0])
        bundle = simulate_bundle(m, 2.0**-4, 1.0, 2.0**-6, substream(32, "replay"),
                                 SimOptions(gammas=(0.0,)))
        assert np.allclose(bundle.slow, bundle.averaged, atol=1e-12)
        assert bundle.sup_gamma_dist[0.0] <= 1e-12

    def test_gamma_monotonicity(self):
        # alpha_1 >= 1 so the gamma-weighted distance dominates pathwise
        m = linear_bench(3, c=[1.0, 0.5])
        bundle = simulate_bundle(m, 2.0**-4, 1.0, 2.0**-6, substream(33, "mono"),
                                 SimOptions(gammas=(0.0, 0.25)))
        assert np.all(bundle.gamma_dist[0.25] >= bundle.gamma_dist[0.0] - 1e-15)

    def test_determinism_byte_identical(self):
        m = linear_bench(3, c=[1.0])
        opts = SimOptions(gammas=(0.0,), record_w1=True)
        b1 = simulate_bundle(m, 0.25, 0.5, 2.0**-6, substream(34, "det"), opts)
        b2 = simulate_bundle(m, 0.25, 0.5, 2.0**-6, substream(34, "det"), opts)
        assert b1.slow.tobytes() == b2.slow.tobytes()
        assert b1.fast.tobytes() == b2.fast.tobytes()
        assert b1.averaged.tobytes() == b2.averaged.tobytes()
        assert b1.w1_record.tobytes() == b2.w1_record.tobytes()

    def test_memory_guard(self):
        m = linear_bench(3, c=[1.0])
        opts = SimOptions(store_full=True, memory_budget=1024)
        with pytest.raises(MemoryBudgetError):
            simulate_bundle(m, 0.25, 1.0, 2.0**-8, substream(35), opts)

    def test_dt_must_divide_T(self):
        m = linear_bench(2)
        with pytest.raises(DomainError):
            simulate_bundle(m, 0.5, 1.0, 0.3, substream(36))

    def test_self_convergence_under_dt_halving(self):
        # couple dt and dt/2 and dt/4 through one fine noise realization by
        # aggregating convolution draws; terminal gaps shrink at first order
        m = linear_bench(2, c=[1.0])
        eps, T = 0.25, 1.0
        dt = 2.0**-6
        M, n = 64, m.n
        fine_steps = int(round(T / (dt / 4)))
        rng = substream(37, "refine")
        w1_fine = rng.standard_normal((fine_steps, M, n))
        w2_fine = rng.standard_normal((fine_steps, M, n))

        def aggregate(seq, rates, h):
            # two substeps of size h merge into one step of size 2h:
            # std(2h) xi = e^{-a h} std(h) xi1 + std(h) xi2
            steps = seq.shape[0] // 2
            out = np.empty((steps,) + seq.shape[1:])
            decay = ou_decay(rates, h)
            s_h = ou_noise_std(rates, np.ones_like(rates), h)
            s_2h = ou_noise_std(rates, np.ones_like(rates), 2 * h)
            for k in range(steps):
                out[k] = (decay * s_h * seq[2 * k] + s_h * seq[2 * k + 1]) / s_2h
            return out

        alpha = m.opA.eigenvalues
        beta_eff = m.opB.eigenvalues / eps
        levels = {}
        w1, w2, h = w1_fine, w2_fine, dt / 4
        for level in (2, 1, 0):
            ens = Ensemble(m, eps, T, h, M, substream(38, level),
                           w1_seq=w1, w2_seq=w2)
            ens.run()
            levels[level] = ens.x.copy()
            if level > 0:
                w1 = aggregate(w1, alpha, h)
                w2 = aggregate(w2, beta_eff, h)
                h *= 2

        gap_coarse = np.sqrt(np.mean(np.sum((levels[0] - levels[1]) ** 2, axis=1)))
        gap_fine = np.sqrt(np.mean(np.sum((levels[1] - levels[2]) ** 2, axis=1)))
        assert gap_coarse / gap_fine == pytest.approx(2.0, abs=0.7)


class TestEnsembleInvariants:
    def test_moment_bounds_uniform_in_eps(self):
        # sup_t E||X||^2 varies by < 20% across eps; the sweep reuses one
        # noise substream so the comparison isolates the eps-dependence
        m = linear_bench(4, c=[1.0])
        sups = []
        for eps in [2.0**-2, 2.0**-4, 2.0**-6, 2.0**-8]:
            dt = default_dt(eps, 1.0)
            ens = Ensemble(m, eps, 1.0, dt, 256, substream(41, "mom"))
            sup = 0.0
            while ens.k < ens.steps:
                ens.step()
                sup = max(sup, float(np.mean(np.sum(ens.x**2, axis=1))))
            sups.append(sup)
        assert max(sups) / min(sups) < 1.2

    def test_fast_marginal_variance_eps_independent(self):
        # K=0: the fast equation is autonomous; its stationary variance does
        # not depend on the time-scale separation
        m = linear_bench(2, c=[1.0])
        out = []
        for i, eps in enumerate([2.0**-4, 2.0**-6, 2.0**-8]):
            ens = Ensemble(m, eps, 1.0, eps / 4, 256, substream(42, "fvar", i),
                           with_averaged=False)
            ens.run()
            out.append(float(ens.y[:, 0].var(ddof=1)))
        target = m.q2.variances[0] / (2 * m.opB.eigenvalues[0])
        for v in out:
            assert v == pytest.approx(target, rel=0.25)
        assert max(out) / min(out) < 1.35

    def test_time_regularity_slope(self):
        # fitted slope of log E||X_t - X_s||^2 against log(t-s) is ~1
        # (Hoelder-1/2 paths in L2) away from t = 0
        m = linear_bench(4, c=[1.0])
        eps, dt = 2.0**-4, 2.0**-8
        ens = Ensemble(m, eps, 1.0, dt, 256, substream(43, "hold"))
        snapshots = {}
        want = {int(round(s / dt)) for s in (0.5, 0.5 + 2.0**-7, 0.5 + 2.0**-6,
                                             0.5 + 2.0**-5, 0.5 + 2.0**-4)}
        while ens.k < ens.steps:
            ens.step()
            if ens.k in want:
                snapshots[ens.k] = ens.x.copy()
        base = snapshots[int(round(0.5 / dt))]
        gaps, moments = [], []
        for k, snap in sorted(snapshots.items()):
            if k == int(round(0.5 / dt)):
                continue
            gaps.append(k * dt - 0.5)
            moments.append(float(np.mean(np.sum((snap - base) ** 2, axis=1))))
        slope = np.polyfit(np.log(gaps), np.log(moments), 1)[0]
        assert 0.8 <= slope <= 1.2

    def test_draw_width_slicing_consistent(self):
        # same substream, wider draw: the first columns are the same numbers
        rng1 = substream(44, "w")
        rng2 = substream(44, "w")
        a = rng1.standard_normal((3, 8))[:, :4]
        b = rng2.standard_normal((3, 8))[:, :4]
        assert np.array_equal(a, b)
