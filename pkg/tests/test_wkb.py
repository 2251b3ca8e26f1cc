import numpy as np
import pytest
from numpy.testing import assert_allclose
from scipy import stats

from wkbmc import lmm, proxy, wkb


def case_cfg(n=5, t1=1.0):
    return lmm.ModelConfig(
        n=n, t1=t1, delta=0.5, l0=0.035, vol=0.2, rho_inf=0.3, strike=0.035
    )


def fd_drift_model(vs, delta, h=1e-6):
    """Libor drift in flat coordinates with FD derivatives, for cross-checks."""

    def b(z):
        return lmm.drift_mu_y(vs, delta, np.asarray(z, dtype=float))

    def grad(z):
        z = np.asarray(z, dtype=float)
        n = z.shape[-1]
        out = np.empty(z.shape + (n,))
        for p in range(n):
            e = np.zeros(n)
            e[p] = h
            out[..., :, p] = (b(z + e) - b(z - e)) / (2 * h)
        return out

    def lap(z):
        z = np.asarray(z, dtype=float)
        n = z.shape[-1]
        f0 = b(z)
        acc = np.zeros_like(f0)
        for p in range(n):
            e = np.zeros(n)
            e[p] = h
            acc = acc + (b(z + e) - 2 * f0 + b(z - e)) / h**2
        return acc

    return wkb.FlatDriftModel(b=b, grad=grad, lap=lap)


def y_pairs(cfg, count, spread=0.4, seed=0):
    rng = np.random.default_rng(seed)
    y0 = lmm.to_y(cfg.vs, cfg.l0)
    x = y0 + spread * rng.standard_normal((count, cfg.n))
    y = y0 + spread * rng.standard_normal((count, cfg.n))
    return x, y


class TestGenericCoefficients:
    def test_c0_zero_drift(self):
        model = wkb.constant_drift_model(np.zeros(3))
        x, y = np.ones(3), np.array([0.3, -1.0, 2.0])
        assert wkb.c0_generic(model, x, y) == 0.0

    def test_c0_constant_drift(self):
        b = np.array([0.4, -0.7])
        model = wkb.constant_drift_model(b)
        x = np.array([1.0, 2.0])
        y = np.array([0.5, 2.5])
        assert_allclose(wkb.c0_generic(model, x, y), (y - x) @ b, rtol=1e-14)

    def test_c0_linear_drift(self):
        B = np.array([[-0.3, 0.4], [0.1, -0.2]])
        model = wkb.linear_drift_model(B)
        rng = np.random.default_rng(3)
        x = rng.standard_normal((20, 2))
        y = rng.standard_normal((20, 2))
        # segment average of B z is B (x + y) / 2
        want = np.sum((y - x) * ((x + y) / 2 @ B.T), axis=-1)
        assert_allclose(wkb.c0_generic(model, x, y), want, atol=1e-14)

    def test_grad_c0_against_fd(self):
        B = np.array([[-0.3, 0.4], [0.1, -0.2]])
        model = wkb.linear_drift_model(B)
        rng = np.random.default_rng(5)
        z = rng.standard_normal((10, 2))
        y = rng.standard_normal((10, 2))
        got = wkb.grad_c0_generic(model, z, y)
        h = 1e-7
        for p in range(2):
            e = np.zeros(2)
            e[p] = h
            fd = (wkb.c0_generic(model, z + e, y) - wkb.c0_generic(model, z - e, y)) / (2 * h)
            assert_allclose(got[:, p], fd, rtol=1e-6, atol=1e-9)

    def test_lap_c0_smooth_drift_against_fd(self):
        # a genuinely curved drift so the lap-of-b term is exercised
        def b(z):
            return np.stack([np.sin(z[..., 0]) * z[..., 1], np.cos(z[..., 1])], axis=-1)

        def grad(z):
            z0, z1 = z[..., 0], z[..., 1]
            out = np.empty(z.shape + (2,))
            out[..., 0, 0] = np.cos(z0) * z1
            out[..., 0, 1] = np.sin(z0)
            out[..., 1, 0] = 0.0
            out[..., 1, 1] = -np.sin(z1)
            return out

        def lap(z):
            z0, z1 = z[..., 0], z[..., 1]
            return np.stack([-np.sin(z0) * z1, -np.cos(z1)], axis=-1)

        model = wkb.FlatDriftModel(b=b, grad=grad, lap=lap)
        rng = np.random.default_rng(8)
        z = rng.uniform(-1, 1, size=(6, 2))
        y = rng.uniform(-1, 1, size=(6, 2))
        got = wkb.lap_c0_generic(model, z, y, order=24)
        h = 1e-4
        acc = np.zeros(6)
        f0 = wkb.c0_generic(model, z, y, order=24)
        for p in range(2):
            e = np.zeros(2)
            e[p] = h
            acc = acc + (
                wkb.c0_generic(model, z + e, y, order=24)
                - 2 * f0
                + wkb.c0_generic(model, z - e, y, order=24)
            ) / h**2
        assert_allclose(got, acc, rtol=5e-5, atol=1e-7)


class TestRecursion:
    def test_rhs_zero_drift(self):
        model = wkb.constant_drift_model(np.zeros(2))
        evs = wkb.coefficient_evaluators(model, 0)
        x, y = np.zeros(2), np.ones(2)
        assert_allclose(wkb.wkb_recursion_rhs(model, 0, x, y, evs), 0.0)

    def test_rhs_constant_drift(self):
        b = np.array([0.3, -0.5, 0.1])
        model = wkb.constant_drift_model(b)
        evs = wkb.coefficient_evaluators(model, 0)
        rng = np.random.default_rng(1)
        x = rng.standard_normal((15, 3))
        y = rng.standard_normal((15, 3))
        # grad c_0 = -b everywhere, so R_0 = |b|^2/2 - |b|^2 = -|b|^2/2
        assert_allclose(
            wkb.wkb_recursion_rhs(model, 0, x, y, evs), -0.5 * b @ b, rtol=1e-13
        )

    def test_c1_constant_drift(self):
        b = np.array([0.3, -0.5])
        model = wkb.constant_drift_model(b)
        rng = np.random.default_rng(2)
        x = rng.standard_normal((10, 2))
        y = rng.standard_normal((10, 2))
        assert_allclose(wkb.c_next(model, 0, x, y), -0.5 * b @ b, rtol=1e-13)

    def test_rhs_requires_enough_evaluators(self):
        model = wkb.constant_drift_model(np.zeros(2))
        with pytest.raises(ValueError):
            wkb.wkb_recursion_rhs(model, 1, np.zeros(2), np.ones(2), [])

    def test_c1_boundary_value_is_r0(self):
        # at y = x the integral int R_0(x, x) s^0 ds collapses to R_0(x, x)
        B = np.array([[-0.3, 0.4], [0.1, -0.2]])
        model = wkb.linear_drift_model(B)
        evs = wkb.coefficient_evaluators(model, 0)
        rng = np.random.default_rng(6)
        x = rng.standard_normal((8, 2))
        r0 = wkb.wkb_recursion_rhs(model, 0, x, x, evs)
        assert_allclose(wkb.c_next(model, 0, x, x), r0, rtol=1e-12)


class TestGenericDensity:
    def test_constant_drift_level1_exact(self):
        # for constant drift the truncation at level 1 is the exact kernel
        b = np.array([0.25, -0.4, 0.1])
        model = wkb.constant_drift_model(b)
        rng = np.random.default_rng(11)
        x = rng.standard_normal((2000, 3))
        dt = 0.7
        y = x + dt * b + np.sqrt(dt) * rng.standard_normal((2000, 3))
        got = wkb.generic_log_density(model, 1, x, y, dt)
        want = stats.multivariate_normal(cov=dt * np.eye(3)).logpdf(y - x - dt * b)
        assert np.max(np.abs(got - want)) < 1e-10

    def test_level_two_not_available(self):
        model = wkb.constant_drift_model(np.zeros(2))
        with pytest.raises(NotImplementedError):
            wkb.generic_log_density(model, 2, np.zeros(2), np.ones(2), 0.5)

    def test_exact_linear_kernel_one_dim(self):
        # dZ = -k Z dt + dW has the textbook Ornstein-Uhlenbeck kernel
        k, t = 0.7, 0.9
        B = np.array([[-k]])
        x = np.array([[0.8]])
        y = np.array([[0.3]])
        var = (1 - np.exp(-2 * k * t)) / (2 * k)
        want = stats.norm(loc=0.8 * np.exp(-k * t), scale=np.sqrt(var)).logpdf(0.3)
        assert_allclose(wkb.linear_drift_exact_log_density(B, x, y, t)[0], want, rtol=1e-12)

    def test_truncation_error_slopes(self):
        # holding (x, y) fixed, the log-density defect of the level-l
        # truncation scales like dt^{l+1}
        B = np.array([[-0.3, 0.4], [0.1, -0.2]])
        model = wkb.linear_drift_model(B)
        rng = np.random.default_rng(13)
        x = rng.uniform(-1, 1, size=(40, 2))
        y = rng.uniform(-1, 1, size=(40, 2))
        steps = np.array([0.4, 0.2, 0.1, 0.05])
        for level in (0, 1):
            errs = []
            for dt in steps:
                exact = wkb.linear_drift_exact_log_density(B, x, y, dt)
                approx = wkb.generic_log_density(model, level, x, y, dt)
                errs.append(np.max(np.abs(exact - approx)))
            slope = np.polyfit(np.log(steps), np.log(errs), 1)[0]
            assert abs(slope - (level + 1)) < 0.25, (level, slope, errs)


class TestFlatTransform:
    def samples(self, n, seed=0):
        return np.random.default_rng(seed).uniform(0.5, 1.5, size=(20, n))

    def test_constant_field_passes(self):
        sig = np.array([[0.3, 0.1], [0.0, 0.2]])
        rep = wkb.check_flat_transform(lambda x: sig, self.samples(2))
        assert rep.passed and rep.samples == 20

    def test_separable_diagonal_passes(self):
        rep = wkb.check_flat_transform(lambda x: np.diag(x), self.samples(3))
        assert rep.passed

    def test_libor_field_passes(self):
        cfg = case_cfg(n=4)
        rep = wkb.check_flat_transform(
            lambda L: L[:, None] * cfg.vs.gamma,
            np.random.default_rng(1).uniform(0.01, 0.08, size=(20, 4)),
            tol=1e-6,
        )
        assert rep.passed

    def test_cross_coupling_fails(self):
        # sigma_12 = x_1 on an otherwise-identity field: the residual is
        # sigma_11 itself, so the report shows ~1
        def sig(x):
            return np.array([[1.0, x[0]], [0.0, 1.0]])

        rep = wkb.check_flat_transform(sig, self.samples(2))
        assert not rep.passed
        assert rep.max_violation > 0.5

    def test_own_coordinate_coupling_passes(self):
        # sigma_12 = x_2 looks just as coupled but satisfies the
        # condition: the derivative row it picks out is the zero row
        def sig(x):
            return np.array([[1.0, x[1]], [0.0, 1.0]])

        rep = wkb.check_flat_transform(sig, self.samples(2))
        assert rep.passed

    def test_singular_field_raises(self):
        with pytest.raises(ValueError, match="singular"):
            wkb.check_flat_transform(lambda x: np.zeros((2, 2)), self.samples(2))


class TestLiborClosedForms:
    def test_c0_matches_generic_quadrature(self):
        cfg = case_cfg(n=5)
        model = wkb.FlatDriftModel(b=lambda z: lmm.drift_mu_y(cfg.vs, cfg.delta, z))
        x, y = y_pairs(cfg, 100, seed=4)
        got = wkb.libor_c0(cfg.vs, cfg.delta, x, y)
        want = wkb.c0_generic(model, x, y, order=32)
        assert np.max(np.abs(got - want)) < 1e-8

    def test_c0_vanishes_on_diagonal(self):
        cfg = case_cfg(n=6)
        x, _ = y_pairs(cfg, 30, seed=5)
        assert_allclose(wkb.libor_c0(cfg.vs, cfg.delta, x, x), 0.0, atol=1e-14)

    def test_c0_grad_against_fd(self):
        cfg = case_cfg(n=4)
        z, y = y_pairs(cfg, 20, seed=6)
        got = wkb.libor_c0_grad(cfg.vs, cfg.delta, z, y)
        h = 1e-6
        for p in range(4):
            e = np.zeros(4)
            e[p] = h
            fd = (
                wkb.libor_c0(cfg.vs, cfg.delta, z + e, y)
                - wkb.libor_c0(cfg.vs, cfg.delta, z - e, y)
            ) / (2 * h)
            assert_allclose(got[:, p], fd, rtol=1e-5, atol=1e-10)

    def test_c0_hess_diag_against_fd(self):
        cfg = case_cfg(n=4)
        z, y = y_pairs(cfg, 12, seed=7)
        got = wkb.libor_c0_hess_diag(cfg.vs, cfg.delta, z, y)
        h = 3e-4
        f0 = wkb.libor_c0(cfg.vs, cfg.delta, z, y)
        for p in range(4):
            e = np.zeros(4)
            e[p] = h
            fd = (
                wkb.libor_c0(cfg.vs, cfg.delta, z + e, y)
                - 2 * f0
                + wkb.libor_c0(cfg.vs, cfg.delta, z - e, y)
            ) / h**2
            assert_allclose(got[:, p], fd, rtol=1e-3, atol=1e-8)

    def test_lap_is_trace_of_hessian(self):
        cfg = case_cfg(n=7)
        z, y = y_pairs(cfg, 50, seed=8)
        lap = wkb.libor_c0_lap(cfg.vs, cfg.delta, z, y)
        tr = np.sum(wkb.libor_c0_hess_diag(cfg.vs, cfg.delta, z, y), axis=-1)
        assert np.max(np.abs(lap - tr)) < 1e-12

    def test_c1_matches_generic_recursion(self):
        cfg = case_cfg(n=4)
        model = fd_drift_model(cfg.vs, cfg.delta)
        x, y = y_pairs(cfg, 10, spread=0.3, seed=9)
        got = wkb.libor_c1(cfg.vs, cfg.delta, x, y)
        want = wkb.c_next(model, 0, x, y, order=16)
        assert_allclose(got, want, rtol=1e-4, atol=1e-8)

    def test_c1_boundary_equals_r0(self):
        cfg = case_cfg(n=5)
        x, _ = y_pairs(cfg, 100, seed=10)
        r0 = wkb.libor_r0(cfg.vs, cfg.delta, x, x)
        assert_allclose(wkb.libor_c1(cfg.vs, cfg.delta, x, x), r0, rtol=1e-12)

    def test_segment_average_series_continuity(self, monkeypatch):
        # the F/G/K evaluations switch to series near coincident
        # endpoints; both branches evaluated at the same separation,
        # just inside each switch point, must agree
        cfg = case_cfg(n=3)
        delta = cfg.delta
        u = cfg.vs.gamma @ lmm.to_y(cfg.vs, cfg.l0)
        checks = (
            ("_FG_SERIES_EPS", 0, 1e-10),
            ("_FG_SERIES_EPS", 1, 2e-9),
            ("_K_SERIES_EPS", 2, 1e-7),
        )
        for name, i, rtol in checks:
            w = 0.99 * getattr(wkb, name)
            series = wkb._segment_fgk(delta, u, u - w, want_k=True)[i]
            with monkeypatch.context() as m:
                m.setattr(wkb, name, 1e-12)
                if name == "_FG_SERIES_EPS":
                    m.setattr(wkb, "_K_SERIES_EPS", 1e-12)
                direct = wkb._segment_fgk(delta, u, u - w, want_k=True)[i]
            assert_allclose(series, direct, rtol=rtol)

    def test_segment_average_against_quadrature(self):
        # F must be the segment average of the logistic factor
        cfg = case_cfg(n=3)
        u = cfg.vs.gamma @ lmm.to_y(cfg.vs, cfg.l0)
        v = u + np.array([0.3, -0.5, 0.08])
        f, _, _ = wkb._segment_fgk(cfg.delta, u, v, want_k=False)
        nodes, weights = np.polynomial.legendre.leggauss(40)
        s = 0.5 * (nodes + 1)
        w = 0.5 * weights
        from scipy.special import expit

        for i in range(3):
            ts = v[i] + s * (u[i] - v[i]) + np.log(cfg.delta[i])
            assert_allclose(f[i], np.sum(w * expit(ts)), rtol=1e-12)


class TestTaylorSurrogate:
    def test_cubic_remainder(self):
        # below t ~ 1 the remainder drowns in the stencil's own noise,
        # so the slope is fit on the decade above it
        cfg = case_cfg(n=4)
        x = lmm.to_y(cfg.vs, cfg.l0)
        f0, grad, hess = wkb.libor_c1_taylor2(cfg.vs, cfg.delta, x)
        assert_allclose(hess, hess.T)
        d = np.array([0.7, -0.2, 0.4, -0.5])
        d = d / np.linalg.norm(d)
        ts = np.array([4.0, 2.0, 1.0])
        errs = []
        for t in ts:
            y = x + t * d
            direct = wkb.libor_c1(cfg.vs, cfg.delta, x, y)
            quad = f0 + t * d @ grad + 0.5 * t**2 * d @ hess @ d
            errs.append(abs(direct - quad))
        slope = np.polyfit(np.log(ts), np.log(errs), 1)[0]
        assert 2.5 < slope < 3.8, (slope, errs)

    def test_surrogate_accurate_at_step_scale(self):
        # displacements of size sqrt(n dt) are what a one-shot draw
        # actually produces; the surrogate must track c_1 closely there
        cfg = case_cfg(n=4)
        x = lmm.to_y(cfg.vs, cfg.l0)
        f0, grad, hess = wkb.libor_c1_taylor2(cfg.vs, cfg.delta, x)
        rng = np.random.default_rng(31)
        d = rng.standard_normal((50, 4))
        d *= 2.0 / np.linalg.norm(d, axis=1, keepdims=True)
        ys = x + d
        direct = wkb.libor_c1(cfg.vs, cfg.delta, np.broadcast_to(x, ys.shape), ys)
        quad = f0 + d @ grad + 0.5 * np.sum((d @ hess) * d, axis=-1)
        assert np.max(np.abs(direct - quad)) < 1e-5

    def test_value_at_anchor(self):
        cfg = case_cfg(n=3)
        x = lmm.to_y(cfg.vs, cfg.l0)
        f0, _, _ = wkb.libor_c1_taylor2(cfg.vs, cfg.delta, x)
        assert_allclose(f0, wkb.libor_r0(cfg.vs, cfg.delta, x, x), rtol=1e-12)

    def test_rejects_vanishing_step(self):
        cfg = case_cfg(n=3)
        with pytest.raises(ValueError):
            wkb.libor_c1_taylor2(cfg.vs, cfg.delta, lmm.to_y(cfg.vs, cfg.l0), rel_step=1e-12)


class TestKernel:
    def test_level0_at_anchor(self):
        cfg = case_cfg(n=4)
        ker = wkb.make_libor_kernel(cfg.vs, cfg.delta, anchor_rates=cfg.l0, level=0)
        dt = 0.3
        got = wkb.wkb_density_y(ker, 0.0, ker.anchor_y, dt, ker.anchor_y)
        assert_allclose(got, (2 * np.pi * dt) ** -2.0, rtol=1e-13)

    def test_level1_at_anchor(self):
        cfg = case_cfg(n=4)
        ker = wkb.make_libor_kernel(cfg.vs, cfg.delta, anchor_rates=cfg.l0, level=1)
        dt = 0.3
        x = ker.anchor_y
        got = wkb.wkb_log_density_y(ker, 0.0, x, dt, x)
        r0 = wkb.libor_r0(cfg.vs, cfg.delta, x, x)
        assert_allclose(got, -2.0 * np.log(2 * np.pi * dt) + dt * r0, rtol=1e-12)

    def test_anchor_mismatch_raises(self):
        cfg = case_cfg(n=3)
        ker = wkb.make_libor_kernel(cfg.vs, cfg.delta, anchor_rates=cfg.l0)
        with pytest.raises(ValueError, match="anchored"):
            wkb.wkb_log_density_y(ker, 0.0, ker.anchor_y + 0.1, 1.0, ker.anchor_y)
        with pytest.raises(ValueError):
            wkb.wkb_log_density_y(ker, 1.0, ker.anchor_y, 0.5, ker.anchor_y)

    def test_constructor_validation(self):
        cfg = case_cfg(n=3)
        with pytest.raises(ValueError):
            wkb.make_libor_kernel(cfg.vs, cfg.delta, anchor_rates=cfg.l0, level=2)
        with pytest.raises(ValueError):
            wkb.make_libor_kernel(cfg.vs, cfg.delta)
        with pytest.raises(ValueError):
            wkb.make_libor_kernel(
                cfg.vs, cfg.delta, anchor_rates=cfg.l0, anchor_y=np.zeros(3)
            )
        with pytest.raises(ValueError):
            wkb.make_libor_kernel(cfg.vs, cfg.delta, anchor_rates=-cfg.l0)

    def test_single_rate_is_exact_lognormal(self):
        # one rate has constant flat-coordinate drift, so the level-1
        # kernel must reproduce the lognormal transition to roundoff
        vs = lmm.build_vol_structure(np.array([0.2]), np.eye(1))
        delta = np.array([0.5])
        x = np.array([0.035])
        ker = wkb.make_libor_kernel(vs, delta, anchor_rates=x, level=1)
        dt = 2.0
        v = np.linspace(0.01, 0.09, 25)[:, None]
        got = wkb.wkb_log_density_libor(ker, 0.0, x, dt, v)
        ln = stats.lognorm(s=0.2 * np.sqrt(dt), scale=0.035 * np.exp(-0.5 * 0.04 * dt))
        assert np.max(np.abs(got - ln.logpdf(v[:, 0]))) < 1e-10

    def test_density_integrates_to_one(self):
        # importance-sample the level-1 density with the lognormal proxy
        # over a full one-year single step of the production-size curve
        cfg = lmm.ModelConfig(
            n=19, t1=1.0, delta=0.5, l0=0.035, vol=0.2, rho_inf=0.3, strike=0.035
        )
        ker = wkb.make_libor_kernel(cfg.vs, cfg.delta, anchor_rates=cfg.l0, level=1)
        p = proxy.make_proxy(cfg.vs, cfg.delta,0.0, 1.0, cfg.l0)
        rng = np.random.default_rng(42)
        m = 100_000
        zeta = proxy.sample_g(p, rng.standard_normal((m, 19)))
        ratio = np.exp(
            wkb.wkb_log_density_libor(ker, 0.0, cfg.l0, 1.0, zeta)
            - proxy.log_density(p, zeta)
        )
        err = abs(ratio.mean() - 1.0)
        assert err < max(0.01, 4 * ratio.std() / np.sqrt(m)), (ratio.mean(), ratio.std())

    def test_log_weight_matches_density_ratio(self):
        cfg = case_cfg(n=6)
        ker = wkb.make_libor_kernel(cfg.vs, cfg.delta, anchor_rates=cfg.l0, level=1)
        p = proxy.make_proxy(cfg.vs, cfg.delta,0.0, 0.8, cfg.l0)
        rng = np.random.default_rng(3)
        zeta = proxy.sample_g(p, rng.standard_normal((200, 6)))
        kappa = p.mean_shift @ cfg.vs.gamma_inv.T
        got = wkb.log_weight_y(ker, 0.8, lmm.to_y(cfg.vs, zeta), kappa)
        want = wkb.wkb_log_density_libor(ker, 0.0, cfg.l0, 0.8, zeta) - proxy.log_density(p, zeta)
        assert np.max(np.abs(got - want)) < 1e-10
