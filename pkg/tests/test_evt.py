import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from openapmax import evt
from openapmax.evt import (
    ConvergenceError,
    DegenerateTailError,
    GpdModel,
    WeibullTailModel,
    default_tail_size,
    fit_gpd,
    fit_weibull_tail,
    gpd_cdf,
    model_from_dict,
    w_score,
    weibull_loglik,
)


def ks_against_empirical(model, tail):
    """Kolmogorov distance between the fitted CDF and the tail's empirical CDF."""
    x = np.sort(tail)
    n = len(x)
    f = np.asarray(w_score(model, x))
    upper = np.arange(1, n + 1) / n
    lower = np.arange(0, n) / n
    return float(max(np.abs(f - upper).max(), np.abs(f - lower).max()))


class TestWScore:
    def test_analytic(self):
        m = WeibullTailModel(1.0, 1.0, 0.0, 5)
        assert abs(w_score(m, 1.0) - (1 - math.exp(-1))) < 1e-9
        assert abs(w_score(m, 1.0) - 0.632121) < 1e-6

    def test_support_clamp(self):
        m = WeibullTailModel(2.0, 1.5, -3.0, 5)
        assert w_score(m, 3.0) == 0.0
        assert w_score(m, 1.0) == 0.0

    def test_limit(self):
        m = WeibullTailModel(0.7, 2.0, 0.5, 5)
        d = np.linspace(0, 500, 2001)
        w = w_score(m, d)
        assert np.all(np.diff(w) >= 0)
        assert w[-1] > 1 - 1e-9

    @settings(max_examples=100, deadline=None)
    @given(
        st.floats(0.05, 20),
        st.floats(1e-3, 100),
        st.floats(-10, 10),
        st.lists(st.floats(-50, 50), min_size=2, max_size=30),
    )
    def test_monotone_in_unit_interval(self, k, lam, t, ds):
        m = WeibullTailModel(k, lam, t, 5)
        ds = np.sort(ds)
        w = w_score(m, ds)
        assert np.all((w >= 0) & (w <= 1))
        assert np.all(np.diff(w) >= 0)
        assert w_score(m, -t) == 0.0


class TestFitWeibull:
    def test_recovery_ks(self):
        rng = np.random.default_rng(20240501)
        x = 3.0 * rng.weibull(2.0, size=10_000)
        m = fit_weibull_tail(x, tail_size=100)
        tail = np.sort(x)[-100:]
        assert ks_against_empirical(m, tail) <= 0.15

    def test_exponential_closed_form(self):
        rng = np.random.default_rng(3)
        x = rng.exponential(2.0, size=400)
        m = fit_weibull_tail(x, tail_size=len(x), shape=1.0)
        translated = x + m.translation
        assert abs(m.scale - translated.mean()) < 1e-6

    def test_exponential_shape_near_one(self):
        rng = np.random.default_rng(4)
        x = rng.exponential(2.0, size=4000) + 5.0
        m = fit_weibull_tail(x, tail_size=len(x), shift="positive")
        assert m.translation == 0.0
        assert m.shape > 1.0  # shifted data is not exponential at the origin

    def test_degenerate(self):
        with pytest.raises(DegenerateTailError, match="degenerate tail"):
            fit_weibull_tail([1, 1, 1, 1, 1], tail_size=5)

    def test_local_optimum(self):
        rng = np.random.default_rng(11)
        x = 1.5 + rng.gamma(2.0, 1.0, size=300)
        m = fit_weibull_tail(x, tail_size=40)
        tail = np.sort(x)[-40:] + m.translation
        best = weibull_loglik(tail, m.shape, m.scale)
        for _ in range(200):
            k = m.shape * (1 + rng.uniform(-0.1, 0.1))
            lam = m.scale * (1 + rng.uniform(-0.1, 0.1))
            assert weibull_loglik(tail, k, lam) <= best + 1e-9

    def test_matches_scipy_mle(self):
        stats = pytest.importorskip("scipy.stats")
        rng = np.random.default_rng(12)
        x = 2.0 * rng.weibull(1.7, size=500) + 0.3
        m = fit_weibull_tail(x, tail_size=len(x), shift="positive")
        k, _, lam = stats.weibull_min.fit(x, floc=0)
        np.testing.assert_allclose([m.shape, m.scale], [k, lam], rtol=1e-4)

    def test_translation_rules(self):
        x = np.linspace(-2.0, 3.0, 30)
        m = fit_weibull_tail(x, tail_size=10, shift="positive")
        assert m.translation == 0.0
        m = fit_weibull_tail(x - 10, tail_size=10, shift="positive")
        assert m.translation == pytest.approx(-np.sort(x - 10)[-10] + 1e-6)
        m = fit_weibull_tail(x, tail_size=10)
        assert m.translation == pytest.approx(-np.sort(x)[-10] + 1e-6)

    def test_default_tail_size(self):
        assert default_tail_size(100) == 20
        assert default_tail_size(11) == 6
        m = fit_weibull_tail(np.arange(1.0, 31.0))
        assert m.tail_size == 15

    def test_deterministic(self):
        x = np.random.default_rng(5).normal(3, 1, size=200)
        assert fit_weibull_tail(x) == fit_weibull_tail(x.copy())

    def test_non_convergence(self, monkeypatch):
        monkeypatch.setattr(evt, "MAX_ITER", 1)
        x = np.random.default_rng(6).normal(3, 1, size=200)
        with pytest.raises(ConvergenceError, match="residual"):
            fit_weibull_tail(x)

    def test_argument_errors(self):
        with pytest.raises(ValueError):
            fit_weibull_tail([1.0, 2.0, 3.0], tail_size=5)
        with pytest.raises(ValueError):
            fit_weibull_tail(np.arange(10.0), tail_size=4)

    def test_serialization(self):
        m = WeibullTailModel(1.3, 0.4, -2.0, 20)
        d = m.to_dict()
        assert d["kind"] == "weibull" and set(d) == {"kind", "k", "lambda", "t", "tail_size"}
        assert model_from_dict(d) == m


class TestGpd:
    def test_exponential_branch(self):
        assert abs(gpd_cdf(GpdModel(0.0, 2.0), 2.0) - (1 - math.exp(-1))) < 1e-9

    def test_unit_shape(self):
        assert abs(gpd_cdf(GpdModel(1.0, 1.0), 1.0) - 0.5) < 1e-9

    def test_origin(self):
        assert gpd_cdf(GpdModel(0.3, 1.0), 1e-12) < 1e-11
        assert gpd_cdf(GpdModel(0.0, 1.0), 0.0) == 0.0

    def test_zero_shape_equals_exponential(self):
        rng = np.random.default_rng(7)
        for _ in range(50):
            mu, w = rng.uniform(0.1, 5), rng.uniform(0, 20)
            assert abs(gpd_cdf(GpdModel(0.0, mu), w) - (1 - math.exp(-w / mu))) < 1e-9

    def test_support_violation(self):
        with pytest.raises(ValueError, match="support"):
            gpd_cdf(GpdModel(-0.5, 1.0), 3.0)
        with pytest.raises(ValueError):
            gpd_cdf(GpdModel(0.5, 1.0), -1.0)

    @settings(max_examples=80, deadline=None)
    @given(st.floats(-0.9, 3), st.floats(0.05, 10), st.lists(st.floats(0, 50), min_size=2, max_size=20))
    def test_monotone_on_support(self, zeta, mu, ws):
        ws = np.sort(ws)
        if zeta < 0:
            ws = ws[ws < -mu / zeta]
        if len(ws) < 2:
            return
        f = gpd_cdf(GpdModel(zeta, mu), ws)
        assert np.all(np.diff(f) >= -1e-15)
        assert np.all((f >= 0) & (f <= 1))

    def test_fit_exponential(self):
        x = np.random.default_rng(8).exponential(2.0, size=5000)
        m = fit_gpd(x)
        assert abs(m.shape) <= 0.15
        assert abs(m.scale - 2.0) <= 0.3

    def test_fit_uniform(self):
        x = np.random.default_rng(9).uniform(0, 1, size=5000)
        assert fit_gpd(x).shape < 0

    def test_fit_degenerate(self):
        with pytest.raises(DegenerateTailError):
            fit_gpd(np.full(20, 3.0))

    def test_fit_too_few(self):
        with pytest.raises(ValueError):
            fit_gpd(np.arange(1.0, 6.0))

    def test_fit_matches_scipy(self):
        stats = pytest.importorskip("scipy.stats")
        x = np.random.default_rng(10).pareto(3.0, size=3000)
        m = fit_gpd(x)
        c, _, scale = stats.genpareto.fit(x, floc=0)
        np.testing.assert_allclose([m.shape, m.scale], [c, scale], rtol=2e-3, atol=2e-3)

    def test_serialization(self):
        m = GpdModel(0.2, 1.5, 0.7)
        assert model_from_dict(m.to_dict()) == m
