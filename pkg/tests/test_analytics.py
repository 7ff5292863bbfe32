import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from scipy import integrate

from storesim.analytics import (
    acoe_pair, acoe_residual, check_lolp_asymp_conditions, jg_asymptotic, jg_closed_form,
    jg_derivative_smax, lolp_rate_bounds, lolp_under_min_generation, lolp_under_suboptimal,
    smax_for_jg, smax_for_reduction, stationary_generation_cdf, stationary_storage_cdf,
    storage_atoms, suboptimal_storage_cdf,
)
from storesim.distributions import EmpiricalDistribution, LaplaceModel
from storesim.exceptions import ConditionViolated, TargetInfeasible, UnsupportedModel
from storesim.model import SystemParams
from storesim.policies import MinGenerationPolicy, SuboptimalLolpPolicy
from storesim.sim import run_trace, sample_iid, simulate_slots

LAP = LaplaceModel(b=13.99)


def sym(alpha, gmax=160.0, smax=100.0):
    return SystemParams.symmetric(alpha, gmax, smax)


def test_no_storage_value():
    assert jg_closed_form(sym(0.6, smax=0), LAP) == pytest.approx(13.99 / 2 * (1 - math.exp(-160 / 13.99)))


def test_no_storage_equals_expected_capped_deficit():
    # E[min(X^-, g_max)] by quadrature
    ref = integrate.quad(lambda x: min(-x, 160.0) * LAP.pdf(x), -np.inf, 0)[0]
    assert jg_closed_form(sym(0.6, smax=0), LAP) == pytest.approx(ref, rel=1e-10)


def test_infinite_limits():
    assert jg_closed_form(sym(0.6, math.inf, math.inf), LAP) == pytest.approx(0.4 * 13.99 / 2)
    assert jg_closed_form(sym(1.0, math.inf, 1e6), LAP) == pytest.approx(0.0, abs=1e-3)
    assert jg_closed_form(sym(1.0, 160, 100), LAP) > 0


def test_alpha_one_is_continuous():
    a = jg_closed_form(sym(1.0), LAP)
    b = jg_closed_form(sym(1 - 1e-9), LAP)
    assert a == pytest.approx(b, rel=1e-6)


def test_rejects_nonzero_mean():
    with pytest.raises(UnsupportedModel):
        jg_closed_form(sym(0.6), LaplaceModel(mu=1, b=13.99))
    with pytest.raises(UnsupportedModel):
        jg_closed_form(sym(0.6), EmpiricalDistribution([1.0, 2.0]))


@pytest.mark.parametrize("alpha", [0.36, 0.6, 0.81, 1.0])
@pytest.mark.parametrize("smax", [0.0, 10.0, 100.0])
def test_derivative_matches_finite_difference(alpha, smax):
    p = sym(alpha, smax=smax)
    h = 1e-3

    def f(s):
        return jg_closed_form(p.replace(s_max=s), LAP)

    if smax == 0:
        fd = (3 * f(0) - 4 * f(h) + f(2 * h)) / (2 * h)
    else:
        fd = (f(smax - h) - f(smax + h)) / (2 * h)
    assert jg_derivative_smax(p, LAP) == pytest.approx(fd, rel=1e-6)


@given(alpha=st.floats(0.05, 1.0), s1=st.floats(0, 300), s2=st.floats(0, 300))
def test_monotone_in_smax(alpha, s1, s2):
    lo, hi = sorted((s1, s2))
    p = sym(alpha)
    assert jg_closed_form(p.replace(s_max=hi), LAP) <= jg_closed_form(p.replace(s_max=lo), LAP) + 1e-12
    assert jg_derivative_smax(p.replace(s_max=hi), LAP) <= jg_derivative_smax(p.replace(s_max=lo), LAP) + 1e-15
    assert lolp_under_min_generation(p.replace(s_max=hi), LAP) <= lolp_under_min_generation(p.replace(s_max=lo), LAP) * (1 + 1e-12)


@pytest.mark.parametrize("alpha", [0.6, 0.7, 0.8])
def test_eighty_percent_within_four_sigma(alpha):
    s = smax_for_reduction(sym(alpha), LAP, 0.8)
    assert 0 < s < 4 * LAP.std()


@given(alpha=st.floats(0.1, 1.0), target_frac=st.floats(0.01, 0.99))
def test_inversion_roundtrip(alpha, target_frac):
    p = sym(alpha, smax=0)
    j0 = jg_closed_form(p, LAP)
    jinf = jg_closed_form(p.replace(s_max=math.inf), LAP)
    target = jinf + target_frac * (j0 - jinf)
    s = smax_for_jg(p, LAP, target)
    assert jg_closed_form(p.replace(s_max=s), LAP) == pytest.approx(target, rel=1e-8)


def test_inversion_errors():
    p = sym(0.6, smax=0)
    assert smax_for_jg(p, LAP, 100.0) == 0.0
    with pytest.raises(TargetInfeasible):
        smax_for_jg(p, LAP, 0.5)


class TestStationaryLaws:
    P = SystemParams(g_max=160, s_max=100, eta_c=0.9, eta_d=0.9)

    def test_atom_value(self):
        assert stationary_storage_cdf(self.P, LAP, 0.0) == pytest.approx(0.1534, abs=5e-4)
        assert storage_atoms(self.P, LAP)[0] == pytest.approx(stationary_storage_cdf(self.P, LAP, 0.0))

    def test_support(self):
        F = stationary_storage_cdf
        assert F(self.P, LAP, -1e-9) == 0 and F(self.P, LAP, 100) == 1 and F(self.P, LAP, 1e9) == 1
        s = np.linspace(0, 100, 2001)[:-1]
        v = F(self.P, LAP, s)
        assert np.all(np.diff(v) >= 0) and np.all((v >= 0) & (v <= 1))
        at0, atfull = storage_atoms(self.P, LAP)
        assert atfull == pytest.approx(1 - F(self.P, LAP, 100 - 1e-12), abs=1e-9)
        assert at0 > 0 and atfull > 0

    def test_generation_cdf(self):
        G = stationary_generation_cdf
        a = self.P.alpha()
        w = 1 - a * math.exp(-(1 / 0.9 - 0.9) * LAP.lam * 100 / 2)
        assert G(self.P, LAP, 0.0) == pytest.approx(1 - (1 - a) / (2 * w))
        g = np.linspace(0, 159, 200)
        tail = 1 - G(self.P, LAP, g)
        rate = -np.diff(np.log(tail)) / np.diff(g)
        assert np.allclose(rate, LAP.lam)
        assert G(self.P, LAP, 160.0) == 1 and G(self.P, LAP, -1) == 0

    def test_generation_cdf_without_storage(self):
        p = self.P.replace(s_max=0)
        g = np.linspace(0, 150, 7)
        assert np.allclose(stationary_generation_cdf(p, LAP, g), 1 - np.exp(-LAP.lam * g) / 2)

    @pytest.mark.parametrize("smax", [0.0, 30.0, 100.0])
    def test_generation_tail_integrates_to_jg(self, smax):
        p = self.P.replace(s_max=smax)
        val = integrate.quad(lambda g: 1 - float(stationary_generation_cdf(p, LAP, g)), 0, 160,
                             epsabs=1e-13, epsrel=1e-12)[0]
        assert val == pytest.approx(jg_closed_form(p, LAP), rel=1e-9)

    @pytest.mark.parametrize("gmax,smax", [(160, 100), (40, 50), (20, 0)])
    def test_lolp_by_quadrature(self, gmax, smax):
        p = self.P.replace(g_max=gmax, s_max=smax)
        # P(X < -g_max - eta_d S) with S stationary
        def integrand(x):
            edge = -(x + gmax) / 0.9
            return float(stationary_storage_cdf(p, LAP, np.nextafter(edge, -np.inf))) * LAP.pdf(x)
        val = integrate.quad(integrand, -np.inf, -gmax, epsabs=1e-15, epsrel=1e-11, limit=200,
                             points=None)[0]
        assert val == pytest.approx(lolp_under_min_generation(p, LAP), rel=1e-9)

    def test_lolp_limits(self):
        eps = math.exp(-LAP.lam * 160)
        assert lolp_under_min_generation(self.P.replace(s_max=0), LAP) == pytest.approx(eps / 2)
        assert lolp_under_min_generation(self.P.replace(s_max=0), LAP) == pytest.approx(5.4e-6, rel=0.01)
        assert lolp_under_min_generation(self.P.replace(s_max=math.inf), LAP) == pytest.approx(
            (1 - 0.81) * eps / 2)

    def test_storage_law_matches_simulation(self):
        p = SystemParams.symmetric(0.6, 160, 50)
        rec = simulate_slots(p, MinGenerationPolicy(), sample_iid(LAP, 300_000, 4))
        s = np.sort(rec.s[10_000:])
        grid = np.linspace(0, 50, 101)
        emp = np.searchsorted(s, grid, side="right") / s.size
        assert np.max(np.abs(emp - stationary_storage_cdf(p, LAP, grid))) < 0.01


def test_asymptotic():
    assert jg_asymptotic(LAP, 0.6) == pytest.approx(0.4 * 13.99 / 2)
    assert jg_asymptotic(LAP, 0.0) == pytest.approx(13.99 / 2)
    assert jg_asymptotic(LaplaceModel(mu=20, b=13.99), 0.6) == 0.0
    # generic distribution through quadrature
    class Normalish:
        def cdf(self, x):
            return LAP.cdf(x)
    assert jg_asymptotic(Normalish(), 0.6) == pytest.approx(0.4 * 13.99 / 2, rel=1e-8)


def test_asymptotic_with_mean_shift_by_quadrature():
    lap = LaplaceModel(mu=5, b=13.99)
    neg = integrate.quad(lambda x: -x * lap.pdf(x), -np.inf, 0)[0]
    pos = integrate.quad(lambda x: x * lap.pdf(x), 0, np.inf)[0]
    assert jg_asymptotic(lap, 0.6) == pytest.approx(max(neg - 0.6 * pos, 0), rel=1e-9)


class TestRates:
    def test_bounds(self):
        p = sym(0.6)
        r = lolp_rate_bounds(p, LAP)
        assert r.gamma_min == pytest.approx(-p.eta_d * LAP.lam)
        assert r.gamma_min <= r.gamma_max < 0
        assert 0 < r.lam0 < p.eta_d * LAP.lam

    def test_large_gmax_limit(self):
        p = sym(0.6, gmax=1e5)
        assert lolp_rate_bounds(p, LAP).lam0 == pytest.approx(LAP.lam * p.eta_d)

    def test_condition(self):
        with pytest.raises(ConditionViolated):
            lolp_rate_bounds(sym(0.6, gmax=1.0), LAP)
        assert check_lolp_asymp_conditions(LAP, sym(0.6))
        assert not check_lolp_asymp_conditions(LAP, sym(0.6, gmax=0.0))
        assert check_lolp_asymp_conditions(LAP, sym(1.0, gmax=10.0))

    def test_heavy_tail_fails(self):
        class Heavier:
            def cdf(self, x):
                x = np.asarray(x, dtype=float)
                return np.where(x < -1, 0.5 / np.sqrt(np.abs(x)), 0.5)
        assert not check_lolp_asymp_conditions(Heavier(), sym(0.6))

    def test_empirical_distribution(self):
        sample = np.asarray(LAP.ppf(np.linspace(0.001, 0.999, 999)))
        assert check_lolp_asymp_conditions(EmpiricalDistribution(sample), sym(0.6))


class TestSuboptimal:
    P = SystemParams.symmetric(0.6, 30, 60)

    def test_cdf_valid(self):
        s = np.linspace(-1, 61, 500)
        v = suboptimal_storage_cdf(self.P, LAP, s)
        assert np.all(np.diff(v) >= -1e-15) and v[0] == 0 and v[-1] == 1

    def test_lolp_by_quadrature(self):
        p = self.P
        ed = p.eta_d

        def integrand(x):
            edge = -(x + p.gmax) / ed
            return float(suboptimal_storage_cdf(p, LAP, np.nextafter(edge, -np.inf))) * LAP.pdf(x)

        val = integrate.quad(integrand, -np.inf, -p.gmax, epsabs=1e-15, epsrel=1e-11, limit=200)[0]
        assert val == pytest.approx(lolp_under_suboptimal(p, LAP), rel=1e-8)

    def test_lolp_matches_simulation(self):
        p = self.P
        rep = run_trace(p, SuboptimalLolpPolicy(), sample_iid(LAP, 1_000_000, 2), s1=p.smax,
                        dist_for_smoothing=LAP, burn_in=10_000)
        assert rep.j_l_smoothed == pytest.approx(lolp_under_suboptimal(p, LAP), rel=0.05)

    def test_storage_law_matches_simulation(self):
        p = self.P
        rec = simulate_slots(p, SuboptimalLolpPolicy(), sample_iid(LAP, 300_000, 8), s1=p.smax)
        s = np.sort(rec.s[10_000:])
        grid = np.linspace(0, 60, 121)
        emp = np.searchsorted(s, grid, side="right") / s.size
        assert np.max(np.abs(emp - suboptimal_storage_cdf(p, LAP, grid))) < 0.01

    def test_decay_rate(self):
        p = self.P
        r = lolp_rate_bounds(p, LAP)
        l1 = lolp_under_suboptimal(p.replace(s_max=400), LAP)
        l2 = lolp_under_suboptimal(p.replace(s_max=500), LAP)
        assert math.log(l2 / l1) / 100 == pytest.approx(r.gamma_max, rel=1e-3)


class TestAcoe:
    @pytest.mark.parametrize("alpha,gmax,smax", [(0.6, 160, 100), (0.81, 40, 30), (0.5, math.inf, 50)])
    def test_residual(self, alpha, gmax, smax):
        p = sym(alpha, gmax, smax)
        assert acoe_residual(p, LAP, np.linspace(0, smax, 25)) < 1e-8

    def test_eta_and_bounded_v(self):
        p = sym(0.6)
        eta, v = acoe_pair(p, LAP)
        assert eta == jg_closed_form(p, LAP)
        assert np.all(np.isfinite(v(np.linspace(0, 100, 101))))

    def test_wrong_eta_gives_residual(self):
        # negative control: a perturbed pair does not solve the equation
        from storesim import analytics

        p = sym(0.6)
        orig = analytics.jg_closed_form
        try:
            analytics.jg_closed_form = lambda *a: orig(*a) + 1e-3
            assert acoe_residual(p, LAP, [0.0, 50.0]) > 1e-4
        finally:
            analytics.jg_closed_form = orig

    def test_unsupported(self):
        with pytest.raises(UnsupportedModel):
            acoe_pair(sym(1.0), LAP)
