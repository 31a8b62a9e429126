import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import optimize

from anisocox.covariance import MaternParams, ModelSpec, matern_iso, table1_model
from anisocox.geometry import Deformation, MultiTypePattern, PointPattern, Window, isotropise
from anisocox.palmfit import (
    FitConfig,
    _pcf_curve,
    fit_pipeline,
    k_integral,
    k_integral_grad,
    min_contrast_init,
    palm_loglik_biv,
    palm_loglik_uni,
    palm_loglik_uni_grad,
    palm_pairs_biv,
    palm_pairs_uni,
    palm_profile_intensity,
)
from anisocox.simulate import SimConfig, simulate_lgcp
from anisocox.summaries import SummaryCurve, k_from_pcf
from anisocox.validity import CrossConstruction, check_conditions, construct_cross

from conftest import poisson_pattern


def numeric_lambda_max(pattern, w, m, R, pairs):
    # root of a central-difference derivative in log-lambda; no closed form used
    def dl(t):
        h = 1e-4
        return (palm_loglik_uni(pattern, w, math.exp(t + h), m, R, pairs) - palm_loglik_uni(pattern, w, math.exp(t - h), m, R, pairs)) / (2 * h)

    return math.exp(optimize.brentq(dl, math.log(1e-3), math.log(1e7), xtol=1e-14, rtol=1e-15))


@pytest.mark.parametrize("nu", [0.05, 0.5, 1.7, 5.0])
@pytest.mark.parametrize("R", [0.01, 0.1, 0.3])
def test_k_integral_matches_adaptive_quadrature(nu, R):
    m = MaternParams(0.045, nu, 4.0)
    assert k_integral(m, R) == pytest.approx(k_from_pcf(m, R), rel=1e-10)


def test_k_integral_gradient():
    m, R = MaternParams(0.045, 0.5, 4.0), 0.1
    ga, gs = k_integral_grad(m, R)
    h = 1e-6
    fa = (k_integral(MaternParams(m.alpha + h, m.nu, m.sigma), R) - k_integral(MaternParams(m.alpha - h, m.nu, m.sigma), R)) / (2 * h)
    fs = (k_integral(MaternParams(m.alpha, m.nu, m.sigma + h), R) - k_integral(MaternParams(m.alpha, m.nu, m.sigma - h), R)) / (2 * h)
    assert ga == pytest.approx(fa, rel=1e-6) and gs == pytest.approx(fs, rel=1e-6)


def test_poisson_limit(rng, unit):
    a = poisson_pattern(rng, 400)
    R = 0.08
    pairs = palm_pairs_uni(a, unit, R)
    m = MaternParams(0.05, 0.5, 0.0)
    lam = pairs.n_pairs / (pairs.n_int[0] * math.pi * R * R)
    assert palm_profile_intensity(pairs, m) == pytest.approx(lam, rel=1e-14)
    assert numeric_lambda_max(a, unit, m, R, pairs) == pytest.approx(lam, rel=1e-8)


@settings(max_examples=20)
@given(st.integers(0, 10_000))
def test_profile_identity(seed):
    rng = np.random.default_rng(seed)
    w = Window(0, rng.uniform(0.8, 1.5), 0, rng.uniform(0.8, 1.5))
    a = poisson_pattern(rng, rng.uniform(200, 600), w)
    m = MaternParams(rng.uniform(0.01, 0.1), rng.choice([0.05, 0.5, 1.3, 5.0]), rng.uniform(0.1, 5.0))
    R = rng.uniform(0.03, 0.15)
    pairs = palm_pairs_uni(a, w, R)
    assert numeric_lambda_max(a, w, m, R, pairs) == pytest.approx(palm_profile_intensity(pairs, m), rel=1e-8)


def test_loglik_gradient_finite_difference():
    pat = simulate_lgcp(table1_model(1), SimConfig(128, 128, 2, seed=1))[0][0]
    ip, w = isotropise(pat, pat.window, Deformation(math.radians(36), 0.2))
    R, lam = 0.1, ip.n / w.area
    m = MaternParams(0.045, 0.5, 4.0)
    pairs = palm_pairs_uni(ip, w, R)
    g = palm_loglik_uni_grad(ip, w, lam, m, R, pairs)
    ll = lambda a, s: palm_loglik_uni(ip, w, lam, MaternParams(a, 0.5, s), R, pairs)
    ha, hs = 1e-7, 1e-6
    fa = (ll(m.alpha + ha, 4.0) - ll(m.alpha - ha, 4.0)) / (2 * ha)
    fs = (ll(m.alpha, 4.0 + hs) - ll(m.alpha, 4.0 - hs)) / (2 * hs)
    assert g[0] == pytest.approx(fa, rel=1e-5) and g[1] == pytest.approx(fs, rel=1e-5)


def test_bivariate_independent_baseline_and_symmetry(rng, unit):
    a = poisson_pattern(rng, 300, type_id=1)
    b = poisson_pattern(rng, 200, type_id=2)
    R = 0.07
    la, lb = a.intensity, b.intensity
    pairs = palm_pairs_biv(a, b, unit, R)
    na, nb = pairs.n_int
    want = pairs.n_pairs * math.log(la + lb) - (nb * la + na * lb) * math.pi * R * R
    assert palm_loglik_biv(a, b, unit, la, lb, MaternParams(0.05, 0.5, 0.0), R) == pytest.approx(want, rel=1e-12)
    m = MaternParams(0.04, 0.5, 1.3)
    assert palm_loglik_biv(a, b, unit, la, lb, m, R) == palm_loglik_biv(b, a, unit, lb, la, m, R)


def test_no_pairs_gives_minus_infinity(unit):
    a = PointPattern([[0.5, 0.5], [0.9, 0.9]], unit)
    assert palm_loglik_uni(a, unit, 2.0, MaternParams(0.1, 0.5, 1.0), 0.05) == -math.inf


def test_bivariate_likelihood_prefers_generating_sigma():
    mp = MaternParams(0.05, 0.5, 1.0)
    marg = [(mp, Deformation(0, 1)), (mp, Deformation(0, 1))]
    model = construct_cross(marg, CrossConstruction(A_sigma=0.8)).with_mu([5.5, 5.5])
    cfg = SimConfig(64, 64, 2, seed=44)
    m_true = model.matern[0][1]
    R, n = 0.1, 30
    half = full = 0
    for k in range(n):
        pat = simulate_lgcp(model, cfg, k)[0]
        a, b = pat[0], pat[1]
        pairs = palm_pairs_biv(a, b, pat.window, R)
        ll = lambda s: palm_loglik_biv(a, b, pat.window, a.intensity, b.intensity, MaternParams(m_true.alpha, 0.5, s), R, pairs)
        l0 = ll(0.0)
        half += ll(0.5 * m_true.sigma) > l0
        full += ll(m_true.sigma) > l0
    assert half >= 0.8 * n and full >= 0.8 * n


def test_min_contrast_exact_and_flat():
    r = np.linspace(0.01, 0.1, 25)
    agrid = np.geomspace(0.01, 0.2, 15)
    sgrid = np.geomspace(0.1, 8, 15)
    a0, s0 = agrid[6], sgrid[9]
    curve = SummaryCurve(r, np.exp(matern_iso(r, MaternParams(a0, 0.5, s0))))
    assert min_contrast_init(curve, 0.5, agrid, sgrid) == (a0, s0)
    flat = SummaryCurve(r, np.ones_like(r))
    assert min_contrast_init(flat, 0.5, agrid, sgrid)[1] == sgrid[0]
    assert len(min_contrast_init(curve, 0.5, agrid, sgrid, top=4)) == 4


def test_min_contrast_from_noisy_curves():
    model = table1_model(1)
    d = model.deform[0][0]
    cfg = SimConfig(128, 128, 2, seed=8)
    agrid = np.geomspace(0.005, 0.1, 30)
    sgrid = np.geomspace(0.05, 20, 30)
    a0 = []
    for k in range(30):
        p = simulate_lgcp(model, cfg, k)[0][0]
        ip, w = isotropise(p, p.window, d)
        a0.append(min_contrast_init(_pcf_curve(ip, ip, w, 0.1), 0.5, agrid, sgrid)[0])
    assert 0.045 / 3 <= np.median(a0) <= 0.045 * 3


def test_single_type_pipeline():
    model = ModelSpec.from_pairs([5.0], {(0, 0): MaternParams(0.05, 0.5, 2.0)}, {(0, 0): Deformation(0.5, 0.4)})
    pat = simulate_lgcp(model, SimConfig(128, 128, 2, seed=2))[0]
    fit = fit_pipeline(pat, FitConfig(R=0.1, n_zeta=99))
    assert fit.spec.P == 1 and list(fit.loglik) == [(0, 0)]
    assert fit.validity.all_pass
    assert fit.spec.matern[0][0].nu in (0.05, 0.5, 5.0)
    assert fit.spec.deform[0][0].zeta <= 1


def test_independent_poisson_pipeline(rng, unit):
    pat = MultiTypePattern((poisson_pattern(rng, 300, type_id=1), poisson_pattern(rng, 300, type_id=2)), unit)
    fit = fit_pipeline(pat, FitConfig(R=0.08, isotropic=True, fix_nu=0.5))
    for p, q in fit.spec.pairs():
        assert abs(fit.spec.matern[p][q].sigma) < 0.5
    assert fit.validity.all_pass
    assert fit.anisotropy[(0, 1)]["fixed"] is True


def test_pipeline_preconditions(unit):
    pat = MultiTypePattern((PointPattern([[0.5, 0.5]], unit, 1), PointPattern([[0.2, 0.2], [0.3, 0.3]], unit, 2)), unit)
    with pytest.raises(ValueError, match="at least two"):
        fit_pipeline(pat)


def test_fit_config_round_trip(tmp_path):
    cfg = FitConfig(R=0.1, fix_nu=0.5, intensity="profile")
    assert cfg.nu_candidates == (0.5,)
    assert FitConfig.from_dict(cfg.to_dict()) == cfg
    with pytest.raises(ValueError, match="unknown"):
        FitConfig.from_dict({"bogus": 1})
    with pytest.raises(ValueError):
        FitConfig(intensity="other")
    path = tmp_path / "c.json"
    path.write_text('{"R": 0.1,\n "n_zeta": }')
    with pytest.raises(ValueError, match="line 2"):
        FitConfig.from_json(path)


def test_model_fit_json_is_deterministic():
    pat = simulate_lgcp(table1_model(2), SimConfig(64, 64, 2, seed=3))[0]
    cfg = FitConfig(R=0.1, fix_nu=0.5, n_zeta=49)
    assert fit_pipeline(pat, cfg).to_json() == fit_pipeline(pat, cfg).to_json()
