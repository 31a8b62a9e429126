import json
import math

import mpmath
import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from anisocox.covariance import (
    MaternParams,
    ModelSpec,
    coherence,
    cov,
    cross_spectrum_bound,
    matern_iso,
    pcf,
    pcf_polar,
    practical_range,
    spectral_density,
    spectral_density_params,
    table1_model,
)
from anisocox.geometry import Deformation


def uni(m, d=Deformation(0.0, 1.0), mu=0.0):
    return ModelSpec.from_pairs([mu], {(0, 0): m}, {(0, 0): d})


def test_closed_forms_at_100_radii():
    r = np.linspace(0.0, 0.5, 100)
    m = MaternParams(0.07, 0.5, 2.5)
    np.testing.assert_allclose(matern_iso(r, m), 2.5 * np.exp(-math.sqrt(2) * r / 0.07), rtol=1e-10, atol=0)
    m = MaternParams(0.07, 1.5, 2.5)
    x = math.sqrt(6) * r / 0.07
    np.testing.assert_allclose(matern_iso(r, m), 2.5 * (1 + x) * np.exp(-x), rtol=1e-10, atol=0)
    assert matern_iso(np.array([0.0]), m)[0] == 2.5


@pytest.mark.parametrize("nu", [1.5, 0.8])
def test_hankel_oracle(nu):
    # C(r) = 2 pi int_0^inf f(rho) J0(rho r) rho drho with the radial spectral density
    alpha, sigma, r = 1.0, 1.0, 1.0
    k = 4 * nu / alpha ** 2
    c = sigma * mpmath.gamma(nu + 1) / (mpmath.pi * mpmath.gamma(nu))
    f = lambda t: 2 * mpmath.pi * c * k ** nu / (k + t * t) ** (nu + 1) * mpmath.besselj(0, t * r) * t
    mpmath.mp.dps = 30
    want = float(mpmath.quadosc(f, [0, mpmath.inf], omega=r))
    mpmath.mp.dps = 15
    assert matern_iso(np.array([r]), MaternParams(alpha, nu, sigma))[0] == pytest.approx(want, rel=1e-6)


@pytest.mark.parametrize("theta, zeta, nu", [(0.0, 1.0, 0.5), (0.6, 0.3, 0.5), (2.0, 0.7, 2.0)])
def test_bochner_normalization(theta, zeta, nu):
    from scipy.integrate import quad

    m, d = MaternParams(0.1, nu, 3.0), Deformation(theta, zeta)
    phis = np.linspace(0, 2 * np.pi, 64, endpoint=False)
    total = 0.0
    for phi in phis:
        u = np.array([math.cos(phi), math.sin(phi)])
        g = lambda t: spectral_density_params(t * u, m, d) * t
        total += quad(g, 0, np.inf, limit=400, epsabs=0, epsrel=1e-10)[0]
    total *= 2 * np.pi / len(phis)
    assert total == pytest.approx(3.0, rel=1e-3)


def test_fourier_pair_riemann():
    m, d = MaternParams(0.5, 1.5, 2.0), Deformation(0.4, 0.6)
    x = np.arange(-10.0, 10.0 + 1e-9, 0.02)
    X, Y = np.meshgrid(x, x)
    C = cov(np.stack([X, Y], -1), m, d)
    for w in [(0.0, 0.0), (1.0, 2.0), (3.0, -1.0), (5.0, 5.0)]:
        num = 0.02 ** 2 / (4 * np.pi ** 2) * float(np.sum(C * np.cos(w[0] * X + w[1] * Y)))
        assert num == pytest.approx(spectral_density_params(np.array(w), m, d), rel=1e-3)


@given(st.floats(0, 2 * math.pi), st.floats(0.1, 50))
def test_isotropic_spectrum_rotation_invariant(phi, rho):
    m = uni(MaternParams(0.2, 0.9, 1.0))
    w1 = np.array([rho, 0.0])
    w2 = rho * np.array([math.cos(phi), math.sin(phi)])
    assert spectral_density(w2, m, 0, 0) == pytest.approx(spectral_density(w1, m, 0, 0), rel=1e-12)


def test_spectrum_positive_decreasing():
    m, d = MaternParams(0.05, 0.5, 4.0), Deformation(0.6, 0.2)
    t = np.linspace(0, 300, 200)
    u = np.linalg.solve(d.sqrt, np.array([0.6, 0.8]))
    f = spectral_density_params(t[:, None] * u, m, d)
    assert np.all(f > 0) and np.all(np.diff(f) < 0)


def test_cov_reductions(rng):
    m = MaternParams(0.1, 0.5, 2.0)
    h = rng.normal(size=(20, 2)) * 0.1
    np.testing.assert_allclose(cov(h, m, Deformation(1.0, 1.0)), matern_iso(np.hypot(*h.T), m), rtol=1e-13)
    assert cov(np.array([0.0, 0.1]), m, Deformation(0.0, 0.5)) == pytest.approx(matern_iso(0.2, m), rel=1e-13)


@given(st.floats(0, math.pi), st.floats(0.1, 1.0), st.floats(0.01, 0.3))
def test_cov_constant_on_ellipse(theta, zeta, c):
    m, d = MaternParams(0.1, 1.2, 1.0), Deformation(theta, zeta)
    t = np.linspace(0, 2 * np.pi, 13)
    h = (c * np.column_stack([np.cos(t), np.sin(t)])) @ d.sqrt.T
    v = cov(h, m, d)
    np.testing.assert_allclose(v, v[0], rtol=1e-10)


def test_pcf_cases():
    zero = MaternParams(0.1, 0.5, 0.0)
    m = ModelSpec.from_pairs(
        [0, 0],
        {(0, 0): MaternParams(0.1, 0.5, 1.0), (1, 1): MaternParams(0.1, 0.5, 1.0), (0, 1): zero},
        {k: Deformation(0.3, 0.5) for k in [(0, 0), (1, 1), (0, 1)]},
    )
    np.testing.assert_array_equal(pcf(np.random.default_rng(0).random((5, 2)), m, 0, 1), 1.0)
    mm, d = MaternParams(0.05, 0.5, 4.0), Deformation(0.6, 0.2)
    r = np.linspace(0.0, 0.2, 7)
    g0 = lambda s: np.exp(matern_iso(s, mm))
    np.testing.assert_allclose(pcf_polar(r, 0.6, mm, d), g0(r), rtol=1e-12)
    np.testing.assert_allclose(pcf_polar(r, 0.6 + math.pi / 2, mm, d), g0(r / 0.2), rtol=1e-12)
    # polar form agrees with the Cartesian one
    phi = 1.1
    h = np.column_stack([r * math.cos(phi), r * math.sin(phi)])
    np.testing.assert_allclose(pcf_polar(r, phi, mm, d), np.exp(cov(h, mm, d)), rtol=1e-12)


def test_cross_spectrum_bound_model1():
    m = table1_model(1)
    w = np.linspace(-200, 200, 101)
    W = np.stack(np.meshgrid(w, w), -1)
    fpq, bound = cross_spectrum_bound(W, m, 0, 1)
    assert np.all(fpq <= bound * (1 + 1e-12))


def test_perfect_coherence():
    mp, d = MaternParams(0.1, 0.7, 1.5), Deformation(0.4, 0.5)
    m = ModelSpec.from_pairs([0, 0], {k: mp for k in [(0, 0), (1, 1), (0, 1)]}, {k: d for k in [(0, 0), (1, 1), (0, 1)]})
    w = np.array([[1.0, 2.0], [30.0, -4.0]])
    fpq, bound = cross_spectrum_bound(w, m, 0, 1)
    np.testing.assert_allclose(fpq, bound, rtol=1e-13)
    np.testing.assert_allclose(coherence(w, m, 0, 1), 1.0, rtol=1e-13)
    with pytest.raises(ValueError):
        cross_spectrum_bound(w, m, 0, 0)


def test_practical_range():
    m = MaternParams(0.045, 0.5, 4.0)
    r = practical_range(m)
    assert math.exp(-math.sqrt(2) * r / 0.045) == pytest.approx(0.05, rel=1e-9)


def test_model_json_round_trip(tmp_path):
    m = table1_model(2)
    path = tmp_path / "m.json"
    m.to_json(path)
    back = ModelSpec.from_json(path)
    assert back.P == 2
    for p, q in m.pairs():
        assert back.matern[p][q] == m.matern[p][q]
        assert back.deform[p][q].theta == pytest.approx(m.deform[p][q].theta, abs=1e-14)
    d = m.to_dict()
    for e in d["pairs"]:
        e["theta_rad"] = math.radians(e.pop("theta_deg"))
    assert ModelSpec.from_dict(d).deform[0][1].theta == pytest.approx(m.deform[0][1].theta)


def test_model_json_errors(tmp_path):
    path = tmp_path / "m.json"
    path.write_text("{\n  \"P\": 1,\n  oops\n}")
    with pytest.raises(ValueError, match="line 3"):
        ModelSpec.from_json(path)
    d = table1_model(1).to_dict()
    del d["pairs"][2]
    with pytest.raises(ValueError, match="missing"):
        ModelSpec.from_dict(d)
    with pytest.raises(ValueError):
        MaternParams(-1.0, 0.5, 1.0)


def test_relabel_swaps_components():
    m = table1_model(1)
    r = m.relabel([1, 0])
    assert r.mu == (m.mu[1], m.mu[0])
    assert r.matern[0][0] == m.matern[1][1]
    assert r.relabel([1, 0]) == m
    assert m.intensity(0) == pytest.approx(math.exp(6.75))
