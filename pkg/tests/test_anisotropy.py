import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from anisocox.anisotropy import (
    DiscrepancyEvaluator,
    directional_discrepancy,
    estimate_anisotropy,
    estimate_theta,
    estimate_zeta,
    sector_count_rule,
    zeta_grid,
)
from anisocox.covariance import MaternParams, ModelSpec
from anisocox.geometry import Deformation, PointPattern, Window, rotation
from anisocox.simulate import SimConfig, simulate_lgcp

from conftest import poisson_pattern


def ellipse_points(a, b, angle, n=360):
    t = (np.arange(n) + 0.5) * 2 * math.pi / n
    pts = np.column_stack([a * np.cos(t), b * np.sin(t)])
    return pts @ rotation(angle).T


def aniso_model(theta=0.0, zeta=0.2, sigma=2.0, alpha=0.1, mu=5.0):
    return ModelSpec.from_pairs([mu], {(0, 0): MaternParams(alpha, 0.5, sigma)}, {(0, 0): Deformation(theta, zeta)})


def test_sector_count_rule():
    assert sector_count_rule(600, 600, 1.0) == 100
    assert sector_count_rule(600, 600, 1.0, marginal=False) == 100
    assert sector_count_rule(6, 6, 1.0) == 8
    assert sector_count_rule(1e6, 1e6, 1.0) == 720


@pytest.mark.parametrize("deg", [0.0, 36.0, 100.0, 179.0])
def test_noiseless_ellipse_orientation(deg):
    pts = ellipse_points(1.0, 0.5, math.radians(deg))
    th = estimate_theta(pts, 36, (1,))
    diff = abs(th - math.radians(deg)) % math.pi
    assert min(diff, math.pi - diff) < 1e-6


@given(st.floats(0.0, math.pi), st.integers(8, 60))
def test_negating_fry_vectors_is_exact(angle, n_F):
    rng = np.random.default_rng(1)
    pts = ellipse_points(1.0, 0.4, angle, 500) * rng.uniform(0.8, 1.2, (500, 1))
    assert estimate_theta(np.concatenate([pts, -pts]), n_F) == pytest.approx(
        estimate_theta(np.concatenate([-pts, pts]), n_F), abs=1e-12
    )


def test_too_few_sectors():
    pts = ellipse_points(1.0, 0.5, 0.0, 4)
    with pytest.warns(UserWarning), pytest.raises(ValueError, match="fewer than 5"):
        estimate_theta(pts, 36, (1,))


def test_zeta_grid_degenerate():
    np.testing.assert_allclose(zeta_grid(1, 2.0), [1.0])
    np.testing.assert_allclose(zeta_grid(199, 2.0)[[0, 98, -1]], [0.01, 0.99, 1.99])


@settings(max_examples=15)
@given(st.floats(0.0, math.pi), st.floats(0.1, 1.9))
def test_fast_evaluator_matches_direct(theta, zeta):
    rng = np.random.default_rng(4)
    w = Window.unit()
    a = PointPattern(rng.random((150, 2)), w, 1)
    b = PointPattern(rng.random((120, 2)), w, 2)
    for x, y in ((a, a), (a, b)):
        fast = DiscrepancyEvaluator(x, y, w, theta, zeta_max=2.0)(zeta)
        slow = directional_discrepancy(x, y, w, theta, zeta)
        assert fast == pytest.approx(slow, rel=1e-9, abs=1e-12)


def test_quarter_turn_flips_sign(rng, unit):
    a = poisson_pattern(rng, 300)
    v0 = directional_discrepancy(a, a, unit, 0.3, 1.0)
    v1 = directional_discrepancy(a, a, unit, 0.3 + math.pi / 2, 1.0)
    assert v1 == pytest.approx(-v0, rel=1e-9, abs=1e-12)


def test_csr_discrepancy_centred(unit):
    rng = np.random.default_rng(31)
    v = [directional_discrepancy(p, p, unit, 0.0, 1.0) for p in (poisson_pattern(rng, 400) for _ in range(100))]
    assert abs(np.mean(v)) < 3 * np.std(v, ddof=1) / math.sqrt(len(v))


def test_csr_zeta_near_one(unit):
    rng = np.random.default_rng(32)
    z = [estimate_zeta(p, p, unit, 0.0, n_zeta=99)[0] for p in (poisson_pattern(rng, 400) for _ in range(40))]
    assert 0.7 <= np.median(z) <= 1.4


def test_discrepancy_smaller_at_truth():
    cfg = SimConfig(128, 128, 2, seed=17)
    wins = 0
    for k in range(40):
        pat = simulate_lgcp(aniso_model(), cfg, k)[0]
        p = pat[0]
        ev = DiscrepancyEvaluator(p, p, pat.window, 0.0)
        wins += abs(ev(0.2)) < abs(ev(1.0))
    assert wins >= 32


def test_scale_invariance():
    rng = np.random.default_rng(5)
    w = Window.unit()
    pts = rng.random((300, 2))
    pts[:, 1] = 0.5 + 0.3 * (pts[:, 1] - 0.5)
    a = PointPattern(pts, w)
    z1 = estimate_zeta(a, a, w, 0.2, n_zeta=99)[0]
    s = 3.0
    w2 = Window(0, s, 0, s)
    b = PointPattern(pts * s, w2)
    z2 = estimate_zeta(b, b, w2, 0.2, n_zeta=99, b2=0.25 * s)[0]
    assert z1 == z2


def test_estimate_anisotropy_recovers_orientation():
    cfg = SimConfig(128, 128, 2, seed=23)
    pat = simulate_lgcp(aniso_model(theta=math.radians(30), zeta=0.3), cfg, 0)[0]
    est = estimate_anisotropy(pat[0], pat[0], pat.window)
    assert 0 <= est.theta_hat < math.pi and 0 < est.zeta_hat < 2
    d, _ = est.deformation.normalized()
    diff = abs(d.theta - math.radians(30)) % math.pi
    assert min(diff, math.pi - diff) < math.radians(25)
    assert d.zeta < 0.7


def test_input_checks(rng, unit):
    a = poisson_pattern(rng, 50)
    with pytest.raises(ValueError):
        directional_discrepancy(a, a, unit, 0.0, 1.0, n_r=10)
    with pytest.raises(ValueError):
        directional_discrepancy(a, a, unit, 0.0, 1.0, b1=0.3, b2=0.2)
    with pytest.raises(ValueError):
        estimate_anisotropy(PointPattern([[0.5, 0.5]], unit), PointPattern([[0.5, 0.5]], unit), unit)
