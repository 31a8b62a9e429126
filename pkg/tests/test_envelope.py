import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from anisocox.covariance import table1_model
from anisocox.envelope import (
    StatisticSpec,
    directional_quantile_envelope,
    run_get,
    studentized_mad_envelope,
)
from anisocox.simulate import SimConfig, simulate_lgcp

METHODS = [studentized_mad_envelope, directional_quantile_envelope]


def gaussian_curves(rng, n, k=30):
    # smooth correlated curves
    x = np.linspace(0, 1, k)
    base = np.sin(3 * x)
    z = rng.standard_normal((n, 4))
    basis = np.stack([np.ones_like(x), x, np.cos(4 * x), np.sin(7 * x)])
    return base + 0.3 * z @ basis + 0.05 * rng.standard_normal((n, k))


@pytest.mark.parametrize("fn", METHODS)
def test_central_curve_not_rejected(rng, fn):
    sims = gaussian_curves(rng, 99)
    res = fn(np.median(sims, axis=0), sims)
    assert not res.reject and res.p_value > 0.5


@pytest.mark.parametrize("fn", METHODS)
def test_extreme_excursion_rejected(rng, fn):
    sims = gaussian_curves(rng, 499)
    obs = sims.mean(axis=0).copy()
    obs[7] += 10 * sims.std(axis=0, ddof=1)[7] + 10 * np.ptp(sims[:, 7])
    res = fn(obs, sims)
    assert res.reject and res.p_value == pytest.approx(1 / 500)
    assert res.exits()


@pytest.mark.parametrize("fn", METHODS)
def test_type_one_error(fn):
    rng = np.random.default_rng(99)
    rej = 0
    for _ in range(200):
        curves = gaussian_curves(rng, 100)
        rej += fn(curves[0], curves[1:], alpha=0.1).reject
    assert 0.03 <= rej / 200 <= 0.17


@given(st.integers(0, 2 ** 31), st.sampled_from([19, 39, 99]), st.sampled_from([0.05, 0.1, 0.2]), st.floats(0, 4))
def test_consistency_and_lattice(seed, M, alpha, shift):
    rng = np.random.default_rng(seed)
    sims = gaussian_curves(rng, M + 1)
    obs = sims[0] + shift * rng.standard_normal(sims.shape[1]) * 0.1
    for fn in METHODS:
        res = fn(obs, sims[1:], alpha)
        assert np.all(res.lower <= res.upper)
        assert res.reject == res.exits() == (res.p_value <= alpha)
        k = res.p_value * (M + 1)
        assert abs(k - round(k)) < 1e-9 and 1 <= round(k) <= M + 1


def test_directional_matches_studentized_for_symmetric(rng):
    sims = rng.standard_normal((999, 20)) * np.linspace(1, 2, 20)
    a = studentized_mad_envelope(sims[0], sims[1:])
    b = directional_quantile_envelope(sims[0], sims[1:])
    mid_a = (a.lower + a.upper) / 2
    mid_b = (b.lower + b.upper) / 2
    width = a.upper - a.lower
    assert np.all(np.abs(mid_a - mid_b) < 0.05 * width)


def test_directional_skew(rng):
    sims = np.exp(rng.standard_normal((499, 15)))
    res = directional_quantile_envelope(sims[0], sims[1:])
    assert np.all(res.upper - res.center > res.center - res.lower)


def test_degenerate_abscissa_excluded(rng):
    sims = gaussian_curves(rng, 99)
    sims[:, 0] = 0.0
    obs = sims.mean(axis=0)
    obs[0] = 5.0  # ignored: no spread there
    res = studentized_mad_envelope(obs, sims)
    assert not res.used[0] and res.used[1:].all()
    with pytest.raises(ValueError, match="degenerate"):
        studentized_mad_envelope(np.zeros(3), np.zeros((20, 3)))


def test_input_errors(rng):
    sims = gaussian_curves(rng, 5)
    with pytest.raises(ValueError, match="at least"):
        studentized_mad_envelope(sims[0], sims[1:], alpha=0.1)
    with pytest.raises(ValueError, match="shape"):
        studentized_mad_envelope(sims[0][:-1], sims)
    with pytest.raises(ValueError):
        StatisticSpec(kind="L")


def test_run_get_on_model(tmp_path):
    model = table1_model(2)
    cfg = SimConfig(64, 64, 2, seed=0)
    data = simulate_lgcp(model, cfg, 1000)[0]
    spec = StatisticSpec("G", 0, 1, r_max=0.05, n_r=20)
    res = run_get(data, model, spec, M=19, alpha=0.1, seed=5, sim_cfg=cfg)
    again = run_get(data, model, spec, M=19, alpha=0.1, seed=5, sim_cfg=cfg)
    assert res.p_value == again.p_value and np.array_equal(res.lower, again.lower)
    assert res.method == "studentized_mad"
    assert round(res.p_value * 20) == pytest.approx(res.p_value * 20)
    res.to_csv(tmp_path / "e.csv")
    assert (tmp_path / "e.csv").read_text().splitlines()[0] == "abscissa,lower,observed,upper"
    with pytest.raises(ValueError, match="M"):
        run_get(data, model, spec, M=0)
    sk = run_get(data, model, StatisticSpec("sector_k", 0, 0, n_phi=12), M=9, alpha=0.1, seed=1, sim_cfg=cfg)
    assert sk.method == "directional_quantile_mad" and len(sk.abscissa) == 13
