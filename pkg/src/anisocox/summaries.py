"""Second-order summary statistics with translation edge correction.

All estimators use the classical intensity estimate ``n / |W|`` and box
kernels normalized to unit mass, ``1(-h <= t < h) / (2h)``.
"""

from __future__ import annotations

import csv
import json
import math
import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy import integrate
from scipy.spatial import cKDTree

from .covariance import MaternParams, matern_iso
from .geometry import _same, pair_differences

TWO_PI = 2.0 * math.pi
DEFAULT_H_PHI = math.pi / 8


@dataclass(frozen=True, eq=False)
class RadialGrid:
    r: np.ndarray
    h: float

    def __post_init__(self):
        r = np.asarray(self.r, dtype=float).ravel()
        if r.size == 0 or np.any(r < 0) or np.any(np.diff(r) <= 0):
            raise ValueError("radial grid must be nonempty, nonnegative and strictly increasing")
        if not self.h > 0:
            raise ValueError("bandwidth must be positive")
        object.__setattr__(self, "r", r)

    @classmethod
    def linspace(cls, r_min, r_max, n, h):
        return cls(np.linspace(r_min, r_max, n), h)


@dataclass(frozen=True, eq=False)
class SummaryCurve:
    abscissa: np.ndarray
    values: np.ndarray
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        x = np.asarray(self.abscissa, dtype=float)
        v = np.asarray(self.values, dtype=float)
        if x.shape != v.shape:
            raise ValueError(f"abscissa {x.shape} and values {v.shape} differ in shape")
        object.__setattr__(self, "abscissa", x)
        object.__setattr__(self, "values", v)

    def __len__(self):
        return len(self.abscissa)

    def to_csv(self, path):
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["abscissa", "value"])
            for x, v in zip(self.abscissa, self.values):
                w.writerow([repr(float(x)), repr(float(v))])

    def meta_json(self):
        return json.dumps(self.meta, indent=2, sort_keys=True, default=float) + "\n"


def _points(p):
    return p.points if hasattr(p, "points") else np.asarray(p, dtype=float).reshape(-1, 2)


def _intensities(a, b, window):
    return len(_points(a)) / window.area, len(_points(b)) / window.area


def box(t, h):
    """Box kernel with unit mass on ``[-h, h)``."""
    t = np.asarray(t)
    return ((t >= -h) & (t < h)) / (2.0 * h)


def wrap_angle(t):
    """Map angles to ``[-pi, pi)``."""
    return (np.asarray(t) + math.pi) % TWO_PI - math.pi


def _weighted_pairs(a, b, window, r_max):
    """Difference vectors ``b_j - a_i`` with their translation weights."""
    same = _same(a, b) if hasattr(a, "points") and hasattr(b, "points") else False
    _, _, d = pair_differences(a, b, r_max, same=same)
    d = -d
    lam_a, lam_b = _intensities(a, b, window)
    with np.errstate(divide="ignore"):
        w = 1.0 / (lam_a * lam_b * window.overlap(d))
    return d, w


def _empty(a, b, what):
    if len(_points(a)) == 0 or len(_points(b)) == 0:
        warnings.warn(f"{what}: empty pattern, returning NaN", stacklevel=3)
        return True
    return False


def estimate_pcf_iso(a, b, window, grid: RadialGrid) -> SummaryCurve:
    """Kernel estimate of the isotropic (cross) pair correlation function."""
    r = grid.r
    if np.any(r <= grid.h):
        raise ValueError("every r must exceed the bandwidth")
    meta = {"statistic": "pcf", "kernel": "box", "h_r": grid.h}
    if _empty(a, b, "pcf"):
        return SummaryCurve(r, np.full(r.shape, np.nan), meta)
    d, w = _weighted_pairs(a, b, window, r[-1] + grid.h)
    dist = np.hypot(d[:, 0], d[:, 1])
    order = np.argsort(dist)
    dist, w = dist[order], w[order]
    cw = np.concatenate([[0.0], np.cumsum(w)])
    lo = np.searchsorted(dist, r - grid.h, side="left")
    hi = np.searchsorted(dist, r + grid.h, side="left")
    g = (cw[hi] - cw[lo]) / (2 * grid.h) / (TWO_PI * r)
    return SummaryCurve(r, g, meta)


def estimate_k_iso(a, b, window, r) -> SummaryCurve:
    """Translation-corrected Ripley K (ordered pairs with distance <= r)."""
    r = np.atleast_1d(np.asarray(r, dtype=float))
    meta = {"statistic": "K"}
    if _empty(a, b, "K"):
        return SummaryCurve(r, np.full(r.shape, np.nan), meta)
    d, w = _weighted_pairs(a, b, window, r.max())
    dist = np.hypot(d[:, 0], d[:, 1])
    order = np.argsort(dist)
    cw = np.concatenate([[0.0], np.cumsum(w[order])])
    return SummaryCurve(r, cw[np.searchsorted(dist[order], r, side="right")], meta)


def sector_k_values(d, w, r, phis, h_phi):
    """Sector-K on an ``(len(r), len(phis))`` grid from weighted differences.

    Each pair contributes the average of the box kernel at its angle and at
    the opposite angle, so the result is pi-periodic in ``phi``.
    """
    r = np.atleast_1d(np.asarray(r, dtype=float))
    phis = np.atleast_1d(np.asarray(phis, dtype=float))
    dist = np.hypot(d[:, 0], d[:, 1])
    psi = np.arctan2(d[:, 1], d[:, 0]) % TWO_PI
    out = np.empty((r.size, phis.size))
    order = np.argsort(dist)
    dist, psi, w = dist[order], psi[order], w[order]
    idx = np.searchsorted(dist, r, side="right")
    for k, phi in enumerate(phis):
        kern = 0.5 * (box(wrap_angle(psi - phi), h_phi) + box(wrap_angle(psi + math.pi - phi), h_phi))
        cw = np.concatenate([[0.0], np.cumsum(w * kern)])
        out[:, k] = cw[idx]
    return out


def estimate_sector_k(a, b, window, r, phis, h_phi=DEFAULT_H_PHI) -> SummaryCurve:
    """Sector-K function at fixed radius ``r`` over the angles ``phis``."""
    if not r > 0 or not h_phi > 0:
        raise ValueError("r and h_phi must be positive")
    phis = np.asarray(phis, dtype=float)
    meta = {"statistic": "sector_k", "kernel": "box", "r": float(r), "h_phi": float(h_phi)}
    if _empty(a, b, "sector-K"):
        return SummaryCurve(phis, np.full(phis.shape, np.nan), meta)
    d, w = _weighted_pairs(a, b, window, r)
    return SummaryCurve(phis, sector_k_values(d, w, r, phis, h_phi)[0], meta)


def k_from_pcf(m: MaternParams, r: float) -> float:
    """Isotropic K-function of an LGCP with Matérn covariance ``m``."""
    if not r > 0:
        raise ValueError("r must be positive")
    if m.sigma == 0:
        return math.pi * r * r
    # integrate s (g(s) - 1) so that the Poisson part is exact
    f = lambda s: s * math.expm1(float(matern_iso(s, m)))
    brk = [x for x in (0.1 * m.alpha, m.alpha, 5 * m.alpha) if x < r]
    val, _ = integrate.quad(f, 0.0, r, points=brk or None, limit=400, epsabs=1e-14, epsrel=1e-12)
    return math.pi * r * r + TWO_PI * val


def k_from_pcf_grad(m: MaternParams, r: float):
    """Gradient of :func:`k_from_pcf` with respect to ``(alpha, sigma)``."""
    from .special import matern_correlation, matern_correlation_derivative

    c = 2 * math.sqrt(m.nu) / m.alpha

    def dsig(s):
        rho = float(matern_correlation(c * s, m.nu))
        return s * math.exp(m.sigma * rho) * rho

    def dalpha(s):
        x = c * s
        drho = float(matern_correlation_derivative(x, m.nu))
        rho = float(matern_correlation(x, m.nu))
        return s * math.exp(m.sigma * rho) * m.sigma * drho * (-x / m.alpha)

    brk = [x for x in (0.1 * m.alpha, m.alpha, 5 * m.alpha) if x < r] or None
    ga, _ = integrate.quad(dalpha, 0.0, r, points=brk, limit=400, epsabs=1e-14, epsrel=1e-12)
    gs, _ = integrate.quad(dsig, 0.0, r, points=brk, limit=400, epsabs=1e-14, epsrel=1e-12)
    return TWO_PI * ga, TWO_PI * gs


def estimate_G(a, b, window, r) -> SummaryCurve:
    """Border-corrected nearest-neighbour distance distribution from a to b."""
    r = np.atleast_1d(np.asarray(r, dtype=float))
    meta = {"statistic": "G", "correction": "border"}
    pa, pb = _points(a), _points(b)
    if len(pa) == 0:
        return SummaryCurve(r, np.full(r.shape, np.nan), meta)
    same = hasattr(a, "points") and hasattr(b, "points") and _same(a, b)
    if len(pb) - (1 if same else 0) <= 0:
        nnd = np.full(len(pa), np.inf)
    elif same:
        nnd = cKDTree(pb).query(pa, k=2)[0][:, 1]
    else:
        nnd = cKDTree(pb).query(pa, k=1)[0]
    bd = window.boundary_distance(pa)
    num = np.array([np.sum((bd > t) & (nnd <= t)) for t in r], dtype=float)
    den = np.array([np.sum(bd > t) for t in r], dtype=float)
    with np.errstate(invalid="ignore", divide="ignore"):
        g = np.where(den > 0, num / np.where(den > 0, den, 1), np.nan)
    return SummaryCurve(r, g, meta)
