"""Palm likelihood fitting of the multivariate anisotropic LGCP.

Stage one estimates ``(theta, zeta)`` for every pair of types.  Stage two
isotropises each pair and maximizes the marginal and bivariate Palm
log-likelihoods over the Matérn parameters, with the cross parameters
restricted to the set that keeps the model valid.
"""

from __future__ import annotations

import json
import logging
import math
import warnings
from dataclasses import asdict, dataclass, field

import numpy as np
from numpy.polynomial.legendre import leggauss
from scipy import optimize
from scipy.spatial import cKDTree

from .anisotropy import estimate_anisotropy
from .covariance import MaternParams, ModelSpec, practical_range
from .geometry import Deformation, MultiTypePattern, Window, isotropise
from .special import correlation_table, matern_correlation, matern_correlation_derivative
from .summaries import RadialGrid, SummaryCurve, estimate_pcf_iso
from .validity import check_conditions, sigma_upper_bound

log = logging.getLogger(__name__)

_GL_X, _GL_W = leggauss(16)


@dataclass
class FitConfig:
    R: float | None = None
    nu_candidates: tuple = (0.05, 0.5, 5.0)
    fix_nu: float | None = None
    isotropic: bool = False
    alpha_lb: float = 1e-4
    alpha_ub: float = 10.0
    sigma_lb: float = 1e-4
    sigma_ub: float = 50.0
    R_step: float = 0.01
    R_min: float = 0.02
    R_max: float | None = None
    degenerate_threshold: float = 0.95
    fry_r_max: float = 0.25
    b1: float = 0.0
    b2: float = 0.25
    n_zeta: int = 199
    zeta_max: float = 2.0
    n_restarts: int = 5
    intensity: str = "classical"

    def __post_init__(self):
        self.nu_candidates = tuple(float(v) for v in self.nu_candidates)
        if self.fix_nu is not None:
            self.nu_candidates = (float(self.fix_nu),)
        if not self.nu_candidates or min(self.nu_candidates) <= 0:
            raise ValueError("smoothness candidates must be positive")
        if self.intensity not in ("classical", "profile"):
            raise ValueError("intensity must be 'classical' or 'profile'")
        if not (0 < self.alpha_lb < self.alpha_ub and 0 < self.sigma_lb < self.sigma_ub):
            raise ValueError("parameter bounds must be positive and ordered")
        if self.R is not None and not self.R > 0:
            raise ValueError("R must be positive")
        if not 0 < self.degenerate_threshold <= 1:
            raise ValueError("degenerate_threshold must be in (0, 1]")

    def to_dict(self):
        d = asdict(self)
        d["nu_candidates"] = list(self.nu_candidates)
        return d

    @classmethod
    def from_dict(cls, d):
        known = set(cls.__dataclass_fields__)
        extra = set(d) - known
        if extra:
            raise ValueError(f"unknown fit configuration field(s): {sorted(extra)}")
        return cls(**d)

    @classmethod
    def from_json(cls, path):
        with open(path) as fh:
            try:
                d = json.load(fh)
            except json.JSONDecodeError as exc:
                raise ValueError(f"{path}: line {exc.lineno}: {exc.msg}") from None
        return cls.from_dict(d)


# --------------------------------------------------------------------------
# K-function and pair sets


def _corr(x, nu):
    return correlation_table(float(nu))(x)


def _k_nodes(m, R):
    # panels refine geometrically towards the origin, where small smoothness
    # makes the correlation non-differentiable
    scale = m.alpha / (2 * math.sqrt(m.nu))
    brk = [scale * f for f in (1e-6, 1e-4, 1e-3, 1e-2, 0.03, 0.1, 0.3, 1.0, 3.0, 10.0, 30.0)]
    edges = [0.0]
    for e in [b for b in brk if b < R] + [R]:
        n = max(1, int(math.ceil(8 * (e - edges[-1]) / R)))
        edges.extend(np.linspace(edges[-1], e, n + 1)[1:])
    edges = np.asarray(edges)
    lo, hi = edges[:-1], edges[1:]
    mid, half = (lo + hi) / 2, (hi - lo) / 2
    s = (mid[:, None] + half[:, None] * _GL_X[None, :]).ravel()
    w = (half[:, None] * _GL_W[None, :]).ravel()
    return s, w


def k_integral(m: MaternParams, R: float) -> float:
    """``K(R)`` by composite Gauss-Legendre; agrees with adaptive quadrature."""
    if m.sigma == 0:
        return math.pi * R * R
    s, w = _k_nodes(m, R)
    x = 2 * math.sqrt(m.nu) * s / m.alpha
    return math.pi * R * R + 2 * math.pi * float(w @ (s * np.expm1(m.sigma * _corr(x, m.nu))))


def k_integral_grad(m: MaternParams, R: float):
    """Derivatives of :func:`k_integral` with respect to ``(alpha, sigma)``."""
    s, w = _k_nodes(m, R)
    x = 2 * math.sqrt(m.nu) * s / m.alpha
    rho = matern_correlation(x, m.nu)
    e = np.exp(m.sigma * rho)
    drho = matern_correlation_derivative(x, m.nu)
    d_alpha = 2 * math.pi * float(w @ (s * e * m.sigma * drho * (-x / m.alpha)))
    d_sigma = 2 * math.pi * float(w @ (s * e * rho))
    return d_alpha, d_sigma


@dataclass(frozen=True, eq=False)
class PalmPairs:
    """Distances of the qualifying pairs and the interior counts."""

    dist: np.ndarray
    n_int: tuple
    R: float

    @property
    def n_pairs(self):
        return len(self.dist)


def _interior_pairs(src, dst, window, R, same):
    bd = window.boundary_distance(src) if len(src) else np.zeros(0)
    inner = np.flatnonzero(bd > R)
    if len(inner) == 0 or len(dst) == 0:
        return np.zeros(0), len(inner)
    sdm = cKDTree(src[inner]).sparse_distance_matrix(cKDTree(dst), R, output_type="coo_matrix")
    keep = sdm.data < R
    if same:
        keep &= inner[sdm.row] != sdm.col
    d = np.asarray(sdm.data[keep], dtype=float)
    # sparse_distance_matrix drops exact zeros; coincident points never qualify anyway
    return np.sort(d), len(inner)


def palm_pairs_uni(pattern, window, R) -> PalmPairs:
    d, n_int = _interior_pairs(pattern.points, pattern.points, window, R, True)
    return PalmPairs(d, (n_int,), R)


def palm_pairs_biv(a, b, window, R) -> PalmPairs:
    dab, na = _interior_pairs(a.points, b.points, window, R, False)
    dba, nb = _interior_pairs(b.points, a.points, window, R, False)
    return PalmPairs(np.sort(np.concatenate([dab, dba])), (na, nb), R)


def _sum_log_g(dist, m):
    if m.sigma == 0 or len(dist) == 0:
        return 0.0
    return m.sigma * float(_corr(2 * math.sqrt(m.nu) * dist / m.alpha, m.nu).sum())


def palm_loglik_uni(pattern, w_iso, lam, m: MaternParams, R, pairs: PalmPairs | None = None) -> float:
    """Marginal Palm log-likelihood with inner-region edge correction."""
    pairs = palm_pairs_uni(pattern, w_iso, R) if pairs is None else pairs
    if pairs.n_pairs == 0:
        log.debug("no qualifying pairs at R=%g", R)
        return -math.inf
    n_int = pairs.n_int[0]
    return pairs.n_pairs * math.log(lam) + _sum_log_g(pairs.dist, m) - lam * n_int * k_integral(m, R)


def palm_loglik_uni_grad(pattern, w_iso, lam, m, R, pairs=None):
    """Gradient with respect to ``(alpha, sigma)``."""
    pairs = palm_pairs_uni(pattern, w_iso, R) if pairs is None else pairs
    x = 2 * math.sqrt(m.nu) * pairs.dist / m.alpha
    rho = matern_correlation(x, m.nu)
    drho = matern_correlation_derivative(x, m.nu)
    ka, ks = k_integral_grad(m, R)
    n_int = pairs.n_int[0]
    g_alpha = m.sigma * float(np.sum(drho * (-x / m.alpha))) - lam * n_int * ka
    g_sigma = float(rho.sum()) - lam * n_int * ks
    return np.array([g_alpha, g_sigma])


def palm_profile_intensity(pairs: PalmPairs, m: MaternParams) -> float:
    """Closed-form maximizer over the intensity of the marginal likelihood."""
    return pairs.n_pairs / (pairs.n_int[0] * k_integral(m, pairs.R))


def palm_loglik_biv(a, b, w_iso, lam_a, lam_b, m: MaternParams, R, pairs: PalmPairs | None = None) -> float:
    """Bivariate Palm log-likelihood over the symmetric inner-region cross pairs."""
    pairs = palm_pairs_biv(a, b, w_iso, R) if pairs is None else pairs
    if pairs.n_pairs == 0:
        log.debug("no qualifying cross pairs at R=%g", R)
        return -math.inf
    na, nb = pairs.n_int
    return (
        pairs.n_pairs * math.log(lam_a + lam_b)
        + _sum_log_g(pairs.dist, m)
        - (nb * lam_a + na * lam_b) * k_integral(m, R)
    )


# --------------------------------------------------------------------------
# Minimum contrast


def min_contrast_init(curve: SummaryCurve, nu, alpha_grid, sigma_grid, top=1):
    """Grid point(s) minimizing the squared pcf contrast.

    Returns ``(alpha, sigma)``, or a list of the ``top`` best pairs.
    """
    r = curve.abscissa
    ok = np.isfinite(curve.values)
    r, g = r[ok], curve.values[ok]
    alpha_grid = np.asarray(alpha_grid, dtype=float)
    sigma_grid = np.asarray(sigma_grid, dtype=float)
    if len(r) == 0:
        best = [(float(alpha_grid[0]), float(sigma_grid[0]))]
        return best[0] if top == 1 else best
    rho = matern_correlation(2 * math.sqrt(nu) * r[None, :] / alpha_grid[:, None], nu)  # (A, r)
    model = np.exp(sigma_grid[None, :, None] * rho[:, None, :])  # (A, S, r)
    cost = ((model - g) ** 2).sum(axis=-1)
    flat = np.argsort(cost, axis=None, kind="stable")[:top]
    ia, is_ = np.unravel_index(flat, cost.shape)
    best = [(float(alpha_grid[i]), float(sigma_grid[j])) for i, j in zip(ia, is_)]
    return best[0] if top == 1 else best


def _pcf_curve(a, b, window, R):
    lam = math.sqrt(a.n * b.n) / window.area
    h = min(0.15 / math.sqrt(max(lam, 1e-12)), R / 8)
    r = np.linspace(max(1.5 * h, R / 25), R, 25)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        return estimate_pcf_iso(a, b, window, RadialGrid(r, h))


# --------------------------------------------------------------------------
# Optimization


def _nelder_mead(fun, starts, bounds):
    best = None
    for x0 in starts:
        x0 = np.clip(np.asarray(x0, dtype=float), [b[0] for b in bounds], [b[1] for b in bounds])
        res = optimize.minimize(
            fun,
            x0,
            method="Nelder-Mead",
            bounds=bounds,
            options={"xatol": 1e-5, "fatol": 1e-7, "maxiter": 600, "maxfev": 1200},
        )
        if best is None or res.fun < best.fun:
            best = res
    return best


@dataclass
class _MarginalFit:
    matern: MaternParams
    loglik: float
    lam: float
    per_nu: dict


def _fit_marginal(pattern, w_iso, cfg: FitConfig, R):
    pairs = palm_pairs_uni(pattern, w_iso, R)
    if pairs.n_pairs == 0:
        raise ValueError(f"type {pattern.type_id}: no interior pairs within R={R:g}")
    lam_classical = pattern.n / w_iso.area
    curve = _pcf_curve(pattern, pattern, w_iso, R)
    agrid = np.geomspace(max(cfg.alpha_lb, R / 100), min(cfg.alpha_ub, 5 * R), 24)
    sgrid = np.geomspace(max(cfg.sigma_lb, 0.05), min(cfg.sigma_ub, 20.0), 24)
    bounds = [(math.log(cfg.alpha_lb), math.log(cfg.alpha_ub)), (math.log(cfg.sigma_lb), math.log(cfg.sigma_ub))]
    per_nu, best = {}, None
    for nu in cfg.nu_candidates:

        def negll(x, nu=nu):
            m = MaternParams(math.exp(x[0]), nu, math.exp(x[1]))
            lam = palm_profile_intensity(pairs, m) if cfg.intensity == "profile" else lam_classical
            v = palm_loglik_uni(pattern, w_iso, lam, m, R, pairs)
            return -v if math.isfinite(v) else 1e300

        starts = [np.log(p) for p in min_contrast_init(curve, nu, agrid, sgrid, top=cfg.n_restarts)]
        res = _nelder_mead(negll, starts, bounds)
        m = MaternParams(math.exp(res.x[0]), nu, math.exp(res.x[1]))
        per_nu[nu] = (m, -res.fun)
        if best is None or -res.fun > best[1]:
            best = (m, -res.fun)
    m, ll = best
    lam = palm_profile_intensity(pairs, m) if cfg.intensity == "profile" else lam_classical
    return _MarginalFit(m, ll, lam, per_nu)


def cross_alpha_bound(nu, mp: MaternParams, mq: MaternParams):
    """Largest cross scale keeping ``4 nu / alpha^2`` above the marginal mean."""
    return math.sqrt(4 * nu / (0.5 * (mp.inverse_length2 + mq.inverse_length2)))


@dataclass
class _CrossFit:
    matern: MaternParams | None
    loglik: float
    alpha_bound: float
    sigma_bound: float
    per_nu: dict


def _fit_cross(a, b, w_iso, fp: _MarginalFit, fq: _MarginalFit, zetas, cfg: FitConfig, R):
    mp, mq = fp.matern, fq.matern
    nubar = 0.5 * (mp.nu + mq.nu)
    cands = [nu for nu in cfg.nu_candidates if nu >= nubar - 1e-12]
    pairs = palm_pairs_biv(a, b, w_iso, R)
    if not cands or pairs.n_pairs == 0:
        return _CrossFit(None, -math.inf, math.nan, math.nan, {})
    zpp, zqq, zpq = zetas
    if cfg.intensity == "profile":
        lam_a, lam_b = fp.lam * zpq / zpp, fq.lam * zpq / zqq  # rescale to this pair's space
    else:
        lam_a, lam_b = a.n / w_iso.area, b.n / w_iso.area
    curve = _pcf_curve(a, b, w_iso, R)
    per_nu, best = {}, None
    for nu in cands:
        dn = max(0.0, nu - nubar)
        a_ub = min(cross_alpha_bound(nu, mp, mq), cfg.alpha_ub)
        a_lb = min(cfg.alpha_lb, a_ub / 10)

        def s_ub(alpha, nu=nu, dn=dn):
            return sigma_upper_bound(mp, mq, MaternParams(alpha, nu, 0.0), zpp, zqq, zpq, dn)

        def negll(x, nu=nu):
            alpha = math.exp(x[0])
            m = MaternParams(alpha, nu, x[1] * s_ub(alpha))
            v = palm_loglik_biv(a, b, w_iso, lam_a, lam_b, m, R, pairs)
            return -v if math.isfinite(v) else 1e300

        agrid = np.geomspace(max(a_lb, min(R / 100, a_ub / 2)), a_ub, 20)
        sfrac = np.linspace(-0.95, 0.95, 39)
        # contrast over (alpha, s): scan the grid directly since sigma's bound depends on alpha
        r = curve.abscissa[np.isfinite(curve.values)]
        g = curve.values[np.isfinite(curve.values)]
        cost = []
        for al in agrid:
            rho = matern_correlation(2 * math.sqrt(nu) * r / al, nu)
            ub = s_ub(al)
            cost.append([((np.exp(sf * ub * rho) - g) ** 2).sum() for sf in sfrac])
        cost = np.array(cost)
        flat = np.argsort(cost, axis=None, kind="stable")[: cfg.n_restarts]
        starts = [(math.log(agrid[i]), sfrac[j]) for i, j in zip(*np.unravel_index(flat, cost.shape))]
        res = _nelder_mead(negll, starts, [(math.log(a_lb), math.log(a_ub)), (-1.0, 1.0)])
        alpha = math.exp(res.x[0])
        ub = s_ub(alpha)
        m = MaternParams(alpha, nu, res.x[1] * ub)
        per_nu[nu] = (m, -res.fun)
        if best is None or -res.fun > best.loglik:
            best = _CrossFit(m, -res.fun, a_ub, ub, per_nu)
    return best


@dataclass
class ModelFit:
    spec: ModelSpec
    R: float
    loglik: dict
    provenance: dict
    flags: dict
    anisotropy: dict
    validity: object
    trace: list = field(default_factory=list)

    def to_dict(self):
        return {
            "model": self.spec.to_dict(),
            "R": self.R,
            "loglik": {f"{p + 1},{q + 1}": v for (p, q), v in self.loglik.items()},
            "provenance": self.provenance,
            "flags": self.flags,
            "anisotropy": {f"{p + 1},{q + 1}": v for (p, q), v in self.anisotropy.items()},
            "validity": self.validity.to_dict() if self.validity is not None else None,
            "trace": self.trace,
        }

    def to_json(self, path=None):
        text = json.dumps(self.to_dict(), indent=2, sort_keys=True, allow_nan=True) + "\n"
        if path is not None:
            with open(path, "w") as fh:
                fh.write(text)
        return text


def stage_one(data: MultiTypePattern, cfg: FitConfig):
    """Anisotropy estimates for all pairs, normalized to ``zeta <= 1``."""
    P = data.P
    out, raw = {}, {}
    for p in range(P):
        for q in range(p, P):
            if cfg.isotropic:
                out[(p, q)] = Deformation(0.0, 1.0)
                raw[(p, q)] = {"theta_deg": 0.0, "zeta": 1.0, "normalized": False, "fixed": True}
                continue
            est = estimate_anisotropy(
                data[p],
                data[q],
                data.window,
                fry_r_max=cfg.fry_r_max,
                n_zeta=cfg.n_zeta,
                zeta_max=cfg.zeta_max,
                b1=cfg.b1,
                b2=cfg.b2,
            )
            d, scale = est.deformation.normalized()
            out[(p, q)] = d
            info = est.to_dict()
            info["normalized"] = scale != 1.0
            info["theta_deg"] = math.degrees(d.theta)
            info["zeta"] = d.zeta
            info["zeta_raw"] = est.zeta_hat
            raw[(p, q)] = info
    return out, raw


def _max_R(window, cfg):
    if cfg.R_max is not None:
        return cfg.R_max
    # isotropising maps never shrink distances, so this fits every pair's window
    return 0.25 * min(window.width, window.height)


def select_R(data, deforms, cfg):
    """Practical range of a pilot minimum-contrast fit (nu = 0.5)."""
    R_hi = _max_R(data.window, cfg)
    best = cfg.R_min
    for p in range(data.P):
        ip, w_iso = isotropise(data[p], data.window, deforms[(p, p)])
        curve = _pcf_curve(ip, ip, w_iso, R_hi)
        agrid = np.geomspace(max(cfg.alpha_lb, R_hi / 200), min(cfg.alpha_ub, R_hi), 30)
        sgrid = np.geomspace(max(cfg.sigma_lb, 0.05), min(cfg.sigma_ub, 20.0), 30)
        a0, s0 = min_contrast_init(curve, 0.5, agrid, sgrid)
        best = max(best, practical_range(MaternParams(a0, 0.5, s0)))
    return float(min(max(round(best, 2), cfg.R_min), R_hi))


def _stage_two(data, deforms, cfg, R):
    P = data.P
    marg, iso = {}, {}
    for p in range(P):
        ip, w_iso = isotropise(data[p], data.window, deforms[(p, p)])
        iso[p] = (ip, w_iso)
        marg[p] = _fit_marginal(ip, w_iso, cfg, R)
    cross = {}
    for p in range(P):
        for q in range(p + 1, P):
            d = deforms[(p, q)]
            ia, w_iso = isotropise(data[p], data.window, d)
            ib, _ = isotropise(data[q], data.window, d)
            zetas = (deforms[(p, p)].zeta, deforms[(q, q)].zeta, d.zeta)
            cross[(p, q)] = _fit_cross(ia, ib, w_iso, marg[p], marg[q], zetas, cfg, R)
    return marg, cross


def _degenerate(marg, cfg):
    """Marginal estimates pressed against the box bounds.

    Cross estimates at their validity bounds are flagged instead: those bounds
    come from the fitted marginals, not from loss of interior points.
    """
    thr = cfg.degenerate_threshold
    return [
        f"{p + 1},{p + 1}"
        for p, f in marg.items()
        if f.matern.alpha > thr * cfg.alpha_ub or f.matern.sigma > thr * cfg.sigma_ub
    ]


def fit_pipeline(data: MultiTypePattern, cfg: FitConfig | None = None) -> ModelFit:
    """Two-stage fit: anisotropy first, then constrained Palm likelihood."""
    cfg = FitConfig() if cfg is None else cfg
    for p, c in enumerate(data.components):
        if c.n < 2:
            raise ValueError(f"type {c.type_id} has {c.n} point(s); every component needs at least two")
    if not isinstance(data.window, Window):
        raise TypeError("fitting expects a rectangular window")
    deforms, aniso = stage_one(data, cfg)
    R = cfg.R if cfg.R is not None else select_R(data, deforms, cfg)
    trace = []
    while True:
        marg, cross = _stage_two(data, deforms, cfg, R)
        bad = _degenerate(marg, cfg)
        trace.append({"R": R, "degenerate": bad})
        if not bad or R - cfg.R_step < cfg.R_min - 1e-12:
            break
        R = round(R - cfg.R_step, 10)
        log.info("degenerate estimates %s; reducing R to %.2f", bad, R)
    P = data.P
    mt, df, ll, prov, flags = {}, {}, {}, {}, {"sigma_at_bound": {}, "alpha_at_bound": {}, "unfitted": [], "zeta_normalized": {}}
    mu = []
    for p in range(P):
        mt[(p, p)] = marg[p].matern
        ll[(p, p)] = marg[p].loglik
        lam = data[p].n / data.window.area
        mu.append(math.log(lam) - marg[p].matern.sigma / 2)
    for (p, q), f in cross.items():
        key = f"{p + 1},{q + 1}"
        if f.matern is None:
            flags["unfitted"].append(key)
            mt[(p, q)] = MaternParams(1.0, max(marg[p].matern.nu, marg[q].matern.nu), 0.0)
            ll[(p, q)] = -math.inf
            continue
        mt[(p, q)] = f.matern
        ll[(p, q)] = f.loglik
        thr = cfg.degenerate_threshold
        flags["sigma_at_bound"][key] = bool(abs(f.matern.sigma) >= thr * f.sigma_bound)
        flags["alpha_at_bound"][key] = bool(f.matern.alpha >= thr * f.alpha_bound)
    for key, d in deforms.items():
        df[key] = d
        flags["zeta_normalized"][f"{key[0] + 1},{key[1] + 1}"] = bool(aniso[key].get("normalized", False))
    for p in range(P):
        for q in range(p, P):
            k = f"{p + 1},{q + 1}"
            prov[k] = {"theta": 1, "zeta": 1, "alpha": 2, "nu": 2, "sigma": 2}
    spec = ModelSpec.from_pairs(mu, mt, df)
    return ModelFit(spec, R, ll, prov, flags, aniso, check_conditions(spec), trace)
