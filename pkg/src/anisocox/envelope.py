"""Global envelope tests with maximum absolute deviation measures."""

from __future__ import annotations

import csv
import logging
import math
import warnings
from dataclasses import dataclass

import numpy as np

from .simulate import SimConfig, replicate_rng, simulate_lgcp
from .summaries import DEFAULT_H_PHI, estimate_G, estimate_sector_k

log = logging.getLogger(__name__)

DEGENERATE_SD = 1e-12
QUANTILES = (0.025, 0.5, 0.975)


@dataclass
class EnvelopeResult:
    abscissa: np.ndarray
    lower: np.ndarray
    upper: np.ndarray
    observed: np.ndarray
    center: np.ndarray
    p_value: float
    reject: bool
    method: str
    M: int
    alpha: float
    d_alpha: float
    d_obs: float
    used: np.ndarray

    def exits(self):
        """Whether the observed curve leaves the envelope at a used abscissa."""
        u = self.used
        lo, hi, obs = self.lower[u], self.upper[u], self.observed[u]
        # the band is closed; a curve touching it up to rounding stays inside
        tol = 1e-12 * (np.abs(lo) + np.abs(hi) + np.abs(obs) + 1e-300)
        return bool(np.any((obs < lo - tol) | (obs > hi + tol)))

    def to_dict(self):
        return {
            "method": self.method,
            "M": self.M,
            "alpha": self.alpha,
            "p_value": self.p_value,
            "reject": self.reject,
            "d_alpha": self.d_alpha,
            "d_obs": self.d_obs,
            "n_abscissa": int(len(self.abscissa)),
            "n_excluded": int(np.sum(~self.used)),
        }

    def to_csv(self, path):
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["abscissa", "lower", "observed", "upper"])
            for row in zip(self.abscissa, self.lower, self.observed, self.upper):
                w.writerow([repr(float(v)) for v in row])


def _prepare(observed, sims, alpha):
    obs = np.asarray(observed, dtype=float).ravel()
    sims = np.asarray(sims, dtype=float)
    if sims.ndim != 2 or sims.shape[1] != obs.size:
        raise ValueError(f"sims must have shape (M, {obs.size}), got {sims.shape}")
    M = sims.shape[0]
    if not 0 < alpha < 1:
        raise ValueError("alpha must lie in (0, 1)")
    if M < 1 or M < 1 / alpha - 1 - 1e-9:
        raise ValueError(f"need at least {math.ceil(1 / alpha - 1)} simulations for alpha={alpha}, got {M}")
    return obs, sims, M


def _decide(dev_obs, dev_sims, alpha):
    M = len(dev_sims)
    allv = np.sort(np.concatenate([[dev_obs], dev_sims]))
    k = math.ceil((1 - alpha) * (M + 1) - 1e-9)
    d_alpha = float(allv[k - 1])
    p = (1 + int(np.sum(dev_sims >= dev_obs))) / (M + 1)
    return d_alpha, p


def _mask(spread, what):
    used = np.all(spread >= DEGENERATE_SD, axis=0)
    if not used.all():
        log.info("%s: %d abscissa value(s) with degenerate spread excluded", what, int(np.sum(~used)))
    if not used.any():
        raise ValueError("every abscissa has degenerate spread; the test is undefined")
    return used


def studentized_mad_envelope(observed, sims, alpha=0.1, abscissa=None) -> EnvelopeResult:
    """Envelope from the maximum absolute studentized deviation."""
    obs, sims, M = _prepare(observed, sims, alpha)
    mean = sims.mean(axis=0)
    sd = sims.std(axis=0, ddof=1) if M > 1 else np.zeros_like(mean)
    used = _mask(sd[None, :], "studentized MAD")
    s = np.where(used, sd, 1.0)
    dev = lambda t: np.max(np.abs(t - mean)[..., used] / s[used], axis=-1)
    d_obs, d_sims = float(dev(obs)), dev(sims)
    d_alpha, p = _decide(d_obs, d_sims, alpha)
    x = np.arange(obs.size, dtype=float) if abscissa is None else np.asarray(abscissa, dtype=float)
    return EnvelopeResult(
        x, mean - d_alpha * sd, mean + d_alpha * sd, obs, mean, p, p <= alpha,
        "studentized_mad", M, alpha, d_alpha, d_obs, used,
    )


def directional_quantile_envelope(observed, sims, alpha=0.1, abscissa=None, quantiles=QUANTILES) -> EnvelopeResult:
    """Envelope with separate scaling above and below the pointwise median."""
    obs, sims, M = _prepare(observed, sims, alpha)
    lo_q, med, hi_q = np.quantile(sims, quantiles, axis=0)
    up, down = hi_q - med, med - lo_q
    used = _mask(np.vstack([up, down]), "directional quantile MAD")
    su, sd = np.where(used, up, 1.0), np.where(used, down, 1.0)

    def dev(t):
        z = t - med
        scaled = np.where(z >= 0, z / su, -z / sd)
        return np.max(scaled[..., used], axis=-1)

    d_obs, d_sims = float(dev(obs)), dev(sims)
    d_alpha, p = _decide(d_obs, d_sims, alpha)
    x = np.arange(obs.size, dtype=float) if abscissa is None else np.asarray(abscissa, dtype=float)
    return EnvelopeResult(
        x, med - d_alpha * down, med + d_alpha * up, obs, med, p, p <= alpha,
        "directional_quantile_mad", M, alpha, d_alpha, d_obs, used,
    )


@dataclass(frozen=True)
class StatisticSpec:
    """Curve statistic for a pair of types (zero-based indices)."""

    kind: str = "sector_k"
    p: int = 0
    q: int = 0
    r: float = 0.05
    n_phi: int = 60
    h_phi: float = DEFAULT_H_PHI
    r_max: float = 0.1
    n_r: int = 50

    def __post_init__(self):
        if self.kind not in ("sector_k", "G"):
            raise ValueError(f"unknown statistic {self.kind!r}")

    @property
    def abscissa(self):
        if self.kind == "sector_k":
            return np.arange(self.n_phi + 1) * math.pi / self.n_phi
        return np.linspace(0.0, self.r_max, self.n_r)

    def evaluate(self, pattern):
        a, b = pattern[self.p], pattern[self.q]
        w = pattern.window
        with warnings.catch_warnings():
            warnings.simplefilter("ignore")
            if self.kind == "sector_k":
                return estimate_sector_k(a, b, w, self.r, self.abscissa, self.h_phi).values
            return estimate_G(a, b, w, self.abscissa).values

    @property
    def default_method(self):
        # G is monotone in r with a roughly symmetric spread; sector-K is skewed.
        return "directional_quantile_mad" if self.kind == "sector_k" else "studentized_mad"


def run_get(data, model, statistic: StatisticSpec, M=499, alpha=0.1, seed=0, sim_cfg: SimConfig | None = None, method=None):
    """Simulate ``M`` patterns from ``model`` and test ``data`` with a GET."""
    if M < 1:
        raise ValueError("M must be at least 1")
    if sim_cfg is None:
        sim_cfg = SimConfig(window=data.window, seed=seed)
    obs = statistic.evaluate(data)
    sims = np.empty((M, obs.size))
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        for k in range(M):
            try:
                pat, _ = simulate_lgcp(model, sim_cfg, rng=replicate_rng(seed, k))
                sims[k] = statistic.evaluate(pat)
            except Exception as exc:
                raise RuntimeError(f"simulation {k} of {M} failed: {exc}") from exc
    ok = np.all(np.isfinite(sims), axis=0) & np.isfinite(obs)
    if not ok.all():
        log.info("dropping %d abscissa value(s) with undefined statistic", int(np.sum(~ok)))
    method = method or statistic.default_method
    fn = directional_quantile_envelope if method == "directional_quantile_mad" else studentized_mad_envelope
    res = fn(obs[ok], sims[:, ok], alpha, statistic.abscissa[ok])
    return res
