"""Sufficient validity conditions for the multivariate anisotropic Matérn model,
sequential construction of compliant cross-covariance parameters, and the
colocated cross-correlation bound."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import helmert
from scipy.special import betaln, gammaln

from .covariance import D, MaternParams, ModelSpec, spectral_matrix
from .geometry import Deformation

DEFAULT_TOL = 1e-10
N_DIRECTIONS = 64


@dataclass(frozen=True)
class ConditionResult:
    passed: bool
    min_eigenvalue: float
    detail: str = ""

    def to_dict(self):
        return {"pass": bool(self.passed), "min_eigenvalue": float(self.min_eigenvalue), "detail": self.detail}


@dataclass
class ValidityReport:
    cond1: ConditionResult
    cond2: ConditionResult
    cond3: ConditionResult
    cond4: ConditionResult
    delta_nu: float
    zeta_bound_ok: dict = field(default_factory=dict)
    rho_bound: dict = field(default_factory=dict)

    @property
    def all_pass(self):
        return all(c.passed for c in (self.cond1, self.cond2, self.cond3, self.cond4))

    def to_dict(self):
        return {
            "all_pass": self.all_pass,
            "cond1": self.cond1.to_dict(),
            "cond2": self.cond2.to_dict(),
            "cond3": self.cond3.to_dict(),
            "cond4": self.cond4.to_dict(),
            "delta_nu": self.delta_nu,
            "zeta_bound_ok": {f"{p + 1},{q + 1}": ok for (p, q), ok in self.zeta_bound_ok.items()},
            "rho_bound": {
                f"{p + 1},{q + 1}": {"bound": b, "rho": r} for (p, q), (b, r) in self.rho_bound.items()
            },
        }


def _contrast_min_eig(m):
    """Smallest eigenvalue of ``m`` restricted to zero-sum vectors."""
    P = m.shape[0]
    if P == 1:
        return math.inf
    h = helmert(P)  # (P-1) x P orthonormal contrasts
    return float(np.linalg.eigvalsh(h @ m @ h.T)[0])


def _min_eig(m):
    return float(np.linalg.eigvalsh(0.5 * (m + m.T))[0])


def _table(model, fn):
    P = model.P
    out = np.empty((P, P))
    for p in range(P):
        for q in range(P):
            out[p, q] = fn(p, q)
    return out


def nu_gaps(model):
    """Matrix of ``nu_pq - (nu_pp + nu_qq)/2``."""
    nu = _table(model, lambda p, q: model.matern[p][q].nu)
    d = np.diag(nu)
    return nu - 0.5 * (d[:, None] + d[None, :])


def delta_nu(model):
    """Canonical Condition 1 constant: the largest smoothness gap, or 0."""
    return max(0.0, float(nu_gaps(model).max()))


def _cond1(model, tol):
    gap = nu_gaps(model)
    dn = delta_nu(model)
    if gap.min() < -tol:
        return ConditionResult(False, float(gap.min()), "cross smoothness below the marginal mean")
    if dn <= tol:
        if np.abs(gap).max() > tol:
            return ConditionResult(False, float(gap.min()), "nonzero gaps with zero delta")
        return ConditionResult(True, 1.0 if model.P > 1 else 0.0, "delta_nu = 0")
    A = 1.0 - gap / dn
    if A.min() < -tol or A.max() > 1 + tol:
        return ConditionResult(False, float(A.min()), "A_nu entries outside [0, 1]")
    lam = _min_eig(A)
    return ConditionResult(lam >= -tol, lam, f"A_nu minimal eigenvalue, delta_nu = {dn:.6g}")


def _cond2(model, tol):
    k = _table(model, lambda p, q: model.matern[p][q].inverse_length2)
    lam = _contrast_min_eig(-k)
    return ConditionResult(lam >= -tol, lam, "contrast-space eigenvalue")


def condition3_matrix(model, dn=None):
    dn = delta_nu(model) if dn is None else dn

    def entry(p, q):
        m = model.matern[p][q]
        nubar = 0.5 * (model.matern[p][p].nu + model.matern[q][q].nu)
        logmag = (
            math.log(model.deform[p][q].zeta)
            + gammaln(m.nu + D / 2)
            - (D / 2) * math.log(math.pi)
            - gammaln(nubar + D / 2)
            - gammaln(m.nu)
            + (dn + nubar) * math.log(m.inverse_length2)
        )
        return m.sigma * math.exp(logmag)

    return _table(model, entry)


def _cond3(model, tol, dn):
    m = condition3_matrix(model, dn)
    scale = np.sqrt(np.outer(np.diag(m), np.diag(m)))
    # Normalize to a correlation-like matrix so the tolerance is relative.
    lam = _min_eig(m / scale)
    return ConditionResult(lam >= -tol, lam, "normalized minimal eigenvalue")


def _cond4(model, tol, n_dir=N_DIRECTIONS):
    if model.P == 1:
        return ConditionResult(True, math.inf, "scalar case")
    phis = np.arange(n_dir) * math.pi / n_dir
    worst = math.inf
    for phi in phis:
        w = np.array([math.cos(phi), math.sin(phi)])
        m = _table(model, lambda p, q: -float(w @ model.deform[p][q].matrix @ w))
        worst = min(worst, _contrast_min_eig(m))
    return ConditionResult(worst >= -tol, worst, f"worst over {n_dir} directions")


def check_conditions(model: ModelSpec, tol: float = DEFAULT_TOL) -> ValidityReport:
    """Evaluate the four sufficient conditions plus the derived checks."""
    if model.P < 1:
        raise ValueError("P must be at least 1")
    dn = delta_nu(model)
    zeta_ok, rho = {}, {}
    for p in range(model.P):
        for q in range(p + 1, model.P):
            zpq = model.deform[p][q].zeta
            zeta_ok[(p, q)] = bool(zpq ** 2 >= model.deform[p][p].zeta * model.deform[q][q].zeta * (1 - tol))
            b = colocated_correlation_bound(model, p, q)
            rho[(p, q)] = (b.bound, b.rho)
    return ValidityReport(
        _cond1(model, tol),
        _cond2(model, tol),
        _cond3(model, tol, dn),
        _cond4(model, tol),
        dn,
        zeta_ok,
        rho,
    )


def spectral_min_eigenvalue(model, omega_max=200.0, n=51):
    """Smallest eigenvalue of the normalized spectral matrix over a square
    frequency grid; a direct check of nonnegative definiteness."""
    g = np.linspace(-omega_max, omega_max, n)
    om = np.stack(np.meshgrid(g, g, indexing="ij"), axis=-1).reshape(-1, 2)
    f = spectral_matrix(om, model)
    d = np.sqrt(np.einsum("kii->ki", f))
    corr = f / (d[:, :, None] * d[:, None, :])
    return float(np.linalg.eigvalsh(corr).min())


@dataclass(frozen=True)
class ColocatedBound:
    tau1: float
    tau2: float
    tau3: float
    tau4: float
    bound: float
    rho: float


def colocated_correlation_bound(model, p, q, dn=None):
    """The four tau factors, ``sqrt(prod tau)`` and the realized correlation."""
    if p == q:
        raise ValueError("colocated bound needs p != q")
    dn = delta_nu(model) if dn is None else dn
    mp, mq, m = model.matern[p][p], model.matern[q][q], model.matern[p][q]
    nubar = 0.5 * (mp.nu + mq.nu)
    kp, kq, k = mp.inverse_length2, mq.inverse_length2, m.inverse_length2
    tau1 = math.exp(2 * (betaln(m.nu, D / 2) - betaln(nubar, D / 2)))
    tau2 = math.exp(dn * (math.log(kp) + math.log(kq) - 2 * math.log(k)))
    tau3 = math.exp(
        2 * gammaln(nubar)
        - (mp.nu + mq.nu) * math.log(k)
        - gammaln(mp.nu)
        + mp.nu * math.log(kp)
        - gammaln(mq.nu)
        + mq.nu * math.log(kq)
    )
    tau4 = model.deform[p][p].zeta * model.deform[q][q].zeta / model.deform[p][q].zeta ** 2
    bound = math.sqrt(tau1 * tau2 * tau3 * tau4)
    return ColocatedBound(tau1, tau2, tau3, tau4, bound, m.sigma / math.sqrt(mp.sigma * mq.sigma))


def sigma_upper_bound(marg_p, marg_q, cross, zeta_pp, zeta_qq, zeta_pq, dn):
    """Largest admissible ``|sigma_pq|`` for given marginals and cross kernel."""
    mt = {(0, 0): marg_p, (1, 1): marg_q, (0, 1): MaternParams(cross.alpha, cross.nu, 0.0)}
    df = {(0, 0): Deformation(0, zeta_pp), (1, 1): Deformation(0, zeta_qq), (0, 1): Deformation(0, zeta_pq)}
    b = colocated_correlation_bound(ModelSpec.from_pairs([0.0, 0.0], mt, df), 0, 1, dn)
    return b.bound * math.sqrt(marg_p.sigma * marg_q.sigma)


def _as_matrix(a, P, name, lo, hi):
    if np.isscalar(a):
        m = np.full((P, P), float(a))
        np.fill_diagonal(m, 1.0)
    else:
        m = np.asarray(a, dtype=float)
    if m.shape != (P, P):
        raise ValueError(f"{name} must be {P}x{P}")
    if not np.allclose(m, m.T) or not np.allclose(np.diag(m), 1.0):
        raise ValueError(f"{name} must be symmetric with unit diagonal")
    if m.min() < lo - 1e-12 or m.max() > hi + 1e-12:
        raise ValueError(f"{name} entries must lie in [{lo}, {hi}]")
    if _min_eig(m) < -1e-10:
        raise ValueError(f"{name} is not nonnegative definite")
    return m


@dataclass(frozen=True)
class CrossConstruction:
    """Constants of the sequential cross-parameter construction.

    Correlation matrices may be given as scalars, meaning equicorrelated.
    ``V`` defaults to the values implied by the marginal powers.
    """

    delta_nu: float = 0.0
    delta_alpha: float = 0.0
    delta_Sigma: tuple = (0.0, 0.0)
    A_nu: object = 1.0
    A_alpha: object = 1.0
    A_sigma: object = 1.0
    A_Sigma: tuple = (1.0, 1.0)
    V: tuple | None = None

    def __post_init__(self):
        vals = [self.delta_nu, self.delta_alpha, *self.delta_Sigma]
        if min(vals) < 0:
            raise ValueError("all delta constants must be nonnegative")


def marginal_V(m: MaternParams, d: Deformation, dn: float) -> float:
    """Constant V_p reproducing the marginal power under the sigma construction."""
    return math.sqrt(
        m.sigma * d.zeta * math.exp((dn + m.nu) * math.log(m.inverse_length2) - gammaln(m.nu)) / math.pi
    )


def construct_cross(marginals, c: CrossConstruction, mu=None) -> ModelSpec:
    """Fill in cross-covariance parameters from marginal ones.

    ``marginals`` is a sequence of ``(MaternParams, Deformation)``.
    """
    P = len(marginals)
    if P < 1:
        raise ValueError("need at least one marginal")
    mu = [0.0] * P if mu is None else list(mu)
    A_nu = _as_matrix(c.A_nu, P, "A_nu", 0, 1)
    A_alpha = _as_matrix(c.A_alpha, P, "A_alpha", 0, 1)
    A_sigma = _as_matrix(c.A_sigma, P, "A_sigma", -1, 1)
    A_S = [_as_matrix(a, P, f"A_Sigma[{i}]", 0, 1) for i, a in enumerate(c.A_Sigma)]
    mats = [d.matrix for _, d in marginals]
    V = [marginal_V(m, d, c.delta_nu) for m, d in marginals]
    if c.V is not None:
        if not np.allclose(c.V, V, rtol=1e-8):
            raise ValueError(f"V {c.V} inconsistent with marginal powers {V}")
    mt, df = {}, {}
    for p in range(P):
        mt[(p, p)], df[(p, p)] = marginals[p]
    for p in range(P):
        for q in range(p + 1, P):
            mp, mq = marginals[p][0], marginals[q][0]
            nubar = 0.5 * (mp.nu + mq.nu)
            nu = nubar + c.delta_nu * (1 - A_nu[p, q])
            k = 0.5 * (mp.inverse_length2 + mq.inverse_length2) + c.delta_alpha * (1 - A_alpha[p, q])
            alpha = math.sqrt(4 * nu / k)
            diag = [
                0.5 * (mats[p][i, i] + mats[q][i, i]) + c.delta_Sigma[i] * (1 - A_S[i][p, q])
                for i in range(2)
            ]
            d = _recover_deformation(diag, 0.5 * (mats[p][0, 1] + mats[q][0, 1]))
            sigma = (
                math.pi ** (D / 2)
                * V[p]
                * V[q]
                * A_sigma[p, q]
                / d.zeta
                * math.exp(
                    -(c.delta_nu + nubar) * math.log(k)
                    + gammaln(nubar + D / 2)
                    + gammaln(nu)
                    - gammaln(nu + D / 2)
                )
            )
            mt[(p, q)] = MaternParams(alpha, nu, sigma)
            df[(p, q)] = d
    return ModelSpec.from_pairs(mu, mt, df)


def _recover_deformation(diag, off_ref):
    d1, d2 = diag
    if d1 > 1 + 1e-12 or d2 > 1 + 1e-12:
        raise ValueError(f"deformation diagonals {diag} exceed 1; no (theta, zeta) realizes them")
    z2 = d1 + d2 - 1.0
    if z2 <= 0:
        raise ValueError(f"deformation diagonals {diag} have trace <= 1; zeta would vanish")
    d1, d2, z2 = min(d1, 1.0), min(d2, 1.0), min(z2, 1.0)
    s = math.sqrt(max((1 - d1) * (1 - d2), 0.0))
    if off_ref < 0:
        s = -s
    if 1 - z2 < 1e-15:
        return Deformation(0.0, 1.0)
    theta = 0.5 * math.atan2(2 * s, (1 - d2) - (1 - d1))
    return Deformation(theta, math.sqrt(z2))
