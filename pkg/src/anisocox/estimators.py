"""scikit-learn style wrappers around the fitting pipeline.

Point patterns are not rows of a design matrix, so ``fit`` takes a whole
pattern as ``X`` and there is no ``predict``. The fitted model can be
sampled from, and the anisotropy estimator acts as a transformer that maps
locations to the isotropised frame.
"""

from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_is_fitted

from ._validation import check_pattern, check_window
from .anisotropy import estimate_anisotropy
from .palmfit import FitConfig, fit_pipeline
from .simulate import SimConfig, simulate_lgcp


class AnisotropyEstimator(TransformerMixin, BaseEstimator):
    """Stage-one estimate of ``(theta, zeta)`` for the type pair ``(p, q)``.

    ``p`` and ``q`` index the pattern's types in order (zero-based).
    """

    def __init__(self, p=0, q=0, window=None, fry_r_max=0.25, n_zeta=199, zeta_max=2.0, b1=0.0, b2=0.25):
        self.p = p
        self.q = q
        self.window = window
        self.fry_r_max = fry_r_max
        self.n_zeta = n_zeta
        self.zeta_max = zeta_max
        self.b1 = b1
        self.b2 = b2

    def fit(self, X, y=None):
        data = check_pattern(X, self.window)
        est = estimate_anisotropy(
            data[self.p],
            data[self.q],
            data.window,
            fry_r_max=self.fry_r_max,
            n_zeta=self.n_zeta,
            zeta_max=self.zeta_max,
            b1=self.b1,
            b2=self.b2,
        )
        self.estimate_ = est
        self.deformation_, self.scale_ = est.deformation.normalized()
        self.theta_ = self.deformation_.theta
        self.zeta_ = self.deformation_.zeta
        return self

    def transform(self, X):
        """Isotropised coordinates of ``(n, 2)`` locations (or ``type, x, y`` rows)."""
        check_is_fitted(self, "deformation_")
        arr = np.asarray(X, dtype=float)
        if arr.ndim != 2 or arr.shape[1] not in (2, 3):
            raise ValueError(f"expected an (n, 2) or (n, 3) array, got shape {arr.shape}")
        xy = arr[:, -2:] @ self.deformation_.isotropising_map.T
        return np.column_stack([arr[:, 0], xy]) if arr.shape[1] == 3 else xy


class AnisotropicLGCP(BaseEstimator):
    """Two-stage fit of a multivariate anisotropic LGCP.

    Parameters mirror :class:`~anisocox.palmfit.FitConfig`; ``window`` is
    used when ``X`` is an array rather than a pattern object.
    """

    def __init__(
        self,
        R=None,
        nu_candidates=(0.05, 0.5, 5.0),
        fix_nu=None,
        isotropic=False,
        intensity="classical",
        n_zeta=199,
        zeta_max=2.0,
        b1=0.0,
        b2=0.25,
        n_restarts=5,
        window=None,
    ):
        self.R = R
        self.nu_candidates = nu_candidates
        self.fix_nu = fix_nu
        self.isotropic = isotropic
        self.intensity = intensity
        self.n_zeta = n_zeta
        self.zeta_max = zeta_max
        self.b1 = b1
        self.b2 = b2
        self.n_restarts = n_restarts
        self.window = window

    def _config(self):
        params = self.get_params()
        params.pop("window")
        return FitConfig(**params)

    def fit(self, X, y=None):
        data = check_pattern(X, self.window)
        self.fit_ = fit_pipeline(data, self._config())
        self.model_ = self.fit_.spec
        self.R_ = self.fit_.R
        self.n_types_ = data.P
        self.window_ = data.window
        return self

    def sample(self, n_samples=1, random_state=0, grid=256, oversize=4):
        """Simulate ``n_samples`` patterns from the fitted model."""
        check_is_fitted(self, "model_")
        cfg = SimConfig(grid, grid, oversize, int(random_state), window=check_window(self.window_))
        return [simulate_lgcp(self.model_, cfg, r)[0] for r in range(n_samples)]
