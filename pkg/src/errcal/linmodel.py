"""Least-squares and balanced random-intercepts fitting.

Two fitters live here: :func:`fit_ols` (QR-based linear regression with a
covariance matrix) and :func:`fit_random_intercepts` (closed-form maximum
likelihood for a balanced one-way random-intercepts model, the workhorse of
the replicate-based likelihood corrector).
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.linalg import solve_triangular

from .errors import DesignError, InsufficientDataError, SingularError

# columns whose |R_jj| falls below RANK_TOL * max |R_jj| are flagged dependent
RANK_TOL = 1e-10


@dataclass(frozen=True)
class LinearFit:
    """OLS result: coefficients, their covariance, residual variance, dof."""

    coef: np.ndarray
    vcov: np.ndarray
    sigma2: float
    dof: int
    terms: tuple

    @property
    def se(self):
        return np.sqrt(np.diag(self.vcov))


@dataclass(frozen=True)
class MixedFit:
    """Balanced random-intercepts ML result.

    ``var_between`` is the random-intercept variance (clamped at zero with
    ``boundary`` set when the unconstrained estimate is negative) and
    ``var_within`` the replicate-level noise variance. ``var_between_var`` and
    ``var_within_var`` are the closed-form sampling variances of those two
    estimates, used by delta-method propagation.
    """

    fixed: np.ndarray
    fixed_vcov: np.ndarray
    var_between: float
    var_within: float
    loglik: float
    boundary: bool
    var_between_var: float
    var_within_var: float
    n_subjects: int
    n_replicates: int
    terms: tuple


@dataclass(frozen=True)
class MlParameterVector:
    """Fitted parameters of the two-part likelihood for replicate designs.

    The outcome-given-covariates part contributes (delta0, delta_z,
    sigma2_y_given_z); the replicate part contributes the regression of the
    true covariate on outcome and covariates (kappa0, kappa_y, kappa_z), its
    residual variance sigma2_x_given_yz, and the replicate noise tau2.
    """

    delta0: float
    delta_z: tuple
    sigma2_y_given_z: float
    kappa0: float
    kappa_y: float
    kappa_z: tuple
    sigma2_x_given_yz: float
    tau2: float

    @property
    def rho0(self):
        """Intercept of the implied regression of the covariate on covariates."""
        return self.kappa0 + self.kappa_y * self.delta0

    @property
    def rho_z(self):
        return tuple(kz + self.kappa_y * dz for kz, dz in zip(self.kappa_z, self.delta_z))

    def as_array(self):
        """Flat order: delta0, delta_z..., sigma2_y|z, kappa0, kappa_y, kappa_z..., sigma2_x|yz."""
        return np.array(
            [self.delta0, *self.delta_z, self.sigma2_y_given_z,
             self.kappa0, self.kappa_y, *self.kappa_z, self.sigma2_x_given_yz]
        )


def _qr_solve(design, y):
    """QR least squares with rank diagnostics; returns (coef, rss, xtx_inv, diag)."""
    q, r = np.linalg.qr(design)
    diag = np.abs(np.diag(r))
    top = diag.max(initial=0.0)
    bad = np.flatnonzero(diag <= RANK_TOL * top) if top > 0 else np.arange(design.shape[1])
    if bad.size:
        return None, None, None, bad
    coef = solve_triangular(r, q.T @ y, lower=False)
    resid = y - design @ coef
    rss = float(resid @ resid)
    r_inv = solve_triangular(r, np.eye(r.shape[0]), lower=False)
    xtx_inv = r_inv @ r_inv.T
    return coef, rss, xtx_inv, None


def fit_ols(y, design, terms=None):
    """Ordinary least squares of ``y`` on the columns of ``design``.

    Args:
        y: response vector, length n.
        design: n x p matrix including any intercept column.
        terms: optional names for the p columns, used in error messages
            and carried into the fit.

    Returns:
        LinearFit with ``sigma2 = RSS / (n - p)`` and
        ``vcov = sigma2 * (X'X)^{-1}``.

    Raises:
        InsufficientDataError: if n <= p.
        SingularError: if the design is rank deficient; names the
            dependent columns.
    """
    y = np.asarray(y, dtype=np.float64).ravel()
    design = np.asarray(design, dtype=np.float64)
    if design.ndim != 2 or design.shape[0] != y.shape[0]:
        raise DesignError("design matrix and response have incompatible shapes")
    n, p = design.shape
    if terms is None:
        terms = tuple(f"x{j}" for j in range(p))
    terms = tuple(terms)
    if len(terms) != p:
        raise DesignError("one term name per design column required")
    if n <= p:
        raise InsufficientDataError(f"{n} rows cannot identify {p} coefficients")
    coef, rss, xtx_inv, bad = _qr_solve(design, y)
    if bad is not None:
        names = [terms[j] for j in bad]
        raise SingularError(f"design is rank deficient in columns {names}", columns=names)
    dof = n - p
    sigma2 = rss / dof
    vcov = sigma2 * xtx_inv
    vcov = (vcov + vcov.T) / 2.0
    return LinearFit(coef=coef, vcov=vcov, sigma2=sigma2, dof=dof, terms=terms)


def random_intercepts_loglik(values, design, fixed, var_between, var_within):
    """Gaussian log likelihood of a balanced random-intercepts model.

    ``values`` is n x m (m replicates per subject), ``design`` n x q, and the
    model is values[i, j] = design[i] @ fixed + b_i + u_ij with
    b_i ~ N(0, var_between), u_ij ~ N(0, var_within).
    """
    values = np.asarray(values, dtype=np.float64)
    design = np.asarray(design, dtype=np.float64)
    n, m = values.shape
    if var_within <= 0 or var_between < 0:
        raise DesignError("variance components must be positive (within) and nonnegative (between)")
    resid = values - (design @ np.asarray(fixed))[:, None]
    row_mean = resid.mean(axis=1)
    ssw = float(((resid - row_mean[:, None]) ** 2).sum())
    marginal = var_within + m * var_between
    quad = ssw / var_within + float(row_mean @ row_mean) / (var_between + var_within / m)
    logdet = n * ((m - 1) * math.log(var_within) + math.log(marginal))
    return -0.5 * (n * m * math.log(2.0 * math.pi) + logdet + quad)


def fit_random_intercepts(values, design, terms=None):
    """Closed-form ML for a balanced one-way random-intercepts model.

    Args:
        values: n x m matrix of replicate measurements, all observed, m >= 2.
        design: n x q fixed-effects design (include the intercept column).
        terms: optional names for the q fixed effects.

    Returns:
        MixedFit. The within variance is the within-subject mean square; the
        between variance is the ML between-row residual variance minus
        within/m, clamped at zero with ``boundary`` set when negative.

    Raises:
        DesignError: fewer than two replicate columns, or replicates
            identical within every row (zero within variance).
        SingularError: rank-deficient fixed-effects design.
    """
    values = np.asarray(values, dtype=np.float64)
    design = np.asarray(design, dtype=np.float64)
    if values.ndim != 2 or values.shape[1] < 2:
        raise DesignError("at least two replicate columns are required")
    if np.isnan(values).any():
        raise DesignError("replicate matrix must be fully observed")
    n, m = values.shape
    q = design.shape[1]
    if terms is None:
        terms = tuple(f"x{j}" for j in range(q))
    terms = tuple(terms)
    if n <= q:
        raise InsufficientDataError(f"{n} subjects cannot identify {q} fixed effects")
    row_mean = values.mean(axis=1)
    ssw = float(((values - row_mean[:, None]) ** 2).sum())
    if ssw <= 0.0:
        raise DesignError("replicates are identical within every row; no within variance")
    tau2 = ssw / (n * (m - 1))
    coef, rss, xtx_inv, bad = _qr_solve(design, row_mean)
    if bad is not None:
        names = [terms[j] for j in bad]
        raise SingularError(f"fixed-effects design is rank deficient in columns {names}",
                            columns=names)
    v_ml = rss / n
    between_raw = v_ml - tau2 / m
    boundary = between_raw < 0.0
    var_between = max(between_raw, 0.0)
    v_eff = var_between + tau2 / m
    fixed_vcov = v_eff * xtx_inv
    fixed_vcov = (fixed_vcov + fixed_vcov.T) / 2.0
    var_within_var = 2.0 * tau2 ** 2 / (n * (m - 1))
    var_between_var = 2.0 * v_eff ** 2 * (n - q) / n ** 2 + var_within_var / m ** 2
    loglik = random_intercepts_loglik(values, design, coef, var_between, tau2)
    return MixedFit(
        fixed=coef,
        fixed_vcov=fixed_vcov,
        var_between=var_between,
        var_within=tau2,
        loglik=loglik,
        boundary=boundary,
        var_between_var=var_between_var,
        var_within_var=var_within_var,
        n_subjects=n,
        n_replicates=m,
        terms=terms,
    )
