"""Calibration and error-model matrices and their estimators.

Coefficient vectors follow the internal convention (exposure, intercept,
covariates). A calibration matrix L maps true-model coefficients to naive
ones by right multiplication (naive = beta @ L); an error-model matrix T does
the same for outcome error on the augmented vector (beta, 1). Corrections
therefore right-multiply by the closed-form inverse.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .dataset import complete_cases
from .errors import DesignError, InfeasibleVarianceError, SingularError, SpecError
from .linmodel import fit_ols
from .measurement import ExternalModel, validation_indicator


def _unit(n, i, j):
    out = np.zeros((n, n))
    out[i, j] = 1.0
    return out


@dataclass(frozen=True)
class CalibrationMatrix:
    """Linear map between true and naive coefficients under covariate error.

    ``params`` holds the free entries (slope of the substitute, intercept,
    covariate slopes) of the regression of the true covariate on the
    substitute and covariates; they fill the first row of the (2+k) square
    matrix, identity below. ``param_vcov`` is None when the parameters are
    assumed rather than estimated.
    """

    params: np.ndarray
    param_vcov: object
    source: str
    k: int
    n_used: int = 0

    @property
    def lambda1(self):
        """Slope on the substitute; the matrix is invertible iff nonzero."""
        return float(self.params[0])

    @property
    def matrix(self):
        size = 2 + self.k
        out = np.eye(size)
        out[0, :] = self.params
        return out

    def inverse(self):
        """Closed-form inverse; exact identity when the parameters are (1, 0, ...)."""
        lam1 = self.lambda1
        if lam1 == 0.0:
            raise SingularError("calibration matrix is singular: zero slope on the substitute")
        size = 2 + self.k
        out = np.eye(size)
        out[0, 0] = 1.0 / lam1
        out[0, 1:] = -self.params[1:] / lam1
        return out

    def basis(self):
        """d(matrix)/d(param) for each free parameter, in ``params`` order."""
        size = 2 + self.k
        return [_unit(size, 0, j) for j in range(size)]

    def predict(self, substitute, covariates=None):
        """Calibrated covariate values: intercept + slope * substitute + covariate part."""
        out = self.params[1] + self.params[0] * np.asarray(substitute, dtype=np.float64)
        if self.k:
            z = np.asarray(covariates, dtype=np.float64).reshape(-1, self.k)
            out = out + z @ self.params[2:]
        return out


@dataclass(frozen=True)
class ErrorModelMatrix:
    """Linear map between true and naive coefficients under outcome error.

    Non-differential: ``params`` = (scale, offset) of the outcome error model,
    matrix of size k+3 acting on (beta, 1). Differential: ``params`` are the
    4 coefficients of the regression of the error-prone outcome on
    (1, group, outcome, group * outcome), matrix of size 3.
    """

    params: np.ndarray
    param_vcov: object
    source: str
    k: int
    differential: bool = False
    n_used: int = 0

    @property
    def theta1(self):
        """Scale of the non-differential error model (Fieller denominator)."""
        if self.differential:
            raise SpecError("differential error models have no single scale parameter")
        return float(self.params[0])

    @property
    def thetas(self):
        """Differential error model as (offset0, offset1, scale0, scale1)."""
        if not self.differential:
            raise SpecError("not a differential error model")
        a, b, c, d = self.params
        return a, a + b, c, c + d

    @property
    def matrix(self):
        if not self.differential:
            theta1, theta0 = self.params
            size = self.k + 3
            out = np.eye(size)
            out[np.arange(size - 1), np.arange(size - 1)] = theta1
            out[size - 1, 1] = theta0
            return out
        t00, t01, t10, t11 = self.thetas
        return np.array([
            [t11, 0.0, 0.0],
            [t11 - t10, t10, 0.0],
            [t01 - t00, t00, 1.0],
        ])

    def inverse(self):
        """Closed-form inverse; exact identity for an identity error model."""
        if not self.differential:
            theta1, theta0 = self.params
            if theta1 == 0.0:
                raise SingularError("error model is singular: zero scale")
            size = self.k + 3
            out = np.eye(size)
            out[np.arange(size - 1), np.arange(size - 1)] = 1.0 / theta1
            out[size - 1, 1] = -theta0 / theta1
            return out
        t00, t01, t10, t11 = self.thetas
        if t10 == 0.0 or t11 == 0.0:
            raise SingularError("differential error model is singular: zero scale in a group")
        return np.array([
            [1.0 / t11, 0.0, 0.0],
            [-(t11 - t10) / (t11 * t10), 1.0 / t10, 0.0],
            [((t11 - t10) * t00 - (t01 - t00) * t10) / (t11 * t10), -t00 / t10, 1.0],
        ])

    def basis(self):
        """d(matrix)/d(param) for each free parameter, in ``params`` order."""
        if not self.differential:
            size = self.k + 3
            d_scale = np.eye(size)
            d_scale[size - 1, size - 1] = 0.0
            return [d_scale, _unit(size, size - 1, 1)]
        return [
            _unit(3, 2, 1),
            _unit(3, 2, 0),
            _unit(3, 0, 0) + _unit(3, 1, 1),
            _unit(3, 0, 0) + _unit(3, 1, 0),
        ]


def estimate_lambda_internal(data, spec):
    """Calibration matrix from internal validation.

    Regresses the reference covariate on (substitute, 1, covariates) over the
    rows where all of them are observed.
    """
    cols = (spec.reference, spec.substitute, *spec.covariates)
    rows = complete_cases(data, cols)
    design = np.column_stack([
        rows.values(spec.substitute),
        np.ones(rows.n_rows),
        *[rows.values(z) for z in spec.covariates],
    ])
    terms = (spec.substitute, "(intercept)", *spec.covariates)
    fit = fit_ols(rows.values(spec.reference), design, terms)
    return CalibrationMatrix(params=fit.coef, param_vcov=fit.vcov, source="internal",
                             k=spec.k, n_used=rows.n_rows)


def estimate_lambda_replicates(data, spec):
    """Calibration matrix from replicate measurements.

    Covers both replicate designs (the substitute is itself a random-error
    measure) and calibration designs (the substitute is systematically biased
    and the replicates carry random error): in both, the mean of the replicate
    columns is regressed on (substitute, 1, covariates) over the rows where
    the substitute and every replicate are observed.
    """
    cols = (spec.substitute, *spec.replicates, *spec.covariates)
    rows = complete_cases(data, cols)
    rep = np.column_stack([rows.values(r) for r in spec.replicates])
    design = np.column_stack([
        rows.values(spec.substitute),
        np.ones(rows.n_rows),
        *[rows.values(z) for z in spec.covariates],
    ])
    terms = (spec.substitute, "(intercept)", *spec.covariates)
    fit = fit_ols(rep.mean(axis=1), design, terms)
    return CalibrationMatrix(params=fit.coef, param_vcov=fit.vcov, source=spec.source,
                             k=spec.k, n_used=rows.n_rows)


def lambda_from_random_variance(data, spec):
    """Calibration matrix implied by an assumed random error variance.

    Method of moments: the slope vector solves the covariance system of
    (substitute, covariates) with the substitute's variance shrunk by the
    assumed error variance; the intercept assumes the error is mean zero, so
    the true covariate and the substitute share their mean. No parameter
    covariance is available (the variance is taken as known).
    """
    tau2 = float(spec.random_variance)
    cols = (spec.substitute, *spec.covariates)
    rows = complete_cases(data, cols)
    if rows.n_rows < spec.k + 3:
        raise DesignError("too few complete rows for the moment calibration")
    x_sub = rows.values(spec.substitute)
    var_sub = float(np.var(x_sub, ddof=1))
    if tau2 >= var_sub:
        raise InfeasibleVarianceError(
            f"assumed error variance {tau2} is not below the substitute variance {var_sub:.6g}"
        )
    if spec.k == 0:
        lam1 = (var_sub - tau2) / var_sub
        lam_z = np.empty(0)
        z_mean = np.empty(0)
    else:
        z = np.column_stack([rows.values(c) for c in spec.covariates])
        stacked = np.column_stack([x_sub, z])
        cov = np.cov(stacked, rowvar=False, ddof=1)
        target = cov[:, 0].copy()
        target[0] -= tau2
        try:
            slopes = np.linalg.solve(cov, target)
        except np.linalg.LinAlgError:
            raise SingularError("covariance matrix of substitute and covariates is singular") from None
        lam1 = float(slopes[0])
        lam_z = slopes[1:]
        z_mean = z.mean(axis=0)
    if lam1 <= 0.0:
        raise InfeasibleVarianceError(
            "assumed error variance implies a nonpositive calibration slope"
        )
    lam0 = (1.0 - lam1) * float(x_sub.mean()) - float(lam_z @ z_mean)
    params = np.array([lam1, lam0, *lam_z])
    return CalibrationMatrix(params=params, param_vcov=None, source="random-variance",
                             k=spec.k, n_used=rows.n_rows)


def calibration_from_regression_coef(coef, vcov, k, source="external"):
    """Calibration matrix from regression-ordered coefficients (intercept first)."""
    coef = np.asarray(coef, dtype=np.float64)
    if coef.shape != (2 + k,):
        raise SpecError(f"calibration model needs {2 + k} coefficients, got {coef.shape[0]}")
    perm = np.array([1, 0, *range(2, 2 + k)], dtype=int)
    params = coef[perm]
    param_vcov = None
    if vcov is not None:
        vcov = np.asarray(vcov, dtype=np.float64)
        param_vcov = vcov[np.ix_(perm, perm)]
    return CalibrationMatrix(params=params, param_vcov=param_vcov, source=source, k=k)


def error_model_from_regression_coef(coef, vcov, k, differential=False, source="external"):
    """Error-model matrix from regression-ordered coefficients (intercept first)."""
    coef = np.asarray(coef, dtype=np.float64)
    if differential:
        if coef.shape != (4,):
            raise SpecError(f"differential error model needs 4 coefficients, got {coef.shape[0]}")
        param_vcov = None if vcov is None else np.asarray(vcov, dtype=np.float64)
        return ErrorModelMatrix(params=coef, param_vcov=param_vcov, source=source,
                                k=k, differential=True)
    if coef.shape != (2,):
        raise SpecError(f"outcome error model needs 2 coefficients, got {coef.shape[0]}")
    perm = np.array([1, 0], dtype=int)
    params = coef[perm]
    param_vcov = None if vcov is None else np.asarray(vcov, dtype=np.float64)[np.ix_(perm, perm)]
    return ErrorModelMatrix(params=params, param_vcov=param_vcov, source=source, k=k)


def _outcome_proxy(data, spec):
    """Rows and true-outcome proxy for outcome error-model estimation."""
    if spec.reference is not None:
        cols = (spec.substitute, spec.reference)
        rows = complete_cases(data, cols)
        return rows, rows.values(spec.reference)
    if spec.replicates is not None:
        cols = (spec.substitute, *spec.replicates)
        rows = complete_cases(data, cols)
        rep = np.column_stack([rows.values(r) for r in spec.replicates])
        return rows, rep.mean(axis=1)
    raise SpecError("estimating an outcome error model needs a reference or replicates")


def estimate_theta(data, spec):
    """Non-differential outcome error model.

    Internal validation regresses the error-prone outcome on the reference;
    calibration designs regress the systematic measure on the mean of the
    random-error replicates.
    """
    rows, proxy = _outcome_proxy(data, spec)
    design = np.column_stack([proxy, np.ones(rows.n_rows)])
    fit = fit_ols(rows.values(spec.substitute), design, ("outcome", "(intercept)"))
    return ErrorModelMatrix(params=fit.coef, param_vcov=fit.vcov, source=spec.source,
                            k=spec.k, n_used=rows.n_rows)


def estimate_theta_differential(data, spec):
    """Differential outcome error model across the two levels of the group column.

    Fits the regression of the error-prone outcome on (1, group, outcome,
    group * outcome); the coefficients identify per-group offsets and scales.
    """
    group_col = spec.differential_by
    if spec.reference is not None:
        cols = (spec.substitute, spec.reference, group_col)
        rows = complete_cases(data, cols)
        proxy = rows.values(spec.reference)
    else:
        cols = (spec.substitute, *spec.replicates, group_col)
        rows = complete_cases(data, cols)
        rep = np.column_stack([rows.values(r) for r in spec.replicates])
        proxy = rep.mean(axis=1)
    group = rows.values(group_col)
    if not np.isin(group, (0.0, 1.0)).all():
        raise DesignError(f"column {group_col!r} must be binary 0/1 for a differential model")
    if group.min() == group.max():
        raise DesignError(f"both levels of {group_col!r} are needed in the estimation rows")
    design = np.column_stack([np.ones(rows.n_rows), group, proxy, group * proxy])
    terms = ("(intercept)", group_col, "outcome", f"{group_col}:outcome")
    fit = fit_ols(rows.values(spec.substitute), design, terms)
    return ErrorModelMatrix(params=fit.coef, param_vcov=fit.vcov, source=spec.source,
                            k=spec.k, differential=True, n_used=rows.n_rows)


def fit_external_calibration(data, substitute, reference, covariates=()):
    """Fit a calibration model on an external validation table.

    Returns an :class:`ExternalModel` whose coefficients are in regression
    order (intercept, substitute slope, covariate slopes), ready to attach to
    a :class:`~errcal.measurement.MeasurementSpec` for the main analysis.
    """
    covariates = tuple(covariates)
    rows = complete_cases(data, (reference, substitute, *covariates))
    design = np.column_stack([
        np.ones(rows.n_rows),
        rows.values(substitute),
        *[rows.values(z) for z in covariates],
    ])
    terms = ("(intercept)", substitute, *covariates)
    fit = fit_ols(rows.values(reference), design, terms)
    return ExternalModel(coef=tuple(fit.coef), vcov=fit.vcov)


def fit_external_error_model(data, substitute, reference):
    """Fit a non-differential outcome error model on an external table."""
    rows = complete_cases(data, (reference, substitute))
    design = np.column_stack([np.ones(rows.n_rows), rows.values(reference)])
    fit = fit_ols(rows.values(substitute), design, ("(intercept)", reference))
    return ExternalModel(coef=tuple(fit.coef), vcov=fit.vcov)


def n_validated(data, spec):
    """Number of rows carrying correction information, when internal."""
    if not spec.has_internal_rows:
        return 0
    return int(validation_indicator(data, spec).sum())
