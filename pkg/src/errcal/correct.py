"""Coefficient correction methods.

All corrections share the internal coefficient order (exposure, intercept,
covariates). ``correct`` is the dispatcher; the individual methods are exposed
for direct use: matrix correction of the naive fit (covariate or outcome
error), calibrated-regression refitting, inverse-variance pooling with an
internal estimate, and the closed-form likelihood corrector for replicate
designs.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from .dataset import complete_cases
from .errors import DesignError, SingularError, SpecError
from .errormodel import (
    CalibrationMatrix,
    calibration_from_regression_coef,
    error_model_from_regression_coef,
    estimate_lambda_internal,
    estimate_lambda_replicates,
    estimate_theta,
    estimate_theta_differential,
    lambda_from_random_variance,
)
from .linmodel import LinearFit, MlParameterVector, fit_ols, fit_random_intercepts
from .measurement import validate_method
from .uncertainty import (
    delta_vcov_mle,
    delta_vcov_mm,
    delta_vcov_rc,
    zerovar_vcov_mm,
    zerovar_vcov_rc,
)

INTERCEPT = "(intercept)"


@dataclass(frozen=True)
class CorrectedFit:
    """A corrected coefficient vector with its provenance.

    ``vcov_delta`` is the method's closed-form covariance (delta method for
    matrix corrections and the likelihood corrector, pooled covariance for the
    efficient method, second-stage OLS covariance for calibrated regression);
    ``vcov_zerovar`` treats correction parameters as known and exists for
    standard matrix corrections only.
    """

    method: str
    coef: np.ndarray
    terms: tuple
    uncorrected: LinearFit
    correction: object = None
    vcov_delta: object = None
    vcov_zerovar: object = None
    internal_fit: object = None
    ml_params: object = None
    boot: object = None
    warnings: tuple = ()

    @property
    def se_delta(self):
        if self.vcov_delta is None:
            return None
        return np.sqrt(np.diag(self.vcov_delta))

    def with_boot(self, boot):
        return replace(self, boot=boot)


def _design(rows, exposure, covariates):
    return np.column_stack([
        rows.values(exposure),
        np.ones(rows.n_rows),
        *[rows.values(z) for z in covariates],
    ])


def naive_fit(data, spec):
    """OLS of the analysis model with the substitute standing in, all usable rows."""
    outcome, exposure, covariates = spec.analysis_columns()
    rows = complete_cases(data, (outcome, exposure, *covariates))
    if spec.differential_by is not None:
        group = rows.values(spec.differential_by)
        if not np.isin(group, (0.0, 1.0)).all():
            raise DesignError(f"column {spec.differential_by!r} must be binary 0/1")
    terms = (exposure, INTERCEPT, *covariates)
    return fit_ols(rows.values(outcome), _design(rows, exposure, covariates), terms)


def _sensitivity_label(correction):
    assumed = correction.param_vcov is None
    return assumed and correction.source in ("external", "random-variance")


def standard_rc(fit, lam):
    """Right-multiply the naive coefficients by the inverse calibration matrix."""
    coef = fit.coef @ lam.inverse()
    warnings = ()
    vcov_delta = None
    if lam.param_vcov is not None:
        vcov_delta = delta_vcov_rc(fit.coef, fit.vcov, lam)
    else:
        warnings = ("calibration parameters treated as known; delta intervals unavailable",)
    method = "sensitivity" if _sensitivity_label(lam) else "standard-rc"
    return CorrectedFit(
        method=method,
        coef=coef,
        terms=fit.terms,
        uncorrected=fit,
        correction=lam,
        vcov_delta=vcov_delta,
        vcov_zerovar=zerovar_vcov_rc(fit.vcov, lam),
        warnings=warnings,
    )


def standard_mm(fit, theta):
    """Correct outcome error by inverting the error-model matrix on (beta, 1)."""
    expected = 3 if theta.differential else theta.k + 3
    if len(fit.coef) + 1 != expected:
        raise SpecError("error-model matrix size does not match the analysis model")
    aug = np.append(fit.coef, 1.0)
    coef = (aug @ theta.inverse())[: len(fit.coef)]
    warnings = ()
    vcov_delta = None
    if theta.param_vcov is not None:
        vcov_delta = delta_vcov_mm(fit.coef, fit.vcov, theta)
    else:
        warnings = ("error-model parameters treated as known; delta intervals unavailable",)
    method = "sensitivity" if _sensitivity_label(theta) else "standard-mm"
    return CorrectedFit(
        method=method,
        coef=coef,
        terms=fit.terms,
        uncorrected=fit,
        correction=theta,
        vcov_delta=vcov_delta,
        vcov_zerovar=zerovar_vcov_mm(fit.vcov, theta),
        warnings=warnings,
    )


def correction_matrix(data, spec):
    """Estimate or assemble the correction matrix a standard correction needs."""
    if spec.error_in == "covariate":
        if spec.reference is not None:
            return estimate_lambda_internal(data, spec)
        if spec.replicates is not None:
            return estimate_lambda_replicates(data, spec)
        if spec.external is not None:
            return calibration_from_regression_coef(
                spec.external.coef, spec.external.vcov, spec.k
            )
        return lambda_from_random_variance(data, spec)
    if spec.external is not None:
        return error_model_from_regression_coef(
            spec.external.coef, spec.external.vcov, spec.k,
            differential=spec.differential_by is not None,
        )
    if spec.differential_by is not None:
        return estimate_theta_differential(data, spec)
    return estimate_theta(data, spec)


def validation_rc(data, spec):
    """Refit the analysis model on a calibrated covariate.

    The calibration model is estimated on the validated rows; the analysis
    covariate is the reference where observed and the calibration prediction
    elsewhere. The reported covariance is the second-stage OLS covariance,
    which ignores calibration uncertainty (bootstrap for better).
    """
    if spec.error_in != "covariate" or spec.reference is None:
        raise SpecError("calibrated regression needs internal validation of a covariate")
    lam = estimate_lambda_internal(data, spec)
    naive = naive_fit(data, spec)
    usable = data.observed_all((spec.outcome, *spec.covariates))
    have_x = data.observed(spec.reference) | data.observed(spec.substitute)
    rows = data.take(usable & have_x)
    z = None
    if spec.k:
        z = np.column_stack([rows.values(c) for c in spec.covariates])
    with np.errstate(invalid="ignore"):
        predicted = lam.predict(rows.values(spec.substitute), z)
        x_cal = np.where(rows.observed(spec.reference), rows.values(spec.reference), predicted)
    if np.isnan(x_cal).any():
        raise DesignError("rows lacking both reference and substitute cannot be calibrated")
    design = np.column_stack([x_cal, np.ones(rows.n_rows),
                              *[rows.values(c) for c in spec.covariates]])
    terms = (spec.substitute, INTERCEPT, *spec.covariates)
    fit = fit_ols(rows.values(spec.outcome), design, terms)
    return CorrectedFit(
        method="valregcal",
        coef=fit.coef,
        terms=terms,
        uncorrected=naive,
        correction=lam,
        vcov_delta=fit.vcov,
    )


def internal_estimate(data, spec, calibration_via="rc"):
    """Analysis-model estimate from the validated rows alone.

    Reference designs regress the outcome on the reference covariate (or, for
    outcome error, the reference outcome or replicate mean on the exposure).
    Covariate replicate designs have no error-free column, so the validated
    subset is corrected in miniature: a calibration correction treating the
    first replicate as the substitute (``calibration_via='rc'``) or the
    likelihood corrector on the replicate columns (``'mle'``).
    """
    if spec.error_in == "covariate" and spec.replicates is not None:
        if len(spec.replicates) < 2:
            raise DesignError("an internal estimate from replicates needs at least two "
                              "random-error replicate columns")
        sub_spec = replace(spec, substitute=spec.replicates[0],
                           replicates=spec.replicates[1:])
        subset = data.take(data.observed_all(spec.replicates))
        if calibration_via == "mle":
            inner = mle_correct(subset, sub_spec)
        elif calibration_via == "rc":
            inner = standard_rc(naive_fit(subset, sub_spec),
                                estimate_lambda_replicates(subset, sub_spec))
        else:
            raise SpecError("calibration_via must be 'rc' or 'mle'")
        naive = inner.uncorrected
        return LinearFit(coef=inner.coef, vcov=inner.vcov_delta, sigma2=naive.sigma2,
                         dof=naive.dof, terms=inner.terms)
    if spec.reference is None and spec.replicates is None:
        raise SpecError("internal estimates need a reference or replicates")
    if spec.error_in == "covariate":
        rows = complete_cases(data, (spec.outcome, spec.reference, *spec.covariates))
        terms = (spec.reference, INTERCEPT, *spec.covariates)
        return fit_ols(rows.values(spec.outcome),
                       _design(rows, spec.reference, spec.covariates), terms)
    exposure, covariates = spec.covariates[0], spec.covariates[1:]
    if spec.reference is not None:
        rows = complete_cases(data, (spec.reference, exposure, *covariates))
        response = rows.values(spec.reference)
    else:
        rows = complete_cases(data, (*spec.replicates, exposure, *covariates))
        response = np.column_stack([rows.values(r) for r in spec.replicates]).mean(axis=1)
    terms = (exposure, INTERCEPT, *covariates)
    return fit_ols(response, _design(rows, exposure, covariates), terms)


def efficient_pool(est_a, vcov_a, est_b, vcov_b):
    """Inverse-variance-weighted pooling of two estimates of the same vector."""
    est_a = np.asarray(est_a, dtype=np.float64)
    est_b = np.asarray(est_b, dtype=np.float64)
    try:
        prec_a = np.linalg.inv(np.asarray(vcov_a, dtype=np.float64))
        prec_b = np.linalg.inv(np.asarray(vcov_b, dtype=np.float64))
        pooled_vcov = np.linalg.inv(prec_a + prec_b)
    except np.linalg.LinAlgError:
        raise SingularError("a covariance matrix in the pooling step is singular") from None
    pooled = pooled_vcov @ (prec_a @ est_a + prec_b @ est_b)
    pooled_vcov = (pooled_vcov + pooled_vcov.T) / 2.0
    return pooled, pooled_vcov


def ml_backtransform(zeta):
    """Corrected coefficients implied by the two-part likelihood parameters."""
    den = zeta.sigma2_x_given_yz + zeta.kappa_y ** 2 * zeta.sigma2_y_given_z
    if den <= 0.0:
        raise SingularError("degenerate likelihood: no residual variation in the covariate")
    beta_x = zeta.kappa_y * zeta.sigma2_y_given_z / den
    beta_0 = zeta.delta0 - beta_x * zeta.rho0
    beta_z = [dz - beta_x * rz for dz, rz in zip(zeta.delta_z, zeta.rho_z)]
    return np.array([beta_x, beta_0, *beta_z])


def mle_correct(data, spec):
    """Closed-form maximum likelihood for covariate error with replicates.

    Combines the OLS of the outcome on the covariates (all usable rows) with a
    balanced random-intercepts fit of the stacked replicate measurements on
    (1, outcome, covariates) over the rows where every replicate is observed,
    then back-transforms to the analysis-model coefficients. Replicates are
    assumed exchangeable with the substitute (pure random error).
    """
    if spec.error_in != "covariate" or spec.replicates is None:
        raise SpecError("the likelihood corrector needs covariate replicates")
    naive = naive_fit(data, spec)
    yz_rows = complete_cases(data, (spec.outcome, *spec.covariates))
    yz_design = np.column_stack([np.ones(yz_rows.n_rows),
                                 *[yz_rows.values(c) for c in spec.covariates]])
    yz_fit = fit_ols(yz_rows.values(spec.outcome), yz_design,
                     (INTERCEPT, *spec.covariates))
    measure_cols = (spec.substitute, *spec.replicates)
    sub_rows = complete_cases(data, (*measure_cols, spec.outcome, *spec.covariates))
    values = np.column_stack([sub_rows.values(c) for c in measure_cols])
    fixed_design = np.column_stack([np.ones(sub_rows.n_rows),
                                    sub_rows.values(spec.outcome),
                                    *[sub_rows.values(c) for c in spec.covariates]])
    mixed = fit_random_intercepts(values, fixed_design,
                                  (INTERCEPT, spec.outcome, *spec.covariates))
    zeta = MlParameterVector(
        delta0=float(yz_fit.coef[0]),
        delta_z=tuple(float(c) for c in yz_fit.coef[1:]),
        sigma2_y_given_z=float(yz_fit.sigma2),
        kappa0=float(mixed.fixed[0]),
        kappa_y=float(mixed.fixed[1]),
        kappa_z=tuple(float(c) for c in mixed.fixed[2:]),
        sigma2_x_given_yz=float(mixed.var_between),
        tau2=float(mixed.var_within),
    )
    coef = ml_backtransform(zeta)
    vcov = delta_vcov_mle(zeta, yz_fit, mixed)
    warnings = ()
    if mixed.boundary:
        warnings = ("between-subject variance estimated at its zero boundary; "
                    "likelihood delta variances are unreliable",)
    terms = (spec.substitute, INTERCEPT, *spec.covariates)
    return CorrectedFit(
        method="mle",
        coef=coef,
        terms=terms,
        uncorrected=naive,
        vcov_delta=vcov,
        ml_params=zeta,
        warnings=warnings,
    )


def correct(data, spec, method="standard", internal_estimator="rc"):
    """Run the requested correction and return a :class:`CorrectedFit`."""
    validate_method(spec, method, internal_estimator=internal_estimator)
    if method == "valregcal":
        return validation_rc(data, spec)
    if method == "mle":
        return mle_correct(data, spec)
    naive = naive_fit(data, spec)
    matrix = correction_matrix(data, spec)
    if spec.error_in == "covariate":
        corrected = standard_rc(naive, matrix)
    else:
        corrected = standard_mm(naive, matrix)
    if spec.error_in == "outcome" and spec.replicates is not None and len(spec.replicates) == 1:
        corrected = replace(corrected, warnings=corrected.warnings + (
            "single random-error replicate; error-model variance taken from that regression",))
    if method == "standard":
        return corrected
    inner = internal_estimate(data, spec, calibration_via=internal_estimator)
    pooled, pooled_vcov = efficient_pool(corrected.coef, corrected.vcov_delta,
                                         inner.coef, inner.vcov)
    return CorrectedFit(
        method="efficient",
        coef=pooled,
        terms=corrected.terms,
        uncorrected=naive,
        correction=matrix,
        vcov_delta=pooled_vcov,
        internal_fit=inner,
        warnings=corrected.warnings,
    )


def point_estimator(data, spec, method="standard", internal_estimator="rc"):
    """Closure rerunning the full correction on a row subset (for the bootstrap)."""
    def run(rows):
        return correct(data.take(rows), spec, method, internal_estimator).coef
    return run
