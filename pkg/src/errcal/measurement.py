"""Declarations of which measurement is error-prone and what corrects it.

A :class:`MeasurementSpec` names the analysis model (outcome, covariates) and
the substitute column measured with error, plus exactly one source of
correction information: a reference column (internal validation), replicate
measurements, an externally fitted model, or an assumed error variance.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import SpecError

ERROR_LOCATIONS = ("covariate", "outcome")
METHODS = ("standard", "valregcal", "efficient", "mle")


@dataclass(frozen=True)
class ExternalModel:
    """A measurement model fitted outside the analysis data.

    ``coef`` is in fitted-regression order (intercept first, then slopes), as
    reported by standard regression output:

    - covariate error, k analysis covariates: (intercept, substitute slope,
      covariate slopes...) of the regression of the true covariate on the
      substitute and covariates, length 2 + k;
    - outcome error: (intercept, slope) of the regression of the error-prone
      outcome on the true outcome, length 2;
    - differential outcome error: the 4 coefficients of the regression of the
      error-prone outcome on (1, group, true outcome, group * true outcome).

    ``vcov`` is the matching covariance matrix, or None for a plain
    sensitivity analysis (zero-variance intervals only).
    """

    coef: tuple
    vcov: object = None

    def __post_init__(self):
        coef = tuple(float(c) for c in self.coef)
        object.__setattr__(self, "coef", coef)
        if len(coef) < 2:
            raise SpecError("external model needs at least an intercept and a slope")
        if self.vcov is not None:
            vc = np.asarray(self.vcov, dtype=np.float64)
            if vc.shape != (len(coef), len(coef)):
                raise SpecError(
                    f"external vcov shape {vc.shape} does not match {len(coef)} coefficients"
                )
            if not np.allclose(vc, vc.T, atol=1e-8):
                raise SpecError("external vcov is not symmetric")
            vc = (vc + vc.T) / 2.0
            vc.setflags(write=False)
            object.__setattr__(self, "vcov", vc)


@dataclass(frozen=True)
class MeasurementSpec:
    """Where the measurement error lives and what information corrects it.

    Exactly one of ``reference``, ``replicates``, ``external``,
    ``random_variance`` must be set. For covariate error the analysis model is
    ``outcome ~ substitute + covariates``; for outcome error the substitute is
    itself the outcome and the model is ``substitute ~ covariates`` with the
    first covariate as the exposure. ``differential_by`` (outcome error only)
    names the single binary covariate across whose levels the error model
    differs.
    """

    error_in: str
    substitute: str
    outcome: str | None = None
    covariates: tuple = ()
    reference: str | None = None
    replicates: tuple | None = None
    differential_by: str | None = None
    external: ExternalModel | None = None
    random_variance: float | None = None

    def __post_init__(self):
        object.__setattr__(self, "covariates", tuple(self.covariates))
        if self.replicates is not None:
            object.__setattr__(self, "replicates", tuple(self.replicates))
        if self.error_in not in ERROR_LOCATIONS:
            raise SpecError(f"error_in must be one of {ERROR_LOCATIONS}, got {self.error_in!r}")
        sources = [
            self.reference is not None,
            self.replicates is not None,
            self.external is not None,
            self.random_variance is not None,
        ]
        if sum(sources) != 1:
            raise SpecError(
                "exactly one of reference, replicates, external, random_variance must be set"
            )
        if self.error_in == "covariate":
            if self.outcome is None:
                raise SpecError("covariate error needs an outcome column")
            if self.differential_by is not None:
                raise SpecError("differential error models apply to outcome error only")
        else:
            if self.outcome is not None:
                raise SpecError("for outcome error the substitute is the outcome; leave outcome unset")
            if self.random_variance is not None:
                raise SpecError("random_variance applies to covariate error only")
            if len(self.covariates) == 0:
                raise SpecError("outcome error needs at least the exposure among covariates")
        if self.random_variance is not None and not self.random_variance >= 0.0:
            raise SpecError("random_variance must be nonnegative")
        if self.replicates is not None:
            if len(self.replicates) == 0:
                raise SpecError("replicates must name at least one column")
            if len(set(self.replicates)) != len(self.replicates):
                raise SpecError("replicate column names must be unique")
            if self.substitute in self.replicates:
                raise SpecError("the substitute cannot be listed among its replicates")
        if self.differential_by is not None:
            if self.covariates != (self.differential_by,):
                raise SpecError(
                    "differential error models need exactly one covariate, the binary "
                    "group named by differential_by"
                )
        named = [self.substitute, *self.covariates]
        if self.outcome is not None:
            named.append(self.outcome)
        if self.reference is not None:
            named.append(self.reference)
        if self.replicates is not None:
            named.extend(self.replicates)
        if len(set(named)) != len(named):
            raise SpecError("analysis columns must be distinct")

    @property
    def k(self):
        """Number of analysis covariates beyond the exposure."""
        if self.error_in == "covariate":
            return len(self.covariates)
        return len(self.covariates) - 1

    @property
    def source(self):
        """Provenance of the correction information."""
        if self.reference is not None:
            return "internal"
        if self.replicates is not None:
            return "replicates" if self.error_in == "covariate" else "calibration"
        if self.external is not None:
            return "external"
        return "random-variance"

    @property
    def has_internal_rows(self):
        """True when part of the data itself carries the correction information."""
        return self.reference is not None or self.replicates is not None

    def analysis_columns(self):
        """(outcome column, exposure column, covariate columns) of the naive model."""
        if self.error_in == "covariate":
            return self.outcome, self.substitute, self.covariates
        return self.substitute, self.covariates[0], self.covariates[1:]


def validation_indicator(data, spec):
    """Boolean vector marking rows that carry the correction information.

    For reference designs this is where the reference is observed; for
    replicate-based designs, where every replicate column is observed.
    External and assumed-variance designs have no internal subset.
    """
    if spec.reference is not None:
        return data.observed(spec.reference)
    if spec.replicates is not None:
        return data.observed_all(spec.replicates)
    raise SpecError(f"{spec.source} designs have no internal validation subset")


def validate_method(spec, method, *, n_boot=0, fieller=False, zerovar=False,
                    internal_estimator="rc"):
    """Reject method/design combinations the estimators cannot support."""
    if method not in METHODS:
        raise SpecError(f"unknown method {method!r}; choose one of {METHODS}")
    if internal_estimator not in ("rc", "mle"):
        raise SpecError("internal_estimator must be 'rc' or 'mle'")
    if method == "valregcal":
        if spec.error_in != "covariate" or spec.reference is None:
            raise SpecError("valregcal needs internal validation of an error-prone covariate")
    if method == "mle":
        if spec.error_in != "covariate" or spec.replicates is None:
            raise SpecError("mle needs replicate measurements of an error-prone covariate")
    if method == "efficient":
        if not spec.has_internal_rows:
            raise SpecError("efficient pooling needs an internal validation or replicate subset")
        if spec.error_in == "covariate" and spec.replicates is not None and len(spec.replicates) < 2:
            raise SpecError(
                "efficient pooling with a replicate-based covariate design needs at least "
                "two random-error replicate columns for the internal estimate"
            )
    if n_boot > 0 and not spec.has_internal_rows:
        raise SpecError("the stratified bootstrap needs an internal subset; external and "
                        "assumed-variance designs have none")
    if fieller and method != "standard":
        raise SpecError("Fieller intervals are available for the standard method only")
    if fieller and spec.differential_by is not None:
        raise SpecError("Fieller intervals are not defined for differential corrections")
    if zerovar and method != "standard":
        raise SpecError("zero-variance intervals are available for the standard method only")
