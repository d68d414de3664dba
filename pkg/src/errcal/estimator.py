"""Estimator-style wrapper around the correction pipeline.

:class:`CorrectedLinearModel` follows the scikit-learn conventions: the
constructor stores parameters verbatim, ``fit`` runs the correction and sets
trailing-underscore attributes, ``get_params``/``set_params``/``clone`` work
via introspection. The analysis model is named by columns, so ``fit`` takes
the tabular data as its single argument (a :class:`~errcal.dataset.Dataset`,
a mapping of columns, or a dataframe-like object) and ``y`` is ignored.
"""

from __future__ import annotations

from collections.abc import Mapping

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_is_fitted

from .correct import correct, point_estimator
from .dataset import Dataset
from .errors import SpecError
from .measurement import ExternalModel, MeasurementSpec, validate_method
from .report import build_report, corrected_term_names, render_text
from .uncertainty import stratified_bootstrap, summarize_intervals


def _as_dataset(obj):
    if isinstance(obj, Dataset):
        return obj
    if isinstance(obj, Mapping):
        return Dataset.from_columns(obj)
    if hasattr(obj, "columns") and hasattr(obj, "__getitem__"):
        return Dataset.from_columns({str(c): np.asarray(obj[c], dtype=np.float64)
                                     for c in obj.columns})
    raise SpecError("data must be a Dataset, a mapping of columns, or a dataframe")


class CorrectedLinearModel(BaseEstimator):
    """Linear regression corrected for measurement error in one variable.

    Args:
        outcome: Outcome column (covariate error only; for outcome error the
            substitute is itself the outcome).
        substitute: Column measured with error.
        error_in: "covariate" or "outcome".
        covariates: Error-free covariate columns; for outcome error the first
            is the exposure.
        reference: Error-free column observed on a validated subset.
        replicates: Columns holding repeat measurements of the substitute.
        external_coef: Externally fitted measurement-model coefficients
            (regression order), or an :class:`ExternalModel`.
        external_vcov: Covariance matrix matching ``external_coef``.
        random_variance: Assumed variance of the substitute's random error.
        differential_by: Binary covariate across whose levels an outcome error
            model differs.
        method: "standard", "valregcal", "efficient", or "mle".
        internal_estimator: Internal estimate flavour for the efficient
            method with replicate designs ("rc" or "mle").
        n_boot: Bootstrap replicates (0 disables the bootstrap).
        seed: Bootstrap seed.
        alpha: Two-sided miscoverage level for every interval.
        fieller: Also compute Fieller intervals for ratio coefficients.
        zerovar: Also compute intervals treating the correction as known.
        workers: Threads for the bootstrap (results are worker-invariant).
    """

    def __init__(self, outcome=None, substitute=None, error_in="covariate",
                 covariates=(), reference=None, replicates=None,
                 external_coef=None, external_vcov=None, random_variance=None,
                 differential_by=None, method="standard", internal_estimator="rc",
                 n_boot=0, seed=0, alpha=0.05, fieller=False, zerovar=False,
                 workers=1):
        self.outcome = outcome
        self.substitute = substitute
        self.error_in = error_in
        self.covariates = covariates
        self.reference = reference
        self.replicates = replicates
        self.external_coef = external_coef
        self.external_vcov = external_vcov
        self.random_variance = random_variance
        self.differential_by = differential_by
        self.method = method
        self.internal_estimator = internal_estimator
        self.n_boot = n_boot
        self.seed = seed
        self.alpha = alpha
        self.fieller = fieller
        self.zerovar = zerovar
        self.workers = workers

    # ---- fitting ----

    def _spec(self):
        if self.substitute is None:
            raise SpecError("substitute must name the error-prone column")
        external = None
        if self.external_coef is not None:
            if isinstance(self.external_coef, ExternalModel):
                external = self.external_coef
            else:
                external = ExternalModel(tuple(self.external_coef), self.external_vcov)
        replicates = None if self.replicates is None else tuple(self.replicates)
        return MeasurementSpec(
            error_in=self.error_in,
            substitute=self.substitute,
            outcome=self.outcome,
            covariates=tuple(self.covariates),
            reference=self.reference,
            replicates=replicates,
            differential_by=self.differential_by,
            external=external,
            random_variance=self.random_variance,
        )

    def fit(self, X, y=None):
        """Run the correction on tabular data; ``y`` is ignored.

        Returns:
            self, with ``result_``, ``intervals_``, ``coef_``, ``intercept_``,
            ``terms_``, and ``spec_`` set.
        """
        data = _as_dataset(X)
        spec = self._spec()
        validate_method(spec, self.method, n_boot=self.n_boot, fieller=self.fieller,
                        zerovar=self.zerovar, internal_estimator=self.internal_estimator)
        result = correct(data, spec, method=self.method,
                         internal_estimator=self.internal_estimator)
        if self.n_boot > 0:
            boot = stratified_bootstrap(
                data, spec,
                point_estimator(data, spec, self.method, self.internal_estimator),
                n_boot=self.n_boot, seed=self.seed, alpha=self.alpha,
                workers=self.workers,
            )
            result = result.with_boot(boot)
        zerovar = self.zerovar or (result.vcov_delta is None
                                   and result.vcov_zerovar is not None)
        self.spec_ = spec
        self.result_ = result
        self.intervals_ = summarize_intervals(result, alpha=self.alpha,
                                              fieller=self.fieller, zerovar=zerovar)
        display = corrected_term_names(spec, result.terms)
        self.terms_ = display
        self.coef_ = np.concatenate([result.coef[:1], result.coef[2:]])
        self.intercept_ = float(result.coef[1])
        self.feature_names_ = (display[0], *display[2:])
        return self

    # ---- fitted accessors ----

    def predict(self, X):
        """Corrected-model predictions from error-free columns.

        The design columns are ``feature_names_`` (reference names where the
        correction renamed the substitute), so predictions are on the
        true-measurement scale.
        """
        check_is_fitted(self, "result_")
        data = _as_dataset(X)
        design = np.column_stack([data.values(name) for name in self.feature_names_])
        return self.intercept_ + design @ self.coef_

    def report(self, meta=None):
        """The full result dict (see :func:`errcal.report.build_report`)."""
        check_is_fitted(self, "result_")
        return build_report(self.result_, self.intervals_, self.spec_, meta)

    def summary(self):
        """Human-readable text report."""
        return render_text(self.report())
