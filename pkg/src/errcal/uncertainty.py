"""Uncertainty for corrected coefficients.

Closed-form pieces: delta-method covariance propagation through the inverse
correction matrix (with the exact Jacobian exposed for testing), the
zero-variance special case (correction parameters treated as known), Fieller
intervals for coefficients that are scalar ratios, and the block delta method
for the replicate-likelihood corrector. Resampling: a stratified percentile
bootstrap that redraws the validated and non-validated rows separately.
"""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np
from scipy.stats import norm, t as t_dist

from .errors import DesignError, ErrcalError, SpecError
from .errormodel import CalibrationMatrix, ErrorModelMatrix
from .measurement import validation_indicator

MIN_BOOT_FOR_CI = 20


def z_quantile(alpha):
    """Two-sided normal quantile for a (1 - alpha) interval."""
    if not 0.0 < alpha < 1.0:
        raise SpecError(f"alpha must be inside (0, 1), got {alpha}")
    return float(norm.ppf(1.0 - alpha / 2.0))


def wald_intervals(coef, se, alpha):
    """Normal-quantile intervals, one (lower, upper) row per coefficient."""
    z = z_quantile(alpha)
    coef = np.asarray(coef, dtype=np.float64)
    se = np.asarray(se, dtype=np.float64)
    return np.column_stack([coef - z * se, coef + z * se])


def t_intervals(coef, se, dof, alpha):
    """Student-t intervals for plain OLS fits."""
    if not 0.0 < alpha < 1.0:
        raise SpecError(f"alpha must be inside (0, 1), got {alpha}")
    q = float(t_dist.ppf(1.0 - alpha / 2.0, dof))
    coef = np.asarray(coef, dtype=np.float64)
    se = np.asarray(se, dtype=np.float64)
    return np.column_stack([coef - q * se, coef + q * se])


# ---- delta method through the inverse correction matrix ----

def correction_jacobian(beta_aug, correction):
    """Exact Jacobian of corrected = beta_aug @ inverse(correction).

    Columns are ordered (entries of beta_aug, free parameters of the
    correction matrix). Uses d(M^{-1}) = -M^{-1} dM M^{-1}.
    """
    beta_aug = np.asarray(beta_aug, dtype=np.float64)
    inv = correction.inverse()
    j_beta = inv.T
    through = beta_aug @ inv
    j_param = np.column_stack([-(through @ dm @ inv) for dm in correction.basis()])
    return np.hstack([j_beta, j_param])


def _propagate(beta_aug, vcov_aug, correction, with_params):
    inv = correction.inverse()
    out = inv.T @ vcov_aug @ inv
    if with_params:
        if correction.param_vcov is None:
            raise SpecError(
                "delta intervals need a parameter covariance; this correction has none "
                "(assumed parameters); request zero-variance intervals instead"
            )
        through = np.asarray(beta_aug, dtype=np.float64) @ inv
        j_param = np.column_stack([-(through @ dm @ inv) for dm in correction.basis()])
        out = out + j_param @ correction.param_vcov @ j_param.T
    return (out + out.T) / 2.0


def delta_vcov_rc(beta_star, vcov_star, lam):
    """Delta-method covariance of calibration-corrected coefficients."""
    return _propagate(beta_star, vcov_star, lam, with_params=True)


def zerovar_vcov_rc(vcov_star, lam):
    """Covariance when the calibration parameters are treated as known."""
    return _propagate(None, vcov_star, lam, with_params=False)


def _augment(beta_star, vcov_star):
    beta_aug = np.append(np.asarray(beta_star, dtype=np.float64), 1.0)
    size = beta_aug.shape[0]
    vcov_aug = np.zeros((size, size))
    vcov_aug[:-1, :-1] = vcov_star
    return beta_aug, vcov_aug


def delta_vcov_mm(beta_star, vcov_star, theta):
    """Delta-method covariance of outcome-error-corrected coefficients.

    Works on the augmented vector (beta, 1) and trims the constant entry, so
    the result matches the corrected coefficient vector.
    """
    beta_aug, vcov_aug = _augment(beta_star, vcov_star)
    full = _propagate(beta_aug, vcov_aug, theta, with_params=True)
    return full[: len(beta_star), : len(beta_star)]


def zerovar_vcov_mm(vcov_star, theta):
    """Covariance when the outcome error model is treated as known."""
    size = np.asarray(vcov_star).shape[0]
    _, vcov_aug = _augment(np.zeros(size), vcov_star)
    full = _propagate(None, vcov_aug, theta, with_params=False)
    return full[:size, :size]


# ---- Fieller intervals for ratio coefficients ----

@dataclass(frozen=True)
class FiellerInterval:
    """Ratio confidence interval; endpoints are None when unbounded."""

    lower: object
    upper: object
    unbounded: bool


def fieller_interval(num, var_num, den, var_den, alpha, cov=0.0):
    """Fieller interval for num/den with independent-normal margins.

    The confidence set is unbounded exactly when the Wald interval for the
    denominator covers zero; a bounded set is returned as the two roots of the
    ratio quadratic.
    """
    z2 = z_quantile(alpha) ** 2
    f0 = z2 * var_num - num * num
    f1 = z2 * cov - num * den
    f2 = z2 * var_den - den * den
    if f2 >= 0.0:
        return FiellerInterval(None, None, True)
    disc = f1 * f1 - f0 * f2
    if disc < 0.0:
        return FiellerInterval(None, None, True)
    root = np.sqrt(disc)
    return FiellerInterval(float((f1 + root) / f2), float((f1 - root) / f2), False)


# ---- stratified percentile bootstrap ----

@dataclass(frozen=True)
class BootSummary:
    """Bootstrap replicate summary; ``samples`` holds the successful draws."""

    n_boot: int
    seed: int
    failures: int
    se: object
    ci: object
    insufficient: bool
    samples: object


def _resample(rng, idx):
    if idx.size == 0:
        return idx
    return idx[rng.integers(0, idx.size, idx.size)]


def stratified_bootstrap(data, spec, point_fn, n_boot, seed, alpha, workers=1):
    """Percentile bootstrap resampling validated and other rows separately.

    Each replicate redraws (with replacement) the validated stratum and the
    remaining rows independently, preserving both stratum sizes, then reruns
    the full correction via ``point_fn(row_indices)``. Replicates use
    counter-based substreams derived from (seed, replicate index), so results
    do not depend on the worker count. Failed replicates are counted and
    skipped. Confidence intervals need at least 20 replicates.
    """
    if n_boot <= 0:
        raise SpecError("n_boot must be positive")
    if seed is None or int(seed) < 0:
        raise SpecError("the bootstrap needs a nonnegative integer seed")
    seed = int(seed)
    indicator = validation_indicator(data, spec)
    val_idx = np.flatnonzero(indicator)
    other_idx = np.flatnonzero(~indicator)
    if val_idx.size == 0:
        raise DesignError("the validated stratum is empty; nothing to resample")
    probe = np.asarray(point_fn(np.arange(data.n_rows)))
    width = probe.shape[0]
    draws = np.full((n_boot, width), np.nan)
    ok = np.zeros(n_boot, dtype=bool)

    def one(b):
        rng = np.random.default_rng([seed, b])
        rows = np.concatenate([_resample(rng, val_idx), _resample(rng, other_idx)])
        try:
            draws[b] = point_fn(rows)
            ok[b] = True
        except (ErrcalError, np.linalg.LinAlgError):
            pass

    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            list(pool.map(one, range(n_boot)))
    else:
        for b in range(n_boot):
            one(b)

    samples = draws[ok]
    failures = int(n_boot - samples.shape[0])
    se = samples.std(axis=0, ddof=1) if samples.shape[0] >= 2 else None
    insufficient = n_boot < MIN_BOOT_FOR_CI
    ci = None
    if not insufficient and samples.shape[0] >= 2:
        lo, hi = np.percentile(samples, [100.0 * alpha / 2.0, 100.0 * (1.0 - alpha / 2.0)], axis=0)
        ci = np.column_stack([lo, hi])
    return BootSummary(n_boot=n_boot, seed=seed, failures=failures, se=se, ci=ci,
                       insufficient=insufficient, samples=samples)


# ---- block delta method for the replicate-likelihood corrector ----

def ml_jacobian(zeta):
    """Jacobian of the corrected coefficients in the likelihood back-transform.

    Rows are (exposure, intercept, covariates); columns follow
    ``MlParameterVector.as_array`` order.
    """
    k = len(zeta.delta_z)
    s_y = zeta.sigma2_y_given_z
    s_x = zeta.sigma2_x_given_yz
    k_y = zeta.kappa_y
    den = s_x + k_y ** 2 * s_y
    phi = k_y * s_y / den
    dphi_dky = s_y * (s_x - k_y ** 2 * s_y) / den ** 2
    dphi_dsy = k_y * s_x / den ** 2
    dphi_dsx = -k_y * s_y / den ** 2

    i_d0 = 0
    i_dz = list(range(1, 1 + k))
    i_sy = 1 + k
    i_k0 = 2 + k
    i_ky = 3 + k
    i_kz = list(range(4 + k, 4 + 2 * k))
    i_sx = 4 + 2 * k

    jac = np.zeros((2 + k, 5 + 2 * k))
    jac[0, i_ky] = dphi_dky
    jac[0, i_sy] = dphi_dsy
    jac[0, i_sx] = dphi_dsx

    rho0 = zeta.rho0
    jac[1, i_d0] = 1.0 - phi * k_y
    jac[1, i_k0] = -phi
    jac[1, i_ky] = -dphi_dky * rho0 - phi * zeta.delta0
    jac[1, i_sy] = -dphi_dsy * rho0
    jac[1, i_sx] = -dphi_dsx * rho0

    for j in range(k):
        rho_j = zeta.rho_z[j]
        row = 2 + j
        jac[row, i_dz[j]] = 1.0 - phi * k_y
        jac[row, i_kz[j]] = -phi
        jac[row, i_ky] = -dphi_dky * rho_j - phi * zeta.delta_z[j]
        jac[row, i_sy] = -dphi_dsy * rho_j
        jac[row, i_sx] = -dphi_dsx * rho_j
    return jac


def delta_vcov_mle(zeta, outcome_fit, mixed_fit):
    """Delta covariance for the likelihood corrector.

    The parameter covariance is block diagonal: the OLS block of the
    outcome-given-covariates fit, a chi-square variance for its residual
    variance, the fixed-effects block of the mixed fit, and the closed-form
    variance of the between-subject variance component.
    """
    k = len(zeta.delta_z)
    size = 5 + 2 * k
    vpar = np.zeros((size, size))
    vpar[: 1 + k, : 1 + k] = outcome_fit.vcov
    vpar[1 + k, 1 + k] = 2.0 * outcome_fit.sigma2 ** 2 / outcome_fit.dof
    vpar[2 + k: 4 + 2 * k, 2 + k: 4 + 2 * k] = mixed_fit.fixed_vcov
    vpar[4 + 2 * k, 4 + 2 * k] = mixed_fit.var_between_var
    jac = ml_jacobian(zeta)
    out = jac @ vpar @ jac.T
    return (out + out.T) / 2.0


# ---- per-coefficient interval assembly ----

@dataclass(frozen=True)
class CoefficientInterval:
    """All interval flavours computed for one coefficient (None where absent)."""

    term: str
    estimate: float
    se_delta: object = None
    ci_delta: object = None
    se_zerovar: object = None
    ci_zerovar: object = None
    fieller: object = None
    se_boot: object = None
    ci_boot: object = None


@dataclass(frozen=True)
class IntervalSet:
    """Interval rows for every corrected coefficient, internal order."""

    alpha: float
    rows: tuple


def _ratio_positions(corrected):
    """Indices of corrected coefficients that are scalar ratios of naive ones."""
    correction = corrected.correction
    if isinstance(correction, CalibrationMatrix):
        return [0]
    if isinstance(correction, ErrorModelMatrix) and not correction.differential:
        return [0] + list(range(2, len(corrected.coef)))
    return []


def summarize_intervals(corrected, alpha=0.05, fieller=False, zerovar=False):
    """Build an :class:`IntervalSet` from a corrected fit.

    Delta intervals come from ``vcov_delta`` when present; zero-variance and
    Fieller blocks are included on request (standard corrections only, which
    the method validator enforces upstream); bootstrap rows come from an
    attached replicate summary.
    """
    coef = np.asarray(corrected.coef, dtype=np.float64)
    p = coef.shape[0]
    se_delta = ci_delta = None
    if corrected.vcov_delta is not None:
        se_delta = np.sqrt(np.diag(corrected.vcov_delta))
        ci_delta = wald_intervals(coef, se_delta, alpha)
    se_zv = ci_zv = None
    if zerovar:
        if corrected.vcov_zerovar is None:
            raise SpecError(f"zero-variance intervals are not defined for {corrected.method}")
        se_zv = np.sqrt(np.diag(corrected.vcov_zerovar))
        ci_zv = wald_intervals(coef, se_zv, alpha)
    fieller_rows = {}
    if fieller:
        correction = corrected.correction
        if correction is None or isinstance(correction, ErrorModelMatrix) and correction.differential:
            raise SpecError(f"Fieller intervals are not defined for {corrected.method}")
        den = correction.lambda1 if isinstance(correction, CalibrationMatrix) else correction.theta1
        var_den = 0.0 if correction.param_vcov is None else float(correction.param_vcov[0, 0])
        naive = corrected.uncorrected
        for j in _ratio_positions(corrected):
            fieller_rows[j] = fieller_interval(
                float(naive.coef[j]), float(naive.vcov[j, j]), den, var_den, alpha
            )
    boot = corrected.boot
    rows = []
    for j in range(p):
        rows.append(CoefficientInterval(
            term=corrected.terms[j],
            estimate=float(coef[j]),
            se_delta=None if se_delta is None else float(se_delta[j]),
            ci_delta=None if ci_delta is None else (float(ci_delta[j, 0]), float(ci_delta[j, 1])),
            se_zerovar=None if se_zv is None else float(se_zv[j]),
            ci_zerovar=None if ci_zv is None else (float(ci_zv[j, 0]), float(ci_zv[j, 1])),
            fieller=fieller_rows.get(j),
            se_boot=None if boot is None or boot.se is None else float(boot.se[j]),
            ci_boot=None if boot is None or boot.ci is None
            else (float(boot.ci[j, 0]), float(boot.ci[j, 1])),
        ))
    return IntervalSet(alpha=alpha, rows=tuple(rows))
