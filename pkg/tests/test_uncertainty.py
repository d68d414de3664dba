"""Interval machinery: delta, zero-variance, Fieller, bootstrap, assembly."""

import numpy as np
import pytest

from errcal.correct import correct, point_estimator, standard_mm, standard_rc
from errcal.dataset import Dataset
from errcal.errormodel import CalibrationMatrix, ErrorModelMatrix
from errcal.errors import DesignError, SpecError
from errcal.linmodel import LinearFit, MixedFit, MlParameterVector
from errcal.measurement import MeasurementSpec
from errcal.uncertainty import (
    correction_jacobian,
    delta_vcov_mle,
    delta_vcov_mm,
    delta_vcov_rc,
    fieller_interval,
    ml_jacobian,
    stratified_bootstrap,
    summarize_intervals,
    t_intervals,
    wald_intervals,
    z_quantile,
    zerovar_vcov_mm,
    zerovar_vcov_rc,
)

from test_correct import covariate_data, replicate_data, toy_fit


# ---- plain intervals ----

def test_z_quantile_value_and_validation():
    assert z_quantile(0.05) == pytest.approx(1.959963985, abs=1e-8)
    assert z_quantile(0.01) > z_quantile(0.05) > z_quantile(0.10)
    for bad in (0.0, 1.0, -0.1, 1.5):
        with pytest.raises(SpecError):
            z_quantile(bad)


def test_wald_and_t_intervals():
    ci = wald_intervals([1.0, -2.0], [0.5, 0.0], 0.05)
    assert ci.shape == (2, 2)
    assert ci[0, 0] == pytest.approx(1.0 - 1.959963985 * 0.5, abs=1e-8)
    np.testing.assert_allclose(ci[1], [-2.0, -2.0], atol=1e-15)
    tci = t_intervals([1.0], [0.5], dof=5, alpha=0.05)
    assert tci[0, 0] < ci[0, 0] and tci[0, 1] > ci[0, 1]
    with pytest.raises(SpecError):
        t_intervals([1.0], [0.5], dof=5, alpha=0.0)


# ---- delta and zero-variance propagation ----

def test_delta_equals_zerovar_when_parameters_are_exact():
    fit = toy_fit([0.4, 0.1, -0.6], vcov=np.diag([0.04, 0.01, 0.02]))
    lam = CalibrationMatrix(params=np.array([0.8, 0.1, -0.3]),
                            param_vcov=np.zeros((3, 3)), source="internal", k=1)
    np.testing.assert_array_equal(delta_vcov_rc(fit.coef, fit.vcov, lam),
                                  zerovar_vcov_rc(fit.vcov, lam))
    theta = ErrorModelMatrix(params=np.array([2.0, 1.0]),
                             param_vcov=np.zeros((2, 2)), source="internal", k=1)
    np.testing.assert_array_equal(delta_vcov_mm(fit.coef, fit.vcov, theta),
                                  zerovar_vcov_mm(fit.vcov, theta))


def test_delta_rc_scalar_oracle():
    b1, b0 = 0.4, 0.1
    v1, v0 = 0.04, 0.01
    lam1, vlam = 0.8, 0.003
    lam = CalibrationMatrix(params=np.array([lam1, 0.0]),
                            param_vcov=np.diag([vlam, 0.0]), source="internal", k=0)
    vcov = delta_vcov_rc(np.array([b1, b0]), np.diag([v1, v0]), lam)
    expected = v1 / lam1 ** 2 + b1 ** 2 * vlam / lam1 ** 4
    assert vcov[0, 0] == pytest.approx(expected, rel=1e-10)
    assert vcov[1, 1] == pytest.approx(v0, rel=1e-10)


def test_delta_mm_scalar_oracle():
    b1, b0 = 0.5, 1.0
    v1, v0 = 0.09, 0.04
    th1, th0 = 2.0, 1.0
    vth1, vth0 = 0.01, 0.02
    theta = ErrorModelMatrix(params=np.array([th1, th0]),
                             param_vcov=np.diag([vth1, vth0]), source="internal", k=0)
    vcov = delta_vcov_mm(np.array([b1, b0]), np.diag([v1, v0]), theta)
    assert vcov[0, 0] == pytest.approx(
        v1 / th1 ** 2 + b1 ** 2 * vth1 / th1 ** 4, rel=1e-10)
    d_th1 = -(b0 - th0) / th1 ** 2
    d_th0 = -1.0 / th1
    assert vcov[1, 1] == pytest.approx(
        v0 / th1 ** 2 + d_th1 ** 2 * vth1 + d_th0 ** 2 * vth0, rel=1e-10)


def test_mm_identity_model_returns_input_covariance():
    vcov_star = np.array([[0.09, 0.01], [0.01, 0.04]])
    theta = ErrorModelMatrix(params=np.array([1.0, 0.0]),
                             param_vcov=np.zeros((2, 2)), source="internal", k=0)
    np.testing.assert_allclose(zerovar_vcov_mm(vcov_star, theta), vcov_star,
                               atol=1e-15)
    np.testing.assert_allclose(
        delta_vcov_mm(np.array([0.5, 1.0]), vcov_star, theta), vcov_star, atol=1e-15)


def test_delta_needs_parameter_covariance():
    fit = toy_fit([0.4, 0.1])
    lam = CalibrationMatrix(params=np.array([0.8, 0.0]), param_vcov=None,
                            source="external", k=0)
    with pytest.raises(SpecError):
        delta_vcov_rc(fit.coef, fit.vcov, lam)
    # the zero-variance flavour still works
    out = zerovar_vcov_rc(fit.vcov, lam)
    assert out.shape == (2, 2)


def _fd_jacobian(beta_aug, correction, build):
    size = beta_aug.shape[0]
    v0 = np.concatenate([beta_aug, correction.params])

    def val(v):
        return v[:size] @ build(v[size:]).inverse()

    cols = []
    for i in range(v0.shape[0]):
        h = 1e-6
        up, dn = v0.copy(), v0.copy()
        up[i] += h
        dn[i] -= h
        cols.append((val(up) - val(dn)) / (2 * h))
    return np.column_stack(cols)


def test_correction_jacobian_matches_finite_differences():
    beta = np.array([0.4, 0.1, -0.6])
    lam = CalibrationMatrix(params=np.array([0.8, 0.1, -0.3]), param_vcov=None,
                            source="external", k=1)
    jac = correction_jacobian(beta, lam)
    fd = _fd_jacobian(beta, lam, lambda p: CalibrationMatrix(
        params=p, param_vcov=None, source="external", k=1))
    np.testing.assert_allclose(jac, fd, rtol=1e-5, atol=1e-7)

    beta_aug = np.array([0.5, 1.0, 1.0])
    th = ErrorModelMatrix(params=np.array([0.2, 0.3, 1.5, 0.6]), param_vcov=None,
                          source="internal", k=0, differential=True)
    jac = correction_jacobian(beta_aug, th)
    fd = _fd_jacobian(beta_aug, th, lambda p: ErrorModelMatrix(
        params=p, param_vcov=None, source="internal", k=0, differential=True))
    np.testing.assert_allclose(jac, fd, rtol=1e-5, atol=1e-7)


def test_zerovar_never_exceeds_delta():
    rng = np.random.default_rng(0)
    data, spec = covariate_data(rng, n=600, n_sub=200)
    out = correct(data, spec)
    diff = out.vcov_delta - out.vcov_zerovar
    assert np.min(np.linalg.eigvalsh((diff + diff.T) / 2)) > -1e-10


# ---- Fieller ----

def test_fieller_degenerate_matches_scaled_wald():
    num, vn, den = 0.4, 0.0016, 0.8
    out = fieller_interval(num, vn, den, 0.0, 0.05)
    z = z_quantile(0.05)
    assert not out.unbounded
    assert out.lower == pytest.approx((num - z * np.sqrt(vn)) / den, rel=1e-10)
    assert out.upper == pytest.approx((num + z * np.sqrt(vn)) / den, rel=1e-10)


def test_fieller_unbounded_when_denominator_is_noisy():
    out = fieller_interval(0.4, 0.0016, 0.05, 0.04, 0.05)
    assert out.unbounded and out.lower is None and out.upper is None


def test_fieller_bounded_contains_the_ratio():
    out = fieller_interval(0.4, 0.0016, 0.8, 0.0004, 0.05)
    assert not out.unbounded
    assert out.lower < 0.4 / 0.8 < out.upper


def test_fieller_unbounded_iff_denominator_wald_covers_zero():
    rng = np.random.default_rng(1)
    z = z_quantile(0.05)
    for _ in range(500):
        num = rng.normal(scale=2.0)
        den = rng.normal(scale=1.0)
        vn = rng.uniform(1e-4, 1.0)
        vd = rng.uniform(1e-4, 1.0)
        out = fieller_interval(num, vn, den, vd, 0.05)
        wald_covers_zero = abs(den) <= z * np.sqrt(vd)
        assert out.unbounded == wald_covers_zero
        if not out.unbounded:
            assert out.lower <= num / den <= out.upper


# ---- stratified bootstrap ----

def boot_setup(n=300, n_sub=120, seed=2):
    rng = np.random.default_rng(seed)
    return covariate_data(rng, n=n, n_sub=n_sub)


def test_bootstrap_validates_inputs():
    data, spec = boot_setup()
    fn = point_estimator(data, spec)
    with pytest.raises(SpecError):
        stratified_bootstrap(data, spec, fn, n_boot=0, seed=1, alpha=0.05)
    with pytest.raises(SpecError):
        stratified_bootstrap(data, spec, fn, n_boot=10, seed=-1, alpha=0.05)
    with pytest.raises(SpecError):
        stratified_bootstrap(data, spec, fn, n_boot=10, seed=None, alpha=0.05)


def test_bootstrap_empty_validated_stratum():
    rng = np.random.default_rng(3)
    n = 50
    x = rng.standard_normal(n)
    data = Dataset.from_columns(
        {"y": x + rng.standard_normal(n), "xs": x, "x": x},
        {"x": np.zeros(n, dtype=bool)})
    spec = MeasurementSpec("covariate", "xs", outcome="y", reference="x")
    with pytest.raises(DesignError):
        stratified_bootstrap(data, spec, lambda rows: np.zeros(2), 5, 1, 0.05)


def test_bootstrap_ci_threshold():
    data, spec = boot_setup()
    fn = point_estimator(data, spec)
    tiny = stratified_bootstrap(data, spec, fn, n_boot=1, seed=1, alpha=0.05)
    assert tiny.insufficient and tiny.ci is None and tiny.se is None
    low = stratified_bootstrap(data, spec, fn, n_boot=19, seed=1, alpha=0.05)
    assert low.insufficient and low.ci is None and low.se is not None
    ok = stratified_bootstrap(data, spec, fn, n_boot=20, seed=1, alpha=0.05)
    assert not ok.insufficient and ok.ci is not None
    assert ok.ci.shape == (3, 2)
    assert np.all(ok.ci[:, 0] <= ok.ci[:, 1])


def test_bootstrap_reproducible_and_worker_independent():
    data, spec = boot_setup()
    fn = point_estimator(data, spec)
    a = stratified_bootstrap(data, spec, fn, n_boot=25, seed=7, alpha=0.05)
    b = stratified_bootstrap(data, spec, fn, n_boot=25, seed=7, alpha=0.05)
    np.testing.assert_array_equal(a.samples, b.samples)
    np.testing.assert_array_equal(a.ci, b.ci)
    par = stratified_bootstrap(data, spec, fn, n_boot=25, seed=7, alpha=0.05,
                               workers=4)
    np.testing.assert_array_equal(a.samples, par.samples)
    np.testing.assert_array_equal(a.se, par.se)
    c = stratified_bootstrap(data, spec, fn, n_boot=25, seed=8, alpha=0.05)
    assert not np.array_equal(a.samples, c.samples)


def test_bootstrap_counts_failures_and_skips_them():
    data, spec = boot_setup()

    def flaky(rows):
        if int(np.sum(rows)) % 7 == 0:
            raise DesignError("synthetic failure")
        return np.array([float(rows[0]), float(rows[-1])])

    # probe call on the identity subset must succeed for this fixture
    assert int(np.arange(data.n_rows).sum()) % 7 != 0
    out = stratified_bootstrap(data, spec, flaky, n_boot=60, seed=4, alpha=0.05)
    assert 0 < out.failures < 60
    assert out.samples.shape == (60 - out.failures, 2)
    assert out.se is not None


def test_bootstrap_preserves_stratum_sizes():
    data, spec = boot_setup(n=300, n_sub=120)
    val_idx = np.flatnonzero(data.observed("x"))

    def counts(rows):
        rows = np.asarray(rows)
        inside = np.isin(rows, val_idx).sum()
        return np.array([float(inside), float(rows.size - inside)])

    out = stratified_bootstrap(data, spec, counts, n_boot=30, seed=5, alpha=0.05)
    assert out.failures == 0
    np.testing.assert_array_equal(out.samples,
                                  np.tile([120.0, 180.0], (30, 1)))


# ---- likelihood-corrector delta pieces ----

def zeta_example():
    return MlParameterVector(delta0=0.3, delta_z=(1.5,), sigma2_y_given_z=2.0,
                             kappa0=0.1, kappa_y=0.4, kappa_z=(-0.2,),
                             sigma2_x_given_yz=0.8, tau2=0.25)


def test_ml_jacobian_matches_finite_differences():
    from errcal.correct import ml_backtransform

    zeta = zeta_example()
    v0 = zeta.as_array()

    def rebuild(v):
        return MlParameterVector(
            delta0=v[0], delta_z=(v[1],), sigma2_y_given_z=v[2], kappa0=v[3],
            kappa_y=v[4], kappa_z=(v[5],), sigma2_x_given_yz=v[6], tau2=zeta.tau2)

    jac = ml_jacobian(zeta)
    cols = []
    for i in range(v0.shape[0]):
        h = 1e-6
        up, dn = v0.copy(), v0.copy()
        up[i] += h
        dn[i] -= h
        cols.append((ml_backtransform(rebuild(up)) - ml_backtransform(rebuild(dn))) / (2 * h))
    np.testing.assert_allclose(jac, np.column_stack(cols), rtol=1e-5, atol=1e-8)


def test_delta_vcov_mle_zero_inputs_give_zero():
    zeta = zeta_example()
    outcome_fit = LinearFit(coef=np.array([0.3, 1.5]), vcov=np.zeros((2, 2)),
                            sigma2=0.0, dof=10, terms=("(intercept)", "z"))
    mixed = MixedFit(fixed=np.array([0.1, 0.4, -0.2]), fixed_vcov=np.zeros((3, 3)),
                     var_between=0.8, var_within=0.25, loglik=0.0, boundary=False,
                     var_between_var=0.0, var_within_var=0.0, n_subjects=10,
                     n_replicates=2, terms=("(intercept)", "y", "z"))
    out = delta_vcov_mle(zeta, outcome_fit, mixed)
    np.testing.assert_array_equal(out, np.zeros((3, 3)))


def test_delta_vcov_mle_is_symmetric_psd():
    rng = np.random.default_rng(6)
    data, spec = replicate_data(rng, n=500, m=3)
    out = correct(data, spec, method="mle")
    v = out.vcov_delta
    np.testing.assert_allclose(v, v.T, atol=1e-15)
    assert np.min(np.linalg.eigvalsh(v)) > -1e-12


# ---- interval assembly ----

def test_summarize_intervals_rc_flavours():
    rng = np.random.default_rng(7)
    data, spec = covariate_data(rng, n=600, n_sub=200)
    out = correct(data, spec)
    summary = summarize_intervals(out, alpha=0.05, fieller=True, zerovar=True)
    assert summary.alpha == 0.05
    assert len(summary.rows) == 3
    row = summary.rows[0]
    assert row.term == "xs"
    assert row.ci_delta[0] <= row.estimate <= row.ci_delta[1]
    assert row.se_zerovar <= row.se_delta + 1e-12
    assert row.fieller is not None and not row.fieller.unbounded
    assert row.fieller.lower < row.estimate < row.fieller.upper
    # only the exposure coefficient is a scalar ratio under covariate error
    assert summary.rows[1].fieller is None and summary.rows[2].fieller is None


def test_summarize_intervals_mm_ratio_positions():
    rng = np.random.default_rng(8)
    n = 800
    x = rng.standard_normal(n)
    z = rng.standard_normal(n)
    y = 0.5 * x + 2.0 * z + rng.standard_normal(n)
    ys = 1.0 + 2.0 * y + 0.3 * rng.standard_normal(n)
    mask = np.zeros(n, dtype=bool)
    mask[:300] = True
    data = Dataset.from_columns({"ys": ys, "x": x, "z": z, "y": y}, {"y": mask})
    spec = MeasurementSpec("outcome", "ys", covariates=("x", "z"), reference="y")
    out = correct(data, spec)
    summary = summarize_intervals(out, fieller=True)
    assert summary.rows[0].fieller is not None
    assert summary.rows[1].fieller is None  # intercept involves the offset too
    assert summary.rows[2].fieller is not None
    for j in (0, 2):
        row = summary.rows[j]
        assert row.fieller.lower < row.estimate < row.fieller.upper


def test_summarize_intervals_sensitivity_and_boot():
    fit = toy_fit([0.4, 0.1])
    lam = CalibrationMatrix(params=np.array([0.8, 0.0]), param_vcov=None,
                            source="external", k=0)
    out = standard_rc(fit, lam)
    summary = summarize_intervals(out, zerovar=True, fieller=True)
    row = summary.rows[0]
    assert row.se_delta is None and row.se_zerovar is not None
    assert row.fieller is not None and not row.fieller.unbounded

    rng = np.random.default_rng(9)
    data, spec = covariate_data(rng, n=300, n_sub=120)
    corrected = correct(data, spec)
    boot = stratified_bootstrap(data, spec, point_estimator(data, spec),
                                n_boot=25, seed=1, alpha=0.05)
    summary = summarize_intervals(corrected.with_boot(boot))
    assert summary.rows[0].se_boot is not None
    assert summary.rows[0].ci_boot[0] <= summary.rows[0].ci_boot[1]


def test_summarize_intervals_rejects_unavailable_flavours():
    rng = np.random.default_rng(10)
    data, spec = replicate_data(rng, n=400, m=3)
    out = correct(data, spec, method="mle")
    with pytest.raises(SpecError):
        summarize_intervals(out, zerovar=True)
    with pytest.raises(SpecError):
        summarize_intervals(out, fieller=True)


def test_summarize_intervals_differential_has_no_fieller():
    rng = np.random.default_rng(11)
    n = 400
    g = (rng.random(n) < 0.5).astype(float)
    y = 0.1 + 0.3 * g + rng.standard_normal(n)
    ys = y + g
    data = Dataset.from_columns({"ys": ys, "g": g, "y": y})
    spec = MeasurementSpec("outcome", "ys", covariates=("g",), reference="y",
                           differential_by="g")
    out = correct(data, spec)
    with pytest.raises(SpecError):
        summarize_intervals(out, fieller=True)
