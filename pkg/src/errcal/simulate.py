"""Seeded generators for the eight supported study designs.

Latent structure shared by all designs: covariates Z are iid normal, the true
exposure X is linear in Z plus normal noise, and the outcome Y is linear in
(X, Z) plus normal noise. Each design then adds error-prone measurements and
an observation pattern; the validated subset is always the first ``n_sub``
rows. Generation is bit-identical for a fixed scenario (seed included).
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass

import numpy as np

from .dataset import Dataset
from .errors import SpecError
from .measurement import MeasurementSpec

DESIGNS = (
    "internal-covariate",
    "internal-outcome",
    "internal-outcome-differential",
    "replicates",
    "calibration-covariate",
    "calibration-outcome",
    "external-covariate",
    "external-outcome",
)


def _z_names(k):
    if k == 1:
        return ("Z",)
    return tuple(f"Z{i + 1}" for i in range(k))


@dataclass(frozen=True)
class Scenario:
    """Ground truth for one simulated study.

    ``m`` counts replicate measurements: for the replicates design it is the
    total number of exchangeable measures (the substitute is the first); for
    calibration designs it is the number of random-error replicates besides
    the systematic substitute. ``theta`` = (offset, scale) of the systematic
    measurement; ``theta_diff`` = (offset0, offset1, scale0, scale1) across
    the binary exposure of the differential design. ``tau2`` is the random
    error variance of every noisy measurement.
    """

    design: str
    n: int = 1000
    n_sub: int = 250
    m: int = 2
    beta_x: float = 0.5
    beta_0: float = 0.0
    beta_z: tuple = (2.0,)
    x_on_z: tuple = (0.5,)
    mu_z: float = 0.0
    var_z: float = 1.0
    var_x_given_z: float = 1.0
    sigma2_e: float = 1.0
    theta: tuple = (0.0, 1.0)
    theta_diff: tuple = (0.0, 1.0, 1.0, 2.0)
    tau2: float = 0.25
    n_external: int = 500
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "beta_z", tuple(float(b) for b in self.beta_z))
        object.__setattr__(self, "x_on_z", tuple(float(g) for g in self.x_on_z))
        object.__setattr__(self, "theta", tuple(float(v) for v in self.theta))
        object.__setattr__(self, "theta_diff", tuple(float(v) for v in self.theta_diff))
        if self.design not in DESIGNS:
            raise SpecError(f"unknown design {self.design!r}; choose one of {DESIGNS}")
        if len(self.x_on_z) != len(self.beta_z):
            raise SpecError("x_on_z must match beta_z in length")
        if self.design == "internal-outcome-differential" and self.beta_z:
            raise SpecError("the differential design is univariable; set beta_z=()")
        if self.n < 2:
            raise SpecError("n must be at least 2")
        if self.design.startswith(("internal", "replicates", "calibration")):
            if not 1 <= self.n_sub <= self.n:
                raise SpecError("n_sub must lie in [1, n]")
        if self.design == "replicates" and self.m < 2:
            raise SpecError("the replicates design needs m >= 2 measures")
        if self.design.startswith("calibration") and self.m < 1:
            raise SpecError("calibration designs need at least one replicate")
        if len(self.theta) != 2 or len(self.theta_diff) != 4:
            raise SpecError("theta must have 2 entries and theta_diff 4")
        if self.tau2 < 0 or self.var_x_given_z <= 0 or self.var_z <= 0 or self.sigma2_e < 0:
            raise SpecError("variances must be nonnegative (positive for latent spreads)")


@dataclass(frozen=True)
class SimulatedStudy:
    """Generated data plus the ground truth that produced it."""

    data: Dataset
    external: object
    truth: dict
    scenario: Scenario


def _latents(scn, rng, n):
    k = len(scn.beta_z)
    z = scn.mu_z + math.sqrt(scn.var_z) * rng.standard_normal((n, k))
    x = z @ np.asarray(scn.x_on_z) + math.sqrt(scn.var_x_given_z) * rng.standard_normal(n)
    y = (scn.beta_x * x + scn.beta_0 + z @ np.asarray(scn.beta_z)
         + math.sqrt(scn.sigma2_e) * rng.standard_normal(n))
    return z, x, y


def _noise(scn, rng, n):
    return math.sqrt(scn.tau2) * rng.standard_normal(n)


def _subset_mask(scn):
    mask = np.zeros(scn.n, dtype=bool)
    mask[: scn.n_sub] = True
    return mask


def _true_lambda_row(scn):
    """Population regression of X on (substitute, 1, Z), internal order."""
    theta0, theta1 = scn.theta
    v = scn.var_x_given_z
    lam1 = theta1 * v / (theta1 ** 2 * v + scn.tau2)
    gamma = np.asarray(scn.x_on_z)
    lam_z = gamma * (1.0 - lam1 * theta1)
    mean_x = float(gamma.sum() * scn.mu_z)
    mean_sub = theta0 + theta1 * mean_x
    lam0 = mean_x - lam1 * mean_sub - float(lam_z.sum() * scn.mu_z)
    return [float(lam1), float(lam0), *[float(g) for g in lam_z]]


def generate(scenario):
    """Generate one study; returns data, any external table, and the truth record."""
    scn = scenario
    rng = np.random.default_rng(scn.seed)
    k = len(scn.beta_z)
    z_names = _z_names(k)
    theta0, theta1 = scn.theta
    truth = {
        "design": scn.design,
        "scenario": asdict(scn),
        "beta": {"exposure": scn.beta_x, "intercept": scn.beta_0,
                 "covariates": list(scn.beta_z)},
    }
    external = None

    if scn.design == "internal-outcome-differential":
        x = (rng.random(scn.n) < 0.5).astype(np.float64)
        y = scn.beta_x * x + scn.beta_0 + math.sqrt(scn.sigma2_e) * rng.standard_normal(scn.n)
        off0, off1, sc0, sc1 = scn.theta_diff
        y_star = np.where(x > 0.5, off1 + sc1 * y, off0 + sc0 * y) + _noise(scn, rng, scn.n)
        columns = {"Y_star": y_star, "X": x, "Y": y}
        mask = {"Y": _subset_mask(scn)}
        data = Dataset.from_columns(columns, mask)
        truth["theta_diff"] = list(scn.theta_diff)
        return SimulatedStudy(data, None, truth, scn)

    z, x, y = _latents(scn, rng, scn.n)
    z_cols = {name: z[:, j] for j, name in enumerate(z_names)}

    if scn.design == "internal-covariate":
        x_star = theta0 + theta1 * x + _noise(scn, rng, scn.n)
        columns = {"Y": y, "X_star": x_star, **z_cols, "X": x}
        mask = {"X": _subset_mask(scn)}
        truth["lambda_row"] = _true_lambda_row(scn)
        truth["lambda1"] = truth["lambda_row"][0]
        data = Dataset.from_columns(columns, mask)
    elif scn.design == "internal-outcome":
        y_star = theta0 + theta1 * y + _noise(scn, rng, scn.n)
        columns = {"Y_star": y_star, "X": x, **z_cols, "Y": y}
        mask = {"Y": _subset_mask(scn)}
        truth["theta"] = [theta1, theta0]
        data = Dataset.from_columns(columns, mask)
    elif scn.design == "replicates":
        columns = {"Y": y}
        mask = {}
        sub = _subset_mask(scn)
        for j in range(scn.m):
            name = f"X_star_{j + 1}"
            columns[name] = x + _noise(scn, rng, scn.n)
            if j > 0 and scn.n_sub < scn.n:
                mask[name] = sub
        columns.update(z_cols)
        unit = Scenario(**{**asdict(scn), "theta": (0.0, 1.0)})
        truth["lambda_row"] = _true_lambda_row(unit)
        truth["lambda1"] = truth["lambda_row"][0]
        data = Dataset.from_columns(columns, mask)
    elif scn.design == "calibration-covariate":
        x_star = theta0 + theta1 * x + _noise(scn, rng, scn.n)
        columns = {"Y": y, "X_star": x_star, **z_cols}
        mask = {}
        sub = _subset_mask(scn)
        for j in range(scn.m):
            name = f"X_star_{j + 1}"
            columns[name] = x + _noise(scn, rng, scn.n)
            mask[name] = sub
        truth["lambda_row"] = _true_lambda_row(scn)
        truth["lambda1"] = truth["lambda_row"][0]
        data = Dataset.from_columns(columns, mask)
    elif scn.design == "calibration-outcome":
        y_star = theta0 + theta1 * y + _noise(scn, rng, scn.n)
        columns = {"Y_star": y_star, "X": x, **z_cols}
        mask = {}
        sub = _subset_mask(scn)
        for j in range(scn.m):
            name = f"Y_star_{j + 1}"
            columns[name] = y + _noise(scn, rng, scn.n)
            mask[name] = sub
        truth["theta"] = [theta1, theta0]
        data = Dataset.from_columns(columns, mask)
    elif scn.design == "external-covariate":
        x_star = theta0 + theta1 * x + _noise(scn, rng, scn.n)
        data = Dataset.from_columns({"Y": y, "X_star": x_star, **z_cols})
        ze, xe, _ = _latents(scn, rng, scn.n_external)
        xe_star = theta0 + theta1 * xe + _noise(scn, rng, scn.n_external)
        ext_cols = {"X": xe, "X_star": xe_star}
        ext_cols.update({name: ze[:, j] for j, name in enumerate(z_names)})
        external = Dataset.from_columns(ext_cols)
        truth["lambda_row"] = _true_lambda_row(scn)
        truth["lambda1"] = truth["lambda_row"][0]
    elif scn.design == "external-outcome":
        y_star = theta0 + theta1 * y + _noise(scn, rng, scn.n)
        data = Dataset.from_columns({"Y_star": y_star, "X": x, **z_cols})
        _, _, ye = _latents(scn, rng, scn.n_external)
        ye_star = theta0 + theta1 * ye + _noise(scn, rng, scn.n_external)
        external = Dataset.from_columns({"Y": ye, "Y_star": ye_star})
        truth["theta"] = [theta1, theta0]
    else:  # pragma: no cover - guarded by Scenario validation
        raise SpecError(f"unknown design {scn.design!r}")
    return SimulatedStudy(data, external, truth, scn)


def measurement_spec(scenario, external=None):
    """The :class:`MeasurementSpec` matching a generated study.

    External designs need the externally fitted model (see
    ``fit_external_calibration`` / ``fit_external_error_model`` applied to the
    study's external table).
    """
    scn = scenario
    k = len(scn.beta_z)
    z_names = _z_names(k)
    if scn.design == "internal-covariate":
        return MeasurementSpec("covariate", "X_star", outcome="Y", covariates=z_names,
                               reference="X")
    if scn.design == "internal-outcome":
        return MeasurementSpec("outcome", "Y_star", covariates=("X", *z_names),
                               reference="Y")
    if scn.design == "internal-outcome-differential":
        return MeasurementSpec("outcome", "Y_star", covariates=("X",), reference="Y",
                               differential_by="X")
    if scn.design == "replicates":
        reps = tuple(f"X_star_{j + 1}" for j in range(1, scn.m))
        return MeasurementSpec("covariate", "X_star_1", outcome="Y", covariates=z_names,
                               replicates=reps)
    if scn.design == "calibration-covariate":
        reps = tuple(f"X_star_{j + 1}" for j in range(scn.m))
        return MeasurementSpec("covariate", "X_star", outcome="Y", covariates=z_names,
                               replicates=reps)
    if scn.design == "calibration-outcome":
        reps = tuple(f"Y_star_{j + 1}" for j in range(scn.m))
        return MeasurementSpec("outcome", "Y_star", covariates=("X", *z_names),
                               replicates=reps)
    if scn.design == "external-covariate":
        if external is None:
            raise SpecError("external designs need the externally fitted model")
        return MeasurementSpec("covariate", "X_star", outcome="Y", covariates=z_names,
                               external=external)
    if external is None:
        raise SpecError("external designs need the externally fitted model")
    return MeasurementSpec("outcome", "Y_star", covariates=("X", *z_names),
                           external=external)
