"""Measurement error correction for linear regression.

Corrects coefficient estimates when one continuous variable (a covariate or
the outcome) is measured with error, using internal validation data,
replicate measurements, calibration data, an externally fitted measurement
model, or assumed sensitivity parameters. Uncertainty comes from closed-form
delta-method propagation, Fieller ratio intervals, and a stratified
bootstrap.

The estimator facade :class:`CorrectedLinearModel` is imported lazily so the
command line tool does not pay for scikit-learn.
"""

from .correct import (
    CorrectedFit,
    correct,
    efficient_pool,
    mle_correct,
    naive_fit,
    point_estimator,
    standard_mm,
    standard_rc,
    validation_rc,
)
from .dataset import Dataset, complete_cases, load_csv, write_csv
from .errormodel import (
    CalibrationMatrix,
    ErrorModelMatrix,
    fit_external_calibration,
    fit_external_error_model,
)
from .errors import (
    DesignError,
    ErrcalError,
    InfeasibleVarianceError,
    InsufficientDataError,
    ParseError,
    SchemaError,
    SingularError,
    SpecError,
    UnknownColumnError,
)
from .measurement import ExternalModel, MeasurementSpec
from .report import build_report, render_json, render_text
from .simulate import Scenario, SimulatedStudy, generate, measurement_spec
from .uncertainty import (
    BootSummary,
    FiellerInterval,
    IntervalSet,
    fieller_interval,
    stratified_bootstrap,
    summarize_intervals,
)

__version__ = "0.1.0"

__all__ = [
    "BootSummary",
    "CalibrationMatrix",
    "CorrectedFit",
    "CorrectedLinearModel",
    "Dataset",
    "DesignError",
    "ErrcalError",
    "ErrorModelMatrix",
    "ExternalModel",
    "FiellerInterval",
    "InfeasibleVarianceError",
    "InsufficientDataError",
    "IntervalSet",
    "MeasurementSpec",
    "ParseError",
    "Scenario",
    "SchemaError",
    "SimulatedStudy",
    "SingularError",
    "SpecError",
    "UnknownColumnError",
    "build_report",
    "complete_cases",
    "correct",
    "efficient_pool",
    "fieller_interval",
    "fit_external_calibration",
    "fit_external_error_model",
    "generate",
    "load_csv",
    "measurement_spec",
    "mle_correct",
    "naive_fit",
    "point_estimator",
    "render_json",
    "render_text",
    "standard_mm",
    "standard_rc",
    "stratified_bootstrap",
    "summarize_intervals",
    "validation_rc",
    "write_csv",
    "__version__",
]


def __getattr__(name):
    if name == "CorrectedLinearModel":
        from .estimator import CorrectedLinearModel
        return CorrectedLinearModel
    raise AttributeError(f"module {__name__!r} has no attribute {name!r}")
