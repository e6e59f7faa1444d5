"""SVD component model of single-year age-specific mortality.

Calibrate the model on a corpus of single-year life tables, then predict
complete ``1qx`` schedules (ages 0-109) from child mortality ``5q0`` alone
or together with adult mortality ``45q15``.
"""

from svdcomp.calibration import CalibratedModel, calibrate, load_model, save_model
from svdcomp.lifetable import (
    Corpus,
    ExclusionRule,
    MortalitySchedule,
    Sex,
    aggregate_q,
    apply_exclusions,
    expit,
    load_hmd_directory,
    logit,
    parse_hmd_lifetable,
)
from svdcomp.prediction import (
    PredictionRequest,
    PredictedSchedule,
    fit_partial_schedule,
    predict_adult,
    predict_schedule,
    predict_weights,
)

__version__ = "0.1.0"

__all__ = [
    "CalibratedModel",
    "Corpus",
    "ExclusionRule",
    "MortalitySchedule",
    "PredictedSchedule",
    "PredictionRequest",
    "Sex",
    "aggregate_q",
    "apply_exclusions",
    "calibrate",
    "expit",
    "fit_partial_schedule",
    "load_hmd_directory",
    "load_model",
    "logit",
    "parse_hmd_lifetable",
    "predict_adult",
    "predict_schedule",
    "predict_weights",
    "save_model",
]
