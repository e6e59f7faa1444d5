"""Predicting full single-year schedules from child (and adult) mortality.

Scales used below:

* *offset scale*: what the components reconstruct, ``logit(qx) + offset``;
* *logit scale*: plain ``logit(qx)``, where the infant model lives.

The infant replacement is written after the offset has been removed, so
it lands on the scale its regression was estimated on.
"""

from __future__ import annotations

import logging
from collections.abc import Mapping
from dataclasses import dataclass, field

import numpy as np

from svdcomp import linalg
from svdcomp.calibration import adult_design, infant_design, weight_design
from svdcomp.errors import NumericError
from svdcomp.lifetable import N_AGES, Sex, aggregate_q, expit, logit

logger = logging.getLogger(__name__)

INPUT = "input"
PREDICTED = "predicted"

# expit saturates to exactly 0 or 1 beyond |logit| ~ 37 (upper) / 745 (lower);
# keep outputs strictly inside the unit interval
_P_MIN = np.finfo(float).tiny
_P_MAX = np.nextafter(1.0, 0.0)


def _to_probability(logit_q):
    return np.clip(expit(logit_q), _P_MIN, _P_MAX)


def _check_probability(name, value):
    arr = np.asarray(value, dtype=float)
    if not np.all((arr > 0.0) & (arr < 1.0)):
        raise ValueError(f"{name} must lie strictly between 0 and 1")
    return arr


@dataclass(frozen=True)
class PredictionRequest:
    sex: Sex
    q5_0: float
    q45_15: float | None = None
    replace_infant: bool = True
    use_smoothed: bool = False

    def __post_init__(self):
        object.__setattr__(self, "sex", Sex.parse(self.sex))
        _check_probability("q5_0", self.q5_0)
        if self.q45_15 is not None:
            _check_probability("q45_15", self.q45_15)


@dataclass(frozen=True)
class PredictedSchedule:
    qx: np.ndarray
    weights_used: np.ndarray
    q45_15_used: float
    q45_15_source: str
    infant_replaced: bool
    extrapolated: bool = False
    warnings: tuple = field(default=())

    @property
    def logit_qx(self):
        return logit(self.qx)


def predict_adult(q5_0, sex, model):
    """Adult mortality 45q15 implied by child mortality alone."""
    q5 = _check_probability("q5_0", q5_0)
    reg = model[sex].adult.model
    out = expit(reg.evaluate(adult_design(q5)))
    return float(out[0]) if np.ndim(q5_0) == 0 else out


def predict_weights(q5_0, q45_15, sex, model):
    """Component weights for given child and adult mortality.

    Scalar inputs give a length-c vector; array inputs an (n, c) array.
    """
    q5 = _check_probability("q5_0", q5_0)
    q45 = _check_probability("q45_15", q45_15)
    coef = model[sex].weights.coefficients
    design = weight_design(q5, q45)
    with np.errstate(over="ignore", invalid="ignore"):
        w = coef[:, 0] + design @ coef[:, 1:].T
    return w[0] if np.ndim(q5_0) == 0 and np.ndim(q45_15) == 0 else w


def _components(sex_model, use_smoothed):
    cs = sex_model.components
    return cs.smoothed_components if use_smoothed else cs.components


def predict_logit_batch(
    q5_0,
    q45_15=None,
    *,
    sex,
    model,
    replace_infant=True,
    use_smoothed=False,
):
    """Vectorised prediction on the logit scale.

    Returns ``(logit_qx, weights, q45_used)`` with shapes (n, 110), (n, c), (n,).
    ``q45_15=None`` predicts adult mortality from child mortality.
    """
    sm = model[sex]
    q5 = np.atleast_1d(_check_probability("q5_0", q5_0))
    if q45_15 is None:
        q45 = np.atleast_1d(predict_adult(q5, sex, model))
    else:
        q45 = np.broadcast_to(np.atleast_1d(_check_probability("q45_15", q45_15)), q5.shape)
    if not np.all(np.isfinite(q45)):
        raise NumericError("adult mortality step produced non-finite values")

    weights = np.atleast_2d(predict_weights(q5, q45, sex, model))
    if not np.all(np.isfinite(weights)):
        raise NumericError("weights step produced non-finite values")

    with np.errstate(over="ignore", invalid="ignore"):
        offset_scale = weights @ _components(sm, use_smoothed)
    if not np.all(np.isfinite(offset_scale)):
        raise NumericError("component sum step produced non-finite values")

    logit_q = offset_scale - model.offset
    if replace_infant:
        logit_q[:, 0] = sm.infant.model.evaluate(infant_design(q5))
        if not np.all(np.isfinite(logit_q[:, 0])):
            raise NumericError("infant replacement step produced non-finite values")
    return logit_q, weights, q45


def predict_qx_batch(q5_0, q45_15=None, *, sex, model, replace_infant=True, use_smoothed=False):
    """Probability-scale predictions, shape (n, 110)."""
    logit_q, _, _ = predict_logit_batch(
        q5_0, q45_15, sex=sex, model=model, replace_infant=replace_infant, use_smoothed=use_smoothed
    )
    return _to_probability(logit_q)


def predict_schedule(req, model):
    """Run the six prediction steps for one request."""
    sm = model[req.sex]
    logit_q, weights, q45 = predict_logit_batch(
        req.q5_0,
        req.q45_15,
        sex=req.sex,
        model=model,
        replace_infant=req.replace_infant,
        use_smoothed=req.use_smoothed,
    )
    qx = _to_probability(logit_q[0])
    if not np.all(np.isfinite(qx)):
        raise NumericError("expit step produced non-finite values")

    notes = []
    lo, hi = sm.q5_0_range
    if not lo <= req.q5_0 <= hi:
        notes.append(
            f"q5_0={req.q5_0:g} outside the calibration range [{lo:g}, {hi:g}]; prediction is extrapolated"
        )
        logger.warning(notes[-1])
    qx.setflags(write=False)
    return PredictedSchedule(
        qx=qx,
        weights_used=weights[0],
        q45_15_used=float(q45[0]),
        q45_15_source=PREDICTED if req.q45_15 is None else INPUT,
        infant_replaced=req.replace_infant,
        extrapolated=bool(notes),
        warnings=tuple(notes),
    )


def reconstruct(weights, sex, model, use_smoothed=False):
    """Probability schedule for explicit component weights (no regressions involved)."""
    comps = _components(model[sex], use_smoothed)
    return _to_probability(np.asarray(weights, dtype=float) @ comps - model.offset)


def fit_partial_schedule(observed, sex, model, use_smoothed=False):
    """Fill in a complete schedule from probabilities observed at some ages.

    The observed values, moved to the offset scale, are regressed through
    the origin on the matching elements of the components; the fitted
    weights then produce every age. Observed ages are smoothed, not
    reproduced exactly.

    Parameters
    ----------
    observed : mapping of int to float
        Age (0-109) to probability of dying.
    """
    if not isinstance(observed, Mapping):
        observed = dict(observed)
    comps = _components(model[sex], use_smoothed)
    c = comps.shape[0]
    if len(observed) < c:
        raise ValueError(f"need at least {c} observed ages (one per component), got {len(observed)}")
    ages = np.array(sorted(int(a) for a in observed))
    if ages[0] < 0 or ages[-1] >= N_AGES:
        raise ValueError(f"observed ages must lie in 0..{N_AGES - 1}")
    values = np.array([observed[a] for a in ages], dtype=float)
    _check_probability("observed qx", values)
    y = logit(values) + model.offset
    fit = linalg.ols_fit(comps[:, ages].T, y, include_intercept=False)
    weights = fit.coefficients
    qx = _to_probability(weights @ comps - model.offset)
    return PredictedSchedule(
        qx=qx,
        weights_used=weights,
        q45_15_used=aggregate_q(qx, 15, 45),
        q45_15_source=PREDICTED,
        infant_replaced=False,
    )
