"""Calibration of the component model and its model artifact.

For each sex the offset logit matrix is factorised, the leading components
``s_i u_i`` are kept, and three sets of regressions are estimated:

* the empirical weights (rows of ``V``) on eight transforms of child and
  adult mortality,
* ``logit(45q15)`` on a cubic in ``logit(5q0)`` plus ``5q0``,
* ``logit(1q0)`` on a quadratic in ``logit(5q0)``.
"""

from __future__ import annotations

import hashlib
import json
import logging
import os
import tempfile
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from svdcomp import linalg
from svdcomp.errors import CorruptModelError, ModelFormatError, NumericError
from svdcomp.lifetable import N_AGES, Corpus, Sex, aggregate_q, logit

logger = logging.getLogger(__name__)

DEFAULT_OFFSET = -10.0
DEFAULT_COMPONENTS = 4
FORMAT_VERSION = 1
SUPPORTED_VERSIONS = frozenset({1})

WEIGHT_PREDICTORS = (
    "q5_0",
    "logit_q5_0",
    "logit_q5_0^2",
    "logit_q5_0^3",
    "q45_15",
    "logit_q45_15^2",
    "logit_q45_15^3",
    "logit_q5_0*logit_q45_15",
)
ADULT_PREDICTORS = ("q5_0", "logit_q5_0", "logit_q5_0^2", "logit_q5_0^3")
INFANT_PREDICTORS = ("logit_q5_0", "logit_q5_0^2")


def weight_design(q5, q45):
    """Predictor matrix for the weight regressions, one row per (q5, q45) pair."""
    q5 = np.atleast_1d(np.asarray(q5, dtype=float))
    q45 = np.atleast_1d(np.asarray(q45, dtype=float))
    l5, l45 = logit(q5), logit(q45)
    return np.column_stack([q5, l5, l5**2, l5**3, q45, l45**2, l45**3, l5 * l45])


def adult_design(q5):
    q5 = np.atleast_1d(np.asarray(q5, dtype=float))
    l5 = logit(q5)
    return np.column_stack([q5, l5, l5**2, l5**3])


def infant_design(q5):
    l5 = logit(np.atleast_1d(np.asarray(q5, dtype=float)))
    return np.column_stack([l5, l5**2])


# ---------------------------------------------------------------------------
# model pieces
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class CalibrationMatrix:
    sex: Sex
    values: np.ndarray
    offset: float
    column_labels: list


@dataclass(frozen=True)
class ComponentSet:
    """Scaled left singular vectors; ``components[i]`` is ``s_i * u_i`` over ages 0-109."""

    sex: Sex
    components: np.ndarray
    smoothed_components: np.ndarray
    singular_values: np.ndarray
    explained_fractions: np.ndarray

    @property
    def n_components(self):
        return self.components.shape[0]


@dataclass(frozen=True)
class Regression:
    """Coefficients (intercept first) of one OLS fit kept in the model."""

    coefficients: np.ndarray
    r_squared: float
    residual_std_error: float
    n_obs: int

    @classmethod
    def from_fit(cls, fit):
        return cls(
            coefficients=np.asarray(fit.coefficients, dtype=float),
            r_squared=float(fit.r_squared),
            residual_std_error=float(fit.residual_std_error),
            n_obs=int(fit.n_obs),
        )

    def evaluate(self, design):
        return self.coefficients[0] + np.asarray(design) @ self.coefficients[1:]


@dataclass(frozen=True)
class WeightRegressionSet:
    sex: Sex
    models: tuple

    @property
    def coefficients(self):
        return np.vstack([m.coefficients for m in self.models])

    @property
    def r_squared(self):
        return np.array([m.r_squared for m in self.models])


@dataclass(frozen=True)
class AdultRegression:
    sex: Sex
    model: Regression


@dataclass(frozen=True)
class InfantRegression:
    sex: Sex
    model: Regression


@dataclass(frozen=True)
class SexModel:
    """Everything needed to predict schedules for one sex."""

    sex: Sex
    components: ComponentSet
    weights: WeightRegressionSet
    adult: AdultRegression
    infant: InfantRegression
    n_schedules: int
    q5_0_range: tuple


@dataclass(frozen=True)
class CalibratedModel:
    offset: float
    n_components: int
    sexes: dict
    n_schedules: int
    corpus_fingerprint: str
    format_version: int = FORMAT_VERSION

    def __getitem__(self, sex):
        sex = Sex.parse(sex)
        try:
            return self.sexes[sex]
        except KeyError:
            raise ValueError(f"model has no {sex.value} calibration") from None

    @property
    def single_sex(self):
        return len(self.sexes) == 1


# ---------------------------------------------------------------------------
# calibration steps
# ---------------------------------------------------------------------------


def build_calibration_matrix(corpus, offset=DEFAULT_OFFSET):
    """A x L matrix of ``logit(qx) + offset``, columns in corpus order."""
    if len(corpus) == 0:
        raise ValueError("cannot calibrate on an empty corpus")
    sex = corpus.sex
    values = logit(corpus.qx_matrix()) + float(offset)
    return CalibrationMatrix(sex=sex, values=values, offset=float(offset), column_labels=corpus.labels)


def empirical_weights(matrix, factors, n_components=DEFAULT_COMPONENTS):
    """Rows of ``V`` restricted to the first ``n_components`` columns, shape (L, c)."""
    if factors.k < n_components:
        raise ValueError(f"need at least {n_components} singular triplets, got {factors.k}")
    values = matrix.values if isinstance(matrix, CalibrationMatrix) else np.asarray(matrix)
    if factors.v.shape[0] != values.shape[1]:
        raise ValueError("factors do not belong to this matrix")
    return np.array(factors.v[:, :n_components])


def corpus_indicators(corpus):
    """Per-schedule (5q0, 45q15, 1q0) arrays."""
    q = corpus.qx_matrix().T
    return aggregate_q(q, 0, 5), aggregate_q(q, 15, 45), q[:, 0].copy()


def fit_weight_regressions(weights, corpus):
    weights = np.asarray(weights, dtype=float)
    if weights.shape[0] != len(corpus):
        raise ValueError("weight rows do not align with corpus columns")
    q5, q45, _ = corpus_indicators(corpus)
    design = weight_design(q5, q45)
    models = []
    for i in range(weights.shape[1]):
        try:
            fit = linalg.ols_fit(design, weights[:, i], include_intercept=True)
        except NumericError as exc:
            raise NumericError(f"weight regression for component {i + 1}: {exc}") from exc
        models.append(Regression.from_fit(fit))
    return WeightRegressionSet(sex=corpus.sex, models=tuple(models))


def fit_adult_regression(corpus):
    if len(corpus) == 0:
        raise ValueError("empty corpus")
    q5, q45, _ = corpus_indicators(corpus)
    try:
        fit = linalg.ols_fit(adult_design(q5), logit(q45), include_intercept=True)
    except NumericError as exc:
        raise NumericError(f"adult mortality regression: {exc}") from exc
    return AdultRegression(sex=corpus.sex, model=Regression.from_fit(fit))


def fit_infant_regression(corpus):
    if len(corpus) == 0:
        raise ValueError("empty corpus")
    q5, _, q0 = corpus_indicators(corpus)
    try:
        fit = linalg.ols_fit(infant_design(q5), logit(q0), include_intercept=True)
    except NumericError as exc:
        raise NumericError(f"infant mortality regression: {exc}") from exc
    return InfantRegression(sex=corpus.sex, model=Regression.from_fit(fit))


def gaussian_kernel_weights(ages, bandwidth):
    """Row-normalised Gaussian kernel matrix over ``ages`` with standard deviation ``bandwidth``."""
    ages = np.asarray(ages, dtype=float)
    d = (ages[:, None] - ages[None, :]) / float(bandwidth)
    k = np.exp(-0.5 * d * d)
    return k / k.sum(axis=1, keepdims=True)


def smooth_vector(values, knee, bandwidth):
    """Kernel-smooth ``values`` at ages above ``knee``; ages ``0..knee`` pass through."""
    values = np.asarray(values, dtype=float)
    out = values.copy()
    tail = np.arange(values.shape[0]) > knee
    if tail.sum() > 1:
        out[tail] = gaussian_kernel_weights(np.flatnonzero(tail), bandwidth) @ values[tail]
    return out


def smooth_components(components):
    """Return ``components`` with ``smoothed_components`` filled in.

    Component ``i`` (1-based) is smoothed at ages older than ``i`` with a
    Gaussian kernel of standard deviation ``i + 1`` years, renormalised at
    the edges of the smoothed range.
    """
    raw = components.components
    smoothed = np.vstack(
        [smooth_vector(raw[j], knee=j + 1, bandwidth=j + 2) for j in range(raw.shape[0])]
    )
    return ComponentSet(
        sex=components.sex,
        components=raw,
        smoothed_components=smoothed,
        singular_values=components.singular_values,
        explained_fractions=components.explained_fractions,
    )


def decompose(qmat, n_components=DEFAULT_COMPONENTS):
    """SVD step: components, empirical weights (L, c) and the factors themselves."""
    if n_components > min(qmat.values.shape):
        raise ValueError(
            f"{n_components} components requested but the {qmat.sex.value} matrix is "
            f"{qmat.values.shape[0]} x {qmat.values.shape[1]}"
        )
    try:
        factors = linalg.svd(qmat.values, k=n_components)
    except NumericError as exc:
        raise NumericError(f"{qmat.sex.value} calibration SVD: {exc}") from exc
    # denominator is the full sum of squares, so no need for the whole spectrum
    total_ss = float(np.sum(qmat.values**2))
    comps = (factors.u * factors.s).T
    components = smooth_components(
        ComponentSet(
            sex=qmat.sex,
            components=comps,
            smoothed_components=comps,
            singular_values=factors.s.copy(),
            explained_fractions=factors.s**2 / total_ss,
        )
    )
    return components, empirical_weights(qmat, factors, n_components), factors


def calibrate_sex(corpus, offset=DEFAULT_OFFSET, n_components=DEFAULT_COMPONENTS):
    """Calibrate the model for one single-sex corpus."""
    qmat = build_calibration_matrix(corpus, offset)
    components, weights, _ = decompose(qmat, n_components)
    q5, _, _ = corpus_indicators(corpus)
    return SexModel(
        sex=qmat.sex,
        components=components,
        weights=fit_weight_regressions(weights, corpus),
        adult=fit_adult_regression(corpus),
        infant=fit_infant_regression(corpus),
        n_schedules=len(corpus),
        q5_0_range=(float(q5.min()), float(q5.max())),
    )


def corpus_fingerprint(*corpora):
    """Hex SHA-256 over the sorted (population, sex, year) triples of all corpora."""
    keys = sorted(s.key() for c in corpora if c is not None for s in c)
    h = hashlib.sha256()
    for pop, sex, year in keys:
        h.update(f"{pop}|{sex}|{year}\n".encode())
    return h.hexdigest()


def calibrate(corpus_f, corpus_m, offset=DEFAULT_OFFSET, c=DEFAULT_COMPONENTS):
    """Calibrate both sexes (either corpus may be ``None`` for a single-sex model)."""
    if c < 1:
        raise ValueError("need at least one component")
    sexes = {}
    for expected, corpus in ((Sex.FEMALE, corpus_f), (Sex.MALE, corpus_m)):
        if corpus is None:
            continue
        if len(corpus) == 0:
            raise ValueError(f"{expected.value} corpus is empty")
        if corpus.sex != expected:
            raise ValueError(f"corpus passed as {expected.value} contains {corpus.sex.value} schedules")
        sexes[expected] = calibrate_sex(corpus, offset=offset, n_components=c)
    if not sexes:
        raise ValueError("no corpus supplied")
    return CalibratedModel(
        offset=float(offset),
        n_components=int(c),
        sexes=sexes,
        n_schedules=sum(m.n_schedules for m in sexes.values()),
        corpus_fingerprint=corpus_fingerprint(corpus_f, corpus_m),
    )


# ---------------------------------------------------------------------------
# artifact I/O
# ---------------------------------------------------------------------------


def _floats(a):
    return [float(x) for x in np.ravel(a)]


def _regression_to_dict(reg):
    return {
        "coefficients": _floats(reg.coefficients),
        "r_squared": reg.r_squared,
        "residual_std_error": reg.residual_std_error,
        "n_obs": reg.n_obs,
    }


def _regression_from_dict(d):
    return Regression(
        coefficients=np.array(d["coefficients"], dtype=float),
        r_squared=float(d["r_squared"]),
        residual_std_error=float(d["residual_std_error"]),
        n_obs=int(d["n_obs"]),
    )


def model_to_dict(model):
    sexes = {}
    for sex, sm in model.sexes.items():
        cs = sm.components
        sexes[sex.value] = {
            "n_schedules": sm.n_schedules,
            "q5_0_range": list(sm.q5_0_range),
            "singular_values": _floats(cs.singular_values),
            "explained_fractions": _floats(cs.explained_fractions),
            "components": [_floats(row) for row in cs.components],
            "smoothed_components": [_floats(row) for row in cs.smoothed_components],
            "weight_predictors": list(WEIGHT_PREDICTORS),
            "weight_models": [_regression_to_dict(m) for m in sm.weights.models],
            "adult_predictors": list(ADULT_PREDICTORS),
            "adult_model": _regression_to_dict(sm.adult.model),
            "infant_predictors": list(INFANT_PREDICTORS),
            "infant_model": _regression_to_dict(sm.infant.model),
        }
    return {
        "format": "svdcomp-model",
        "format_version": model.format_version,
        "offset": model.offset,
        "n_components": model.n_components,
        "n_schedules": model.n_schedules,
        "corpus_fingerprint": model.corpus_fingerprint,
        "ages": [0, N_AGES - 1],
        "sexes": sexes,
    }


def model_from_dict(d, supported_versions=SUPPORTED_VERSIONS):
    if d.get("format") != "svdcomp-model":
        raise ModelFormatError("not an svdcomp model artifact")
    version = d.get("format_version")
    if version not in supported_versions:
        raise ModelFormatError(
            f"model format_version {version!r} not supported (reader supports {sorted(supported_versions)})"
        )
    sexes = {}
    for name, sd in d["sexes"].items():
        sex = Sex.parse(name)
        comps = ComponentSet(
            sex=sex,
            components=np.array(sd["components"], dtype=float),
            smoothed_components=np.array(sd["smoothed_components"], dtype=float),
            singular_values=np.array(sd["singular_values"], dtype=float),
            explained_fractions=np.array(sd["explained_fractions"], dtype=float),
        )
        sexes[sex] = SexModel(
            sex=sex,
            components=comps,
            weights=WeightRegressionSet(
                sex=sex, models=tuple(_regression_from_dict(m) for m in sd["weight_models"])
            ),
            adult=AdultRegression(sex=sex, model=_regression_from_dict(sd["adult_model"])),
            infant=InfantRegression(sex=sex, model=_regression_from_dict(sd["infant_model"])),
            n_schedules=int(sd["n_schedules"]),
            q5_0_range=tuple(float(x) for x in sd["q5_0_range"]),
        )
    return CalibratedModel(
        offset=float(d["offset"]),
        n_components=int(d["n_components"]),
        sexes=dict(sorted(sexes.items(), key=lambda kv: kv[0].value)),
        n_schedules=int(d["n_schedules"]),
        corpus_fingerprint=str(d["corpus_fingerprint"]),
        format_version=int(version),
    )


def _canonical(payload):
    return json.dumps(payload, sort_keys=True, separators=(",", ":"), allow_nan=True)


def dumps_model(model):
    payload = model_to_dict(model)
    checksum = hashlib.sha256(_canonical(payload).encode()).hexdigest()
    return json.dumps({"checksum": checksum, "model": payload}, sort_keys=True, indent=1) + "\n"


def loads_model(text, supported_versions=SUPPORTED_VERSIONS):
    try:
        doc = json.loads(text)
        payload = doc["model"]
        checksum = doc["checksum"]
    except (json.JSONDecodeError, KeyError, TypeError) as exc:
        raise CorruptModelError(f"model artifact is truncated or unreadable: {exc}") from None
    if hashlib.sha256(_canonical(payload).encode()).hexdigest() != checksum:
        raise CorruptModelError("model artifact checksum mismatch")
    try:
        return model_from_dict(payload, supported_versions)
    except (KeyError, TypeError, ValueError) as exc:
        raise CorruptModelError(f"model artifact is missing fields: {exc}") from None


def save_model(model, path):
    """Write the model as versioned JSON; floats keep their exact binary value."""
    path = Path(path)
    text = dumps_model(model)
    fd, tmp = tempfile.mkstemp(dir=path.parent or ".", prefix=path.name, suffix=".tmp")
    try:
        with os.fdopen(fd, "w") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        Path(tmp).unlink(missing_ok=True)
        raise


def load_model(path, supported_versions=SUPPORTED_VERSIONS):
    return loads_model(Path(path).read_text(), supported_versions)
