"""Prediction errors, cross-validation and comparison against a baseline model."""

from __future__ import annotations

import csv
import logging
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path

import numpy as np

from svdcomp.calibration import DEFAULT_COMPONENTS, DEFAULT_OFFSET, calibrate
from svdcomp.errors import NumericError
from svdcomp.lifetable import N_AGES, Sex, aggregate_q, five_year_groups
from svdcomp.logquad import LogQuadCoefficients, logquad_predict
from svdcomp.prediction import predict_qx_batch

logger = logging.getLogger(__name__)

QUANTILES = (0.10, 0.25, 0.50, 0.75, 0.90)
REPORT_COLUMNS = ("sex", "age", "q10", "q25", "q50", "q75", "q90", "input_mode", "sample_status")


class InputMode(str, Enum):
    CHILD_ONLY = "child_only"
    CHILD_ADULT = "child_adult"


class SampleStatus(str, Enum):
    IN_SAMPLE = "in_sample"
    OUT_OF_SAMPLE = "out_of_sample"
    ALL = "all"


@dataclass(frozen=True)
class ErrorReport:
    """Summary of observed-minus-predicted errors on the probability scale.

    ``errors`` (schedules x ages) is kept unless the report was built with
    ``keep_errors=False``; every other field is precomputed.
    """

    sex: Sex
    input_mode: InputMode
    sample_status: SampleStatus
    n_schedules: int
    per_age_quantiles: np.ndarray
    overall_median: float
    overall_iqr: float
    total_absolute_error: float
    per_age_abs_error: np.ndarray
    errors: np.ndarray | None = None

    @classmethod
    def from_errors(cls, errors, sex, input_mode, sample_status=SampleStatus.ALL, keep_errors=True):
        errors = np.asarray(errors, dtype=float).reshape(-1, N_AGES)
        if errors.shape[0] == 0:
            raise ValueError("cannot summarise an empty error matrix")
        per_age = np.quantile(errors, QUANTILES, axis=0)
        q25, q50, q75 = np.quantile(errors, (0.25, 0.5, 0.75))
        abs_by_age = np.abs(errors).sum(axis=0)
        return cls(
            sex=Sex.parse(sex),
            input_mode=InputMode(input_mode),
            sample_status=SampleStatus(sample_status),
            n_schedules=errors.shape[0],
            per_age_quantiles=per_age,
            overall_median=float(q50),
            overall_iqr=float(q75 - q25),
            total_absolute_error=float(abs_by_age.sum()),
            per_age_abs_error=abs_by_age,
            errors=errors if keep_errors else None,
        )

    @property
    def per_age_median(self):
        return self.per_age_quantiles[2]

    @property
    def per_age_iqr(self):
        return self.per_age_quantiles[1], self.per_age_quantiles[3]

    def rows(self):
        for age in range(N_AGES):
            qs = self.per_age_quantiles[:, age]
            yield {
                "sex": self.sex.value,
                "age": age,
                **{col: float(v) for col, v in zip(REPORT_COLUMNS[2:7], qs)},
                "input_mode": self.input_mode.value,
                "sample_status": self.sample_status.value,
            }


def merge_reports(reports):
    """Pool the stored error matrices of several reports (same sex, mode, status)."""
    reports = list(reports)
    if not reports:
        raise ValueError("nothing to merge")
    if any(r.errors is None for r in reports):
        raise ValueError("reports were built without keep_errors; cannot pool")
    first = reports[0]
    return ErrorReport.from_errors(
        np.vstack([r.errors for r in reports]), first.sex, first.input_mode, first.sample_status
    )


def write_reports_csv(reports, path):
    with Path(path).open("w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=REPORT_COLUMNS, lineterminator="\n")
        w.writeheader()
        for report in reports:
            for row in report.rows():
                w.writerow({k: (f"{v:.8g}" if isinstance(v, float) else v) for k, v in row.items()})


def _indicators(corpus):
    q = corpus.qx_matrix().T
    return q, aggregate_q(q, 0, 5), aggregate_q(q, 15, 45)


def predict_corpus(corpus, model, input_mode, replace_infant=True, use_smoothed=False):
    """Observed and predicted qx matrices (schedules x ages) for a single-sex corpus."""
    input_mode = InputMode(input_mode)
    observed, q5, q45 = _indicators(corpus)
    predicted = predict_qx_batch(
        q5,
        q45 if input_mode is InputMode.CHILD_ADULT else None,
        sex=corpus.sex,
        model=model,
        replace_infant=replace_infant,
        use_smoothed=use_smoothed,
    )
    return observed, predicted


def prediction_errors(
    corpus,
    model,
    input_mode=InputMode.CHILD_ONLY,
    *,
    replace_infant=True,
    use_smoothed=False,
    sample_status=SampleStatus.ALL,
    keep_errors=True,
):
    """Predict every schedule from its own 5q0 (and 45q15) and summarise the errors."""
    observed, predicted = predict_corpus(corpus, model, input_mode, replace_infant, use_smoothed)
    return ErrorReport.from_errors(
        observed - predicted, corpus.sex, input_mode, sample_status, keep_errors=keep_errors
    )


def total_absolute_error(corpus, model, input_mode=InputMode.CHILD_ONLY, age_grouping="one_year", **kwargs):
    """Sum over schedules and ages of ``|observed - predicted|``.

    ``age_grouping="five_year"`` first collapses both schedules to the 22
    groups 0-4, ..., 105-109.
    """
    observed, predicted = predict_corpus(corpus, model, input_mode, **kwargs)
    if age_grouping == "five_year":
        observed, predicted = five_year_groups(observed), five_year_groups(predicted)
    elif age_grouping != "one_year":
        raise ValueError(f"unknown age grouping {age_grouping!r}")
    return float(np.abs(observed - predicted).sum())


# ---------------------------------------------------------------------------
# cross-validation
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class CvDesign:
    n_samples: int = 25
    sample_fraction: float = 0.5
    seed: int = 0
    stratify: bool = False

    def __post_init__(self):
        if self.n_samples < 1:
            raise ValueError("n_samples must be at least 1")
        if not 0.0 < self.sample_fraction < 1.0:
            raise ValueError("sample_fraction must lie strictly between 0 and 1")


@dataclass
class CvSample:
    index: int
    sample_fraction: float
    in_sample: dict
    reports: dict = field(default_factory=dict)
    error: str | None = None

    @property
    def failed(self):
        return self.error is not None


@dataclass
class CvResult:
    design: CvDesign
    input_mode: InputMode
    samples: list

    @property
    def n_failed(self):
        return sum(s.failed for s in self.samples)

    def pooled(self, sex, status):
        """All errors of one sex and sample status pooled across successful samples."""
        sex, status = Sex.parse(sex), SampleStatus(status)
        return merge_reports(s.reports[sex][status] for s in self.samples if not s.failed)


def _draw(rng, corpus, fraction, stratify):
    n = len(corpus)
    if not stratify:
        size = min(max(int(round(fraction * n)), 1), n - 1)
        return np.sort(rng.choice(n, size=size, replace=False))
    groups = {}
    for i, s in enumerate(corpus):
        groups.setdefault(s.population_code, []).append(i)
    picked = []
    for pop in sorted(groups):
        idx = np.array(groups[pop])
        size = int(round(fraction * idx.size))
        if size:
            picked.append(rng.choice(idx, size=size, replace=False))
    picked = np.sort(np.concatenate(picked)) if picked else np.array([], dtype=int)
    if picked.size == 0 or picked.size == n:
        raise ValueError("stratified draw left one partition empty")
    return picked


def draw_samples(design, corpora):
    """In-sample index arrays per sample and sex, reproducible from the design alone."""
    rng = np.random.default_rng([design.seed, int(round(design.sample_fraction * 1_000_000))])
    present = [(sex, c) for sex, c in sorted(corpora.items(), key=lambda kv: kv[0].value) if c is not None]
    for sex, c in present:
        if len(c) < 2:
            raise ValueError(f"{sex.value} corpus too small to split into in/out samples")
    aligned = len(present) == 2 and present[0][1].labels == present[1][1].labels
    draws = []
    for _ in range(design.n_samples):
        sample = {}
        for j, (sex, c) in enumerate(present):
            if aligned and j == 1:
                sample[sex] = sample[present[0][0]]
            else:
                sample[sex] = _draw(rng, c, design.sample_fraction, design.stratify)
        draws.append(sample)
    return draws


def _run_sample(args):
    index, fraction, in_idx, corpora, input_mode, offset, c, keep_errors = args
    sample = CvSample(index=index, sample_fraction=fraction, in_sample=in_idx)
    try:
        fitted = {sex: corpora[sex].subset(in_idx[sex]) for sex in in_idx}
        model = calibrate(fitted.get(Sex.FEMALE), fitted.get(Sex.MALE), offset=offset, c=c)
        for sex, idx in in_idx.items():
            corpus = corpora[sex]
            mask = np.zeros(len(corpus), dtype=bool)
            mask[idx] = True
            observed, predicted = predict_corpus(corpus, model, input_mode)
            err = observed - predicted
            sample.reports[sex] = {
                SampleStatus.IN_SAMPLE: ErrorReport.from_errors(
                    err[mask], sex, input_mode, SampleStatus.IN_SAMPLE, keep_errors
                ),
                SampleStatus.OUT_OF_SAMPLE: ErrorReport.from_errors(
                    err[~mask], sex, input_mode, SampleStatus.OUT_OF_SAMPLE, keep_errors
                ),
            }
    except (NumericError, ValueError) as exc:
        sample.reports = {}
        sample.error = f"sample {index}: {exc}"
        logger.warning("cross-validation %s", sample.error)
    return sample


def cross_validate(
    corpus_f,
    corpus_m,
    design,
    *,
    input_mode=InputMode.CHILD_ONLY,
    offset=DEFAULT_OFFSET,
    c=DEFAULT_COMPONENTS,
    keep_errors=True,
    workers=1,
):
    """Repeatedly calibrate on a random subset and predict every schedule.

    Each sample's errors are split into in-sample and out-of-sample
    reports. A sample whose calibration fails is recorded (``error``) and
    the run continues.
    """
    input_mode = InputMode(input_mode)
    corpora = {sex: c_ for sex, c_ in ((Sex.FEMALE, corpus_f), (Sex.MALE, corpus_m)) if c_ is not None}
    if not corpora:
        raise ValueError("no corpus supplied")
    draws = draw_samples(design, corpora)
    jobs = [
        (i, design.sample_fraction, draw, corpora, input_mode, offset, c, keep_errors)
        for i, draw in enumerate(draws)
    ]
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            samples = list(pool.map(_run_sample, jobs))
    else:
        samples = [_run_sample(job) for job in jobs]
    samples.sort(key=lambda s: s.index)
    return CvResult(design=design, input_mode=input_mode, samples=samples)


def fraction_sweep(corpus_f, corpus_m, fractions, n_samples, seed, **kwargs):
    """Cross-validate at several sample fractions; returns ``{fraction: CvResult}``."""
    kwargs.setdefault("keep_errors", False)
    return {
        float(f): cross_validate(
            corpus_f, corpus_m, CvDesign(n_samples=n_samples, sample_fraction=float(f), seed=seed), **kwargs
        )
        for f in fractions
    }


def sweep_summary(result, sex, status):
    """Median-of-medians and median-of-IQRs across the successful samples of a run."""
    sex, status = Sex.parse(sex), SampleStatus(status)
    reps = [s.reports[sex][status] for s in result.samples if not s.failed]
    medians = np.array([r.overall_median for r in reps])
    iqrs = np.array([r.overall_iqr for r in reps])
    return {
        "median_of_medians": float(np.median(medians)),
        "median_of_iqrs": float(np.median(iqrs)),
        "iqr_of_medians": float(np.subtract(*np.quantile(medians, [0.75, 0.25]))),
        "n": len(reps),
    }


# ---------------------------------------------------------------------------
# baseline comparison
# ---------------------------------------------------------------------------


def logquad_baseline(coeffs):
    """Wrap Log-Quad coefficients as a five-year-group predictor."""

    def predict(q5, q45, sex):
        return logquad_predict(q5, q45, sex, coeffs).five_year()

    return predict


def baseline_total_absolute_error(corpus, baseline, input_mode):
    observed, q5, q45 = _indicators(corpus)
    obs5 = five_year_groups(observed)
    sex = corpus.sex
    total = 0.0
    for j in range(len(corpus)):
        pred = baseline(float(q5[j]), float(q45[j]) if InputMode(input_mode) is InputMode.CHILD_ADULT else None, sex)
        total += float(np.abs(obs5[j] - np.asarray(pred)).sum())
    return total


@dataclass(frozen=True)
class ComparisonTable:
    """Total absolute errors in the layout R1-R8 x C1-C3.

    C1 uses child mortality alone, C2 child and adult mortality, and C3 is
    ``C2 - C1``. Rows per sex: model, baseline, baseline minus model, and
    that difference as a percentage of the model's total.
    """

    rows: list

    COLUMNS = ("row", "sex", "summary", "C1", "C2", "C3")

    def write_csv(self, fh):
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(self.COLUMNS)
        for r in self.rows:
            w.writerow([r["row"], r["sex"], r["summary"]] + [f"{r[c]:.8g}" for c in ("C1", "C2", "C3")])

    def lookup(self, row):
        return next(r for r in self.rows if r["row"] == row)


def compare_models(corpus_f, corpus_m, model, baseline, model_name="SVD-Comp", baseline_name="Log-Quad"):
    """Five-year total absolute error of the component model versus a baseline.

    ``baseline`` is a :class:`LogQuadCoefficients` table or a callable
    ``(q5_0, q45_15 or None, sex) -> 22 five-year probabilities``.
    """
    if isinstance(baseline, LogQuadCoefficients):
        baseline = logquad_baseline(baseline)
    if not callable(baseline):
        raise TypeError("baseline must be Log-Quad coefficients or a callable")
    rows = []
    row_no = 1
    for sex, corpus in ((Sex.FEMALE, corpus_f), (Sex.MALE, corpus_m)):
        if corpus is None or len(corpus) == 0:
            continue
        ours, theirs = [], []
        for mode in (InputMode.CHILD_ONLY, InputMode.CHILD_ADULT):
            ours.append(total_absolute_error(corpus, model, mode, "five_year"))
            theirs.append(baseline_total_absolute_error(corpus, baseline, mode))
        base = row_no
        diff = [t - o for t, o in zip(theirs, ours)]
        pct = [100.0 * d / o if o else 0.0 for d, o in zip(diff, ours)]
        for summary, vals in (
            (model_name, ours),
            (baseline_name, theirs),
            (f"R{base + 1}-R{base}", diff),
            (f"R{base + 2}/R{base} (%)", pct),
        ):
            rows.append(
                {"row": f"R{row_no}", "sex": sex.value, "summary": summary, "C1": vals[0], "C2": vals[1], "C3": vals[1] - vals[0]}
            )
            row_no += 1
    return ComparisonTable(rows=rows)
