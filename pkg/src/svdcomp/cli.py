"""Command-line interface: ``svdcomp calibrate|predict|validate|compare|inspect|interpolate|synth``.

Exit codes are stable: 0 ok, 2 usage, 3 io, 4 parse, 5 numeric.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import logging
import os
import sys
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from svdcomp.calibration import (
    DEFAULT_COMPONENTS,
    DEFAULT_OFFSET,
    calibrate,
    load_model,
    save_model,
)
from svdcomp.errors import CorruptModelError, ModelFormatError, NumericError, ParseError
from svdcomp.lifetable import (
    N_AGES,
    Sex,
    format_hmd_lifetable,
    load_exclusions,
    load_hmd_directory,
)
from svdcomp.logquad import load_logquad_coefficients
from svdcomp.prediction import PredictionRequest, fit_partial_schedule, predict_schedule
from svdcomp.synthetic import synthetic_corpora
from svdcomp.validation import (
    CvDesign,
    InputMode,
    SampleStatus,
    compare_models,
    cross_validate,
    prediction_errors,
    write_reports_csv,
)

logger = logging.getLogger("svdcomp")

EXIT_OK = 0
EXIT_USAGE = 2
EXIT_IO = 3
EXIT_PARSE = 4
EXIT_NUMERIC = 5

ENV_DATA_DIR = "SVDCOMP_DATA_DIR"
ENV_SEED = "SVDCOMP_SEED"


class CliError(Exception):
    def __init__(self, message, code):
        super().__init__(message)
        self.code = code


@dataclass
class CliConfig:
    data_dir: Path | None = None
    exclusions_path: Path | None = None
    offset: float = DEFAULT_OFFSET
    components: int = DEFAULT_COMPONENTS
    seed: int = 0
    output_format: str = "csv"
    synthetic: bool = False

    def __post_init__(self):
        if self.components < 1:
            raise CliError("components must be at least 1", EXIT_USAGE)
        if not np.isfinite(self.offset):
            raise CliError("offset must be finite", EXIT_USAGE)
        if self.output_format not in ("csv", "json"):
            raise CliError("output format must be csv or json", EXIT_USAGE)


def _probability(text):
    try:
        v = float(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"{text!r} is not a number") from None
    if not 0.0 < v < 1.0:
        raise argparse.ArgumentTypeError(f"{text!r} is not a probability strictly between 0 and 1")
    return v


def _fraction_range(text):
    try:
        start, stop, step = (float(x) for x in text.split(":"))
    except ValueError:
        raise argparse.ArgumentTypeError("sweep must look like START:STOP:STEP, e.g. 0.1:0.9:0.2") from None
    if step <= 0:
        raise argparse.ArgumentTypeError("sweep step must be positive")
    n = int(np.floor((stop - start) / step + 1e-9)) + 1
    fractions = [round(start + i * step, 10) for i in range(n)]
    if not fractions or any(not 0.0 < f < 1.0 for f in fractions):
        raise argparse.ArgumentTypeError("sweep fractions must lie strictly between 0 and 1")
    return fractions


def _config(args):
    """Merge a JSON config file, environment overrides and explicit flags (flags win)."""
    values = {}
    if getattr(args, "config", None):
        try:
            values.update(json.loads(Path(args.config).read_text()))
        except OSError as exc:
            raise CliError(f"cannot read config: {exc}", EXIT_IO) from None
        except json.JSONDecodeError as exc:
            raise CliError(f"config is not valid JSON: {exc}", EXIT_PARSE) from None
    if os.environ.get(ENV_DATA_DIR):
        values["data_dir"] = os.environ[ENV_DATA_DIR]
    if os.environ.get(ENV_SEED):
        try:
            values["seed"] = int(os.environ[ENV_SEED])
        except ValueError:
            raise CliError(f"{ENV_SEED} must be an integer", EXIT_USAGE) from None
    for key in ("data_dir", "exclusions_path", "offset", "components", "seed", "output_format", "synthetic"):
        v = getattr(args, key, None)
        if v is not None and v is not False:
            values[key] = v
    known = set(CliConfig.__dataclass_fields__)
    unknown = set(values) - known
    if unknown:
        raise CliError(f"unknown config keys: {', '.join(sorted(unknown))}", EXIT_USAGE)
    for key in ("data_dir", "exclusions_path"):
        if values.get(key) is not None:
            values[key] = Path(values[key])
    return CliConfig(**values)


def _load_corpora(cfg):
    if cfg.synthetic:
        return synthetic_corpora()
    if cfg.data_dir is None:
        raise CliError(f"no input data: pass --data-dir, set {ENV_DATA_DIR}, or use --synthetic", EXIT_USAGE)
    if not cfg.data_dir.is_dir():
        raise CliError(f"no input data: {cfg.data_dir} is not a directory", EXIT_IO)
    try:
        rules = load_exclusions(cfg.exclusions_path)
    except OSError as exc:
        raise CliError(f"cannot read exclusions: {exc}", EXIT_IO) from None
    diagnostics = []
    corpora = load_hmd_directory(cfg.data_dir, rules=rules, diagnostics=diagnostics)
    for msg in diagnostics:
        logger.info(msg)
    corpora = {sex: c for sex, c in corpora.items() if len(c) > 0}
    if not corpora:
        raise CliError(f"no input data: no parseable life tables under {cfg.data_dir}", EXIT_IO)
    return corpora


def _load_model(path):
    try:
        return load_model(path)
    except OSError as exc:
        raise CliError(f"cannot read model: {exc}", EXIT_IO) from None


def _emit(rows, fmt, out, header=None):
    if fmt == "json":
        json.dump(rows, out, indent=1)
        out.write("\n")
        return
    w = csv.writer(out, lineterminator="\n")
    keys = header or list(rows[0])
    w.writerow(keys)
    for r in rows:
        w.writerow([f"{r[k]:.8g}" if isinstance(r[k], float) else r[k] for k in keys])


# ---------------------------------------------------------------------------
# commands
# ---------------------------------------------------------------------------


def cmd_calibrate(args, out):
    cfg = _config(args)
    corpora = _load_corpora(cfg)
    model = calibrate(
        corpora.get(Sex.FEMALE), corpora.get(Sex.MALE), offset=cfg.offset, c=cfg.components
    )
    try:
        save_model(model, args.output)
    except OSError as exc:
        raise CliError(f"cannot write model: {exc}", EXIT_IO) from None
    rows = []
    for sex, sm in model.sexes.items():
        cs = sm.components
        rows.append({"sex": sex.value, "quantity": "n_schedules", "value": sm.n_schedules})
        for i, frac in enumerate(cs.explained_fractions, start=1):
            rows.append({"sex": sex.value, "quantity": f"explained_fraction_{i}", "value": float(frac)})
        for i, r2 in enumerate(sm.weights.r_squared, start=1):
            rows.append({"sex": sex.value, "quantity": f"r_squared_v{i}", "value": float(r2)})
        rows.append({"sex": sex.value, "quantity": "r_squared_adult", "value": sm.adult.model.r_squared})
        rows.append({"sex": sex.value, "quantity": "r_squared_infant", "value": sm.infant.model.r_squared})
    _emit(rows, cfg.output_format, out)
    return EXIT_OK


def cmd_predict(args, out):
    model = _load_model(args.model)
    req = PredictionRequest(
        sex=args.sex,
        q5_0=args.q5,
        q45_15=args.q45,
        replace_infant=not args.no_infant,
        use_smoothed=args.smoothed,
    )
    pred = predict_schedule(req, model)
    if args.format == "json":
        json.dump(
            {
                "sex": req.sex.value,
                "q5_0": req.q5_0,
                "q45_15_used": pred.q45_15_used,
                "q45_15_source": pred.q45_15_source,
                "weights_used": [float(w) for w in pred.weights_used],
                "infant_replaced": pred.infant_replaced,
                "warnings": list(pred.warnings),
                "qx": [float(q) for q in pred.qx],
            },
            out,
            indent=1,
        )
        out.write("\n")
    else:
        _emit([{"age": a, "qx": float(pred.qx[a])} for a in range(N_AGES)], "csv", out)
        print(
            f"# q45_15_source={pred.q45_15_source} q45_15_used={pred.q45_15_used:.8g} "
            f"weights_used={','.join(f'{w:.8g}' for w in pred.weights_used)}",
            file=sys.stderr,
        )
    for note in pred.warnings:
        print(f"warning: {note}", file=sys.stderr)
    return EXIT_OK


def cmd_interpolate(args, out):
    model = _load_model(args.model)
    try:
        with open(args.observed, newline="") as fh:
            observed = {int(r["age"]): float(r["qx"]) for r in csv.DictReader(fh)}
    except OSError as exc:
        raise CliError(f"cannot read observations: {exc}", EXIT_IO) from None
    except (KeyError, ValueError) as exc:
        raise CliError(f"observations need numeric age,qx columns: {exc}", EXIT_PARSE) from None
    pred = fit_partial_schedule(observed, args.sex, model, use_smoothed=args.smoothed)
    _emit([{"age": a, "qx": float(pred.qx[a])} for a in range(N_AGES)], args.format, out)
    return EXIT_OK


def _summary_rows(fraction, result):
    rows = []
    for s in result.samples:
        if s.failed:
            rows.append({"fraction": fraction, "sample": s.index, "sex": "", "sample_status": "",
                         "n_schedules": 0, "overall_median": float("nan"), "overall_iqr": float("nan"),
                         "total_absolute_error": float("nan"), "failed": s.error})
            continue
        for sex, by_status in s.reports.items():
            for status, rep in by_status.items():
                rows.append({"fraction": fraction, "sample": s.index, "sex": sex.value,
                             "sample_status": status.value, "n_schedules": rep.n_schedules,
                             "overall_median": rep.overall_median, "overall_iqr": rep.overall_iqr,
                             "total_absolute_error": rep.total_absolute_error, "failed": ""})
    return rows


def cmd_validate(args, out):
    cfg = _config(args)
    corpora = _load_corpora(cfg)
    out_dir = Path(args.out)
    try:
        out_dir.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise CliError(f"cannot create output directory: {exc}", EXIT_IO) from None
    mode = InputMode(args.input_mode)

    if args.samples is None and args.sweep is None:
        if args.model is None:
            raise CliError("validate needs --model, or --samples/--sweep for cross-validation", EXIT_USAGE)
        model = _load_model(args.model)
        reports = [prediction_errors(c, model, mode) for sex, c in corpora.items() if sex in model.sexes]
        write_reports_csv(reports, out_dir / "aggregate.csv")
        rows = [{"sex": r.sex.value, "n_schedules": r.n_schedules, "overall_median": r.overall_median,
                 "overall_iqr": r.overall_iqr, "total_absolute_error": r.total_absolute_error} for r in reports]
        _emit(rows, cfg.output_format, out)
        return EXIT_OK

    n_samples = args.samples if args.samples is not None else 50
    fractions = args.sweep if args.sweep is not None else [args.fraction]
    summary = []
    n_failed = 0
    for fraction in fractions:
        design = CvDesign(n_samples=n_samples, sample_fraction=fraction, seed=cfg.seed, stratify=args.stratify)
        result = cross_validate(
            corpora.get(Sex.FEMALE), corpora.get(Sex.MALE), design,
            input_mode=mode, offset=cfg.offset, c=cfg.components,
            keep_errors=True, workers=args.workers,
        )
        n_failed += result.n_failed
        target = out_dir / f"fraction_{fraction:.2f}" if args.sweep is not None else out_dir
        target.mkdir(parents=True, exist_ok=True)
        for s in result.samples:
            if not s.failed:
                write_reports_csv(
                    [rep for by_status in s.reports.values() for rep in by_status.values()],
                    target / f"sample_{s.index:03d}.csv",
                )
        pooled = []
        if result.n_failed < len(result.samples):
            for sex in result.samples[0].in_sample:
                for status in (SampleStatus.IN_SAMPLE, SampleStatus.OUT_OF_SAMPLE):
                    pooled.append(result.pooled(sex, status))
            write_reports_csv(pooled, target / "aggregate.csv")
        summary.extend(_summary_rows(fraction, result))
    with (out_dir / "summary.csv").open("w") as fh:
        _emit(summary, "csv", fh)
    print(f"{len(fractions)} fraction(s) x {n_samples} sample(s); {n_failed} failed; reports in {out_dir}", file=out)
    return EXIT_OK


def cmd_compare(args, out):
    cfg = _config(args)
    model = _load_model(args.model)
    try:
        coeffs = load_logquad_coefficients(args.logquad)
    except OSError as exc:
        raise CliError(f"cannot read Log-Quad coefficients: {exc}", EXIT_IO) from None
    corpora = _load_corpora(cfg)
    table = compare_models(corpora.get(Sex.FEMALE), corpora.get(Sex.MALE), model, coeffs)
    if cfg.output_format == "json":
        json.dump(table.rows, out, indent=1)
        out.write("\n")
    else:
        table.write_csv(out)
    return EXIT_OK


def cmd_inspect(args, out):
    model = _load_model(args.model)
    info = {
        "format_version": model.format_version,
        "offset": model.offset,
        "n_components": model.n_components,
        "n_schedules": model.n_schedules,
        "corpus_fingerprint": model.corpus_fingerprint,
        "sexes": {},
    }
    for sex, sm in model.sexes.items():
        info["sexes"][sex.value] = {
            "n_schedules": sm.n_schedules,
            "q5_0_range": list(sm.q5_0_range),
            "singular_values": [float(s) for s in sm.components.singular_values],
            "explained_fractions": [float(f) for f in sm.components.explained_fractions],
            "weight_coefficients": [[float(c) for c in m.coefficients] for m in sm.weights.models],
            "weight_r_squared": [float(r) for r in sm.weights.r_squared],
            "adult_coefficients": [float(c) for c in sm.adult.model.coefficients],
            "adult_r_squared": sm.adult.model.r_squared,
            "infant_coefficients": [float(c) for c in sm.infant.model.coefficients],
            "infant_r_squared": sm.infant.model.r_squared,
        }
    json.dump(info, out, indent=1)
    out.write("\n")
    if args.components:
        c = model.n_components
        header = ["sex", "age"] + [f"component_{i}" for i in range(1, c + 1)] + [f"smoothed_{i}" for i in range(1, c + 1)]
        try:
            with open(args.components, "w", newline="") as fh:
                w = csv.writer(fh, lineterminator="\n")
                w.writerow(header)
                for sex, sm in model.sexes.items():
                    cs = sm.components
                    for a in range(N_AGES):
                        w.writerow([sex.value, a]
                                   + [repr(float(x)) for x in cs.components[:, a]]
                                   + [repr(float(x)) for x in cs.smoothed_components[:, a]])
        except OSError as exc:
            raise CliError(f"cannot write components: {exc}", EXIT_IO) from None
    return EXIT_OK


def cmd_synth(args, out):
    target = Path(args.out)
    try:
        target.mkdir(parents=True, exist_ok=True)
        for sex, corpus in synthetic_corpora(noise=args.noise, seed=args.seed or 0).items():
            tag = "f" if sex is Sex.FEMALE else "m"
            pops = sorted({s.population_code for s in corpus})
            for pop in pops:
                text = format_hmd_lifetable(
                    [s for s in corpus if s.population_code == pop],
                    title=f"{pop} (synthetic), Life tables (period 1x1), {sex.value.title()}s",
                )
                (target / f"{pop}.{tag}ltper_1x1.txt").write_text(text)
    except OSError as exc:
        raise CliError(f"cannot write synthetic corpus: {exc}", EXIT_IO) from None
    print(f"wrote synthetic HMD-format tables to {target}", file=out)
    return EXIT_OK


# ---------------------------------------------------------------------------
# parser
# ---------------------------------------------------------------------------


def _add_data_args(p):
    p.add_argument("--config", help="JSON file with data_dir, exclusions_path, offset, components, seed, output_format")
    p.add_argument("--data-dir", dest="data_dir", help=f"directory of HMD 1x1 life tables (env {ENV_DATA_DIR})")
    p.add_argument("--synthetic", action="store_true", help="use the bundled synthetic corpus")
    p.add_argument("--exclusions", dest="exclusions_path", help="exclusion rules JSON (default: bundled list)")
    p.add_argument("--offset", type=float, help=f"logit offset (default {DEFAULT_OFFSET:g})")
    p.add_argument("--components", type=int, help=f"components kept (default {DEFAULT_COMPONENTS})")
    p.add_argument("--format", dest="output_format", choices=("csv", "json"))


def build_parser():
    parser = argparse.ArgumentParser(prog="svdcomp", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("calibrate", help="calibrate a model and write the artifact")
    _add_data_args(p)
    p.add_argument("-o", "--output", required=True, help="model artifact path")
    p.set_defaults(func=cmd_calibrate)

    p = sub.add_parser("predict", help="predict a single-year schedule")
    p.add_argument("--model", required=True)
    p.add_argument("--sex", required=True, type=Sex.parse)
    p.add_argument("--q5", required=True, type=_probability, help="child mortality 5q0")
    p.add_argument("--q45", type=_probability, help="adult mortality 45q15 (predicted when omitted)")
    p.add_argument("--no-infant", action="store_true", help="keep the component value at age 0")
    p.add_argument("--smoothed", action="store_true", help="use kernel-smoothed components")
    p.add_argument("--format", choices=("csv", "json"), default="csv")
    p.set_defaults(func=cmd_predict)

    p = sub.add_parser("interpolate", help="complete a partially observed schedule")
    p.add_argument("--model", required=True)
    p.add_argument("--sex", required=True, type=Sex.parse)
    p.add_argument("--observed", required=True, help="CSV with age,qx columns")
    p.add_argument("--smoothed", action="store_true")
    p.add_argument("--format", choices=("csv", "json"), default="csv")
    p.set_defaults(func=cmd_interpolate)

    p = sub.add_parser("validate", help="prediction errors and cross-validation")
    _add_data_args(p)
    p.add_argument("--model", help="score this model on the corpus (no resampling)")
    p.add_argument("--samples", type=int, help="number of random samples")
    p.add_argument("--fraction", type=float, default=0.5, help="sample fraction (default 0.5)")
    p.add_argument("--sweep", type=_fraction_range, help="fractions START:STOP:STEP")
    p.add_argument("--seed", type=int, help=f"random seed (env {ENV_SEED})")
    p.add_argument("--stratify", action="store_true", help="sample within each population")
    p.add_argument("--input-mode", choices=[m.value for m in InputMode], default=InputMode.CHILD_ONLY.value)
    p.add_argument("--workers", type=int, default=1)
    p.add_argument("--out", required=True, help="output directory for report CSVs")
    p.set_defaults(func=cmd_validate)

    p = sub.add_parser("compare", help="total absolute error against the Log-Quad baseline")
    _add_data_args(p)
    p.add_argument("--model", required=True)
    p.add_argument("--logquad", required=True, help="coefficient CSV (sex,age_group_start,n,a,b,c,v)")
    p.set_defaults(func=cmd_compare)

    p = sub.add_parser("inspect", help="print model metadata and coefficients")
    p.add_argument("--model", required=True)
    p.add_argument("--components", help="also write the components as CSV here")
    p.set_defaults(func=cmd_inspect)

    p = sub.add_parser("synth", help="write the synthetic corpus as HMD-format files")
    p.add_argument("--out", required=True)
    p.add_argument("--noise", type=float, default=0.0)
    p.add_argument("--seed", type=int)
    p.set_defaults(func=cmd_synth)
    return parser


def main(argv=None, out=None):
    out = sys.stdout if out is None else out
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s: %(message)s")
    buffer = io.StringIO()
    try:
        code = args.func(args, buffer)
    except CliError as exc:
        print(f"svdcomp: {exc}", file=sys.stderr)
        return exc.code
    except ParseError as exc:
        print(f"svdcomp: parse error: {exc}", file=sys.stderr)
        return EXIT_PARSE
    except (CorruptModelError, ModelFormatError) as exc:
        print(f"svdcomp: model error: {exc}", file=sys.stderr)
        return EXIT_PARSE
    except NumericError as exc:
        print(f"svdcomp: numeric error: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except ValueError as exc:
        print(f"svdcomp: usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except OSError as exc:
        print(f"svdcomp: io error: {exc}", file=sys.stderr)
        return EXIT_IO
    out.write(buffer.getvalue())
    return code


if __name__ == "__main__":
    sys.exit(main())
