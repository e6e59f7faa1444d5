"""Log-quadratic baseline: ``log(m_x) = a_x + b_x h + c_x h^2 + v_x k`` with ``h = log(5q0)``.

Coefficients are read from an external CSV with columns
``sex, age_group_start, n, a, b, c, v``; nothing here re-estimates them.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy.optimize import brentq

from svdcomp.errors import NumericError, ParseError
from svdcomp.lifetable import N_AGES, Sex

K_BRACKET = (-10.0, 10.0)
K_BRACKET_LIMIT = 1e4
Q45_TOL = 1e-8

# separation factors for converting m to q: ages 0 and 1-4 follow common
# demographic practice, everything else uses the interval midpoint
DEFAULT_AX = {0: 0.1, 1: 1.5}

FIVE_YEAR_STARTS = np.arange(0, N_AGES, 5)


@dataclass(frozen=True)
class SexCoefficients:
    age_start: np.ndarray
    width: np.ndarray
    a: np.ndarray
    b: np.ndarray
    c: np.ndarray
    v: np.ndarray


@dataclass(frozen=True)
class LogQuadCoefficients:
    sexes: dict

    def __getitem__(self, sex):
        sex = Sex.parse(sex)
        try:
            return self.sexes[sex]
        except KeyError:
            raise ValueError(f"no Log-Quad coefficients for {sex.value}") from None


@dataclass(frozen=True)
class LogQuadSchedule:
    age_start: np.ndarray
    width: np.ndarray
    nqx: np.ndarray
    k: float

    def q45_15(self):
        return _q45_15(self.age_start, self.width, self.nqx)

    def five_year(self):
        """Probabilities on the 0-4, 5-9, ..., 105-109 grid (0 and 1-4 merged)."""
        out = np.empty(FIVE_YEAR_STARTS.size)
        for g, start in enumerate(FIVE_YEAR_STARTS):
            sel = (self.age_start >= start) & (self.age_start < start + 5)
            if not sel.any():
                raise ValueError(f"Log-Quad table has no group starting in [{start}, {start + 5})")
            out[g] = 1.0 - np.prod(1.0 - self.nqx[sel])
        return out


def load_logquad_coefficients(path):
    path = Path(path)
    rows = {}
    with path.open(newline="") as fh:
        reader = csv.DictReader(fh)
        need = {"sex", "age_group_start", "n", "a", "b", "c", "v"}
        if reader.fieldnames is None or not need.issubset(reader.fieldnames):
            raise ParseError(f"{path}: Log-Quad CSV needs columns {sorted(need)}")
        for line in reader:
            try:
                sex = Sex.parse(line["sex"])
                rows.setdefault(sex, []).append(
                    tuple(float(line[k]) for k in ("age_group_start", "n", "a", "b", "c", "v"))
                )
            except ValueError as exc:
                raise ParseError(f"{path}: bad row {line}: {exc}") from None
    return coefficients_from_rows(rows)


def coefficients_from_rows(rows):
    sexes = {}
    for sex, entries in rows.items():
        arr = np.array(sorted(entries))
        starts, widths = arr[:, 0], arr[:, 1]
        if np.any(starts[1:] != starts[:-1] + widths[:-1]):
            raise ValueError(f"{Sex.parse(sex).value} Log-Quad age groups are not contiguous")
        sexes[Sex.parse(sex)] = SexCoefficients(
            age_start=starts.astype(int),
            width=widths.astype(int),
            a=arr[:, 2],
            b=arr[:, 3],
            c=arr[:, 4],
            v=arr[:, 5],
        )
    return LogQuadCoefficients(sexes=sexes)


def write_logquad_coefficients(coeffs, path):
    with Path(path).open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["sex", "age_group_start", "n", "a", "b", "c", "v"])
        for sex, sc in coeffs.sexes.items():
            for i in range(sc.age_start.size):
                w.writerow([sex.value, int(sc.age_start[i]), int(sc.width[i])] + [repr(float(x[i])) for x in (sc.a, sc.b, sc.c, sc.v)])


def m_to_q(m, width, age_start, ax=None):
    """``nqx = n m / (1 + (n - nax) m)``, capped at 1."""
    width = np.asarray(width, dtype=float)
    if ax is None:
        ax = np.array([DEFAULT_AX.get(int(s), w / 2.0) for s, w in zip(np.atleast_1d(age_start), np.atleast_1d(width))])
    q = width * m / (1.0 + (width - ax) * m)
    return np.minimum(q, 1.0)


def _q45_15(age_start, width, nqx):
    sel = (age_start >= 15) & (age_start + width <= 60)
    covered = int(width[sel].sum())
    if covered != 45:
        raise ValueError("Log-Quad age groups do not tile ages 15-59")
    return 1.0 - np.prod(1.0 - nqx[sel])


def _schedule(q5_0, k, sc, ax):
    h = np.log(q5_0)
    m = np.exp(sc.a + sc.b * h + sc.c * h * h + sc.v * k)
    return m_to_q(m, sc.width, sc.age_start, ax)


def logquad_predict(q5_0, q45_15, sex, coeffs, ax=None):
    """Five-year (plus 0 and 1-4) schedule of ``nqx``.

    Without ``q45_15`` the correction term is switched off (``k = 0``);
    otherwise ``k`` is found by bracketing and Brent's method so the
    schedule's 45q15 matches the input within ``1e-8``.
    """
    if not 0.0 < q5_0 < 1.0:
        raise ValueError("q5_0 must lie strictly between 0 and 1")
    sc = coeffs[sex]
    if q45_15 is None:
        return LogQuadSchedule(sc.age_start, sc.width, _schedule(q5_0, 0.0, sc, ax), 0.0)
    if not 0.0 < q45_15 < 1.0:
        raise ValueError("q45_15 must lie strictly between 0 and 1")

    def gap(k):
        return _q45_15(sc.age_start, sc.width, _schedule(q5_0, k, sc, ax)) - q45_15

    lo, hi = K_BRACKET
    while gap(lo) * gap(hi) > 0:
        if hi - lo > 2 * K_BRACKET_LIMIT:
            raise NumericError(
                f"could not bracket k for q45_15={q45_15:g}; searched [{lo:g}, {hi:g}]"
            )
        lo, hi = 2.0 * lo, 2.0 * hi
    k = brentq(gap, lo, hi, xtol=1e-14, rtol=4 * np.finfo(float).eps, maxiter=500)
    nqx = _schedule(q5_0, k, sc, ax)
    if abs(_q45_15(sc.age_start, sc.width, nqx) - q45_15) > Q45_TOL:
        raise NumericError(f"k search did not reach the 45q15 tolerance in [{lo:g}, {hi:g}]")
    return LogQuadSchedule(sc.age_start, sc.width, nqx, float(k))
