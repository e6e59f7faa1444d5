"""Independent reference computations used to derive expected test values.

Nothing here calls into the code under test except where a helper
explicitly needs a model to generate data from (``model_exact_*``).
"""

import math

import numpy as np
from scipy.optimize import brentq, root

from svdcomp.lifetable import Corpus, MortalitySchedule, aggregate_q
from svdcomp.prediction import predict_qx_batch


def gauss_solve(a, b):
    """Solve ``a x = b`` by Gaussian elimination with partial pivoting, in plain Python."""
    n = len(a)
    m = [list(map(float, row)) + [float(rhs)] for row, rhs in zip(a, b)]
    for col in range(n):
        piv = max(range(col, n), key=lambda r: abs(m[r][col]))
        m[col], m[piv] = m[piv], m[col]
        for r in range(col + 1, n):
            f = m[r][col] / m[col][col]
            for c in range(col, n + 1):
                m[r][c] -= f * m[col][c]
    x = [0.0] * n
    for r in range(n - 1, -1, -1):
        x[r] = (m[r][n] - sum(m[r][c] * x[c] for c in range(r + 1, n))) / m[r][r]
    return x


def normal_equations(design, response, intercept=True):
    """OLS coefficients from (X'X) b = X'y, all sums accumulated with math.fsum."""
    rows = [([1.0] if intercept else []) + list(map(float, r)) for r in np.atleast_2d(design)]
    p = len(rows[0])
    xtx = [[math.fsum(r[i] * r[j] for r in rows) for j in range(p)] for i in range(p)]
    xty = [math.fsum(r[i] * y for r, y in zip(rows, response)) for i in range(p)]
    return np.array(gauss_solve(xtx, xty))


def loop_aggregate(qx, start, width):
    surv = 1.0
    for a in range(start, start + width):
        surv *= 1.0 - float(qx[a])
    return 1.0 - surv


def logit_ref(p):
    return math.log(p / (1.0 - p))


def expit_ref(x):
    return 1.0 / (1.0 + math.exp(-x))


def _pred(model, sex, q5, q45=None):
    return predict_qx_batch(q5, q45, sex=sex, model=model)[0]


def _root_near(f, guess):
    """Root of ``f`` in the sign change closest to ``guess`` on a log grid."""
    grid = np.geomspace(guess / 3.0, min(guess * 3.0, 0.95), 81)
    vals = [f(x) for x in grid]
    cands = [i for i in range(80) if vals[i] * vals[i + 1] <= 0]
    if not cands:
        raise ValueError(f"no fixed point near {guess}")
    i = min(cands, key=lambda j: abs(math.log(grid[j] / guess)))
    return brentq(f, grid[i], grid[i + 1], xtol=1e-16, rtol=1e-15)


def model_exact_schedule(model, sex, q5_guess, q45_guess=None):
    """qx whose own 5q0 (and 45q15) reproduce the model's prediction for it.

    With ``q45_guess=None`` the fixed point is in child mortality only and
    found by bracketing; otherwise both indicators are solved for jointly
    on the logit scale. Fixed points are isolated, so the result's
    indicators are near, not at, the guesses.
    """
    if q45_guess is None:
        q5 = _root_near(lambda q5: aggregate_q(_pred(model, sex, q5), 0, 5) - q5, q5_guess)
        return _pred(model, sex, q5)

    def gap(z):
        q5, q45 = expit_ref(z[0]), expit_ref(z[1])
        qx = _pred(model, sex, q5, q45)
        return [aggregate_q(qx, 0, 5) - q5, aggregate_q(qx, 15, 45) - q45]

    sol = root(gap, [logit_ref(q5_guess), logit_ref(q45_guess)], method="hybr", tol=1e-13)
    if max(map(abs, gap(sol.x))) > 1e-13:
        raise ValueError(f"no joint fixed point near ({q5_guess}, {q45_guess}): {sol.message}")
    return _pred(model, sex, expit_ref(sol.x[0]), expit_ref(sol.x[1]))


def model_exact_corpus(model, sex, q5_levels, q45_levels=None):
    if q45_levels is None:
        rows = [model_exact_schedule(model, sex, q5) for q5 in q5_levels]
    else:
        rows = [model_exact_schedule(model, sex, q5, q45) for q5, q45 in zip(q5_levels, q45_levels)]
    return Corpus(
        [MortalitySchedule(sex, "EXACT", 2000 + i, q) for i, q in enumerate(rows)],
        provenance="model-exact",
    )


HMD_HEADER = "   Year      Age        mx        qx    ax        lx        dx        Lx          Tx      ex"


def hmd_text(years, qx_of_year, blank_cells=()):
    """Minimal HMD-shaped text. ``blank_cells`` holds (year, age) pairs written as '.'."""
    lines = ["Testland, Life tables (period 1x1), Females\tLast modified: 01 Jan 2020", "", HMD_HEADER]
    for y in years:
        q = qx_of_year(y)
        for a in range(110):
            cell = "." if (y, a) in blank_cells else f"{q[a]:.5f}"
            lines.append(f"{y:7d} {a:8d}  0.00100 {cell}  0.50 100000  100 99950 7000000 70.00")
        lines.append(f"{y:7d}     110+  1.00000 1.00000  1.00   10   10   10   10  1.00")
    return "\n".join(lines) + "\n"
