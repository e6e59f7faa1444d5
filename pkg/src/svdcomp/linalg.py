"""Dense SVD and least squares used by calibration.

The SVD is a one-sided (Hestenes) Jacobi iteration run on the triangular
factor of a Householder QR, so the expensive part works on a square
``min(m, n)`` matrix regardless of how wide the calibration matrix is.
Column pairs are rotated in round-robin order, ``n/2`` disjoint pairs at a
time, which vectorises each step.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from svdcomp.errors import NumericError, RankDeficientError

MAX_SWEEPS = 100
ORTHO_TOL = 1e-12
_EPS = np.finfo(float).eps


@dataclass(frozen=True)
class SvdResult:
    """Leading ``k`` singular triplets of a matrix.

    ``u`` is ``rows x k``, ``v`` is ``cols x k``, ``s`` is descending.
    Columns of ``v`` whose singular value is numerically zero are set to
    zero: the coordinates of the data along a null direction are 0/0 and
    reporting them as exact zeros keeps rank-deficient weights clean. ``u``
    stays a full orthonormal set.
    """

    u: np.ndarray
    s: np.ndarray
    v: np.ndarray

    @property
    def k(self):
        return self.s.shape[0]

    @property
    def rank(self):
        return int(np.count_nonzero(np.any(self.v != 0.0, axis=0)))

    def reconstruct(self, k=None):
        k = self.k if k is None else k
        return (self.u[:, :k] * self.s[:k]) @ self.v[:, :k].T


@dataclass(frozen=True)
class OlsFit:
    """Least-squares fit; ``coefficients`` lead with the intercept when one was fitted."""

    coefficients: np.ndarray
    r_squared: float
    residual_std_error: float
    n_obs: int
    include_intercept: bool
    residuals: np.ndarray

    def predict(self, design):
        x = np.atleast_2d(np.asarray(design, dtype=float))
        if self.include_intercept:
            return self.coefficients[0] + x @ self.coefficients[1:]
        return x @ self.coefficients


def householder_qr(a):
    """Thin QR of a tall matrix: ``a = q @ r`` with ``q`` m x n, ``r`` n x n upper-triangular."""
    r = np.array(a, dtype=float, copy=True)
    m, n = r.shape
    if m < n:
        raise ValueError("householder_qr needs rows >= cols")
    reflectors = []
    for j in range(n):
        x = r[j:, j]
        norm_x = np.linalg.norm(x)
        if norm_x == 0.0:
            reflectors.append(None)
            continue
        alpha = -norm_x if x[0] >= 0 else norm_x
        v = x.copy()
        v[0] -= alpha
        v /= np.linalg.norm(v)
        r[j:, j:] -= 2.0 * np.outer(v, v @ r[j:, j:])
        r[j + 1 :, j] = 0.0
        reflectors.append(v)
    q = np.eye(m, n)
    for j in range(n - 1, -1, -1):
        v = reflectors[j]
        if v is None:
            continue
        q[j:, :] -= 2.0 * np.outer(v, v @ q[j:, :])
    return q, np.triu(r[:n, :])


def _round_robin(n):
    """Rounds of disjoint index pairs covering every pair of ``range(n)`` once (n even)."""
    players = list(range(n))
    rounds = []
    for _ in range(n - 1):
        half = n // 2
        p = np.array(players[:half])
        q = np.array(players[half:][::-1])
        rounds.append((np.minimum(p, q), np.maximum(p, q)))
        players = [players[0]] + [players[-1]] + players[1:-1]
    return rounds


def _jacobi(r):
    """One-sided Jacobi on a square matrix: returns ``w`` (orthogonal columns) and ``v``.

    ``r @ v = w`` with ``v`` orthogonal; the column norms of ``w`` are the
    singular values.
    """
    n = r.shape[1]
    pad = n % 2
    g = np.zeros((r.shape[0], n + pad))
    g[:, :n] = r
    v = np.eye(n + pad)
    scale = np.linalg.norm(r)
    if scale == 0.0:
        return g[:, :n], v[:n, :n]
    negligible = (n * _EPS * scale) ** 2
    rounds = _round_robin(n + pad)
    for _sweep in range(MAX_SWEEPS):
        rotated = False
        for p, q in rounds:
            gp, gq = g[:, p], g[:, q]
            alpha = np.einsum("ij,ij->j", gp, gp)
            beta = np.einsum("ij,ij->j", gq, gq)
            gamma = np.einsum("ij,ij->j", gp, gq)
            active = (
                (alpha > negligible)
                & (beta > negligible)
                & (np.abs(gamma) > ORTHO_TOL * np.sqrt(alpha * beta))
            )
            if not active.any():
                continue
            rotated = True
            p, q = p[active], q[active]
            alpha, beta, gamma = alpha[active], beta[active], gamma[active]
            zeta = (beta - alpha) / (2.0 * gamma)
            t = np.where(zeta >= 0, 1.0, -1.0) / (np.abs(zeta) + np.sqrt(1.0 + zeta * zeta))
            c = 1.0 / np.sqrt(1.0 + t * t)
            s = c * t
            gp, gq = g[:, p], g[:, q]
            g[:, p] = c * gp - s * gq
            g[:, q] = s * gp + c * gq
            vp, vq = v[:, p], v[:, q]
            v[:, p] = c * vp - s * vq
            v[:, q] = s * vp + c * vq
        if not rotated:
            return g[:n, :n], v[:n, :n]
    raise NumericError(f"Jacobi SVD did not converge within {MAX_SWEEPS} sweeps")


def _complete_columns(basis, keep):
    """Replace columns of ``basis`` not flagged in ``keep`` with an orthonormal completion."""
    m, k = basis.shape
    out = basis.copy()
    good = [out[:, j] for j in range(k) if keep[j]]
    candidates = iter(np.eye(m))
    for j in range(k):
        if keep[j]:
            continue
        while True:
            e = next(candidates)
            for _ in range(2):
                for b in good:
                    e = e - (b @ e) * b
            nrm = np.linalg.norm(e)
            if nrm > 0.5:
                break
        out[:, j] = e / nrm
        good.append(out[:, j])
    return out


def _svd_tall(a):
    """Full thin SVD of a tall matrix; returns (u m x n, s n, v n x n), unsorted."""
    q, r = householder_qr(a)
    w, v = _jacobi(r)
    s = np.linalg.norm(w, axis=0)
    nonzero = s > 0.0
    w_unit = np.zeros_like(w)
    w_unit[:, nonzero] = w[:, nonzero] / s[nonzero]
    return q, w_unit, s, v, nonzero


def svd(x, k=None):
    """Leading ``k`` singular triplets of ``x``.

    Signs are normalised pairwise: the largest-magnitude entry of ``u_1`` is
    negative and that of every later ``u_i`` positive.

    Raises
    ------
    ValueError
        Non-finite input or ``k`` outside ``1..min(rows, cols)``.
    NumericError
        The Jacobi iteration did not converge.
    """
    x = np.asarray(x, dtype=float)
    if x.ndim != 2 or x.size == 0:
        raise ValueError("svd needs a non-empty 2-D matrix")
    if not np.all(np.isfinite(x)):
        raise ValueError("svd input contains non-finite values")
    m, n = x.shape
    full = min(m, n)
    k = full if k is None else int(k)
    if not 1 <= k <= full:
        raise ValueError(f"k must lie in 1..{full}, got {k}")

    transposed = m < n
    a = x.T if transposed else x
    q, w_unit, s, jv, nonzero = _svd_tall(a)
    order = np.lexsort((np.arange(s.size), -s))
    s = s[order]
    w_unit = w_unit[:, order]
    jv = jv[:, order]
    nonzero = nonzero[order]

    tol = max(m, n) * _EPS * (s[0] if s.size else 0.0)
    significant = s > tol
    w_unit = _complete_columns(w_unit, nonzero & significant)
    left_tall = q @ w_unit
    if transposed:
        u, v = jv, left_tall
    else:
        u, v = left_tall, jv

    u = np.array(u[:, :k])
    v = np.array(v[:, :k])
    s = np.array(s[:k])
    v[:, ~significant[:k]] = 0.0

    for i in range(k):
        j = int(np.argmax(np.abs(u[:, i])))
        want_negative = i == 0
        if (u[j, i] < 0) != want_negative:
            u[:, i] = -u[:, i]
            v[:, i] = -v[:, i]
    u[u == 0.0] = 0.0  # no negative zeros in the artifact
    v[v == 0.0] = 0.0
    return SvdResult(u=u, s=s, v=v)


def _back_substitute(r, b):
    n = r.shape[0]
    x = np.zeros(n)
    for i in range(n - 1, -1, -1):
        x[i] = (b[i] - r[i, i + 1 :] @ x[i + 1 :]) / r[i, i]
    return x


def ols_fit(design, response, include_intercept=True):
    """Ordinary least squares via Householder QR.

    Parameters
    ----------
    design : array_like, shape (n, p)
    response : array_like, shape (n,)
    include_intercept : bool
        Prepend a column of ones. R-squared is then measured against the
        mean; without an intercept it is measured against zero.

    Raises
    ------
    RankDeficientError
        ``.column`` names the offending column of ``design`` (0-based; the
        intercept, when present, is ``-1``).
    """
    x = np.asarray(design, dtype=float)
    if x.ndim == 1:
        x = x[:, None]
    y = np.asarray(response, dtype=float)
    if y.ndim != 1 or y.shape[0] != x.shape[0]:
        raise ValueError("design rows must match response length")
    if not (np.all(np.isfinite(x)) and np.all(np.isfinite(y))):
        raise ValueError("ols_fit input contains non-finite values")
    if include_intercept:
        x = np.column_stack([np.ones(x.shape[0]), x])
    n, p = x.shape
    if n < p:
        raise ValueError(f"need at least as many observations as coefficients ({n} < {p})")

    q, r = householder_qr(x)
    col_norms = np.linalg.norm(x, axis=0)
    rtol = max(n, p) * _EPS * 16
    for j in range(p):
        if col_norms[j] == 0.0 or abs(r[j, j]) <= rtol * col_norms[j]:
            idx = j - 1 if include_intercept else j
            what = "intercept" if idx < 0 else f"column {idx}"
            raise RankDeficientError(f"design is rank deficient at {what}", column=idx)

    beta = _back_substitute(r, q.T @ y)
    resid = y - x @ beta
    ssr = float(resid @ resid)
    if include_intercept:
        centred = y - y.mean()
        sst = float(centred @ centred)
    else:
        sst = float(y @ y)
    if sst > 0.0:
        r2 = min(max(1.0 - ssr / sst, 0.0), 1.0)
    else:
        r2 = 1.0 if ssr <= (_EPS * n) ** 2 else 0.0
    df = n - p
    rse = float(np.sqrt(ssr / df)) if df > 0 else float("nan")
    return OlsFit(
        coefficients=beta,
        r_squared=r2,
        residual_std_error=rse,
        n_obs=n,
        include_intercept=include_intercept,
        residuals=resid,
    )
