"""Bundled synthetic corpus for exercising the pipeline without the HMD archive.

Schedules are relational transforms of a Gompertz-Makeham standard with a
childhood term. On the logit scale each schedule is

    logit(qx) = alpha + beta * Y(x) + gamma * H(x) + delta * O(x)

where ``Y`` is the logit of the standard, ``H`` an adult excess bump
and ``O`` an old-age deceleration. ``alpha`` runs over a mortality-level
grid and the adult excess ``gamma`` over a second grid, so child and adult
mortality vary partly independently. With ``noise=0`` the logit matrix has
rank 4 and contains the constant vector in its column space.
"""

from __future__ import annotations

import numpy as np

from svdcomp.lifetable import AGES, Corpus, MortalitySchedule, Sex, expit, logit

N_LEVELS = 30
ADULT_VARIANTS = (-1.0, -0.5, 0.0, 0.5, 1.0)
FIRST_YEAR = 1900

_SEX_SHIFT = {Sex.FEMALE: 0.0, Sex.MALE: 0.18}
_SEX_HUMP = {Sex.FEMALE: 0.3, Sex.MALE: 0.5}


def gompertz_makeham_standard(makeham=5e-4, gompertz=2.5e-5, slope=0.1, child=0.08, child_decay=1.6):
    """Single-year qx from the hazard ``A + B e^{theta x} + C e^{-kappa x}``."""
    x0 = AGES.astype(float)
    x1 = x0 + 1.0
    cum = (
        makeham * (x1 - x0)
        + gompertz / slope * (np.exp(slope * x1) - np.exp(slope * x0))
        + child / child_decay * (np.exp(-child_decay * x0) - np.exp(-child_decay * x1))
    )
    return 1.0 - np.exp(-cum)


def age_patterns():
    """The four logit-scale age patterns (constant, standard, adult hump, old-age)."""
    x = AGES.astype(float)
    standard = logit(gompertz_makeham_standard())
    hump = np.exp(-0.5 * ((x - 38.0) / 12.0) ** 2)
    old = 1.0 / (1.0 + np.exp(-(x - 88.0) / 6.0))
    return np.vstack([np.ones_like(x), standard, hump, old])


def synthetic_parameters(sex, n_levels=N_LEVELS, variants=ADULT_VARIANTS):
    """Array of (alpha, beta, gamma, delta) rows, levels varying fastest within a variant."""
    sex = Sex.parse(sex)
    levels = np.linspace(-1.5, 1.5, n_levels)
    rows = []
    for g in variants:
        for lev in levels:
            alpha = lev + _SEX_SHIFT[sex]
            beta = 1.0 - 0.07 * lev
            gamma = _SEX_HUMP[sex] * (1.0 + g) + 0.15 * lev
            delta = -0.25 - 0.12 * lev**2 + 0.1 * g
            rows.append((alpha, beta, gamma, delta))
    return np.array(rows)


def synthetic_corpus(sex=Sex.FEMALE, n_levels=N_LEVELS, variants=ADULT_VARIANTS, noise=0.0, seed=0):
    """Synthetic corpus for one sex.

    Each adult-mortality variant is a pseudo-population ``SYN1``..``SYN5``
    whose "years" index the mortality level. ``noise`` adds independent
    Gaussian perturbations (logit scale, standard deviation ``noise``).
    """
    sex = Sex.parse(sex)
    params = synthetic_parameters(sex, n_levels, variants)
    logits = params @ age_patterns()
    if noise:
        rng = np.random.default_rng(seed)
        logits = logits + rng.normal(scale=noise, size=logits.shape)
    qx = expit(logits)
    schedules = []
    for idx, row in enumerate(qx):
        variant, level = divmod(idx, n_levels)
        schedules.append(MortalitySchedule(sex, f"SYN{variant + 1}", FIRST_YEAR + level, row))
    return Corpus(schedules, provenance=f"synthetic:{sex.value}:noise={noise:g}:seed={seed}")


def synthetic_corpora(**kwargs):
    return {sex: synthetic_corpus(sex, **kwargs) for sex in (Sex.FEMALE, Sex.MALE)}
