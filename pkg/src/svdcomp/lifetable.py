"""Life-table data model, HMD 1x1 ingestion and probability scales.

Schedules cover single years of age 0-109 (110 values). The open ``110+``
interval of the HMD tables is dropped: its ``qx`` is 1 by construction and
has no finite logit.
"""

from __future__ import annotations

import json
import logging
import re
from collections.abc import Iterable, Sequence
from dataclasses import dataclass, field
from enum import Enum
from importlib import resources
from pathlib import Path

import numpy as np

from svdcomp.errors import ParseError

logger = logging.getLogger(__name__)

N_AGES = 110
AGES = np.arange(N_AGES)

# qx at or beyond the boundaries is pulled inside (0, 1) before any logit
Q_FLOOR = 1e-7
Q_CEIL = 1.0 - 1e-7

_REQUIRED_COLUMNS = ("Year", "Age", "qx")
_HMD_FILE_RE = re.compile(r"^(?P<pop>[A-Za-z0-9_]+)\.(?P<sex>[fm])ltper_1x1\.txt$")


class Sex(str, Enum):
    FEMALE = "female"
    MALE = "male"

    @classmethod
    def parse(cls, value):
        if isinstance(value, Sex):
            return value
        v = str(value).strip().lower()
        aliases = {"f": "female", "m": "male", "females": "female", "males": "male"}
        try:
            return cls(aliases.get(v, v))
        except ValueError:
            raise ValueError(f"unknown sex {value!r}; expected 'female' or 'male'") from None


def clamp_q(q):
    """Pull probabilities of exactly 0 or 1 (or beyond) inside the open unit interval."""
    return np.clip(np.asarray(q, dtype=float), Q_FLOOR, Q_CEIL)


@dataclass(frozen=True, eq=False)
class MortalitySchedule:
    """Single-year probabilities of dying for one population, sex and year.

    ``qx[a]`` is the probability of dying in ``[a, a+1)`` for ``a = 0..109``.
    Values are clamped into ``(0, 1)`` on construction.
    """

    sex: Sex
    population_code: str
    year: int
    qx: np.ndarray

    def __post_init__(self):
        qx = np.asarray(self.qx, dtype=float)
        if qx.shape != (N_AGES,):
            raise ValueError(f"qx must have length {N_AGES}, got shape {qx.shape}")
        if not np.all(np.isfinite(qx)):
            raise ValueError("qx contains non-finite values")
        qx = clamp_q(qx)
        qx.setflags(write=False)
        object.__setattr__(self, "qx", qx)
        object.__setattr__(self, "sex", Sex.parse(self.sex))
        object.__setattr__(self, "year", int(self.year))

    @property
    def label(self):
        return (self.population_code, self.year)

    def key(self):
        return (self.population_code, self.sex.value, self.year)

    def __eq__(self, other):
        if not isinstance(other, MortalitySchedule):
            return NotImplemented
        return self.key() == other.key() and np.array_equal(self.qx, other.qx)

    def __hash__(self):
        return hash(self.key())


@dataclass(frozen=True)
class ExclusionRule:
    """Drop every schedule of ``population_code`` in ``years``.

    ``sex`` is a :class:`Sex` or ``None`` for both sexes.
    """

    population_code: str
    sex: Sex | None
    years: frozenset

    def __post_init__(self):
        years = frozenset(int(y) for y in self.years)
        if not years:
            raise ValueError("exclusion rule must name at least one year")
        object.__setattr__(self, "years", years)
        if self.sex is not None:
            object.__setattr__(self, "sex", Sex.parse(self.sex))

    def matches(self, schedule):
        return (
            schedule.population_code == self.population_code
            and (self.sex is None or schedule.sex == self.sex)
            and schedule.year in self.years
        )


@dataclass
class Corpus:
    """Ordered collection of schedules; position in the list is the column index."""

    schedules: list = field(default_factory=list)
    provenance: str = ""

    def __post_init__(self):
        self.schedules = list(self.schedules)

    def __len__(self):
        return len(self.schedules)

    def __iter__(self):
        return iter(self.schedules)

    def __getitem__(self, idx):
        return self.schedules[idx]

    @property
    def sexes(self):
        return {s.sex for s in self.schedules}

    @property
    def sex(self):
        """The single sex of the corpus; raises if corpus is empty or mixed."""
        sexes = self.sexes
        if len(sexes) != 1:
            kind = "empty" if not sexes else "mixed-sex"
            raise ValueError(f"expected a single-sex corpus, got a {kind} corpus")
        return next(iter(sexes))

    @property
    def labels(self):
        return [s.label for s in self.schedules]

    def qx_matrix(self):
        """A x L matrix of qx, one column per schedule."""
        if not self.schedules:
            return np.empty((N_AGES, 0))
        return np.column_stack([s.qx for s in self.schedules])

    def subset(self, indices, provenance=None):
        return Corpus(
            [self.schedules[i] for i in indices],
            provenance=self.provenance if provenance is None else provenance,
        )

    def for_sex(self, sex):
        sex = Sex.parse(sex)
        return Corpus([s for s in self.schedules if s.sex == sex], provenance=self.provenance)


# ---------------------------------------------------------------------------
# probability scales
# ---------------------------------------------------------------------------


def logit(p):
    """``ln(p / (1 - p))``.

    Values of exactly 0 or 1 are clamped to ``1e-7`` / ``1 - 1e-7`` first.
    Anything outside ``[0, 1]`` (or NaN) raises ``ValueError``.
    """
    arr = np.asarray(p, dtype=float)
    if np.any(~(arr >= 0.0) | ~(arr <= 1.0)):
        raise ValueError("logit argument must lie in [0, 1]")
    arr = np.where(arr <= 0.0, Q_FLOOR, np.where(arr >= 1.0, Q_CEIL, arr))
    out = np.log(arr) - np.log1p(-arr)
    return float(out) if out.ndim == 0 else out


def expit(x):
    """``e^x / (1 + e^x)``, computed without overflow for large ``|x|``."""
    arr = np.asarray(x, dtype=float)
    out = np.empty_like(arr)
    pos = arr >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-arr[pos]))
    ex = np.exp(arr[~pos])
    out[~pos] = ex / (1.0 + ex)
    return float(out) if out.ndim == 0 else out


def aggregate_q(qx, start_age, width):
    """Probability of dying between ``start_age`` and ``start_age + width``.

    ``qx`` is a :class:`MortalitySchedule`, a length-110 vector, or an
    ``(n, 110)`` array of schedules (aggregated row-wise).
    """
    if isinstance(qx, MortalitySchedule):
        qx = qx.qx
    q = np.asarray(qx, dtype=float)
    start_age, width = int(start_age), int(width)
    if start_age < 0 or width < 1 or start_age + width > q.shape[-1]:
        raise ValueError(
            f"age interval [{start_age}, {start_age + width}) outside 0..{q.shape[-1]}"
        )
    if width == 1:
        out = q[..., start_age].copy()
    else:
        out = 1.0 - np.prod(1.0 - q[..., start_age : start_age + width], axis=-1)
    return float(out) if np.ndim(out) == 0 else out


def q5_0(qx):
    return aggregate_q(qx, 0, 5)


def q45_15(qx):
    return aggregate_q(qx, 15, 45)


def five_year_groups(qx):
    """Aggregate single-year qx into 22 five-year groups 0-4, 5-9, ..., 105-109."""
    q = np.asarray(qx, dtype=float)
    if q.shape[-1] != N_AGES:
        raise ValueError(f"expected {N_AGES} single-year ages")
    grouped = q.reshape(q.shape[:-1] + (N_AGES // 5, 5))
    return 1.0 - np.prod(1.0 - grouped, axis=-1)


# ---------------------------------------------------------------------------
# HMD 1x1 ingestion
# ---------------------------------------------------------------------------


def _find_header(lines):
    for i, line in enumerate(lines):
        tokens = line.split()
        if all(c in tokens for c in _REQUIRED_COLUMNS):
            return i, tokens
    raise ParseError(f"no header line with columns {', '.join(_REQUIRED_COLUMNS)}")


def parse_hmd_lifetable(text, sex, population_code, diagnostics=None):
    """Parse an HMD ``1x1`` period life table into one schedule per year.

    Parameters
    ----------
    text : str or iterable of str
        The file contents. Preamble lines before the column header are ignored.
    sex : Sex or str
    population_code : str
    diagnostics : list, optional
        Receives one message per skipped year (missing cells, short years).

    Returns
    -------
    list of MortalitySchedule
        Ordered by year. The ``110+`` row is discarded.
    """
    sex = Sex.parse(sex)
    if isinstance(text, str):
        lines = text.splitlines()
    else:
        lines = list(text)
    if diagnostics is None:
        diagnostics = []

    h, header = _find_header(lines)
    col = {name: j for j, name in enumerate(header)}
    iy, ia, iq = col["Year"], col["Age"], col["qx"]
    ncol = len(header)

    by_year = {}
    invalid = set()
    for lineno, line in enumerate(lines[h + 1 :], start=h + 2):
        tokens = line.split()
        if not tokens:
            continue
        if len(tokens) != ncol:
            raise ParseError(
                f"{population_code}: line {lineno} has {len(tokens)} fields, expected {ncol}"
            )
        try:
            year = int(tokens[iy].rstrip("+"))
        except ValueError:
            raise ParseError(f"{population_code}: line {lineno}: bad year {tokens[iy]!r}") from None
        age_tok = tokens[ia]
        if age_tok.endswith("+"):
            continue
        try:
            age = int(age_tok)
        except ValueError:
            raise ParseError(f"{population_code}: line {lineno}: bad age {age_tok!r}") from None
        if age >= N_AGES:
            continue
        ages = by_year.setdefault(year, {})
        try:
            ages[age] = float(tokens[iq])
        except ValueError:
            invalid.add(year)

    schedules = []
    for year in sorted(by_year):
        ages = by_year[year]
        if year in invalid:
            msg = f"{population_code} {sex.value} {year}: non-numeric qx, year skipped"
            diagnostics.append(msg)
            logger.warning(msg)
            continue
        if len(ages) < N_AGES or any(a not in ages for a in range(N_AGES)):
            msg = (
                f"{population_code} {sex.value} {year}: only {len(ages)} of {N_AGES} "
                "ages present, year skipped"
            )
            diagnostics.append(msg)
            logger.warning(msg)
            continue
        qx = np.array([ages[a] for a in range(N_AGES)])
        schedules.append(MortalitySchedule(sex, population_code, year, qx))
    return schedules


def apply_exclusions(corpus, rules):
    """Return a corpus without the schedules matched by any rule; order is preserved."""
    rules = list(rules)
    kept = [s for s in corpus.schedules if not any(r.matches(s) for r in rules)]
    return Corpus(kept, provenance=corpus.provenance)


def load_exclusions(path=None):
    """Load exclusion rules from a JSON list of ``{population, sex, years}`` objects.

    Without ``path`` the bundled default list is used.
    """
    if path is None:
        raw = resources.files("svdcomp").joinpath("data/exclusions.json").read_text()
    else:
        raw = Path(path).read_text()
    try:
        entries = json.loads(raw)
    except json.JSONDecodeError as exc:
        raise ParseError(f"exclusion config is not valid JSON: {exc}") from None
    rules = []
    for entry in entries:
        try:
            sex = entry.get("sex", "both")
            rules.append(
                ExclusionRule(
                    population_code=entry["population"],
                    sex=None if sex in (None, "both") else Sex.parse(sex),
                    years=entry["years"],
                )
            )
        except (KeyError, TypeError, ValueError) as exc:
            raise ParseError(f"bad exclusion entry {entry!r}: {exc}") from None
    return rules


def discover_hmd_files(data_dir):
    """Map ``(population_code, sex)`` to paths of ``XXX.fltper_1x1.txt`` style files."""
    found = {}
    for path in sorted(Path(data_dir).rglob("*ltper_1x1.txt")):
        m = _HMD_FILE_RE.match(path.name)
        if not m:
            continue
        sex = Sex.FEMALE if m.group("sex") == "f" else Sex.MALE
        found.setdefault((m.group("pop"), sex), path)
    return found


def load_hmd_directory(data_dir, rules=None, sexes=(Sex.FEMALE, Sex.MALE), diagnostics=None):
    """Read every HMD 1x1 period life table below ``data_dir``.

    Returns a dict ``Sex -> Corpus`` ordered by ``(population_code, year)``,
    with ``rules`` applied (pass ``[]`` to keep everything; ``None`` uses the
    bundled defaults).
    """
    if rules is None:
        rules = load_exclusions()
    sexes = [Sex.parse(s) for s in sexes]
    files = discover_hmd_files(data_dir)
    out = {}
    for sex in sexes:
        schedules = []
        for (pop, file_sex), path in sorted(files.items(), key=lambda kv: (kv[0][0], kv[0][1].value)):
            if file_sex != sex:
                continue
            try:
                schedules.extend(
                    parse_hmd_lifetable(path.read_text(), sex, pop, diagnostics=diagnostics)
                )
            except ParseError as exc:
                raise ParseError(f"{path}: {exc}") from None
        schedules.sort(key=lambda s: (s.population_code, s.year))
        out[sex] = apply_exclusions(Corpus(schedules, provenance=str(data_dir)), rules)
    return out


def format_hmd_lifetable(schedules, title="Life tables (period 1x1)"):
    """Render schedules as HMD 1x1 text with the standard column set.

    Derived columns use ``ax = 0.5`` (0.1 at age 0) and a radix of 100000;
    ``qx`` is written at full precision so parsing reproduces it exactly.
    """
    lines = [title, "", "   Year      Age        mx        qx    ax        lx        dx        Lx          Tx      ex"]
    for s in schedules:
        q = s.qx
        ax = np.full(N_AGES, 0.5)
        ax[0] = 0.1
        mx = q / (1.0 - (1.0 - ax) * q)
        lx = np.empty(N_AGES + 1)
        lx[0] = 100000.0
        lx[1:] = lx[0] * np.cumprod(1.0 - q)
        dx = lx[:-1] * q
        Lx = lx[1:] + ax * dx
        m_open = mx[-1]
        L_open = lx[-1] / m_open
        Tx = np.concatenate([np.cumsum((np.append(Lx, L_open))[::-1])[::-1]])
        ex = Tx / np.append(lx[:-1], lx[-1])
        for a in range(N_AGES):
            lines.append(
                f"{s.year:7d} {a:8d} {mx[a]:.6f} {float(q[a])!r} {ax[a]:.2f} {lx[a]:.0f} "
                f"{dx[a]:.0f} {Lx[a]:.0f} {Tx[a]:.0f} {ex[a]:.2f}"
            )
        lines.append(
            f"{s.year:7d} {'110+':>8} {m_open:.6f} 1.00000 {1.0 / m_open:.2f} {lx[-1]:.0f} "
            f"{lx[-1]:.0f} {L_open:.0f} {Tx[-1]:.0f} {ex[-1]:.2f}"
        )
    return "\n".join(lines) + "\n"
