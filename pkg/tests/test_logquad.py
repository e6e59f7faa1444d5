import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from svdcomp import logquad as lq
from svdcomp.errors import NumericError, ParseError
from svdcomp.lifetable import Sex

STARTS = [0, 1] + list(range(5, 110, 5))
WIDTHS = [1, 4] + [5] * 21


def toy_rows(sex_shift=0.0, v_scale=1.0):
    rows = []
    for s, n in zip(STARTS, WIDTHS):
        a = -9.5 + 0.085 * s + sex_shift if s >= 10 else -3.0 + 0.4 * (s == 0) - 0.5 * s
        b = 1.0 if s < 5 else 0.6 - 0.004 * s
        c = 0.02 if s < 5 else 0.01
        v = v_scale * (0.3 if 15 <= s < 60 else 0.05)
        rows.append((s, n, a, b, c, v))
    return rows


@pytest.fixture(scope="module")
def coeffs():
    return lq.coefficients_from_rows({Sex.FEMALE: toy_rows(), Sex.MALE: toy_rows(0.2)})


def by_hand(q5, k, row):
    s, n, a, b, c, v = row
    h = math.log(q5)
    m = math.exp(a + b * h + c * h * h + v * k)
    ax = 0.1 if s == 0 else 1.5 if s == 1 else n / 2
    return min(n * m / (1 + (n - ax) * m), 1.0)


def q45_by_hand(nqx):
    surv = 1.0
    for s, q in zip(STARTS, nqx):
        if 15 <= s < 60:
            surv *= 1 - q
    return 1 - surv


class TestMToQ:
    def test_known_values(self):
        assert lq.m_to_q(np.array([0.1]), [5], [20])[0] == pytest.approx(0.4)
        assert lq.m_to_q(np.array([0.1]), [1], [0])[0] == pytest.approx(0.1 / 1.09)
        assert lq.m_to_q(np.array([0.1]), [4], [1])[0] == pytest.approx(0.4 / 1.25)

    def test_capped_at_one(self):
        assert lq.m_to_q(np.array([50.0]), [5], [105])[0] == 1.0

    def test_explicit_ax(self):
        got = lq.m_to_q(np.array([0.2]), [5], [30], ax=np.array([2.0]))
        assert got[0] == pytest.approx(1.0 / 1.6)


class TestPredict:
    def test_k_zero_without_adult_input(self, coeffs):
        sch = lq.logquad_predict(0.05, None, "f", coeffs)
        assert sch.k == 0.0
        expected = [by_hand(0.05, 0.0, r) for r in toy_rows()]
        np.testing.assert_allclose(sch.nqx, expected, rtol=1e-13)

    @settings(max_examples=40, deadline=None)
    @given(st.floats(0.01, 0.2), st.floats(0.05, 0.6))
    def test_adult_target_reached(self, coeffs, q5, q45):
        sch = lq.logquad_predict(q5, q45, "m", coeffs)
        assert abs(q45_by_hand(sch.nqx) - q45) <= 1e-8
        expected = [by_hand(q5, sch.k, r) for r in toy_rows(0.2)]
        np.testing.assert_allclose(sch.nqx, expected, rtol=1e-12)

    def test_k_monotone_in_adult_target(self, coeffs):
        ks = [lq.logquad_predict(0.05, t, "f", coeffs).k for t in (0.1, 0.2, 0.4)]
        assert ks[0] < ks[1] < ks[2]

    def test_flat_correction_cannot_bracket(self):
        flat = lq.coefficients_from_rows({Sex.FEMALE: toy_rows(v_scale=0.0)})
        with pytest.raises(NumericError, match="bracket"):
            lq.logquad_predict(0.05, 0.3, "f", flat)

    def test_input_ranges(self, coeffs):
        for bad in ((0.0, None), (1.0, None), (0.05, 0.0), (0.05, 1.0)):
            with pytest.raises(ValueError):
                lq.logquad_predict(*bad, "f", coeffs)

    def test_missing_sex(self):
        only_f = lq.coefficients_from_rows({Sex.FEMALE: toy_rows()})
        with pytest.raises(ValueError, match="male"):
            lq.logquad_predict(0.05, None, "m", only_f)

    def test_five_year_merges_first_two_groups(self, coeffs):
        sch = lq.logquad_predict(0.05, None, "f", coeffs)
        fy = sch.five_year()
        assert fy.size == 22
        assert fy[0] == pytest.approx(1 - (1 - sch.nqx[0]) * (1 - sch.nqx[1]), rel=1e-15)
        # single groups pass through 1 - (1 - q), which rounds in the last bits
        np.testing.assert_allclose(fy[1:], sch.nqx[2:], rtol=1e-12)


class TestCoefficientFiles:
    def test_round_trip_is_exact(self, coeffs, tmp_path):
        path = tmp_path / "lq.csv"
        lq.write_logquad_coefficients(coeffs, path)
        back = lq.load_logquad_coefficients(path)
        for sex in Sex:
            for name in ("age_start", "width", "a", "b", "c", "v"):
                np.testing.assert_array_equal(getattr(back[sex], name), getattr(coeffs[sex], name))

    def test_rows_may_come_unsorted(self):
        rows = toy_rows()
        got = lq.coefficients_from_rows({Sex.FEMALE: rows[::-1]})
        np.testing.assert_array_equal(got[Sex.FEMALE].age_start, STARTS)

    def test_gap_in_age_groups(self):
        rows = [r for r in toy_rows() if r[0] != 40]
        with pytest.raises(ValueError, match="contiguous"):
            lq.coefficients_from_rows({Sex.FEMALE: rows})

    def test_missing_columns(self, tmp_path):
        path = tmp_path / "bad.csv"
        path.write_text("sex,age_group_start,a\nf,0,1\n")
        with pytest.raises(ParseError):
            lq.load_logquad_coefficients(path)

    def test_bad_value(self, tmp_path):
        path = tmp_path / "bad.csv"
        path.write_text("sex,age_group_start,n,a,b,c,v\nf,0,1,x,0,0,0\n")
        with pytest.raises(ParseError):
            lq.load_logquad_coefficients(path)
