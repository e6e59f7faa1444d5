import io

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from oracles import model_exact_corpus
from svdcomp import validation as val
from svdcomp.errors import NumericError
from svdcomp.lifetable import Sex, five_year_groups
from svdcomp.validation import CvDesign, InputMode, SampleStatus


@pytest.fixture(scope="module")
def exact_child(model):
    return model_exact_corpus(model, Sex.FEMALE, [0.012, 0.06, 0.2])


@pytest.fixture(scope="module")
def exact_both(model):
    return model_exact_corpus(model, Sex.MALE, [0.018, 0.065, 0.12], [0.034, 0.19, 0.45])


class TestErrorReport:
    def test_model_exact_child_only_has_zero_error(self, model, exact_child):
        rep = val.prediction_errors(exact_child, model, InputMode.CHILD_ONLY)
        assert np.abs(rep.errors).max() <= 1e-9
        assert val.total_absolute_error(exact_child, model) == pytest.approx(0.0, abs=1e-8)

    def test_model_exact_child_adult_has_zero_error(self, model, exact_both):
        rep = val.prediction_errors(exact_both, model, InputMode.CHILD_ADULT)
        assert np.abs(rep.errors).max() <= 1e-9

    def test_single_schedule_quantiles_equal_the_errors(self):
        e = np.linspace(-0.01, 0.02, 110)
        rep = val.ErrorReport.from_errors(e[None, :], "f", "child_only")
        for row in rep.per_age_quantiles:
            np.testing.assert_array_equal(row, e)
        assert rep.overall_median == pytest.approx(np.median(e))

    def test_hand_quantiles(self):
        e = np.zeros((5, 110))
        e[:, 0] = [5.0, 1.0, 3.0, 2.0, 4.0]
        rep = val.ErrorReport.from_errors(e, "m", "child_adult")
        # linear interpolation on the sorted values 1..5
        np.testing.assert_allclose(rep.per_age_quantiles[:, 0], [1.4, 2.0, 3.0, 4.0, 4.6])
        assert rep.per_age_abs_error[0] == 15.0
        assert rep.total_absolute_error == 15.0

    @settings(max_examples=40, deadline=None)
    @given(st.integers(1, 30), st.integers(0, 2**32 - 1))
    def test_quantiles_ordered_and_tae_is_sum(self, n, seed):
        e = np.random.default_rng(seed).normal(scale=0.01, size=(n, 110))
        rep = val.ErrorReport.from_errors(e, "f", "child_only")
        assert np.all(np.diff(rep.per_age_quantiles, axis=0) >= 0)
        assert rep.overall_iqr >= 0
        assert rep.total_absolute_error == pytest.approx(np.abs(e).sum(), abs=1e-9)

    def test_empty_rejected(self):
        with pytest.raises(ValueError):
            val.ErrorReport.from_errors(np.empty((0, 110)), "f", "child_only")

    def test_tae_matches_per_age_errors(self, noisy_model, noisy_corpora):
        corpus = noisy_corpora[Sex.FEMALE]
        rep = val.prediction_errors(corpus, noisy_model)
        tae = val.total_absolute_error(corpus, noisy_model)
        assert tae == pytest.approx(np.abs(rep.errors).sum(), abs=1e-9)
        assert tae > 0

    def test_five_year_tae(self, noisy_model, noisy_corpora):
        corpus = noisy_corpora[Sex.MALE]
        obs, pred = val.predict_corpus(corpus, noisy_model, "child_only")
        expected = np.abs(five_year_groups(obs) - five_year_groups(pred)).sum()
        got = val.total_absolute_error(corpus, noisy_model, age_grouping="five_year")
        assert got == pytest.approx(expected, rel=1e-12)
        with pytest.raises(ValueError):
            val.total_absolute_error(corpus, noisy_model, age_grouping="decade")

    def test_adult_input_helps(self, noisy_model, noisy_corpora):
        for sex in Sex:
            corpus = noisy_corpora[sex]
            child = val.total_absolute_error(corpus, noisy_model, "child_only")
            both = val.total_absolute_error(corpus, noisy_model, "child_adult")
            assert both <= child

    def test_merge_pools_errors(self):
        rng = np.random.default_rng(0)
        a, b = rng.normal(size=(3, 110)), rng.normal(size=(4, 110))
        merged = val.merge_reports(
            [val.ErrorReport.from_errors(x, "f", "child_only") for x in (a, b)]
        )
        assert merged.n_schedules == 7
        np.testing.assert_array_equal(merged.errors, np.vstack([a, b]))
        lean = val.ErrorReport.from_errors(a, "f", "child_only", keep_errors=False)
        with pytest.raises(ValueError):
            val.merge_reports([lean])

    def test_csv_columns(self, model, corpus_f, tmp_path):
        rep = val.prediction_errors(corpus_f, model)
        path = tmp_path / "r.csv"
        val.write_reports_csv([rep], path)
        lines = path.read_text().splitlines()
        assert lines[0] == ",".join(val.REPORT_COLUMNS)
        assert len(lines) == 111
        assert lines[1].startswith("female,0,") and lines[1].endswith(",child_only,all")


class TestCrossValidation:
    def test_design_validation(self):
        for kw in ({"n_samples": 0}, {"sample_fraction": 0.0}, {"sample_fraction": 1.0}):
            with pytest.raises(ValueError):
                CvDesign(**kw)

    def test_draws_are_reproducible_and_sized(self, corpora):
        d = CvDesign(n_samples=4, sample_fraction=0.3, seed=5)
        a, b = val.draw_samples(d, corpora), val.draw_samples(d, corpora)
        for x, y in zip(a, b):
            for sex in Sex:
                np.testing.assert_array_equal(x[sex], y[sex])
                assert x[sex].size == 45
                assert np.unique(x[sex]).size == 45
        c = val.draw_samples(CvDesign(n_samples=4, sample_fraction=0.3, seed=6), corpora)
        assert any(not np.array_equal(x[Sex.FEMALE], z[Sex.FEMALE]) for x, z in zip(a, c))

    def test_aligned_sexes_share_draws(self, corpora):
        draws = val.draw_samples(CvDesign(n_samples=2), corpora)
        for d in draws:
            np.testing.assert_array_equal(d[Sex.FEMALE], d[Sex.MALE])

    def test_stratified_draw_balances_populations(self, corpora):
        draws = val.draw_samples(CvDesign(n_samples=3, sample_fraction=0.4, seed=1, stratify=True), corpora)
        pops = np.array([s.population_code for s in corpora[Sex.FEMALE]])
        for d in draws:
            picked = pops[d[Sex.FEMALE]]
            for p in np.unique(pops):
                assert np.sum(picked == p) == round(0.4 * np.sum(pops == p))

    def test_every_schedule_scored_once_per_sample(self, noisy_corpora):
        d = CvDesign(n_samples=3, sample_fraction=0.5, seed=2)
        res = val.cross_validate(noisy_corpora[Sex.FEMALE], noisy_corpora[Sex.MALE], d)
        assert res.n_failed == 0
        for s in res.samples:
            for sex in Sex:
                ins = s.reports[sex][SampleStatus.IN_SAMPLE]
                outs = s.reports[sex][SampleStatus.OUT_OF_SAMPLE]
                assert ins.n_schedules == 75 and outs.n_schedules == 75
        pooled = res.pooled("f", "out_of_sample")
        assert pooled.n_schedules == 225

    def test_deterministic(self, noisy_corpora):
        d = CvDesign(n_samples=2, sample_fraction=0.5, seed=9)
        args = (noisy_corpora[Sex.FEMALE], noisy_corpora[Sex.MALE], d)
        a, b = val.cross_validate(*args), val.cross_validate(*args)
        for x, y in zip(a.samples, b.samples):
            for sex in Sex:
                for st_ in SampleStatus.IN_SAMPLE, SampleStatus.OUT_OF_SAMPLE:
                    assert x.reports[sex][st_].errors.tobytes() == y.reports[sex][st_].errors.tobytes()

    def test_parallel_matches_serial(self, noisy_corpora):
        d = CvDesign(n_samples=2, sample_fraction=0.5, seed=3)
        args = (noisy_corpora[Sex.FEMALE], None, d)
        a = val.cross_validate(*args)
        b = val.cross_validate(*args, workers=2)
        for x, y in zip(a.samples, b.samples):
            rx = x.reports[Sex.FEMALE][SampleStatus.OUT_OF_SAMPLE]
            ry = y.reports[Sex.FEMALE][SampleStatus.OUT_OF_SAMPLE]
            assert rx.errors.tobytes() == ry.errors.tobytes()

    def test_failed_sample_recorded_and_run_continues(self, noisy_corpora, monkeypatch):
        real = val.calibrate
        calls = {"n": 0}

        def flaky(*a, **kw):
            calls["n"] += 1
            if calls["n"] == 2:
                raise NumericError("forced failure")
            return real(*a, **kw)

        monkeypatch.setattr(val, "calibrate", flaky)
        res = val.cross_validate(noisy_corpora[Sex.FEMALE], None, CvDesign(n_samples=3, seed=4))
        assert [s.failed for s in res.samples] == [False, True, False]
        assert "forced failure" in res.samples[1].error
        assert res.pooled("f", "in_sample").n_schedules == 150

    def test_tiny_corpus_rejected(self, corpus_f):
        with pytest.raises(ValueError):
            val.cross_validate(corpus_f.subset([0]), None, CvDesign())
        with pytest.raises(ValueError):
            val.cross_validate(None, None, CvDesign())

    def test_sweep(self, noisy_corpora):
        res = val.fraction_sweep(noisy_corpora[Sex.FEMALE], None, [0.3, 0.6], n_samples=2, seed=0)
        assert sorted(res) == [0.3, 0.6]
        summ = val.sweep_summary(res[0.3], "f", "out_of_sample")
        assert summ["n"] == 2 and summ["median_of_iqrs"] > 0


class TestComparison:
    def test_identical_baseline_gives_zero_difference(self, noisy_model, noisy_corpora):
        def same(q5, q45, sex):
            from svdcomp.prediction import predict_qx_batch

            return five_year_groups(predict_qx_batch(q5, q45, sex=sex, model=noisy_model)[0])

        table = val.compare_models(noisy_corpora[Sex.FEMALE], noisy_corpora[Sex.MALE], noisy_model, same)
        assert [r["row"] for r in table.rows] == [f"R{i}" for i in range(1, 9)]
        for row in ("R3", "R4", "R7", "R8"):
            r = table.lookup(row)
            assert abs(r["C1"]) <= 1e-9 * table.lookup("R1")["C1"]
            assert abs(r["C2"]) <= 1e-9 * table.lookup("R1")["C2"]
        r1 = table.lookup("R1")
        assert r1["C3"] == r1["C2"] - r1["C1"]
        buf = io.StringIO()
        table.write_csv(buf)
        assert buf.getvalue().splitlines()[0] == "row,sex,summary,C1,C2,C3"

    def test_worse_baseline_positive_difference(self, noisy_model, noisy_corpora):
        flat = np.full(22, 0.05)
        table = val.compare_models(noisy_corpora[Sex.FEMALE], None, noisy_model, lambda *a: flat)
        assert table.lookup("R3")["C1"] > 0 and table.lookup("R4")["C1"] > 0

    def test_rejects_non_callable(self, model, corpus_f):
        with pytest.raises(TypeError):
            val.compare_models(corpus_f, None, model, 3)

