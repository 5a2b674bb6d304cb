import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from strokeunc import metrics as E

from . import oracles


class TestWilson:
    def test_zero_of_ten(self):
        acc, lo, hi = E.accuracy_with_wilson(0, 10)
        z2 = E.Z95**2
        assert acc == 0.0 and lo == 0.0
        assert hi == pytest.approx(z2 / (10 + z2), abs=1e-12)
        assert hi == pytest.approx(0.2775, abs=1e-4)

    def test_all_correct(self):
        _, lo, hi = E.accuracy_with_wilson(10**6, 10**6)
        assert hi == 1.0 and lo < 1.0

    def test_reported_interval(self):
        n = 15188
        _, lo, hi = E.accuracy_with_wilson(round(0.9552 * n), n)
        assert lo == pytest.approx(0.9518, abs=2e-4)
        assert hi == pytest.approx(0.9583, abs=2e-4)

    @settings(max_examples=200, deadline=None)
    @given(st.integers(1, 5000), st.data())
    def test_matches_closed_form_and_contains_estimate(self, n, data):
        k = data.draw(st.integers(0, n))
        acc, lo, hi = E.accuracy_with_wilson(k, n)
        ref = oracles.wilson(k, n, E.Z95)
        assert lo == pytest.approx(max(0.0, ref[0]), abs=1e-12)
        assert hi == pytest.approx(min(1.0, ref[1]), abs=1e-12)
        assert lo <= acc <= hi

    def test_width_shrinks_with_n(self):
        widths = []
        for n in (10, 40, 160, 640):
            _, lo, hi = E.accuracy_with_wilson(n * 3 // 10, n)
            widths.append(hi - lo)
        assert all(b < a for a, b in zip(widths, widths[1:]))

    def test_invalid(self):
        with pytest.raises(ValueError):
            E.accuracy_with_wilson(3, 0)
        with pytest.raises(ValueError):
            E.accuracy_with_wilson(4, 3)


def test_ci_overlap():
    assert not E.ci_overlap((1, 2), (3, 4))
    assert E.ci_overlap((1, 3), (2, 4))
    assert E.ci_overlap((1, 2), (2, 3))


class TestCalibration:
    def test_single_bin(self):
        t = E.calibration([0.975] * 8, [1] * 8)
        assert t.count[-1] == 8 and t.total == 8
        assert t.observed[-1] == 1.0
        assert np.isnan(t.observed[:-1]).all()

    def test_empty_rows_are_absent(self):
        rows = list(E.calibration([0.1], [0]).rows())
        assert rows[2] == (3, 0.125, 1, 0.0)
        assert rows[0][3] is None

    def test_boundaries(self):
        t = E.calibration([0.0, 0.05, 1.0], [0, 0, 1])
        assert t.count[0] == 1 and t.count[1] == 1 and t.count[19] == 1

    def test_sanders_examples(self):
        assert E.sanders_score(E.calibration([0.01, 0.02], [1, 1])) == pytest.approx(0.975**2, abs=1e-15)
        # 40 items in the interval with representative 0.125: 5 events gives 0.125 exactly
        t = E.calibration([0.11] * 40, [1] * 5 + [0] * 35)
        assert E.sanders_score(t) == 0.0

    @settings(max_examples=200, deadline=None)
    @given(st.lists(st.tuples(st.floats(0, 1), st.integers(0, 1)), min_size=1, max_size=80))
    def test_sanders_matches_double_loop(self, items):
        p, y = zip(*items)
        t = E.calibration(p, y)
        assert t.total == len(p)
        assert E.sanders_score(t) == pytest.approx(oracles.sanders(p, y), abs=1e-12)

    def test_invalid(self):
        with pytest.raises(ValueError):
            E.calibration([1.2], [1])
        with pytest.raises(ValueError):
            E.calibration([0.2, 0.3], [1])


class TestRoc:
    def test_separated(self):
        assert E.roc_auc([0.1, 0.2, 0.8, 0.9], [0, 0, 1, 1]).auc == 1.0

    def test_all_tied(self):
        r = E.roc_auc([0.4] * 6, [0, 1, 0, 1, 1, 0])
        assert r.auc == 0.5
        np.testing.assert_array_equal(r.fpr, [0, 1])

    def test_curve_endpoints(self):
        r = E.roc_auc([0.3, 0.1, 0.7, 0.7], [1, 0, 0, 1])
        assert (r.fpr[0], r.tpr[0]) == (0.0, 0.0)
        assert (r.fpr[-1], r.tpr[-1]) == (1.0, 1.0)

    def test_degenerate(self):
        with pytest.raises(E.DegenerateInputError, match="degenerate input"):
            E.roc_auc([0.1, 0.2], [1, 1])
        with pytest.raises(ValueError):
            E.roc_auc([np.nan, 0.2], [1, 0])

    @settings(max_examples=300, deadline=None)
    @given(st.lists(st.tuples(st.integers(0, 6), st.booleans()), min_size=2, max_size=30))
    def test_matches_pairwise_oracle(self, items):
        s, y = zip(*items)
        if all(y) or not any(y):
            return
        scores = [v / 6 for v in s]
        assert E.roc_auc(scores, y).auc == oracles.pairwise_auc(scores, y)

    @settings(max_examples=100, deadline=None)
    @given(st.lists(st.integers(-500, 500), min_size=4, max_size=30, unique=True), st.randoms(use_true_random=False))
    def test_invariances(self, ints, rnd):
        scores = [i / 100 for i in ints]
        y = [rnd.random() < 0.5 for _ in scores]
        if all(y) or not any(y):
            return
        a = E.roc_auc(scores, y).auc
        assert E.roc_auc(np.exp(scores), y).auc == a
        assert a + E.roc_auc([-s for s in scores], y).auc == pytest.approx(1.0, abs=1e-15)


class TestRemoval:
    def test_zero_fraction_is_base_accuracy(self):
        c = E.removal_curve([0.3, 0.1, 0.2, 0.9], [1, 1, 0, 0], grid=[0.0])
        assert c.accuracy[0] == 0.5 and c.n_retained[0] == 4

    def test_errors_ranked_first(self):
        ok = np.array([0] * 10 + [1] * 90, dtype=bool)
        u = np.linspace(1, 0, 100)
        c = E.removal_curve(u, ok)
        assert c.accuracy[0] == 0.9
        assert np.all(c.accuracy[2:] == 1.0)  # f >= 0.10

    def test_retained_counts(self):
        assert E.retained_count(0.05, 100) == 95
        assert E.retained_count(0.05, 30) == 29
        assert E.retained_count(1.0, 30) == 0
        c = E.removal_curve([0.1, 0.2], [1, 0], grid=[1.0])
        assert math.isnan(c.accuracy[0])

    def test_ties_leave_in_input_order(self):
        c = E.removal_curve([0.5, 0.5, 0.1], [0, 1, 1], grid=[1 / 3])
        assert c.accuracy[0] == 1.0

    @settings(max_examples=200, deadline=None)
    @given(st.lists(st.tuples(st.integers(0, 5), st.booleans()), min_size=1, max_size=40))
    def test_matches_sort_and_slice(self, items):
        u, ok = zip(*items)
        c = E.removal_curve(u, ok)
        ranked = sorted(range(len(u)), key=lambda i: (-u[i], i))
        for f, acc in zip(c.fraction_removed, c.accuracy):
            keep = math.ceil(round((1 - f) * len(u), 9))
            rest = ranked[len(u) - keep:]
            if keep == 0:
                assert math.isnan(acc)
            else:
                assert acc == sum(ok[i] for i in rest) / keep


class TestReport:
    def test_evaluate_predictions(self):
        rng = np.random.default_rng(0)
        y = rng.integers(0, 2, 200)
        p = 0.3 * y + 0.7 * rng.random(200)
        yhat = (p > 0.5).astype(int)
        u = np.abs(p - 0.5) * -1
        rep = E.evaluate_predictions(p, y, yhat, {"pe": u, "max": None})
        assert rep.n == 200 and rep.ci[0] <= rep.accuracy <= rep.ci[1]
        assert set(rep.error_roc) == {"pe"}
        d = rep.to_dict()
        assert d["auc_discrimination"] == rep.discrimination.auc
        files = E.report_files(rep)
        assert {"calibration.csv", "roc_discrimination.csv", "roc_pe.csv", "removal_pe.csv"} <= set(files)

    def test_single_class(self):
        p, y = [0.9, 0.8], [1, 1]
        rep = E.evaluate_predictions(p, y, y, {"pe": [0.1, 0.2]})
        assert rep.discrimination is None and rep.auc("pe") is None
        with pytest.raises(E.DegenerateInputError):
            E.evaluate_predictions(p, y, y, strict=True)
