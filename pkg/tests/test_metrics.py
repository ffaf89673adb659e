import math

import numpy as np
import pytest
from scipy import stats

from uplme.errors import CorrelationUndefinedError, DegenerateInputError, InvalidInputError
from uplme.metrics import (
    MetricReport,
    calibration_error,
    concordance,
    metric_report,
    nlpd,
    noise_separation_auroc,
    pearson,
    regression_metrics,
    rmse,
    sharpness,
    spearman,
    welch_t_test,
)

# Brute-force references: plain Python loops, no numpy reductions.


def bf_mean(x):
    return sum(x) / len(x)


def bf_pearson(x, y):
    mx, my = bf_mean(x), bf_mean(y)
    sxy = sum((a - mx) * (b - my) for a, b in zip(x, y))
    sxx = sum((a - mx) ** 2 for a in x)
    syy = sum((b - my) ** 2 for b in y)
    return sxy / math.sqrt(sxx * syy)


def bf_ranks(x):
    # average rank: 1 + #smaller + (#equal - 1) / 2
    return [1 + sum(b < a for b in x) + (sum(b == a for b in x) - 1) / 2 for a in x]


def bf_ccc(x, y):
    n = len(x)
    mx, my = bf_mean(x), bf_mean(y)
    vx = sum((a - mx) ** 2 for a in x) / n
    vy = sum((b - my) ** 2 for b in y) / n
    cov = sum((a - mx) * (b - my) for a, b in zip(x, y)) / n
    return 2 * cov / (vx + vy + (mx - my) ** 2)


def bf_rmse(x, y):
    return math.sqrt(sum((a - b) ** 2 for a, b in zip(x, y)) / len(x))


def bf_nlpd(y, m, v):
    return bf_mean([0.5 * math.log(2 * math.pi * s) + (a - b) ** 2 / (2 * s) for a, b, s in zip(y, m, v)])


def bf_auroc(noisy, clean):
    score = 0.0
    for a in noisy:
        for b in clean:
            score += 1.0 if a > b else 0.5 if a == b else 0.0
    return score / (len(noisy) * len(clean))


def random_case(seed, n=100):
    rng = np.random.default_rng(seed)
    y = rng.normal(size=n)
    y_hat = 0.6 * y + rng.normal(size=n) * rng.uniform(0.2, 2.0)
    if seed % 3 == 0:
        # half-point grid with many ties
        y, y_hat = np.round(2 * y) / 2, np.round(2 * y_hat) / 2
    return y, y_hat, rng.uniform(0.05, 3.0, size=n)


class TestRegressionExamples:
    def test_identity(self):
        m = regression_metrics([1, 2, 3], [1, 2, 3])
        assert m == {"pcc": 1.0, "scc": 1.0, "ccc": 1.0, "rmse": 0.0}

    def test_constant_shift(self):
        m = regression_metrics([1, 2, 3], [4, 5, 6])
        assert m["pcc"] == pytest.approx(1.0, abs=1e-15)
        assert m["ccc"] == pytest.approx(4 / 31, abs=1e-12)
        assert m["ccc"] == pytest.approx(0.129032, abs=1e-6)
        assert m["rmse"] == pytest.approx(3.0)

    def test_pcc_example(self):
        assert pearson([1, 2, 3], [1, 2, 4]) == pytest.approx(0.981981, abs=1e-6)

    def test_constant_prediction_keeps_rmse(self):
        with pytest.raises(CorrelationUndefinedError) as err:
            regression_metrics([1.0, 2.0, 3.0], [2.0, 2.0, 2.0])
        assert err.value.rmse == pytest.approx(math.sqrt(2 / 3))

    def test_too_short(self):
        with pytest.raises(InvalidInputError):
            pearson([1.0], [1.0])

    def test_length_mismatch(self):
        with pytest.raises(InvalidInputError):
            rmse([1.0, 2.0], [1.0])


class TestAgainstBruteForce:
    @pytest.mark.parametrize("seed", range(100))
    def test_all_metrics(self, seed):
        y, p, v = random_case(seed)
        yl, pl, vl = y.tolist(), p.tolist(), v.tolist()
        assert pearson(y, p) == pytest.approx(bf_pearson(yl, pl), abs=1e-9)
        assert spearman(y, p) == pytest.approx(bf_pearson(bf_ranks(yl), bf_ranks(pl)), abs=1e-9)
        assert concordance(y, p) == pytest.approx(bf_ccc(yl, pl), abs=1e-9)
        assert rmse(y, p) == pytest.approx(bf_rmse(yl, pl), abs=1e-9)
        assert nlpd(y, p, v) == pytest.approx(bf_nlpd(yl, pl, vl), abs=1e-9)
        half = len(vl) // 3
        assert noise_separation_auroc(v[:half], v[half:]) == pytest.approx(bf_auroc(vl[:half], vl[half:]), abs=1e-9)
        assert abs(concordance(y, p)) <= abs(pearson(y, p)) + 1e-12

    def test_matches_scipy(self):
        y, p, _ = random_case(3)
        assert spearman(y, p) == pytest.approx(stats.spearmanr(y, p).statistic, abs=1e-12)
        assert pearson(y, p) == pytest.approx(stats.pearsonr(y, p).statistic, abs=1e-12)


class TestMetricProperties:
    @pytest.mark.parametrize("a,b", [(2.0, 1.0), (-0.5, 3.0), (1e-3, -7.0)])
    def test_pcc_affine(self, a, b):
        y, p, _ = random_case(11)
        assert pearson(y, a * p + b) == pytest.approx(math.copysign(1, a) * pearson(y, p), abs=1e-12)

    def test_ccc_equals_pcc_when_moments_match(self):
        rng = np.random.default_rng(5)
        y, p = rng.normal(size=50), rng.normal(size=50)
        p = (p - p.mean()) / p.std() * y.std() + y.mean()
        assert concordance(y, p) == pytest.approx(pearson(y, p), abs=1e-12)

    def test_scc_monotone_invariance(self):
        y, p, _ = random_case(7)
        assert spearman(np.exp(y), p**3) == pytest.approx(spearman(y, p), abs=1e-12)

    def test_auroc_antisymmetric(self):
        rng = np.random.default_rng(2)
        a, b = rng.normal(size=30), rng.normal(size=40)
        assert noise_separation_auroc(a, b) == pytest.approx(1 - noise_separation_auroc(b, a), abs=1e-12)


class TestUncertaintyMetrics:
    def test_nlpd_unit(self):
        assert nlpd([1, 2], [1, 2], [1, 1]) == pytest.approx(0.5 * math.log(2 * math.pi), abs=1e-12)
        assert nlpd([1, 2], [1, 2], [1, 1]) == pytest.approx(0.918939, abs=1e-6)

    def test_nlpd_single_point(self):
        assert nlpd([1.0], [0.0], [1.0]) == pytest.approx(1.418939, abs=1e-6)

    def test_sharpness(self):
        assert sharpness([1.0, 1.0]) == 1.0
        assert sharpness([0.5, 1.5, 4.0]) == pytest.approx(2.0)

    def test_nonpositive_variance(self):
        with pytest.raises(InvalidInputError):
            nlpd([1.0], [1.0], [0.0])
        with pytest.raises(InvalidInputError):
            calibration_error([1.0], [1.0], [-1.0])

    def test_cal_of_overconfident_model(self):
        rng = np.random.default_rng(0)
        y = rng.normal(size=5000)
        # intervals far too narrow: coverage near zero at every level
        assert calibration_error(y, np.zeros_like(y), np.full_like(y, 1e-6)) > 0.2

    def test_calibrated_sampling(self):
        rng = np.random.default_rng(1)
        m, v = rng.normal(size=10_000), rng.uniform(0.1, 2.0, size=10_000)
        y = m + rng.normal(size=10_000) * np.sqrt(v)
        assert calibration_error(y, m, v) < 0.005
        expected = float(np.mean(0.5 * np.log(2 * np.pi * np.e * v)))
        assert nlpd(y, m, v) == pytest.approx(expected, rel=0.02)


class TestAUROCExamples:
    def test_perfect(self):
        assert noise_separation_auroc([5, 6], [1, 2]) == 1.0

    def test_identical(self):
        assert noise_separation_auroc([1, 2, 3], [1, 2, 3]) == 0.5

    def test_interleaved(self):
        assert noise_separation_auroc([2, 3], [1, 4]) == 0.5

    def test_empty_group(self):
        with pytest.raises(InvalidInputError):
            noise_separation_auroc([], [1.0])


class TestWelch:
    def test_identical(self):
        res = welch_t_test([1, 2, 3], [1, 2, 3])
        assert res["t"] == 0.0
        assert res["p"] == 1.0

    def test_separated(self):
        res = welch_t_test([0, 0, 0, 0], [10, 10, 10, 10.0001])
        assert res["p"] < 1e-3
        assert res["t"] < 0

    def test_matches_scipy(self):
        rng = np.random.default_rng(3)
        a, b = rng.normal(size=12), rng.normal(1.0, 3.0, size=30)
        ref = stats.ttest_ind(a, b, equal_var=False)
        res = welch_t_test(a, b)
        assert res["t"] == pytest.approx(ref.statistic, rel=1e-12)
        assert res["p"] == pytest.approx(ref.pvalue, rel=1e-10)

    def test_null_uniform(self):
        rng = np.random.default_rng(0)
        p = [welch_t_test(rng.normal(size=20), rng.normal(size=30))["p"] for _ in range(1000)]
        assert stats.kstest(p, "uniform").statistic < 0.05

    def test_zero_variance(self):
        with pytest.raises(DegenerateInputError):
            welch_t_test([1.0, 1.0], [1.0, 1.0])

    def test_too_small(self):
        with pytest.raises(InvalidInputError):
            welch_t_test([1.0], [1.0, 2.0])


class TestReport:
    def test_perfect_stub(self):
        r = metric_report([1.0, 2.0, 3.0], [1.0, 2.0, 3.0], [0.5, 0.5, 0.5])
        assert (r.pcc, r.ccc, r.rmse) == (1.0, 1.0, 0.0)
        assert r.n == 3

    def test_text_round_trip(self):
        y, p, v = random_case(4, n=20)
        r = metric_report(y, p, v, seed=42)
        r.extra["epoch"] = 3
        back = MetricReport.from_text(r.to_text())
        assert back.seed == 42 and back.n == 20 and back.extra == {"epoch": 3}
        assert back.to_text() == r.to_text()
        assert back.ccc == pytest.approx(r.ccc, rel=1e-8)
