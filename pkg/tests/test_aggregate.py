"""Tests for seed/city aggregation, tie-aware ranking, and diagnostics."""

import math

import numpy as np
import pytest

from urbanbench.aggregate import (
    CityScore,
    ResultRecord,
    city_ranks,
    city_score,
    mean_city_rank,
    overall_rank,
    spearman_factor_correlation,
    split_delta,
    task_summary,
)
from urbanbench.core import HIGHER_BETTER, LOWER_BETTER, ValidationError


def record(value, seed=0, model="m", task="POP", city="c", protocol="spatial", metric="r2"):
    return ResultRecord(model_id=model, task=task, city=city, seed=seed,
                        protocol=protocol, metric=metric, value=value, n_test=10)


def score(value, model="m", task="POP", city="c", protocol="spatial", metric="r2"):
    return CityScore(model_id=model, task=task, city=city, protocol=protocol,
                     metric=metric, value=value, n_seeds=5)


class TestCityScore:
    def test_mean_over_seeds(self):
        s = city_score([record(0.5, seed=0), record(0.7, seed=1)])
        assert abs(s.value - 0.6) < 1e-15

    def test_five_equal_values(self):
        s = city_score([record(0.4, seed=i) for i in range(5)])
        assert s.value == 0.4
        assert s.n_seeds == 5

    def test_degenerate_excluded_with_count(self):
        s = city_score([record(0.2, 0), record(0.4, 1), record(float("nan"), 2)])
        assert abs(s.value - 0.3) < 1e-15
        assert s.n_excluded == 1
        assert s.n_seeds == 2

    def test_all_degenerate_errors(self):
        with pytest.raises(ValidationError):
            city_score([record(float("nan"), 0)])

    def test_mixed_keys_rejected(self):
        with pytest.raises(ValidationError):
            city_score([record(0.1, city="a"), record(0.2, city="b")])


class TestTaskSummary:
    def test_hand_example(self):
        ts = task_summary([score(0.2, city="a"), score(0.4, city="b")])
        assert abs(ts.avg - 0.3) < 1e-15
        assert abs(ts.c_std - math.sqrt(0.02 / 1)) < 1e-12

    def test_equal_scores_zero_std(self):
        ts = task_summary([score(0.5, city=c) for c in "abcd"])
        assert ts.c_std == 0.0

    def test_single_city_undefined_std(self):
        ts = task_summary([score(0.5, city="a")])
        assert ts.c_std is None
        assert ts.n_cities == 1

    def test_empty_errors(self):
        with pytest.raises(ValidationError):
            task_summary([])

    def test_duplicate_city_rejected(self):
        with pytest.raises(ValidationError):
            task_summary([score(0.1, city="a"), score(0.2, city="a")])


class TestCityRanks:
    def test_tie_example(self):
        rr = city_ranks({"a": 0.9, "b": 0.7, "c": 0.9, "d": 0.5}, HIGHER_BETTER)
        assert rr.ranks == {"a": 1, "c": 1, "b": 3, "d": 4}

    def test_single_model(self):
        rr = city_ranks({"only": 0.1}, HIGHER_BETTER)
        assert rr.ranks == {"only": 1}

    def test_lower_better_direction_flip(self):
        rr = city_ranks({"a": 0.04, "b": 0.02}, LOWER_BETTER)
        assert rr.ranks == {"a": 2, "b": 1}

    def test_non_finite_excluded(self):
        rr = city_ranks({"a": 0.5, "b": float("nan")}, HIGHER_BETTER)
        assert rr.ranks == {"a": 1}
        assert rr.excluded == ("b",)

    def test_no_ties_gives_full_rank_set(self):
        rng = np.random.default_rng(0)
        for _ in range(50):
            vals = rng.permutation(rng.standard_normal(8))
            rr = city_ranks({f"m{i}": v for i, v in enumerate(vals)}, HIGHER_BETTER)
            assert sorted(rr.ranks.values()) == list(range(1, 9))

    def test_monotone_transform_invariance(self):
        rng = np.random.default_rng(1)
        scores = {f"m{i}": float(v) for i, v in enumerate(rng.standard_normal(6))}
        base = city_ranks(scores, HIGHER_BETTER).ranks
        transformed = {m: math.exp(3 * v) + 1 for m, v in scores.items()}
        assert city_ranks(transformed, HIGHER_BETTER).ranks == base


class TestOverallRank:
    def test_equal_task_average(self):
        out = overall_rank({"POP": {"m": 2.0}, "LST": {"m": 4.0}})
        assert out.ranks == {"m": 3.0}

    def test_single_task(self):
        out = overall_rank({"POP": {"m": 1.5}})
        assert out.ranks == {"m": 1.5}

    def test_missing_model_excluded(self):
        out = overall_rank({"POP": {"a": 1.0, "b": 2.0}, "LST": {"a": 1.0}})
        assert out.ranks == {"a": 1.0}
        assert out.excluded == ("b",)

    def test_conservation_with_eleven_models(self):
        # sum of overall ranks equals the task-mean of the rank sums
        rng = np.random.default_rng(2)
        models = [f"m{i}" for i in range(11)]
        tables = {}
        for t in ("A", "B", "C"):
            per_city = [dict(city_ranks(
                {m: float(v) for m, v in zip(models, rng.standard_normal(11))},
                HIGHER_BETTER).ranks) for _ in range(4)]
            tables[t] = mean_city_rank(per_city)
        out = overall_rank({t: tables[t] for t in tables})
        lhs = sum(out.ranks.values())
        rhs = sum(sum(tables[t][m] for m in models) for t in tables) / len(tables)
        assert abs(lhs - rhs) < 1e-9

    def test_empty_errors(self):
        with pytest.raises(ValidationError):
            overall_rank({})


class TestPermutationInvariance:
    def test_all_aggregations(self):
        rng = np.random.default_rng(3)
        records = [record(float(v), seed=i) for i, v in enumerate(rng.standard_normal(5))]
        shuffled = [records[i] for i in rng.permutation(5)]
        assert city_score(records) == city_score(shuffled)

        scores = [score(float(rng.standard_normal()), city=c) for c in "abcde"]
        shuffled_scores = [scores[i] for i in rng.permutation(5)]
        assert task_summary(scores) == task_summary(shuffled_scores)


class TestSplitDelta:
    def test_basic_delta(self):
        sd = split_delta([score(0.8, protocol="random")], [score(0.5, protocol="spatial")])
        assert sd.deltas[("m", "POP", "c")] == pytest.approx(0.3)

    def test_equal_scores_zero(self):
        sd = split_delta([score(0.5, protocol="random")], [score(0.5, protocol="spatial")])
        assert sd.deltas[("m", "POP", "c")] == 0.0

    def test_unmatched_key_is_gap(self):
        sd = split_delta([score(0.8, protocol="random", city="a")],
                         [score(0.5, protocol="spatial", city="b")])
        assert not sd.deltas
        assert set(sd.gaps) == {("m", "POP", "a"), ("m", "POP", "b")}


class TestSpearman:
    def test_monotone_increasing(self):
        res = spearman_factor_correlation({"a": 1, "b": 2, "c": 3}, {"a": 10, "b": 20, "c": 30})
        assert res.rho == pytest.approx(1.0)
        assert res.p_value == 0.0

    def test_monotone_decreasing(self):
        res = spearman_factor_correlation({"a": 1, "b": 2, "c": 3}, {"a": 3, "b": 2, "c": 1})
        assert res.rho == pytest.approx(-1.0)

    def test_hand_example(self):
        res = spearman_factor_correlation({"a": 1, "b": 2, "c": 3}, {"a": 3, "b": 1, "c": 2})
        assert res.rho == pytest.approx(-0.5)

    def test_lower_better_sign_flip(self):
        # smaller KL with larger factor => positive association after flip
        res = spearman_factor_correlation({"a": 1, "b": 2, "c": 3},
                                          {"a": 0.3, "b": 0.2, "c": 0.1},
                                          orientation=LOWER_BETTER)
        assert res.rho == pytest.approx(1.0)

    def test_constant_input_undefined(self):
        res = spearman_factor_correlation({"a": 1, "b": 1, "c": 1}, {"a": 1, "b": 2, "c": 3})
        assert res.undefined
        assert res.rho is None

    def test_small_n_flagged_approximate(self):
        res = spearman_factor_correlation({"a": 1, "b": 2, "c": 3}, {"a": 3, "b": 1, "c": 2})
        assert res.approximate

    def test_fewer_than_three_cities_errors(self):
        with pytest.raises(ValidationError):
            spearman_factor_correlation({"a": 1, "b": 2}, {"a": 1, "b": 2})

    def test_matches_scipy_on_random_inputs(self):
        from scipy import stats

        rng = np.random.default_rng(4)
        for _ in range(50):
            n = int(rng.integers(4, 15))
            f = {f"c{i}": float(v) for i, v in enumerate(rng.standard_normal(n))}
            p = {f"c{i}": float(v) for i, v in enumerate(rng.standard_normal(n))}
            res = spearman_factor_correlation(f, p)
            ref_rho, ref_p = stats.spearmanr([f[k] for k in sorted(f)],
                                             [p[k] for k in sorted(p)])
            assert res.rho == pytest.approx(ref_rho, abs=1e-12)
            assert res.p_value == pytest.approx(ref_p, abs=1e-9)
