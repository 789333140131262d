import numpy as np
import pytest
from pydantic import ValidationError

from attacks import (
    AiaConfig,
    Grade,
    MiaConfig,
    aia_aggregate_neighbors,
    aia_run,
    grade_for,
    mia_build_attack_set,
    mia_run,
)
from baselines import gen_copy, gen_independent, sample_population
from conftest import mixture_spec, numeric_spec
from dataset import Schema, SplitConfig, Table, split_holdout
from errors import ConfigError, DataError, NeighborSearchError, SchemaMismatchError


class TestGrade:
    @pytest.mark.parametrize(
        "composite, grade",
        [
            (0.0, Grade.EXCELLENT),
            (0.4999, Grade.EXCELLENT),
            (0.5, Grade.VERY_GOOD),
            (0.65, Grade.GOOD),
            (0.7, Grade.MODERATE),
            (0.8, Grade.POOR),
            (1.0, Grade.POOR),
        ],
    )
    def test_bands(self, composite, grade):
        assert grade_for(composite) is grade

    def test_monotone(self):
        ranks = [grade_for(x / 100).rank for x in range(101)]
        assert ranks == sorted(ranks)

    def test_ordering(self):
        assert Grade.EXCELLENT.at_least(Grade.GOOD)
        assert Grade.GOOD.at_least(Grade.GOOD)
        assert not Grade.POOR.at_least(Grade.GOOD)


class TestAttackSet:
    def test_balanced(self, population):
        train, holdout = split_holdout(population, SplitConfig(0.005))
        attack = mia_build_attack_set(train, holdout, seed=1)
        assert len(holdout) == 5
        assert len(attack.table) == 10
        assert attack.n_members == attack.n_non_members == 5

    def test_minimum_case(self, small_table):
        attack = mia_build_attack_set(small_table.take([0, 1, 2, 3]), small_table.take([4]))
        assert len(attack.table) == 2

    def test_deterministic(self, population):
        train, holdout = split_holdout(population, SplitConfig(0.05))
        a = mia_build_attack_set(train, holdout, seed=3)
        b = mia_build_attack_set(train, holdout, seed=3)
        assert a.table.canonical_rows == b.table.canonical_rows
        assert a.is_member.tolist() == b.is_member.tolist()

    def test_insufficient_train(self, small_table):
        with pytest.raises(DataError, match="insufficient train rows"):
            mia_build_attack_set(small_table.take([0]), small_table.take([1, 2, 3]))


class TestMia:
    def test_config_validation(self):
        with pytest.raises(ValidationError):
            MiaConfig(threshold_quantiles=[])
        with pytest.raises(ValidationError):
            MiaConfig(train_sample_fractions=[1.5])
        with pytest.raises(ValidationError):
            MiaConfig(n_trials=0)

    def test_copier_is_poor(self, population):
        train, holdout = split_holdout(population, SplitConfig(0.05))
        report = mia_run(train, holdout, gen_copy(train), MiaConfig(threshold_quantiles=[0.5], n_trials=3))
        assert report.avg_precision >= 0.8
        assert report.avg_accuracy >= 0.8
        assert report.grade is Grade.POOR

    def test_copier_is_poor_with_default_quantiles(self, population):
        train, holdout = split_holdout(population, SplitConfig(0.05))
        report = mia_run(train, holdout, gen_copy(train))
        assert report.composite_score >= 0.8
        assert report.grade is Grade.POOR
        assert all(t.tp + t.fn == t.fp + t.tn for t in report.trials)

    def test_trial_product(self, population):
        train, holdout = split_holdout(population, SplitConfig(0.1))
        cfg = MiaConfig(train_sample_fractions=[0.5, 1.0], threshold_quantiles=[0.1, 0.2], n_trials=2)
        report = mia_run(train, holdout, sample_population(mixture_spec(500, seed=5)), cfg)
        assert len(report.trials) == 8
        half = [t for t in report.trials if t.fraction == 0.5]
        assert all(t.tp + t.fn == 50 for t in half)

    def test_null_calibration(self):
        population = sample_population(numeric_spec(2000, seed=1))
        train, holdout = split_holdout(population, SplitConfig(0.1))
        synth = sample_population(numeric_spec(2000, seed=2))
        report = mia_run(train, holdout, synth, MiaConfig(n_trials=10))
        assert len(report.trials) >= 20
        assert 0.45 <= report.avg_accuracy <= 0.55

    def test_independent_columns_are_near_chance(self):
        population = sample_population(mixture_spec(2000, seed=6))
        train, holdout = split_holdout(population, SplitConfig(0.1))
        report = mia_run(train, holdout, gen_independent(train, seed=7), MiaConfig(n_trials=10))
        assert 0.4 <= report.avg_accuracy <= 0.6

    def test_deterministic(self, population):
        train, holdout = split_holdout(population, SplitConfig(0.05))
        synth = sample_population(mixture_spec(300, seed=4))
        assert mia_run(train, holdout, synth) == mia_run(train, holdout, synth)

    def test_synth_too_small(self, population):
        train, holdout = split_holdout(population, SplitConfig(0.05))
        with pytest.raises(DataError):
            mia_run(train, holdout, train.take([0]))

    def test_schema_mismatch(self, population):
        train, holdout = split_holdout(population, SplitConfig(0.05))
        with pytest.raises(SchemaMismatchError):
            mia_run(train, holdout, train.drop(["plan"]))


class TestAggregate:
    def test_mode_mean_and_ties(self):
        schema = Schema.from_mapping({"c": "categorical", "x": "numeric"})
        assert aia_aggregate_neighbors(
            Table.from_rows(schema, [["a", 1.0], ["a", 2.0], ["b", 3.0]])
        ) == {"c": "a", "x": 2.0}
        assert aia_aggregate_neighbors(Table.from_rows(schema, [["b", 1.0], ["a", 1.0]]))["c"] == "a"

    def test_missing_excluded(self):
        schema = Schema.from_mapping({"c": "categorical", "x": "numeric"})
        prediction = aia_aggregate_neighbors(Table.from_rows(schema, [[None, None], [None, 4.0]]))
        assert prediction == {"c": None, "x": 4.0}


def binary_table(n: int, seed: int) -> Table:
    """x 连续，label 是与 x 无关的 50/50 二值列，const 是常量列"""
    rng = np.random.default_rng(seed)
    schema = Schema.from_mapping({"x": "numeric", "label": "categorical", "const": "categorical"})
    return Table.from_columns(
        schema,
        {
            "x": rng.random(n),
            "label": list(rng.choice(["yes", "no"], size=n)),
            "const": ["k"] * n,
        },
    )


class TestAia:
    def test_copy_with_k1_is_perfect(self):
        real = binary_table(500, seed=0)
        report = aia_run(real, gen_copy(real), AiaConfig.fixed(["x"], k=1))
        assert {r.column for r in report.per_column} == {"label", "const"}
        assert all(r.accuracy == 1.0 for r in report.per_column)

    def test_independent_columns_give_coin_flip(self):
        real = binary_table(4000, seed=1)
        report = aia_run(real, gen_independent(real, seed=2), AiaConfig.fixed(["x"], n_attack_records=2000))
        label = next(r for r in report.per_column if r.column == "label")
        assert label.n_evaluated == 2000
        assert 0.45 <= label.accuracy <= 0.55

    def test_correlated_column_drops_to_marginal_rate(self):
        # plan 由混合分量决定，(x, y) 能推断分量；逐列独立抽样切断这种关联
        real = sample_population(mixture_spec(4000, seed=3))
        cfg = AiaConfig.fixed(["x", "y"], n_attack_records=2000, seed=1)
        fresh = aia_run(real, sample_population(mixture_spec(4000, seed=4)), cfg)
        independent = aia_run(real, gen_independent(real, seed=5), cfg)
        assert fresh.per_column[0].accuracy >= 0.75
        assert 0.42 <= independent.per_column[0].accuracy <= 0.58

    def test_constant_column_gets_zero_weight(self):
        real = binary_table(300, seed=3)
        report = aia_run(real, gen_copy(real), AiaConfig.fixed(["x"]))
        const = next(r for r in report.per_column if r.column == "const")
        assert const.accuracy == 1.0
        assert const.entropy_weight == 0.0
        assert sum(r.entropy_weight for r in report.per_column) == pytest.approx(1.0)

    def test_random_qids(self, population):
        report = aia_run(population, gen_copy(population), AiaConfig.random(2, k=1, seed=4))
        assert report.mode == "random"
        assert report.n_attack_records == 200
        assert sum(r.n_evaluated for r in report.per_column) == 200
        for r in report.per_column:
            assert 0.0 <= r.accuracy <= 1.0
        assert 0.0 <= report.overall_entropy_weighted <= 1.0

    def test_qids_cover_every_column(self, population):
        with pytest.raises(ConfigError):
            aia_run(population, population, AiaConfig.fixed(["x", "y", "plan"]))
        with pytest.raises(ConfigError):
            aia_run(population, population, AiaConfig.random(3))

    def test_unknown_qid(self, population):
        with pytest.raises(DataError):
            aia_run(population, population, AiaConfig.fixed(["nope"]))

    def test_k_larger_than_synth(self, population):
        with pytest.raises(NeighborSearchError):
            aia_run(population, population.take([0, 1]), AiaConfig.fixed(["x"], k=5))

    def test_fixed_mode_needs_qids(self):
        with pytest.raises(ValidationError):
            AiaConfig(mode="fixed")

    def test_synth_row_order_does_not_matter(self, population):
        synth = sample_population(mixture_spec(400, seed=8))
        shuffled = synth.take(np.random.default_rng(0).permutation(len(synth)))
        cfg = AiaConfig.fixed(["x"], seed=1)
        assert aia_run(population, synth, cfg) == aia_run(population, shuffled, cfg)
