from pathlib import Path

import numpy as np
import pytest
from pydantic import ValidationError

from baselines import (
    CategoricalColumn,
    NumericComponent,
    PopulationSpec,
    draw_population,
    gen_copy,
    gen_independent,
    gen_perturb,
    load_population_spec,
    sample_population,
)
from conftest import mixture_spec
from errors import ConfigError, DataError

FIXTURES = Path(__file__).resolve().parent.parent / "fixtures"


class TestPopulation:
    def test_zero_rows(self, spec):
        table = sample_population(spec.model_copy(update={"n_rows": 0}))
        assert len(table) == 0
        assert table.schema == spec.schema

    def test_zero_variance_is_the_mean(self):
        spec = PopulationSpec(
            numeric_columns=["x"],
            components=[NumericComponent(mean=[3.5], variance=[0.0], weight=1.0)],
            n_rows=20,
        )
        assert np.all(sample_population(spec).numeric_values("x") == 3.5)

    def test_component_shares(self):
        _, labels = draw_population(mixture_spec(10_000, seed=3))
        share = np.mean(labels == 0)
        assert 0.48 <= share <= 0.52

    def test_category_follows_component(self):
        table, labels = draw_population(mixture_spec(5000, seed=4))
        plan = table.category_values("plan")
        assert np.mean(plan[labels == 0] == "basic") == pytest.approx(0.9, abs=0.03)
        assert np.mean(plan[labels == 1] == "premium") == pytest.approx(0.9, abs=0.03)

    def test_same_seed_same_table(self, spec):
        assert sample_population(spec).canonical_rows == sample_population(spec).canonical_rows
        other = sample_population(spec.model_copy(update={"seed": 1}))
        assert other.canonical_rows != sample_population(spec).canonical_rows

    @pytest.mark.parametrize(
        "kwargs",
        [
            dict(numeric_columns=["x"], components=[NumericComponent(mean=[0.0], variance=[1.0], weight=0.7)]),
            dict(numeric_columns=["x", "y"], components=[NumericComponent(mean=[0.0], variance=[1.0], weight=1.0)]),
            dict(categorical=[CategoricalColumn(name="c", vocabulary=["a"], probabilities=[1.0])] * 2),
            dict(),
        ],
    )
    def test_invalid_specs(self, kwargs):
        with pytest.raises(ValidationError):
            PopulationSpec(**kwargs)

    def test_probabilities_must_sum_to_one(self):
        with pytest.raises(ValidationError):
            CategoricalColumn(name="c", vocabulary=["a", "b"], probabilities=[0.5, 0.6])

    def test_load_fixture(self):
        spec = load_population_spec(FIXTURES / "population.yaml")
        assert spec.n_rows == 2000
        assert "region" in spec.schema.names

    def test_load_errors(self, tmp_path):
        with pytest.raises(ConfigError):
            load_population_spec(tmp_path / "missing.yaml")
        bad = tmp_path / "bad.yaml"
        bad.write_text("population:\n  n_rows: -1\n", encoding="utf-8")
        with pytest.raises(ConfigError):
            load_population_spec(bad)


class TestGenerators:
    def test_copy_is_equal(self, population):
        copied = gen_copy(population)
        assert copied.canonical_rows == population.canonical_rows
        assert copied is not population

    def test_perturb_zero_sigma_is_copy(self, population):
        assert gen_perturb(population, 0.0).canonical_rows == population.canonical_rows

    def test_perturb_negative_sigma(self, population):
        with pytest.raises(ConfigError):
            gen_perturb(population, -0.1)

    def test_perturb_scale(self, population):
        noisy = gen_perturb(population, 0.01, seed=1)
        x, noisy_x = population.numeric_values("x"), noisy.numeric_values("x")
        assert not np.array_equal(x, noisy_x)
        assert np.max(np.abs(x - noisy_x)) < 0.1 * x.std()
        changed = np.mean(population.category_values("plan") != noisy.category_values("plan"))
        assert changed <= 0.05

    def test_perturb_deterministic(self, population):
        a = gen_perturb(population, 0.5, seed=2)
        b = gen_perturb(population, 0.5, seed=2)
        assert a.canonical_rows == b.canonical_rows

    def test_independent_keeps_marginals(self, population):
        shuffled = gen_independent(population, seed=5)
        assert len(shuffled) == len(population)
        x, shuffled_x = population.numeric_values("x"), shuffled.numeric_values("x")
        assert set(shuffled_x) <= set(x)
        assert shuffled_x.mean() == pytest.approx(x.mean(), abs=0.2)
        assert set(shuffled.category_values("plan")) <= {"basic", "premium"}

    def test_independent_breaks_dependence(self):
        population = sample_population(mixture_spec(4000, seed=6))
        shuffled = gen_independent(population, seed=7)
        corr = np.corrcoef(population.numeric_values("x"), population.numeric_values("y"))[0, 1]
        shuffled_corr = np.corrcoef(shuffled.numeric_values("x"), shuffled.numeric_values("y"))[0, 1]
        assert corr > 0.5
        assert abs(shuffled_corr) < 0.1

    def test_independent_needs_rows(self, population):
        with pytest.raises(DataError):
            gen_independent(population.take([]))
