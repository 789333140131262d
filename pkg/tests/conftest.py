import numpy as np
import pytest

from baselines import CategoricalColumn, NumericComponent, PopulationSpec, sample_population
from dataset import EncodedMatrix, Schema, Table, encode, fit_encoder


def mixture_spec(n_rows: int = 1000, seed: int = 0) -> PopulationSpec:
    """两分量高斯混合，类别列 plan 与分量相关"""
    return PopulationSpec(
        numeric_columns=["x", "y"],
        components=[
            NumericComponent(mean=[0.0, 0.0], variance=[1.0, 1.0], weight=0.5),
            NumericComponent(mean=[4.0, 3.0], variance=[0.5, 2.0], weight=0.5),
        ],
        categorical=[
            CategoricalColumn(
                name="plan", vocabulary=["basic", "premium"], per_component=[[0.9, 0.1], [0.1, 0.9]]
            ),
        ],
        n_rows=n_rows,
        seed=seed,
    )


def numeric_spec(n_rows: int = 1000, seed: int = 0) -> PopulationSpec:
    return PopulationSpec(
        numeric_columns=["x", "y", "z"],
        components=[
            NumericComponent(mean=[0.0, 0.0, 0.0], variance=[1.0, 1.0, 1.0], weight=0.5),
            NumericComponent(mean=[3.0, -2.0, 1.0], variance=[1.0, 0.5, 2.0], weight=0.5),
        ],
        n_rows=n_rows,
        seed=seed,
    )


def encode_all(train: Table, *others: Table) -> list[EncodedMatrix]:
    stats = fit_encoder(train)
    return [encode(train, stats)] + [encode(t, stats) for t in others]


def random_matrix(rng: np.random.Generator, n: int, d: int) -> EncodedMatrix:
    return EncodedMatrix(rng.random((n, d)))


@pytest.fixture
def spec() -> PopulationSpec:
    return mixture_spec()


@pytest.fixture
def population(spec) -> Table:
    return sample_population(spec)


@pytest.fixture
def small_table() -> Table:
    schema = Schema.from_mapping({"age": "numeric", "city": "categorical", "disease": "categorical"})
    return Table.from_rows(
        schema,
        [
            [30, "A", "flu"],
            [30, "A", "cold"],
            [40, "B", "flu"],
            [40, "B", "flu"],
            [50, "C", None],
        ],
    )
