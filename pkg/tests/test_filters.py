import numpy as np
import pytest

from baselines import sample_population
from conftest import numeric_spec
from dataset import Schema, Table, encode, fit_encoder
from errors import ConfigError, NeighborSearchError, SchemaMismatchError
from filters import (
    FilterConfig,
    RemovalReason,
    apply_privacy_filters,
    outlier_filter,
    similarity_filter,
)
from metrics import exact_match_share
from nn_engine import knn


@pytest.fixture
def train() -> Table:
    return sample_population(numeric_spec(1000, seed=1))


def with_copies(train: Table, synth: Table, rows: list[int]) -> Table:
    return synth.concat(train.take(rows))


class TestSimilarityFilter:
    def test_removes_exact_copies(self, train):
        synth = with_copies(train, sample_population(numeric_spec(200, seed=2)), [3, 7])
        result = similarity_filter(synth, train, threshold=1e-9)
        assert result.removed_indices == [200, 201]
        assert result.removal_reason is RemovalReason.TOO_SIMILAR
        assert exact_match_share(train, result.filtered) == 0.0

    def test_zero_threshold_removes_nothing(self, train):
        synth = with_copies(train, sample_population(numeric_spec(50, seed=2)), [0])
        result = similarity_filter(synth, train, threshold=0.0)
        assert result.removed_indices == []
        assert result.filtered is synth

    def test_resolved_threshold_contract(self, train):
        synth = with_copies(train, sample_population(numeric_spec(500, seed=3)), [1, 2, 3])
        result = similarity_filter(synth, train)
        assert result.quantile == 0.01
        assert result.threshold_used > 0.0
        stats = fit_encoder(train)
        remaining = knn(encode(result.filtered, stats), encode(train, stats), 1).nearest
        assert remaining.min() >= result.threshold_used
        assert exact_match_share(train, result.filtered) == 0.0
        assert len(result.filtered) + result.n_removed == len(synth)

    def test_idempotent_at_resolved_threshold(self, train):
        synth = sample_population(numeric_spec(500, seed=4))
        first = similarity_filter(synth, train)
        second = similarity_filter(first.filtered, train, threshold=first.threshold_used)
        assert second.removed_indices == []

    def test_quantile_lifted_when_train_has_duplicates(self):
        schema = Schema.from_mapping({"x": "numeric"})
        train = Table.from_rows(schema, [[0.0], [0.0], [2.0], [2.0], [4.0], [10.0]])
        synth = Table.from_rows(schema, [[1.0], [7.0]])
        result = similarity_filter(synth, train, quantile=0.1)
        # 编码后内部距离为 [0, 0, 0, 0, 0.2, 0.6]，分位数为 0，抬到 0.2
        assert result.threshold_used == pytest.approx(0.2)
        assert result.removed_indices == [0]

    def test_survivors_keep_order(self, train):
        synth = sample_population(numeric_spec(100, seed=5))
        synth = synth.concat(train.take([0])).concat(sample_population(numeric_spec(10, seed=6)))
        result = similarity_filter(synth, train, threshold=1e-9)
        assert result.removed_indices == [100]
        kept = [i for i in range(len(synth)) if i != 100]
        assert result.filtered.canonical_rows == [synth.canonical_rows[i] for i in kept]

    def test_bad_arguments(self, train):
        with pytest.raises(ConfigError):
            similarity_filter(train, train, threshold=-1.0)
        with pytest.raises(ConfigError):
            similarity_filter(train, train, quantile=1.0)
        with pytest.raises(ConfigError):
            similarity_filter(train, train, threshold=0.1, quantile=0.1)
        with pytest.raises(SchemaMismatchError):
            similarity_filter(train.drop(["z"]), train)


class TestOutlierFilter:
    def test_far_row_removed(self, train):
        schema = train.schema
        far = Table.from_rows(schema, [[1e6, 1e6, 1e6]])
        synth = sample_population(numeric_spec(100, seed=7)).concat(far)
        result = outlier_filter(synth, train)
        assert 100 in result.removed_indices
        assert result.removal_reason is RemovalReason.OUTLIER

    def test_subsample_of_train_removes_about_one_percent(self, train):
        rows = np.random.default_rng(0).choice(len(train), size=500, replace=False)
        synth = train.take(np.sort(rows))
        result = outlier_filter(synth, train, k=5, quantile=0.99)
        assert 0.0 <= result.n_removed / len(synth) <= 0.02

    def test_empty_synth(self, train):
        result = outlier_filter(train.take([]), train)
        assert len(result.filtered) == 0 and result.removed_indices == []

    def test_k_too_large(self):
        schema = Schema.from_mapping({"x": "numeric"})
        train = Table.from_rows(schema, [[0.0], [1.0], [2.0]])
        with pytest.raises(NeighborSearchError, match="k too large"):
            outlier_filter(train, train, k=3)

    def test_idempotent_at_resolved_threshold(self, train):
        synth = sample_population(numeric_spec(300, seed=8))
        first = outlier_filter(synth, train)
        second = outlier_filter(first.filtered, train, threshold=first.threshold_used)
        assert second.removed_indices == []


def test_combined_filters_map_back_to_original_rows(train):
    far = Table.from_rows(train.schema, [[1e6, 1e6, 1e6]])
    synth = sample_population(numeric_spec(100, seed=9)).concat(train.take([5])).concat(far)
    filtered, results = apply_privacy_filters(synth, train, FilterConfig(similarity_threshold=1e-9))
    similar, outlier = results
    assert similar.removed_indices == [100]
    assert 101 in outlier.removed_indices
    removed = set(similar.removed_indices) | set(outlier.removed_indices)
    assert len(filtered) == len(synth) - len(removed)
    assert outlier.summary().n_input == len(synth) - 1


def test_filter_config_needs_one_filter():
    with pytest.raises(ValueError):
        FilterConfig(similarity=False, outlier=False)
