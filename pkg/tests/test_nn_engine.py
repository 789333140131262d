import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from dataset import EncodedMatrix, Schema, Table
from errors import NeighborSearchError
from nn_engine import brute_force_knn, column_entropy, knn, tree_knn


@st.composite
def knn_instances(draw):
    """随机小矩阵；取值落在一个粗网格上，距离平局经常出现"""
    n_ref = draw(st.integers(min_value=2, max_value=40))
    n_query = draw(st.integers(min_value=1, max_value=15))
    dims = draw(st.integers(min_value=1, max_value=4))
    seed = draw(st.integers(min_value=0, max_value=2**32 - 1))
    grid = draw(st.sampled_from([2, 4, 10, 0]))
    rng = np.random.default_rng(seed)
    if grid:
        reference = rng.integers(0, grid, size=(n_ref, dims)) / grid
        queries = rng.integers(0, grid, size=(n_query, dims)) / grid
    else:
        reference = rng.random((n_ref, dims))
        queries = rng.random((n_query, dims))
    self_mode = draw(st.booleans())
    max_k = n_ref - 1 if self_mode else n_ref
    k = draw(st.integers(min_value=1, max_value=min(max_k, 6)))
    return EncodedMatrix(queries), EncodedMatrix(reference), k, self_mode


@settings(max_examples=1000, deadline=None)
@given(knn_instances())
def test_tree_matches_brute_force_exactly(instance):
    queries, reference, k, self_mode = instance
    if self_mode:
        queries = reference
    expected = brute_force_knn(queries, reference, k, exclude_self=self_mode)
    actual = tree_knn(queries, reference, k, exclude_self=self_mode)
    np.testing.assert_array_equal(actual.indices, expected.indices)
    np.testing.assert_array_equal(actual.distances, expected.distances)


@pytest.mark.parametrize("self_mode", [False, True])
def test_low_cardinality_reference_matches_brute_force(self_mode):
    # 两个二值类别列：3000 行只有 4 个不同取值，几乎所有距离都平局
    rng = np.random.default_rng(5)
    reference = EncodedMatrix(rng.integers(0, 2, size=(3000, 2)) / np.sqrt(2.0))
    queries = reference if self_mode else EncodedMatrix(rng.integers(0, 2, size=(200, 2)) / np.sqrt(2.0))
    expected = brute_force_knn(queries, reference, 3, exclude_self=self_mode)
    actual = tree_knn(queries, reference, 3, exclude_self=self_mode)
    np.testing.assert_array_equal(actual.indices, expected.indices)
    np.testing.assert_array_equal(actual.distances, expected.distances)


def test_duplicated_rows_keep_lowest_indices():
    rows = np.repeat(np.array([[0.0, 0.0], [1.0, 0.0]]), 100, axis=0)
    reference = EncodedMatrix(rows)
    result = knn(reference, reference, 2, exclude_self=True, method="tree")
    assert result.indices[0].tolist() == [1, 2]
    assert result.indices[100].tolist() == [101, 102]
    assert result.indices[150].tolist() == [100, 101]
    assert not result.distances.any()


def test_ties_break_by_lowest_index():
    reference = EncodedMatrix(np.array([[1.0], [0.0], [1.0], [-1.0]]))
    queries = EncodedMatrix(np.array([[0.0]]))
    result = knn(queries, reference, 3, method="tree")
    assert result.indices.tolist() == [[1, 0, 2]]
    assert result.distances.tolist() == [[0.0, 1.0, 1.0]]


def test_exclude_self_skips_own_row_but_keeps_duplicates():
    reference = EncodedMatrix(np.array([[0.0], [0.0], [5.0]]))
    result = knn(reference, reference, 1, exclude_self=True)
    assert result.indices[:, 0].tolist() == [1, 0, 0]
    assert result.nearest.tolist() == [0.0, 0.0, 5.0]


def test_distances_sorted_and_kth():
    rng = np.random.default_rng(0)
    reference = EncodedMatrix(rng.random((200, 3)))
    result = knn(EncodedMatrix(rng.random((20, 3))), reference, 5)
    assert np.all(np.diff(result.distances, axis=1) >= 0)
    np.testing.assert_array_equal(result.kth, result.distances[:, 4])


def test_workers_do_not_change_result():
    rng = np.random.default_rng(1)
    reference = EncodedMatrix(rng.random((300, 4)))
    queries = EncodedMatrix(rng.random((50, 4)))
    one = knn(queries, reference, 3, workers=1)
    many = knn(queries, reference, 3, workers=-1)
    np.testing.assert_array_equal(one.indices, many.indices)
    np.testing.assert_array_equal(one.distances, many.distances)


def test_empty_queries():
    reference = EncodedMatrix(np.zeros((3, 2)))
    result = knn(EncodedMatrix(np.zeros((0, 2))), reference, 2)
    assert result.indices.shape == (0, 2)


@pytest.mark.parametrize(
    "queries, k, exclude_self, match",
    [
        (np.zeros((1, 3)), 1, False, "dimension mismatch"),
        (np.zeros((1, 2)), 4, False, "k too large"),
        (np.zeros((1, 2)), 0, False, "k"),
    ],
)
def test_precondition_errors(queries, k, exclude_self, match):
    reference = EncodedMatrix(np.zeros((3, 2)))
    with pytest.raises(NeighborSearchError, match=match):
        knn(EncodedMatrix(queries), reference, k, exclude_self=exclude_self)


def test_exclude_self_needs_same_matrix():
    reference = EncodedMatrix(np.zeros((3, 2)))
    with pytest.raises(NeighborSearchError):
        knn(EncodedMatrix(np.zeros((3, 2))), reference, 1, exclude_self=True)


def test_self_query_k_too_large():
    reference = EncodedMatrix(np.zeros((3, 2)))
    with pytest.raises(NeighborSearchError, match="k too large"):
        knn(reference, reference, 3, exclude_self=True)


class TestColumnEntropy:
    def test_constant_column_has_zero_entropy(self):
        schema = Schema.from_mapping({"c": "categorical", "x": "numeric"})
        table = Table.from_rows(schema, [["a", 1.0]] * 10)
        assert column_entropy(table, "c").entropy == 0.0
        assert column_entropy(table, "x").entropy == 0.0

    def test_balanced_binary_is_one_bit(self):
        schema = Schema.from_mapping({"c": "categorical"})
        table = Table.from_rows(schema, [["a"], ["b"]] * 50)
        assert column_entropy(table, "c").entropy == pytest.approx(1.0)

    def test_missing_values_ignored(self):
        schema = Schema.from_mapping({"c": "categorical"})
        table = Table.from_rows(schema, [["a"], [None], ["a"]])
        assert column_entropy(table, "c").entropy == 0.0

    def test_numeric_column_is_binned(self):
        schema = Schema.from_mapping({"x": "numeric"})
        values = np.random.default_rng(0).random(1000)
        table = Table.from_columns(schema, {"x": values})
        entropy = column_entropy(table, "x").entropy
        assert 0.0 < entropy <= np.log2(32) + 1e-9

    def test_four_balanced_categories_are_two_bits(self):
        schema = Schema.from_mapping({"c": "categorical"})
        table = Table.from_rows(schema, [["a"], ["b"], ["c"], ["d"]] * 25)
        assert column_entropy(table, "c").entropy == pytest.approx(2.0)

    def test_numeric_bins_are_capped(self):
        schema = Schema.from_mapping({"x": "numeric"})
        values = np.random.default_rng(1).standard_normal(100_000)
        table = Table.from_columns(schema, {"x": values})
        assert column_entropy(table, "x").entropy <= np.log2(32) + 1e-9
