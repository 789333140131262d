"""
近邻引擎 - 编码空间中的精确 k 近邻

两条路径：
- brute_force_knn：逐行全量扫描，作为参考实现
- tree_knn：cKDTree 先圈出候选集，再用同一个距离核重新计算、排序
两条路径得到的距离逐位相同；距离相等时取较小的参考行下标。
只做精确近邻，阈值附近的判定不能容忍近似误差。
"""
import logging
from dataclasses import dataclass

import numpy as np
from scipy import stats as sps
from scipy.spatial import cKDTree
from scipy.spatial.distance import cdist

from dataset import ColumnKind, EncodedMatrix, Table
from errors import NeighborSearchError

logger = logging.getLogger(__name__)

TREE_MIN_REFERENCE_ROWS = 64
BRUTE_BLOCK_ROWS = 1024
ENTROPY_MAX_BINS = 32
_RADIUS_SLACK = 1e-9
_RADIUS_FLOOR = 1e-12


@dataclass(frozen=True, eq=False)
class NeighborResult:
    """每个查询行按距离非降序排列的 k 个近邻"""
    indices: np.ndarray
    distances: np.ndarray

    @property
    def k(self) -> int:
        return self.indices.shape[1]

    @property
    def n_queries(self) -> int:
        return self.indices.shape[0]

    @property
    def nearest(self) -> np.ndarray:
        return self.distances[:, 0]

    @property
    def kth(self) -> np.ndarray:
        return self.distances[:, -1]


@dataclass(frozen=True)
class ColumnEntropy:
    column: str
    entropy: float


# ============================================================
# 距离核
# ============================================================

def pair_distances(queries: np.ndarray, reference: np.ndarray) -> np.ndarray:
    """
    查询行到参考行的欧氏距离矩阵

    cdist 逐对计算，每个距离只取决于这两行本身，两条查询路径因此逐位一致。
    """
    return cdist(queries, reference, metric="euclidean")


def _select_k(distances: np.ndarray, candidates: np.ndarray, k: int) -> tuple[np.ndarray, np.ndarray]:
    order = np.lexsort((candidates, distances))[:k]
    return candidates[order], distances[order]


def _check_query(queries: EncodedMatrix, reference: EncodedMatrix, k: int, exclude_self: bool) -> None:
    if queries.n_dims != reference.n_dims:
        raise NeighborSearchError(
            f"dimension mismatch: queries {queries.n_dims} vs reference {reference.n_dims}"
        )
    if k < 1:
        raise NeighborSearchError(f"k 必须 ≥ 1: {k}")
    if exclude_self and queries is not reference:
        raise NeighborSearchError("exclude_self 只能用于同一矩阵的自查询")
    available = reference.n_rows - (1 if exclude_self else 0)
    if k > available:
        raise NeighborSearchError(f"k too large: k={k}, 可用参考行 {available}")


def _empty(k: int) -> NeighborResult:
    return NeighborResult(np.zeros((0, k), dtype=np.int64), np.zeros((0, k), dtype=np.float64))


# ============================================================
# 两条查询路径
# ============================================================

def brute_force_knn(
    queries: EncodedMatrix, reference: EncodedMatrix, k: int, exclude_self: bool = False
) -> NeighborResult:
    """O(n·m) 全量扫描，参考实现；按 BRUTE_BLOCK_ROWS 行一块计算距离"""
    _check_query(queries, reference, k, exclude_self)
    if queries.n_rows == 0:
        return _empty(k)
    q, r = queries.values, reference.values
    all_idx = np.arange(r.shape[0], dtype=np.int64)
    out_idx = np.empty((q.shape[0], k), dtype=np.int64)
    out_dist = np.empty((q.shape[0], k), dtype=np.float64)
    for start in range(0, q.shape[0], BRUTE_BLOCK_ROWS):
        block = pair_distances(q[start:start + BRUTE_BLOCK_ROWS], r)
        for offset, dist in enumerate(block):
            i = start + offset
            cand = all_idx
            if exclude_self:
                keep = all_idx != i
                dist, cand = dist[keep], cand[keep]
            out_idx[i], out_dist[i] = _select_k(dist, cand, k)
    return NeighborResult(out_idx, out_dist)


@dataclass(frozen=True, eq=False)
class _UniqueReference:
    """去重后的参考行；members[starts[g]:starts[g] + counts[g]] 是第 g 组的原始下标（升序）"""
    rows: np.ndarray
    members: np.ndarray
    starts: np.ndarray
    counts: np.ndarray

    @classmethod
    def build(cls, reference: np.ndarray) -> "_UniqueReference":
        rows, inverse, counts = np.unique(reference, axis=0, return_inverse=True, return_counts=True)
        members = np.argsort(inverse.reshape(-1), kind="stable").astype(np.int64)
        starts = np.concatenate([[0], np.cumsum(counts)[:-1]]).astype(np.int64)
        return cls(rows, members, starts, counts.astype(np.int64))

    def expand(self, groups: np.ndarray, limit: int) -> tuple[np.ndarray, np.ndarray]:
        """每组取下标最小的至多 limit 个原始行；第二个返回值是每行所属组在 groups 中的位置"""
        taken = np.minimum(self.counts[groups], limit)
        position = np.repeat(np.arange(groups.size), taken)
        offsets = np.arange(taken.sum()) - np.repeat(np.cumsum(taken) - taken, taken)
        return self.members[self.starts[groups[position]] + offsets], position


def tree_knn(
    queries: EncodedMatrix,
    reference: EncodedMatrix,
    k: int,
    exclude_self: bool = False,
    workers: int = 1,
) -> NeighborResult:
    """
    cKDTree 加速路径

    参考行先去重再建树，重复行和低基数数据的平局点不会让候选集膨胀。
    第 k 近（自查询时第 k+1 近）的不同参考行距离作为半径圈出候选组，
    每组只展开下标最小的 k+1 个原始行，再按 (距离, 下标) 排序。
    """
    _check_query(queries, reference, k, exclude_self)
    if queries.n_rows == 0:
        return _empty(k)
    q, r = queries.values, reference.values
    if r.shape[1] == 0:
        return brute_force_knn(queries, reference, k, exclude_self)

    unique = _UniqueReference.build(r)
    tree = cKDTree(unique.rows)
    depth = k + (1 if exclude_self else 0)
    bound, _ = tree.query(q, k=[min(depth, unique.rows.shape[0])], workers=workers)
    radii = bound[:, 0] * (1.0 + _RADIUS_SLACK) + _RADIUS_FLOOR
    group_lists = tree.query_ball_point(q, radii, workers=workers)

    out_idx = np.empty((q.shape[0], k), dtype=np.int64)
    out_dist = np.empty((q.shape[0], k), dtype=np.float64)
    for i, found in enumerate(group_lists):
        groups = np.asarray(found, dtype=np.int64)
        group_dist = pair_distances(q[i:i + 1], unique.rows[groups])[0]
        cand, position = unique.expand(groups, depth)
        dist = group_dist[position]
        if exclude_self:
            keep = cand != i
            cand, dist = cand[keep], dist[keep]
        if cand.size < k:
            # 半径容差理论上覆盖全部平局组，这里只是兜底
            cand = np.arange(r.shape[0], dtype=np.int64)
            if exclude_self:
                cand = cand[cand != i]
            dist = pair_distances(q[i:i + 1], r[cand])[0]
        out_idx[i], out_dist[i] = _select_k(dist, cand, k)
    return NeighborResult(out_idx, out_dist)


def knn(
    queries: EncodedMatrix,
    reference: EncodedMatrix,
    k: int,
    exclude_self: bool = False,
    method: str = "auto",
    workers: int = 1,
) -> NeighborResult:
    """
    精确欧氏 k 近邻

    Args:
        queries: 查询矩阵
        reference: 参考矩阵
        k: 近邻个数
        exclude_self: 自查询（queries 与 reference 为同一对象）时排除自身
        method: auto / tree / brute
        workers: cKDTree 查询的并行线程数，不影响结果

    Raises:
        NeighborSearchError: 维度不一致、k 过大、exclude_self 用在非自查询上
    """
    if method == "brute":
        return brute_force_knn(queries, reference, k, exclude_self)
    if method == "tree":
        return tree_knn(queries, reference, k, exclude_self, workers)
    if method != "auto":
        raise NeighborSearchError(f"未知查询方式: {method}，可选: auto / tree / brute")
    if reference.n_rows >= TREE_MIN_REFERENCE_ROWS and reference.n_dims > 0:
        return tree_knn(queries, reference, k, exclude_self, workers)
    return brute_force_knn(queries, reference, k, exclude_self)


# ============================================================
# 列熵（AIA 的权重）
# ============================================================

def _binned_counts(values: np.ndarray) -> np.ndarray:
    """Freedman–Diaconis 分箱，箱数上限 32"""
    edges = np.histogram_bin_edges(values, bins="fd")
    bins = edges if edges.size - 1 <= ENTROPY_MAX_BINS else ENTROPY_MAX_BINS
    counts, _ = np.histogram(values, bins=bins)
    return counts[counts > 0]


def column_entropy(table: Table, column: str) -> ColumnEntropy:
    """
    列的经验香农熵（bit），缺失值不计入

    数值列先分箱再计算，连续列的熵否则无定义。
    """
    kind = table.schema.kind_of(column)
    if kind is ColumnKind.NUMERIC:
        values = table.numeric_values(column)
        values = values[~np.isnan(values)]
        counts = _binned_counts(values) if values.size else np.zeros(0)
    else:
        counts = table.frame[column].value_counts(dropna=True).to_numpy(dtype=np.float64)
    if counts.size == 0:
        return ColumnEntropy(column, 0.0)
    entropy = float(sps.entropy(np.sort(counts), base=2))
    return ColumnEntropy(column, max(entropy, 0.0))
