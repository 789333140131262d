"""
隐私过滤 - 对合成数据做后处理，删掉高风险记录

- similarity_filter：与某条训练记录过于相似的合成记录
- outlier_filter：相对训练数据是离群点的合成记录
两个过滤器都只删除行，保留下来的行保持原有顺序。
"""
import logging
from dataclasses import dataclass
from enum import Enum
from typing import Optional

import numpy as np
from pydantic import BaseModel, Field, model_validator

from dataset import EncodingStats, Table, encode, fit_encoder, require_same_schema
from errors import ConfigError, DataError, NeighborSearchError
from nn_engine import knn

logger = logging.getLogger(__name__)

DEFAULT_SIMILARITY_QUANTILE = 0.01
DEFAULT_OUTLIER_K = 5
DEFAULT_OUTLIER_QUANTILE = 0.99

DP_FILTER_WARNING = (
    "隐私过滤器的删除决定依赖训练数据本身，不适用于需要差分隐私保证的场景；"
    "过滤后的数据不再满足生成器原有的 DP 保证"
)
SIMILARITY_DEFAULT_NOTE = (
    "“过于相似”没有公认的数值定义，默认阈值取训练集内部最近邻距离的 1% 分位数"
)


class RemovalReason(str, Enum):
    TOO_SIMILAR = "TooSimilar"
    OUTLIER = "Outlier"


class FilterSummary(BaseModel):
    """写进报告的过滤摘要（不含数据本身）"""
    reason: RemovalReason
    threshold_used: float
    quantile: Optional[float] = Field(default=None, description="阈值由分位数解析得到时的分位数")
    k: Optional[int] = None
    n_input: int
    n_removed: int
    removed_indices: list[int]


@dataclass(frozen=True, eq=False)
class FilterResult:
    filtered: Table
    removed_indices: list[int]
    removal_reason: RemovalReason
    threshold_used: float
    quantile: Optional[float] = None
    k: Optional[int] = None

    @property
    def n_removed(self) -> int:
        return len(self.removed_indices)

    def summary(self) -> FilterSummary:
        return FilterSummary(
            reason=self.removal_reason,
            threshold_used=self.threshold_used,
            quantile=self.quantile,
            k=self.k,
            n_input=len(self.filtered) + self.n_removed,
            n_removed=self.n_removed,
            removed_indices=list(self.removed_indices),
        )


class FilterConfig(BaseModel):
    """组合过滤的参数；similarity_threshold / outlier_threshold 给定时优先于分位数"""
    similarity: bool = True
    similarity_quantile: float = Field(default=DEFAULT_SIMILARITY_QUANTILE, gt=0.0, lt=1.0)
    similarity_threshold: Optional[float] = Field(default=None, ge=0.0)
    outlier: bool = True
    outlier_k: int = Field(default=DEFAULT_OUTLIER_K, ge=1)
    outlier_quantile: float = Field(default=DEFAULT_OUTLIER_QUANTILE, gt=0.0, lt=1.0)
    outlier_threshold: Optional[float] = Field(default=None, ge=0.0)

    @model_validator(mode="after")
    def _check_enabled(self) -> "FilterConfig":
        if not (self.similarity or self.outlier):
            raise ValueError("至少启用一个过滤器")
        return self


def _apply_mask(
    synth: Table, remove: np.ndarray, reason: RemovalReason, threshold: float, **extra
) -> FilterResult:
    removed = np.flatnonzero(remove)
    kept = np.flatnonzero(~remove)
    filtered = synth if removed.size == 0 else synth.take(kept)
    logger.info(f"{reason.value} 过滤: 阈值 {threshold:.6g}, 删除 {removed.size}/{len(synth)} 行")
    return FilterResult(filtered, [int(i) for i in removed], reason, float(threshold), **extra)


def similarity_filter(
    synth: Table,
    train: Table,
    threshold: Optional[float] = None,
    quantile: Optional[float] = None,
    stats: Optional[EncodingStats] = None,
    workers: int = 1,
) -> FilterResult:
    """
    删除到最近训练记录的距离 < threshold 的合成行

    不给 threshold 时取训练集内部最近邻距离（排除自身）的 quantile 分位数，默认 0.01；
    训练集有重复记录导致分位数为 0 时，抬到最小的正的内部距离，完全复制的记录总会被删除。
    threshold = 0 不删除任何行。
    """
    require_same_schema(train, synth, "similarity_filter")
    if threshold is not None and quantile is not None:
        raise ConfigError("threshold 与 quantile 只能指定一个")
    if threshold is not None and threshold < 0:
        raise ConfigError(f"threshold 必须 ≥ 0: {threshold}")
    if quantile is not None and not 0.0 < quantile < 1.0:
        raise ConfigError(f"quantile 必须在 (0, 1) 内: {quantile}")

    stats = stats or fit_encoder(train)
    train_matrix = encode(train, stats)
    if threshold is None:
        quantile = quantile if quantile is not None else DEFAULT_SIMILARITY_QUANTILE
        if len(train) < 2:
            raise DataError("按分位数解析阈值需要训练集至少 2 行")
        within = knn(train_matrix, train_matrix, 1, exclude_self=True, workers=workers).nearest
        threshold = float(np.quantile(within, quantile, method="linear"))
        if threshold <= 0.0:
            positive = within[within > 0.0]
            threshold = float(positive.min()) if positive.size else float(np.finfo(np.float64).tiny)

    if len(synth) == 0:
        return FilterResult(synth, [], RemovalReason.TOO_SIMILAR, float(threshold), quantile)
    distances = knn(encode(synth, stats), train_matrix, 1, workers=workers).nearest
    return _apply_mask(synth, distances < threshold, RemovalReason.TOO_SIMILAR, threshold, quantile=quantile)


def outlier_filter(
    synth: Table,
    train: Table,
    k: int = DEFAULT_OUTLIER_K,
    quantile: float = DEFAULT_OUTLIER_QUANTILE,
    threshold: Optional[float] = None,
    stats: Optional[EncodingStats] = None,
    workers: int = 1,
) -> FilterResult:
    """
    离群分数 = 到第 k 近训练记录的距离

    分数超过训练记录自身分数（排除自身）quantile 分位数的合成行被删除；
    传入已解析的 threshold 时直接使用它，再次过滤同一张表不会删除任何行。
    """
    require_same_schema(train, synth, "outlier_filter")
    if k < 1:
        raise ConfigError(f"k 必须 ≥ 1: {k}")
    if len(train) < k + 1:
        raise NeighborSearchError(f"k too large: k={k}, 训练集只有 {len(train)} 行")
    if threshold is None and not 0.0 < quantile < 1.0:
        raise ConfigError(f"quantile 必须在 (0, 1) 内: {quantile}")

    stats = stats or fit_encoder(train)
    train_matrix = encode(train, stats)
    resolved_quantile: Optional[float] = None
    if threshold is None:
        scores = knn(train_matrix, train_matrix, k, exclude_self=True, workers=workers).kth
        threshold = float(np.quantile(scores, quantile, method="linear"))
        resolved_quantile = quantile

    if len(synth) == 0:
        return FilterResult(synth, [], RemovalReason.OUTLIER, float(threshold), resolved_quantile, k)
    synth_scores = knn(encode(synth, stats), train_matrix, k, workers=workers).kth
    return _apply_mask(
        synth, synth_scores > threshold, RemovalReason.OUTLIER, threshold, quantile=resolved_quantile, k=k
    )


def apply_privacy_filters(
    synth: Table,
    train: Table,
    cfg: Optional[FilterConfig] = None,
    stats: Optional[EncodingStats] = None,
    workers: int = 1,
) -> tuple[Table, list[FilterResult]]:
    """
    先相似度过滤再离群过滤

    每个 FilterResult 的 removed_indices 都映射回原始合成表的行号。
    """
    cfg = cfg or FilterConfig()
    stats = stats or fit_encoder(train)
    current = synth
    original_rows = np.arange(len(synth))
    results: list[FilterResult] = []

    if cfg.similarity:
        result = similarity_filter(
            current, train,
            threshold=cfg.similarity_threshold,
            quantile=None if cfg.similarity_threshold is not None else cfg.similarity_quantile,
            stats=stats, workers=workers,
        )
        results.append(_remap(result, original_rows))
        original_rows = np.delete(original_rows, result.removed_indices)
        current = result.filtered

    if cfg.outlier:
        result = outlier_filter(
            current, train,
            k=cfg.outlier_k, quantile=cfg.outlier_quantile, threshold=cfg.outlier_threshold,
            stats=stats, workers=workers,
        )
        results.append(_remap(result, original_rows))
        current = result.filtered

    logger.warning(DP_FILTER_WARNING)
    return current, results


def _remap(result: FilterResult, original_rows: np.ndarray) -> FilterResult:
    removed = sorted(int(original_rows[i]) for i in result.removed_indices)
    return FilterResult(
        result.filtered, removed, result.removal_reason, result.threshold_used, result.quantile, result.k
    )
