"""
匿名性 - k-anonymity 与 l-diversity

按准标识符（QID）的取值用 pandas groupby 分组，数值 QID 精确比较，不做分箱或泛化；
缺失值本身也是一个取值。
"""
import logging
from typing import Optional

from pydantic import BaseModel, Field, model_validator

from dataset import Table
from errors import ConfigError, DataError

logger = logging.getLogger(__name__)

QID_CAVEAT = (
    "准标识符由使用者指定；哪些字段能与外部数据关联往往难以判断，"
    "漏掉的准标识符会让 k 与 l 被高估"
)


class QuasiIdentifierSet(BaseModel):
    """准标识符、敏感字段与直接标识符的划分"""
    qid_columns: list[str] = Field(default_factory=list)
    sensitive_columns: list[str] = Field(default_factory=list)
    direct_identifiers: list[str] = Field(default_factory=list, description="发布前应被删除的直接标识符")

    @model_validator(mode="after")
    def _check_disjoint(self) -> "QuasiIdentifierSet":
        overlap = set(self.qid_columns) & set(self.sensitive_columns)
        if overlap:
            raise ValueError(f"准标识符与敏感字段重叠: {sorted(overlap)}")
        return self

    def check_against(self, table: Table) -> None:
        if not self.qid_columns:
            raise ConfigError("匿名性计算需要至少一个准标识符")
        table.schema.require(self.qid_columns)
        table.schema.require(self.sensitive_columns)


class AnonymityResult(BaseModel):
    k: int = Field(description="最小等价类大小")
    class_size_histogram: dict[int, int] = Field(description="等价类大小 -> 该大小的类数")
    l: dict[str, int] = Field(default_factory=dict, description="每个敏感字段的 l-diversity")
    n_rows: int
    n_classes: int
    singleton_share: float = Field(description="独自成类（可被唯一识别）的记录占比")
    verdicts: dict[str, bool] = Field(default_factory=dict)


def _qid_groups(table: Table, qid_columns: list[str]):
    """按 QID 列的精确取值分组，缺失值自成一组"""
    return table.frame.groupby(qid_columns, dropna=False, sort=False)


def _check_table(table: Table, qids: QuasiIdentifierSet) -> None:
    if len(table) == 0:
        raise DataError("匿名性计算需要非空的表")
    qids.check_against(table)


def l_diversity(table: Table, qids: QuasiIdentifierSet, sensitive: str) -> int:
    """每个 QID 等价类中不同敏感值个数的最小值"""
    _check_table(table, qids)
    if sensitive in qids.qid_columns:
        raise ConfigError(f"敏感字段 {sensitive} 不能同时是准标识符")
    table.schema.require([sensitive])
    distinct = _qid_groups(table, qids.qid_columns)[sensitive].nunique(dropna=False)
    return int(distinct.min())


def k_anonymity(table: Table, qids: QuasiIdentifierSet, min_k: Optional[int] = None) -> AnonymityResult:
    """
    k = 最小等价类大小，同时给出等价类大小直方图

    qids.sensitive_columns 非空时顺带计算每个敏感字段的 l；
    min_k 给定时附带判定 k_at_least_min。
    """
    _check_table(table, qids)
    class_sizes = _qid_groups(table, qids.qid_columns).size()
    histogram = {int(size): int(count) for size, count in class_sizes.value_counts().sort_index().items()}
    k = int(class_sizes.min())
    verdicts = {}
    if min_k is not None:
        verdicts["k_at_least_min"] = k >= min_k
    result = AnonymityResult(
        k=k,
        class_size_histogram=histogram,
        l={s: l_diversity(table, qids, s) for s in qids.sensitive_columns},
        n_rows=len(table),
        n_classes=len(class_sizes),
        singleton_share=histogram.get(1, 0) / len(table),
        verdicts=verdicts,
    )
    logger.info(f"k-anonymity: k={k}, {result.n_classes} 个等价类")
    return result


def suppress_direct_identifiers(table: Table, qids: QuasiIdentifierSet) -> Table:
    """删除表中存在的直接标识符列"""
    present = [c for c in qids.direct_identifiers if c in table.schema]
    if not present:
        return table
    if len(present) == len(table.schema):
        raise DataError("删除直接标识符后表中没有剩余列")
    logger.info(f"删除直接标识符: {present}")
    return table.drop(present)
