"""
基线生成器 - 带种子的参考"合成数据"

用来验证每个指标都朝预期方向变化：
- gen_copy：直接复制训练集（最大泄露）
- gen_perturb：加噪声（sigma 小 = 过拟合，sigma 大 = 欠拟合）
- gen_independent：逐列独立自助抽样，保留边缘分布、打破列间结构
- sample_population：从高斯混合 + 类别分布的总体中抽样（理想生成器 = 重新抽一批）
"""
import logging
from pathlib import Path
from typing import Optional, Union

import numpy as np
import yaml
from pydantic import BaseModel, Field, ValidationError, model_validator

from dataset import Column, ColumnKind, Schema, Table
from errors import ConfigError, DataError

logger = logging.getLogger(__name__)

_SUM_TOLERANCE = 1e-9


def _sums_to_one(values: list[float]) -> bool:
    return abs(sum(values) - 1.0) <= _SUM_TOLERANCE and all(v >= 0 for v in values)


class NumericComponent(BaseModel):
    """混合分布的一个分量：均值向量 + 对角方差"""
    mean: list[float]
    variance: list[float]
    weight: float = Field(ge=0.0)

    @model_validator(mode="after")
    def _check(self) -> "NumericComponent":
        if len(self.mean) != len(self.variance):
            raise ValueError("mean 与 variance 长度不一致")
        if any(v < 0 for v in self.variance):
            raise ValueError(f"方差不能为负: {self.variance}")
        return self


class CategoricalColumn(BaseModel):
    """
    类别列的多项分布

    per_component 给定时第 i 行是第 i 个混合分量下的概率，
    让类别列与数值列相关（AIA 需要可推断的结构）。
    """
    name: str
    vocabulary: list[str] = Field(min_length=1)
    probabilities: list[float] = Field(default_factory=list)
    per_component: Optional[list[list[float]]] = None

    @model_validator(mode="after")
    def _check(self) -> "CategoricalColumn":
        rows = self.per_component if self.per_component is not None else [self.probabilities]
        for p in rows:
            if len(p) != len(self.vocabulary):
                raise ValueError(f"列 {self.name} 的概率向量长度与词表不一致")
            if not _sums_to_one(p):
                raise ValueError(f"列 {self.name} 的概率之和必须为 1: {p}")
        return self


class PopulationSpec(BaseModel):
    numeric_columns: list[str] = Field(default_factory=list)
    components: list[NumericComponent] = Field(
        default_factory=lambda: [NumericComponent(mean=[], variance=[], weight=1.0)], min_length=1
    )
    categorical: list[CategoricalColumn] = Field(default_factory=list)
    n_rows: int = Field(default=1000, ge=0)
    seed: int = Field(default=0, ge=0)

    @model_validator(mode="after")
    def _check(self) -> "PopulationSpec":
        if not self.numeric_columns and not self.categorical:
            raise ValueError("总体至少需要一列")
        if not _sums_to_one([c.weight for c in self.components]):
            raise ValueError("混合分量权重之和必须为 1")
        for component in self.components:
            if len(component.mean) != len(self.numeric_columns):
                raise ValueError("分量均值维度与数值列数不一致")
        for column in self.categorical:
            if column.per_component is not None and len(column.per_component) != len(self.components):
                raise ValueError(f"列 {column.name} 的 per_component 行数与分量数不一致")
        names = self.numeric_columns + [c.name for c in self.categorical]
        if len(set(names)) != len(names):
            raise ValueError(f"列名重复: {names}")
        return self

    @property
    def schema(self) -> Schema:
        columns = [Column(n, ColumnKind.NUMERIC) for n in self.numeric_columns]
        columns += [Column(c.name, ColumnKind.CATEGORICAL) for c in self.categorical]
        return Schema(tuple(columns))


# ============================================================
# 总体抽样
# ============================================================

def draw_population(spec: PopulationSpec) -> tuple[Table, np.ndarray]:
    """按种子独立同分布抽样，同时返回每行所属的混合分量"""
    rng = np.random.default_rng(spec.seed)
    n = spec.n_rows
    weights = np.array([c.weight for c in spec.components])
    labels = rng.choice(len(spec.components), size=n, p=weights / weights.sum())

    columns: dict[str, object] = {}
    if spec.numeric_columns:
        means = np.array([c.mean for c in spec.components], dtype=np.float64)
        scales = np.sqrt(np.array([c.variance for c in spec.components], dtype=np.float64))
        noise = rng.standard_normal((n, len(spec.numeric_columns)))
        values = means[labels] + scales[labels] * noise
        for j, name in enumerate(spec.numeric_columns):
            columns[name] = values[:, j]

    for column in spec.categorical:
        vocab = np.array(column.vocabulary, dtype=object)
        uniform = rng.random(n)
        if column.per_component is None:
            table = np.tile(np.cumsum(column.probabilities), (len(spec.components), 1))
        else:
            table = np.cumsum(np.array(column.per_component, dtype=np.float64), axis=1)
        picked = np.array(
            [np.searchsorted(table[label], u, side="right") for label, u in zip(labels, uniform)],
            dtype=np.int64,
        )
        columns[column.name] = list(vocab[np.minimum(picked, len(vocab) - 1)])

    return Table.from_columns(spec.schema, columns), labels


def sample_population(spec: PopulationSpec) -> Table:
    return draw_population(spec)[0]


def load_population_spec(path: Union[str, Path]) -> PopulationSpec:
    """从 YAML / JSON 读取 PopulationSpec（可以放在顶层，也可以放在 population 键下）"""
    path = Path(path)
    try:
        with path.open("r", encoding="utf-8") as fh:
            data = yaml.safe_load(fh)
    except (OSError, yaml.YAMLError) as exc:
        raise ConfigError(f"无法读取总体配置 {path}: {exc}") from exc
    if isinstance(data, dict) and "population" in data:
        data = data["population"]
    try:
        return PopulationSpec.model_validate(data)
    except ValidationError as exc:
        raise ConfigError(f"总体配置 {path} 非法: {exc}") from exc


# ============================================================
# 参考生成器
# ============================================================

def gen_copy(train: Table) -> Table:
    """原样复制训练集"""
    return train.copy()


def _numeric_cells(values: np.ndarray) -> list[Optional[float]]:
    return [None if np.isnan(v) else float(v) for v in values]


def gen_perturb(train: Table, sigma: float, seed: int = 0) -> Table:
    """
    数值单元格加 N(0, (sigma × 列标准差)²) 噪声；
    类别单元格以 min(1, sigma) 的概率从该列经验分布中重新抽取。
    sigma = 0 时与 gen_copy 完全相同。
    """
    if sigma < 0:
        raise ConfigError(f"sigma 必须 ≥ 0: {sigma}")
    if sigma == 0 or len(train) == 0:
        return gen_copy(train)
    rng = np.random.default_rng(seed)
    n = len(train)
    resample_rate = min(1.0, sigma)
    columns: dict[str, object] = {}
    for column in train.schema.columns:
        if column.kind is ColumnKind.NUMERIC:
            values = train.numeric_values(column.name)
            present = values[~np.isnan(values)]
            std = float(present.std()) if present.size else 0.0
            noisy = values + sigma * std * rng.standard_normal(n)
            columns[column.name] = _numeric_cells(noisy)
        else:
            values = train.category_values(column.name)
            resample = rng.random(n) < resample_rate
            replacement = values[rng.integers(0, n, size=n)]
            columns[column.name] = list(np.where(resample, replacement, values))
    return Table.from_columns(train.schema, columns)


def gen_independent(train: Table, seed: int = 0) -> Table:
    """逐列独立有放回抽样"""
    if len(train) == 0:
        raise DataError("gen_independent 需要非空的训练表")
    rng = np.random.default_rng(seed)
    n = len(train)
    columns: dict[str, object] = {}
    for column in train.schema.columns:
        rows = rng.integers(0, n, size=n)
        if column.kind is ColumnKind.NUMERIC:
            columns[column.name] = _numeric_cells(train.numeric_values(column.name)[rows])
        else:
            columns[column.name] = list(train.category_values(column.name)[rows])
    return Table.from_columns(train.schema, columns)
