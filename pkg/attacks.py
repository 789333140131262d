"""
攻击模拟 - 无盒距离型成员推断（MIA）与 KNN 属性推断（AIA）

攻击者只能看到合成表：
- MIA：拿一批真实记录（一半来自训练集、一半来自 holdout），到合成表里找最近邻，
  距离低于阈值就判定"在训练集中"
- AIA：已知部分字段（准标识符），用它们在合成表里找 k 个近邻，推断其余字段
"""
import logging
import math
from collections import Counter
from dataclasses import dataclass
from enum import Enum
from itertools import product
from typing import Literal, Optional, Union

import numpy as np
from pydantic import BaseModel, Field, field_validator, model_validator

from dataset import (
    ColumnKind,
    EncodingStats,
    Table,
    canonical_order,
    encode,
    fit_encoder,
    require_same_schema,
)
from errors import ConfigError, DataError, NeighborSearchError
from nn_engine import column_entropy, knn

logger = logging.getLogger(__name__)

DEFAULT_AIA_K = 5
DEFAULT_NUMERIC_TOLERANCE = 0.1
AIA_MAX_ATTACK_RECORDS = 5000
AIA_ATTACK_SHARE = 0.2


# ============================================================
# 等级
# ============================================================

class Grade(str, Enum):
    """MIA 等级，从好到差"""
    EXCELLENT = "Excellent"
    VERY_GOOD = "VeryGood"
    GOOD = "Good"
    MODERATE = "Moderate"
    POOR = "Poor"

    @property
    def rank(self) -> int:
        return list(Grade).index(self)

    def at_least(self, other: "Grade") -> bool:
        """self 不差于 other"""
        return self.rank <= other.rank


# 上界（不含）-> 等级
GRADE_BANDS = [
    (0.5, Grade.EXCELLENT),
    (0.6, Grade.VERY_GOOD),
    (0.7, Grade.GOOD),
    (0.8, Grade.MODERATE),
]


def grade_for(composite: float) -> Grade:
    for upper, grade in GRADE_BANDS:
        if composite < upper:
            return grade
    return Grade.POOR


# ============================================================
# MIA
# ============================================================

class MiaConfig(BaseModel):
    """MIA 模拟参数"""
    holdout_fraction: float = Field(default=0.05, gt=0.0, lt=1.0, description="未提供 holdout 时从训练集切出的比例")
    train_sample_fractions: list[float] = Field(
        default_factory=lambda: [1.0], min_length=1,
        description="每次试验攻击集每类记录数相对 |holdout| 的比例",
    )
    threshold_quantiles: list[float] = Field(
        default_factory=lambda: [0.05, 0.1, 0.25], min_length=1,
        description="阈值取本次试验攻击距离分布的这些分位数",
    )
    n_trials: int = Field(default=10, ge=1, description="每个 (比例, 分位数) 组合重复抽样的次数")
    seed: int = Field(default=0, ge=0)

    @field_validator("train_sample_fractions")
    @classmethod
    def _check_fractions(cls, values: list[float]) -> list[float]:
        for f in values:
            if not 0.0 < f <= 1.0:
                raise ValueError(f"训练样本比例必须在 (0, 1] 内: {f}")
        return values

    @field_validator("threshold_quantiles")
    @classmethod
    def _check_quantiles(cls, values: list[float]) -> list[float]:
        for q in values:
            if not 0.0 < q < 1.0:
                raise ValueError(f"阈值分位数必须在 (0, 1) 内: {q}")
        return values


class MiaTrialResult(BaseModel):
    trial: int
    fraction: float
    quantile: float
    threshold: float
    threshold_lifted: bool = Field(description="分位数阈值没有命中任何记录，已抬到下一个不同距离的中点")
    tp: int
    fp: int
    tn: int
    fn: int
    precision: float
    accuracy: float


class MiaReport(BaseModel):
    trials: list[MiaTrialResult]
    avg_precision: float
    avg_accuracy: float
    composite_score: float = Field(description="(avg_precision + avg_accuracy) / 2")
    grade: Grade
    seed: int


@dataclass(frozen=True, eq=False)
class AttackSet:
    """带成员标签的攻击记录"""
    table: Table
    is_member: np.ndarray
    seed: int

    @property
    def n_members(self) -> int:
        return int(self.is_member.sum())

    @property
    def n_non_members(self) -> int:
        return int((~self.is_member).sum())


def _label_count(n_holdout: int, fraction: float) -> int:
    return min(max(int(math.floor(fraction * n_holdout + 0.5)), 1), n_holdout)


def _draw_attack_rows(
    train_order: np.ndarray, holdout_order: np.ndarray, n_label: int, rng: np.random.Generator
) -> tuple[np.ndarray, np.ndarray]:
    """在规范行序上抽取成员（训练）与非成员（holdout）各 n_label 行"""
    members = np.sort(train_order[rng.choice(train_order.size, size=n_label, replace=False)])
    if n_label == holdout_order.size:
        non_members = np.arange(holdout_order.size)
    else:
        non_members = np.sort(holdout_order[rng.choice(holdout_order.size, size=n_label, replace=False)])
    return members, non_members


def mia_build_attack_set(train: Table, holdout: Table, fraction: float = 1.0, seed: int = 0) -> AttackSet:
    """
    holdout（非成员）与同样大小的训练样本（成员）组成的平衡攻击集

    fraction < 1 时两类都只取 round(fraction × |holdout|) 行；结果按种子确定性打乱。
    """
    require_same_schema(train, holdout, "mia_build_attack_set")
    if len(holdout) < 1:
        raise DataError("攻击集需要至少 1 条 holdout 记录")
    n_label = _label_count(len(holdout), fraction)
    if len(train) < n_label:
        raise DataError(f"insufficient train rows: 需要 {n_label} 行，训练集只有 {len(train)} 行")

    rng = np.random.default_rng(seed)
    members, non_members = _draw_attack_rows(
        canonical_order(train), canonical_order(holdout), n_label, rng
    )
    table = train.take(members).concat(holdout.take(non_members))
    labels = np.concatenate([np.ones(n_label, dtype=bool), np.zeros(n_label, dtype=bool)])
    shuffle = rng.permutation(2 * n_label)
    return AttackSet(table.take(shuffle), labels[shuffle], seed)


def _threshold(distances: np.ndarray, quantile: float) -> tuple[float, bool]:
    threshold = float(np.quantile(distances, quantile, method="linear"))
    if np.any(distances < threshold):
        return threshold, False
    above = distances[distances > threshold]
    if above.size == 0:
        return threshold, False
    return 0.5 * (threshold + float(above.min())), True


def _score_trial(
    trial: int, fraction: float, quantile: float, distances: np.ndarray, is_member: np.ndarray
) -> MiaTrialResult:
    threshold, lifted = _threshold(distances, quantile)
    matched = distances < threshold
    tp = int(np.count_nonzero(matched & is_member))
    fp = int(np.count_nonzero(matched & ~is_member))
    fn = int(np.count_nonzero(~matched & is_member))
    tn = int(np.count_nonzero(~matched & ~is_member))
    return MiaTrialResult(
        trial=trial,
        fraction=fraction,
        quantile=quantile,
        threshold=threshold,
        threshold_lifted=lifted,
        tp=tp, fp=fp, tn=tn, fn=fn,
        precision=tp / (tp + fp) if tp + fp else 0.0,
        accuracy=(tp + tn) / (tp + fp + tn + fn),
    )


def mia_run(
    train: Table,
    holdout: Table,
    synth: Table,
    cfg: Optional[MiaConfig] = None,
    stats: Optional[EncodingStats] = None,
    workers: int = 1,
) -> MiaReport:
    """
    无盒距离型 MIA

    每个 (重复, 比例, 分位数) 组合是一次试验，随机流由 (seed, 试验序号) 派生；
    训练集与 holdout 到合成表的最近邻距离只计算一次，各试验只是重新抽取标签集。
    """
    cfg = cfg or MiaConfig()
    if not cfg.train_sample_fractions or not cfg.threshold_quantiles:
        raise ConfigError("MIA 的比例列表与分位数列表都不能为空")
    require_same_schema(train, synth, "mia_run")
    require_same_schema(train, holdout, "mia_run")
    if len(synth) < 2:
        raise DataError(f"MIA 需要合成表至少 2 行，当前 {len(synth)} 行")
    if len(holdout) < 1:
        raise DataError("MIA 需要至少 1 条 holdout 记录")

    stats = stats or fit_encoder(train)
    synth_matrix = encode(synth, stats)
    train_distances = knn(encode(train, stats), synth_matrix, 1, workers=workers).nearest
    holdout_distances = knn(encode(holdout, stats), synth_matrix, 1, workers=workers).nearest
    train_order, holdout_order = canonical_order(train), canonical_order(holdout)

    trials = []
    combos = product(range(cfg.n_trials), cfg.train_sample_fractions, cfg.threshold_quantiles)
    for index, (_, fraction, quantile) in enumerate(combos):
        n_label = _label_count(len(holdout), fraction)
        if len(train) < n_label:
            raise DataError(f"insufficient train rows: 需要 {n_label} 行，训练集只有 {len(train)} 行")
        rng = np.random.default_rng([cfg.seed, index])
        members, non_members = _draw_attack_rows(train_order, holdout_order, n_label, rng)
        distances = np.concatenate([train_distances[members], holdout_distances[non_members]])
        is_member = np.concatenate([np.ones(n_label, dtype=bool), np.zeros(n_label, dtype=bool)])
        trials.append(_score_trial(index, fraction, quantile, distances, is_member))

    avg_precision = math.fsum(t.precision for t in trials) / len(trials)
    avg_accuracy = math.fsum(t.accuracy for t in trials) / len(trials)
    composite = (avg_precision + avg_accuracy) / 2
    grade = grade_for(composite)
    logger.info(
        f"MIA: {len(trials)} 次试验, precision={avg_precision:.4f}, "
        f"accuracy={avg_accuracy:.4f}, grade={grade.value}"
    )
    return MiaReport(
        trials=trials,
        avg_precision=avg_precision,
        avg_accuracy=avg_accuracy,
        composite_score=composite,
        grade=grade,
        seed=cfg.seed,
    )


# ============================================================
# AIA
# ============================================================

class AiaConfig(BaseModel):
    """
    AIA 参数

    mode="fixed" 时所有攻击记录使用同一组 qids；
    mode="random" 时每条攻击记录独立随机抽取 n_random_qids 个字段作为准标识符。
    """
    mode: Literal["fixed", "random"] = "random"
    qids: list[str] = Field(default_factory=list)
    n_random_qids: int = Field(default=1, ge=1)
    k: int = Field(default=DEFAULT_AIA_K, ge=1)
    numeric_match_tolerance: float = Field(
        default=DEFAULT_NUMERIC_TOLERANCE, ge=0.0, description="数值字段命中容差，相对训练列极差"
    )
    n_attack_records: Optional[int] = Field(default=None, ge=1)
    seed: int = Field(default=0, ge=0)

    @model_validator(mode="after")
    def _check_mode(self) -> "AiaConfig":
        if self.mode == "fixed" and not self.qids:
            raise ValueError("fixed 模式需要指定 qids")
        if len(set(self.qids)) != len(self.qids):
            raise ValueError(f"qids 有重复: {self.qids}")
        return self

    @classmethod
    def fixed(cls, qids: list[str], **kwargs) -> "AiaConfig":
        return cls(mode="fixed", qids=list(qids), **kwargs)

    @classmethod
    def random(cls, n_random_qids: int, **kwargs) -> "AiaConfig":
        return cls(mode="random", n_random_qids=n_random_qids, **kwargs)


class AiaColumnResult(BaseModel):
    column: str
    accuracy: float
    entropy: float = Field(description="真实表上该列的经验熵（bit）")
    entropy_weight: float
    n_evaluated: int = Field(description="该列作为敏感字段被推断的攻击记录数")


class AiaReport(BaseModel):
    per_column: list[AiaColumnResult]
    overall_unweighted: float
    overall_entropy_weighted: float
    mode: str
    k: int
    n_attack_records: int
    seed: int


Prediction = Union[float, str, None]


def _numeric_mean(values: np.ndarray) -> Optional[float]:
    values = np.sort(values[~np.isnan(values)])
    if values.size == 0:
        return None
    if values[0] == values[-1]:
        return float(values[0])
    return math.fsum(values) / values.size


def _categorical_mode(values) -> Optional[str]:
    counts = Counter(v for v in values if v is not None)
    if not counts:
        return None
    best = max(counts.values())
    return min(v for v, c in counts.items() if c == best)


def aia_aggregate_neighbors(neighbors: Table) -> dict[str, Prediction]:
    """
    把 k 个近邻聚合成一条预测记录

    类别列取众数（平局取字典序最小），数值列取均值；缺失值不参与聚合，全缺失则预测为缺失。
    """
    if len(neighbors) < 1:
        raise DataError("聚合近邻至少需要 1 行")
    prediction: dict[str, Prediction] = {}
    for column in neighbors.schema.columns:
        if column.kind is ColumnKind.NUMERIC:
            prediction[column.name] = _numeric_mean(neighbors.numeric_values(column.name))
        else:
            prediction[column.name] = _categorical_mode(neighbors.category_values(column.name))
    return prediction


def _default_attack_count(n_rows: int) -> int:
    return min(AIA_MAX_ATTACK_RECORDS, max(1, int(math.floor(AIA_ATTACK_SHARE * n_rows + 0.5))))


def _resolve_qid_sets(
    columns: list[str], cfg: AiaConfig, n_records: int, rng: np.random.Generator
) -> list[tuple[int, ...]]:
    """每条攻击记录的 QID 列下标（按 schema 顺序）"""
    if cfg.mode == "fixed":
        unknown = [q for q in cfg.qids if q not in columns]
        if unknown:
            raise DataError(f"未知的 QID 列: {unknown}")
        if len(cfg.qids) >= len(columns):
            raise ConfigError("QID 覆盖了全部列，没有可推断的敏感字段")
        fixed = tuple(sorted(columns.index(q) for q in cfg.qids))
        return [fixed] * n_records
    if cfg.n_random_qids >= len(columns):
        raise ConfigError(
            f"随机 QID 数 {cfg.n_random_qids} 必须小于列数 {len(columns)}，否则没有可推断的敏感字段"
        )
    return [
        tuple(sorted(int(i) for i in rng.choice(len(columns), size=cfg.n_random_qids, replace=False)))
        for _ in range(n_records)
    ]


def aia_run(
    real: Table,
    synth: Table,
    cfg: AiaConfig,
    stats: Optional[EncodingStats] = None,
    workers: int = 1,
) -> AiaReport:
    """
    KNN 属性推断

    在只含 QID 维度的编码子空间里为每条攻击记录找 k 个合成近邻，聚合后与真实值比较：
    类别列要求规范值完全相同，数值列要求 |预测 − 真实| ≤ 容差 × 训练列极差。
    总体准确率同时给出不加权与按列熵加权两种，熵为 0 的列（完全可预测）权重为 0。
    """
    require_same_schema(real, synth, "aia_run")
    if cfg.k > len(synth):
        raise NeighborSearchError(f"k too large: k={cfg.k}, 合成表只有 {len(synth)} 行")
    if len(real) == 0:
        raise DataError("AIA 需要非空的真实表")
    columns = real.schema.names
    stats = stats or fit_encoder(real)

    rng = np.random.default_rng(cfg.seed)
    n_attack = min(cfg.n_attack_records or _default_attack_count(len(real)), len(real))
    attack_rows = canonical_order(real)[rng.choice(len(real), size=n_attack, replace=False)]
    qid_sets = _resolve_qid_sets(columns, cfg, n_attack, rng)

    # 合成表按规范行序排列，近邻平局的裁决与输入行顺序无关
    synth = synth.take(canonical_order(synth))
    real_matrix = encode(real, stats)
    synth_matrix = encode(synth, stats)

    synth_columns = {
        c.name: synth.numeric_values(c.name) if c.kind is ColumnKind.NUMERIC else synth.category_values(c.name)
        for c in real.schema.columns
    }
    real_columns = {
        c.name: real.numeric_values(c.name) if c.kind is ColumnKind.NUMERIC else real.category_values(c.name)
        for c in real.schema.columns
    }
    kinds = {c.name: c.kind for c in real.schema.columns}

    groups: dict[tuple[int, ...], list[int]] = {}
    for position, qid_set in enumerate(qid_sets):
        groups.setdefault(qid_set, []).append(position)

    evaluated = dict.fromkeys(columns, 0)
    correct = dict.fromkeys(columns, 0)
    for qid_set in sorted(groups):
        positions = groups[qid_set]
        qid_names = [columns[i] for i in qid_set]
        sensitive = [c for c in columns if c not in qid_names]
        rows = attack_rows[positions]
        queries = real_matrix.take(rows).select_columns(qid_names)
        reference = synth_matrix.select_columns(qid_names)
        neighbors = knn(queries, reference, cfg.k, workers=workers).indices
        for row, neighbor_rows in zip(rows, neighbors):
            for name in sensitive:
                values = synth_columns[name][neighbor_rows]
                truth = real_columns[name][row]
                evaluated[name] += 1
                if kinds[name] is ColumnKind.NUMERIC:
                    predicted = _numeric_mean(values)
                    if predicted is None or math.isnan(truth):
                        hit = predicted is None and math.isnan(truth)
                    else:
                        tolerance = cfg.numeric_match_tolerance * stats.column_range(name)
                        hit = abs(predicted - truth) <= tolerance
                else:
                    hit = _categorical_mode(values) == truth
                correct[name] += int(hit)

    scored = [c for c in columns if evaluated[c] > 0]
    entropies = {c: column_entropy(real, c).entropy for c in scored}
    total_entropy = math.fsum(sorted(entropies.values()))
    per_column = []
    for name in scored:
        weight = entropies[name] / total_entropy if total_entropy > 0 else 0.0
        per_column.append(
            AiaColumnResult(
                column=name,
                accuracy=correct[name] / evaluated[name],
                entropy=entropies[name],
                entropy_weight=weight,
                n_evaluated=evaluated[name],
            )
        )
    overall = math.fsum(r.accuracy for r in per_column) / len(per_column) if per_column else 0.0
    weighted = min(math.fsum(r.accuracy * r.entropy_weight for r in per_column), 1.0)
    logger.info(f"AIA: {n_attack} 条攻击记录, 不加权={overall:.4f}, 熵加权={weighted:.4f}")
    return AiaReport(
        per_column=per_column,
        overall_unweighted=overall,
        overall_entropy_weighted=weighted,
        mode=cfg.mode,
        k=cfg.k,
        n_attack_records=n_attack,
        seed=cfg.seed,
    )
