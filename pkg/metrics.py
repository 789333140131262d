"""
隐私指标 - IMS / DCR / NNDR / NNAA

所有距离类指标都在 dataset.encode 产出的同一编码空间里计算；
摘要统计先排序再归约，行顺序与并行度都不会改变输出的任何一位。
"""
import logging
import math
from typing import Optional

import numpy as np
from pydantic import BaseModel, Field

from dataset import EncodedMatrix, Table, require_same_schema
from errors import ConfigError, DataError, NeighborSearchError
from nn_engine import knn

logger = logging.getLogger(__name__)

NNDR_EPSILON = 1e-12
DEFAULT_SHARE_TOLERANCE = 0.0
DEFAULT_NNDR_TOLERANCE = 0.05
DEFAULT_SHARE_REPETITIONS = 5
NNAA_SAMPLING_MODES = ("common", "pairwise")


# ============================================================
# 结果模型
# ============================================================

class DistanceSummary(BaseModel):
    """距离（或距离比）分布的摘要"""
    median: float = Field(description="中位数")
    p5: float = Field(description="第 5 百分位，顺序统计量之间线性插值")
    mean: float = Field(description="均值")
    min: float = Field(description="最小值")
    n: int = Field(description="样本数")


class ImsResult(BaseModel):
    """Identical Match Share：合成表与测试表相对训练表的完全复制比例"""
    train_synth_share: float = Field(description="合成行中与训练行完全相同的比例")
    train_test_share: float = Field(description="测试行中与训练行完全相同的比例（基线）")
    train_synth_matches: int = Field(description="完全复制训练记录的合成行数")
    passed: bool = Field(description="train_synth_share ≤ train_test_share")


class DcrReport(BaseModel):
    """DCR 的四种变体"""
    train_synth: DistanceSummary
    train_train: DistanceSummary
    within_real: DistanceSummary = Field(description="train ∪ holdout 内部（排除自身）")
    within_synth: DistanceSummary
    holdout_synth: DistanceSummary
    share_closer_to_train: float = Field(description="严格更靠近训练记录的合成行占比，平局算 holdout；各次重复的均值")
    share_sample_size: int = Field(description="每次重复中 train 与 holdout 都抽到的行数")
    share_repetitions: int
    share_tolerance: float
    seed: int
    verdicts: dict[str, bool]


class NndrReport(BaseModel):
    """NNDR 的两种比较方案（摘要的对象是距离比）"""
    train_synth: DistanceSummary
    holdout_synth: DistanceSummary
    train_train: DistanceSummary
    synth_synth: DistanceSummary
    tolerance: float
    verdicts: dict[str, bool]
    flags: dict[str, bool] = Field(description="leak / fidelity_loss / model_collapse")


class NnaaResult(BaseModel):
    """最近邻对抗准确率与隐私损失"""
    train_aa: float
    test_aa: float
    privacy_loss: float = Field(description="test_aa - train_aa")
    n_repetitions: int
    sample_size_train: int
    sample_size_test: int
    sampling: str
    seed: int
    verdicts: dict[str, bool] = Field(default_factory=dict)


# ============================================================
# 工具函数
# ============================================================

def summarize(values: np.ndarray) -> DistanceSummary:
    values = np.sort(np.asarray(values, dtype=np.float64))
    if values.size == 0:
        raise DataError("空分布无法汇总")
    return DistanceSummary(
        median=float(np.median(values)),
        p5=float(np.percentile(values, 5, method="linear")),
        mean=math.fsum(values) / values.size,
        min=float(values[0]),
        n=int(values.size),
    )


def _matrix_order(matrix: EncodedMatrix) -> np.ndarray:
    if matrix.n_dims == 0:
        return np.arange(matrix.n_rows)
    return np.lexsort(matrix.values.T[::-1])


def _subsample(matrix: EncodedMatrix, size: int, rng: np.random.Generator) -> EncodedMatrix:
    """在规范行序上无放回抽样；需要全部行时原样返回"""
    if size >= matrix.n_rows:
        return matrix
    order = _matrix_order(matrix)
    picked = order[rng.choice(matrix.n_rows, size=size, replace=False)]
    return matrix.take(np.sort(picked))


def nearest_distances(
    queries: EncodedMatrix, reference: EncodedMatrix, within: bool = False, workers: int = 1
) -> np.ndarray:
    return knn(queries, reference, 1, exclude_self=within, workers=workers).nearest


# ============================================================
# IMS
# ============================================================

def exact_match_count(train: Table, other: Table) -> int:
    require_same_schema(train, other, "exact_match")
    keys = set(train.canonical_rows)
    return sum(1 for row in other.canonical_rows if row in keys)


def exact_match_share(train: Table, other: Table) -> float:
    """other 中规范元组出现在 train 里的行占比；other 为空时为 0"""
    count = exact_match_count(train, other)
    return count / len(other) if len(other) else 0.0


def ims_test(train: Table, test: Table, synth: Table) -> ImsResult:
    """合成表的复制比例不超过测试表（未参与训练的真实数据）即通过"""
    matches = exact_match_count(train, synth)
    synth_share = matches / len(synth) if len(synth) else 0.0
    test_share = exact_match_share(train, test)
    return ImsResult(
        train_synth_share=synth_share,
        train_test_share=test_share,
        train_synth_matches=matches,
        passed=synth_share <= test_share,
    )


# ============================================================
# DCR
# ============================================================

def dcr(a: EncodedMatrix, b: EncodedMatrix, within: bool = False, workers: int = 1) -> DistanceSummary:
    """
    a 的每一行到 b 中最近记录的欧氏距离

    within=True 时 a 与 b 必须是同一矩阵，排除自身。
    """
    if within:
        if a is not b:
            raise NeighborSearchError("within-set DCR 需要同一矩阵")
        if a.n_rows < 2:
            raise DataError("within-set DCR 至少需要 2 行")
    return summarize(nearest_distances(a, b, within, workers))


def _share_closer_to_train(
    train: EncodedMatrix,
    holdout: EncodedMatrix,
    synth: EncodedMatrix,
    to_train: np.ndarray,
    to_holdout: np.ndarray,
    seed: int,
    repetitions: int,
    workers: int,
) -> tuple[float, int]:
    """
    train 与 holdout 抽到相同行数后再比较，各次重复取平均

    两边等大时不抽样，直接用全量距离。
    """
    size = min(train.n_rows, holdout.n_rows)
    if train.n_rows == holdout.n_rows:
        return int(np.count_nonzero(to_train < to_holdout)) / synth.n_rows, size
    shares = []
    for rep in range(repetitions):
        rng = np.random.default_rng([seed, rep])
        if train.n_rows > size:
            d_train = nearest_distances(synth, _subsample(train, size, rng), workers=workers)
            d_holdout = to_holdout
        else:
            d_train = to_train
            d_holdout = nearest_distances(synth, _subsample(holdout, size, rng), workers=workers)
        shares.append(int(np.count_nonzero(d_train < d_holdout)) / synth.n_rows)
    return math.fsum(shares) / repetitions, size


def dcr_suite(
    train: EncodedMatrix,
    holdout: EncodedMatrix,
    synth: EncodedMatrix,
    share_tolerance: float = DEFAULT_SHARE_TOLERANCE,
    workers: int = 1,
    seed: int = 0,
    share_repetitions: int = DEFAULT_SHARE_REPETITIONS,
) -> DcrReport:
    """
    DCR 全部变体及判定

    - train_train_below_train_synth: 训练集内部比合成集更近，合成数据不是简单扰动
    - within_synth_not_collapsed: 合成集内部不比真实集内部更紧密，否则疑似模型坍缩
    - share_closer_to_train_at_most_half: 更靠近训练集的合成行占比不超过 50%
    """
    for name, matrix in (("train", train), ("holdout", holdout), ("synth", synth)):
        if matrix.n_rows < 2:
            raise DataError(f"dcr_suite: {name} 至少需要 2 行，当前 {matrix.n_rows} 行")
    if share_repetitions < 1:
        raise ConfigError(f"share_repetitions 至少为 1，当前 {share_repetitions}")

    to_train = nearest_distances(synth, train, workers=workers)
    to_holdout = nearest_distances(synth, holdout, workers=workers)
    real = train.concat(holdout)

    train_synth = summarize(to_train)
    train_train = dcr(train, train, within=True, workers=workers)
    within_real = dcr(real, real, within=True, workers=workers)
    within_synth = dcr(synth, synth, within=True, workers=workers)
    holdout_synth = summarize(to_holdout)
    share, sample_size = _share_closer_to_train(
        train, holdout, synth, to_train, to_holdout, seed, share_repetitions, workers
    )

    verdicts = {
        "train_train_below_train_synth": train_train.median < train_synth.median,
        "within_synth_not_collapsed": within_synth.median >= within_real.median,
        "share_closer_to_train_at_most_half": share <= 0.5 + share_tolerance,
    }
    if not verdicts["within_synth_not_collapsed"]:
        logger.warning("合成集内部 DCR 小于真实集内部 DCR，可能存在模型坍缩")
    return DcrReport(
        train_synth=train_synth,
        train_train=train_train,
        within_real=within_real,
        within_synth=within_synth,
        holdout_synth=holdout_synth,
        share_closer_to_train=share,
        share_sample_size=sample_size,
        share_repetitions=share_repetitions,
        share_tolerance=share_tolerance,
        seed=seed,
        verdicts=verdicts,
    )


# ============================================================
# NNDR
# ============================================================

def nndr_ratios(
    queries: EncodedMatrix, reference: EncodedMatrix, self_mode: bool = False, workers: int = 1
) -> np.ndarray:
    """
    每个查询行的 d1 / d2

    退化规则（ε = 1e-12）：d2 ≤ ε 时比值记 1.0（落在重复参考行上），
    d1 ≤ ε < d2 时记 0.0（精确复制了一条孤立记录）。
    """
    needed = 3 if self_mode else 2
    if self_mode and queries is not reference:
        raise NeighborSearchError("self_mode 的 NNDR 需要同一矩阵")
    if reference.n_rows < needed:
        raise DataError(f"NNDR 需要参考集至少 {needed} 行，当前 {reference.n_rows} 行")
    result = knn(queries, reference, 2, exclude_self=self_mode, workers=workers)
    d1, d2 = result.distances[:, 0], result.distances[:, 1]
    ratios = d1 / np.where(d2 > NNDR_EPSILON, d2, 1.0)
    ratios[d1 <= NNDR_EPSILON] = 0.0
    ratios[d2 <= NNDR_EPSILON] = 1.0
    return np.clip(ratios, 0.0, 1.0)


def nndr(
    queries: EncodedMatrix, reference: EncodedMatrix, self_mode: bool = False, workers: int = 1
) -> DistanceSummary:
    return summarize(nndr_ratios(queries, reference, self_mode, workers))


def nndr_suite(
    train: EncodedMatrix,
    holdout: EncodedMatrix,
    synth: EncodedMatrix,
    tolerance: float = DEFAULT_NNDR_TOLERANCE,
    workers: int = 1,
) -> NndrReport:
    """
    两种比较方案

    train-synth 与 holdout-synth 的中位数差超过 tolerance 即判定失败：
    训练侧明显更低说明合成记录贴着训练集里的孤立记录（leak），
    明显更高说明丢失了信息（fidelity_loss）。
    synth-synth 与 train-train 偏离超过 tolerance 标记 model_collapse。
    """
    train_synth = nndr(synth, train, workers=workers)
    holdout_synth = nndr(synth, holdout, workers=workers)
    train_train = nndr(train, train, self_mode=True, workers=workers)
    synth_synth = nndr(synth, synth, self_mode=True, workers=workers)

    gap = train_synth.median - holdout_synth.median
    collapse_gap = synth_synth.median - train_train.median
    verdicts = {
        "train_synth_matches_holdout_synth": abs(gap) <= tolerance,
        "synth_synth_matches_train_train": abs(collapse_gap) <= tolerance,
    }
    flags = {
        "leak": gap < -tolerance,
        "fidelity_loss": gap > tolerance,
        "model_collapse": abs(collapse_gap) > tolerance,
    }
    return NndrReport(
        train_synth=train_synth,
        holdout_synth=holdout_synth,
        train_train=train_train,
        synth_synth=synth_synth,
        tolerance=tolerance,
        verdicts=verdicts,
        flags=flags,
    )


# ============================================================
# NNAA
# ============================================================

def _adversarial_accuracy(target: EncodedMatrix, source: EncodedMatrix, workers: int) -> float:
    n_target, n_source = target.n_rows, source.n_rows
    d_ts = nearest_distances(target, source, workers=workers)
    d_tt = nearest_distances(target, target, within=True, workers=workers)
    d_st = nearest_distances(source, target, workers=workers)
    d_ss = nearest_distances(source, source, within=True, workers=workers)
    # 严格大于，平局记 0
    target_term = int(np.count_nonzero(d_ts > d_tt)) / n_target
    source_term = int(np.count_nonzero(d_st > d_ss)) / n_source
    return 0.5 * (target_term + source_term)


def nnaa(target: EncodedMatrix, source: EncodedMatrix, seed: int = 0, workers: int = 1) -> float:
    """
    AA_TS = ½((1/n)Σ1(d_TS(i) > d_TT(i)) + (1/n)Σ1(d_ST(i) > d_SS(i)))

    集合内距离排除自身；两集合大小不同时都抽样到较小的那个大小。
    """
    if target.n_dims != source.n_dims:
        raise NeighborSearchError(f"dimension mismatch: {target.n_dims} vs {source.n_dims}")
    size = min(target.n_rows, source.n_rows)
    if size < 2:
        raise DataError(f"NNAA 每个集合至少需要 2 行，当前 {size}")
    if target is source:
        return _adversarial_accuracy(target, source, workers)
    rng = np.random.default_rng(seed)
    return _adversarial_accuracy(_subsample(target, size, rng), _subsample(source, size, rng), workers)


def nnaa_privacy_loss(
    train: EncodedMatrix,
    test: EncodedMatrix,
    synth: EncodedMatrix,
    n_repetitions: int = 5,
    seed: int = 0,
    sampling: str = "common",
    max_privacy_loss: Optional[float] = None,
    workers: int = 1,
) -> NnaaResult:
    """
    PrivacyLoss = Test AA − Train AA

    每次重复用 (seed, 重复序号) 派生独立随机流抽样后取平均。
    sampling="common" 时三个集合都抽到 min(|train|, |test|, |synth|)；
    "pairwise" 时 train/synth 与 test/synth 各自抽到两者的较小值。
    """
    if n_repetitions < 1:
        raise ConfigError(f"n_repetitions 必须 ≥ 1: {n_repetitions}")
    if sampling not in NNAA_SAMPLING_MODES:
        raise ConfigError(f"未知抽样方式: {sampling}，可选: {list(NNAA_SAMPLING_MODES)}")
    if synth.n_rows < min(train.n_rows, test.n_rows):
        raise DataError(
            f"insufficient rows: 合成集 {synth.n_rows} 行少于 min(train, test) = "
            f"{min(train.n_rows, test.n_rows)}"
        )
    if sampling == "common":
        size_train = size_test = min(train.n_rows, test.n_rows, synth.n_rows)
    else:
        size_train = min(train.n_rows, synth.n_rows)
        size_test = min(test.n_rows, synth.n_rows)
    if min(size_train, size_test) < 2:
        raise DataError("insufficient rows: NNAA 抽样后每个集合至少需要 2 行")

    train_scores, test_scores = [], []
    for repetition in range(n_repetitions):
        rng = np.random.default_rng([seed, repetition])
        synth_train_side = _subsample(synth, size_train, rng)
        synth_test_side = (
            synth_train_side if size_test == size_train else _subsample(synth, size_test, rng)
        )
        train_sample = _subsample(train, size_train, rng)
        test_sample = _subsample(test, size_test, rng)
        train_scores.append(_adversarial_accuracy(train_sample, synth_train_side, workers))
        test_scores.append(_adversarial_accuracy(test_sample, synth_test_side, workers))

    train_aa = math.fsum(train_scores) / n_repetitions
    test_aa = math.fsum(test_scores) / n_repetitions
    loss = test_aa - train_aa
    verdicts = {}
    if max_privacy_loss is not None:
        verdicts["privacy_loss_at_most_max"] = loss <= max_privacy_loss
    logger.info(f"NNAA: train AA={train_aa:.4f}, test AA={test_aa:.4f}, privacy loss={loss:.4f}")
    return NnaaResult(
        train_aa=train_aa,
        test_aa=test_aa,
        privacy_loss=loss,
        n_repetitions=n_repetitions,
        sample_size_train=size_train,
        sample_size_test=size_test,
        sampling=sampling,
        seed=seed,
        verdicts=verdicts,
    )
