"""
配置模块 - 审计配置的统一入口

配置来源按优先级从低到高：环境变量（.env）< 配置文件（YAML / JSON）< 命令行参数。
配置文件是扁平的键值对，键名见 FLAT_KEYS。
"""
import os
from pathlib import Path
from typing import Literal, Optional, Union

import yaml
from dotenv import load_dotenv
from pydantic import BaseModel, Field, ValidationError, field_validator, model_validator

from attacks import AiaConfig, Grade, MiaConfig, DEFAULT_AIA_K, DEFAULT_NUMERIC_TOLERANCE
from errors import ConfigError
from filters import FilterConfig

load_dotenv()

ENV_PREFIX = "PRIVACY_AUDIT_"

# 指标注册表：名称 -> 说明
METRIC_REGISTRY = {
    "ims": {
        "description": "Identical Match Share：合成表完全复制训练记录的比例，与 holdout 基线比较",
        "needs_holdout": True,
    },
    "dcr": {
        "description": "Distance to Closest Record：四种变体的最近记录距离及判定",
        "needs_holdout": True,
    },
    "nndr": {
        "description": "Nearest Neighbor Distance Ratio：最近/次近距离比，识别贴近孤立记录的合成行",
        "needs_holdout": True,
    },
    "nnaa": {
        "description": "Nearest Neighbor Adversarial Accuracy：训练/测试对抗准确率与隐私损失",
        "needs_holdout": True,
    },
    "mia": {
        "description": "无盒距离型成员推断攻击，给出 Excellent ~ Poor 等级",
        "needs_holdout": True,
    },
    "aia": {
        "description": "KNN 属性推断攻击，按列熵加权",
        "needs_holdout": False,
    },
    "kanon": {
        "description": "k-anonymity / l-diversity（真实表与合成表），需要 --qid",
        "needs_holdout": False,
    },
    "filter": {
        "description": "相似度过滤 + 离群过滤，可写出过滤后的合成表",
        "needs_holdout": False,
    },
}

DEFAULT_METRICS = ["ims", "dcr", "nndr", "nnaa", "mia", "aia"]

# 扁平键 -> (子配置, 字段)
FLAT_KEYS: dict[str, tuple[Optional[str], str]] = {
    "train": (None, "train"),
    "synth": (None, "synth"),
    "holdout": (None, "holdout"),
    "holdout_fraction": (None, "holdout_fraction"),
    "seed": (None, "seed"),
    "qid": (None, "qid"),
    "sensitive": (None, "sensitive"),
    "direct_identifiers": (None, "direct_identifiers"),
    "entity_column": (None, "entity_column"),
    "max_records_per_entity": (None, "max_records_per_entity"),
    "metrics": (None, "metrics"),
    "report": (None, "report"),
    "format": (None, "format"),
    "threads": (None, "threads"),
    "delimiter": (None, "delimiter"),
    "missing_marker": (None, "missing_marker"),
    "filter_output": (None, "filter_output"),
    "aia_random_qids": (None, "aia_random_qids"),
    "aia_k": (None, "aia_k"),
    "aia_tolerance": (None, "aia_tolerance"),
    "aia_records": (None, "aia_records"),
    "min_grade": ("policy", "min_grade"),
    "required_verdicts": ("policy", "required_verdicts"),
    "mia_fractions": ("mia", "train_sample_fractions"),
    "mia_quantiles": ("mia", "threshold_quantiles"),
    "mia_trials": ("mia", "n_trials"),
    "dcr_share_tolerance": ("thresholds", "dcr_share_tolerance"),
    "dcr_share_repetitions": ("thresholds", "dcr_share_repetitions"),
    "nndr_tolerance": ("thresholds", "nndr_tolerance"),
    "nnaa_repetitions": ("thresholds", "nnaa_repetitions"),
    "nnaa_sampling": ("thresholds", "nnaa_sampling"),
    "nnaa_max_loss": ("thresholds", "nnaa_max_loss"),
    "min_k": ("thresholds", "min_k"),
    "filter_similarity_quantile": ("filters", "similarity_quantile"),
    "filter_similarity_threshold": ("filters", "similarity_threshold"),
    "filter_outlier_k": ("filters", "outlier_k"),
    "filter_outlier_quantile": ("filters", "outlier_quantile"),
}

LIST_KEYS = {
    "qid", "sensitive", "direct_identifiers", "metrics",
    "required_verdicts", "mia_fractions", "mia_quantiles",
}


class MetricThresholds(BaseModel):
    """各指标判定用的容差与可选门槛"""
    dcr_share_tolerance: float = Field(default=0.0, ge=0.0)
    dcr_share_repetitions: int = Field(default=5, ge=1)
    nndr_tolerance: float = Field(default=0.05, ge=0.0)
    nnaa_repetitions: int = Field(default=5, ge=1)
    nnaa_sampling: Literal["common", "pairwise"] = "common"
    nnaa_max_loss: Optional[float] = None
    min_k: Optional[int] = Field(default=None, ge=1)


class GatePolicy(BaseModel):
    """CI 门禁：最低 MIA 等级 + 必须通过的判定（形如 dcr.share_closer_to_train_at_most_half）"""
    min_grade: Optional[Grade] = None
    required_verdicts: list[str] = Field(default_factory=list)


class AuditConfig(BaseModel):
    train: Optional[str] = None
    synth: Optional[str] = None
    holdout: Optional[str] = None
    holdout_fraction: float = Field(default=0.05, gt=0.0, lt=1.0)
    seed: int = Field(default=0, ge=0)
    qid: list[str] = Field(default_factory=list)
    sensitive: list[str] = Field(default_factory=list)
    direct_identifiers: list[str] = Field(default_factory=list)
    entity_column: Optional[str] = Field(default=None, description="个体标识列；设置后每个个体最多保留 max_records_per_entity 条真实记录")
    max_records_per_entity: int = Field(default=1, ge=1)
    metrics: list[str] = Field(default_factory=list, description="为空时使用默认指标集（有 qid 时加上 kanon）")
    report: Optional[str] = None
    format: Literal["structured", "human"] = "structured"
    threads: int = Field(default=1, ge=1)
    delimiter: str = Field(default=",", min_length=1, max_length=1)
    missing_marker: str = ""
    filter_output: Optional[str] = None
    aia_random_qids: Optional[int] = Field(default=None, ge=1)
    aia_k: int = Field(default=DEFAULT_AIA_K, ge=1)
    aia_tolerance: float = Field(default=DEFAULT_NUMERIC_TOLERANCE, ge=0.0)
    aia_records: Optional[int] = Field(default=None, ge=1)
    mia: MiaConfig = Field(default_factory=MiaConfig)
    thresholds: MetricThresholds = Field(default_factory=MetricThresholds)
    filters: FilterConfig = Field(default_factory=FilterConfig)
    policy: GatePolicy = Field(default_factory=GatePolicy)

    @field_validator("metrics")
    @classmethod
    def _check_metrics(cls, values: list[str]) -> list[str]:
        unknown = [m for m in values if m not in METRIC_REGISTRY]
        if unknown:
            raise ValueError(f"未知指标: {unknown}，可选: {list(METRIC_REGISTRY)}")
        return values

    @model_validator(mode="after")
    def _sync_seed(self) -> "AuditConfig":
        # 所有随机结果只由顶层 seed 决定
        if self.mia.seed != self.seed or self.mia.holdout_fraction != self.holdout_fraction:
            self.mia = self.mia.model_copy(
                update={"seed": self.seed, "holdout_fraction": self.holdout_fraction}
            )
        overlap = set(self.qid) & set(self.sensitive)
        if overlap:
            raise ValueError(f"qid 与 sensitive 重叠: {sorted(overlap)}")
        return self

    @property
    def enabled_metrics(self) -> list[str]:
        """按注册表顺序排列的启用指标"""
        wanted = set(self.metrics) if self.metrics else set(DEFAULT_METRICS) | ({"kanon"} if self.qid else set())
        return [m for m in METRIC_REGISTRY if m in wanted]

    def aia_config(self, columns: list[str]) -> AiaConfig:
        """
        审计使用的 AIA 配置

        指定了 qid 且未要求随机模式时用固定 QID，否则每条记录随机抽取
        aia_random_qids（默认 ⌊列数 / 2⌋，至少 1）个字段。
        """
        common = dict(
            k=self.aia_k,
            numeric_match_tolerance=self.aia_tolerance,
            n_attack_records=self.aia_records,
            seed=self.seed,
        )
        if self.qid and self.aia_random_qids is None:
            return AiaConfig.fixed(self.qid, **common)
        return AiaConfig.random(self.aia_random_qids or max(1, len(columns) // 2), **common)

    @classmethod
    def from_flat(cls, values: dict) -> "AuditConfig":
        return from_flat(values)


# ============================================================
# 扁平配置的读取与合并
# ============================================================

def _split_list(value: Union[str, list, tuple]) -> list:
    if isinstance(value, str):
        return [item.strip() for item in value.split(",") if item.strip()]
    return list(value)


def from_flat(values: dict) -> AuditConfig:
    """扁平键值 -> AuditConfig；None 值视为未设置"""
    unknown = sorted(set(values) - set(FLAT_KEYS))
    if unknown:
        raise ConfigError(f"未知配置项: {unknown}")
    nested: dict = {}
    for key, value in values.items():
        if value is None:
            continue
        if key in LIST_KEYS:
            value = _split_list(value)
        section, field = FLAT_KEYS[key]
        if section is None:
            nested[field] = value
        else:
            nested.setdefault(section, {})[field] = value
    try:
        return AuditConfig.model_validate(nested)
    except ValidationError as exc:
        raise ConfigError(f"配置非法: {exc}") from exc


def load_config_file(path: Union[str, Path]) -> dict:
    """读取扁平配置文件（YAML，JSON 是其子集）"""
    path = Path(path)
    try:
        with path.open("r", encoding="utf-8") as fh:
            data = yaml.safe_load(fh)
    except (OSError, yaml.YAMLError) as exc:
        raise ConfigError(f"无法读取配置文件 {path}: {exc}") from exc
    if data is None:
        return {}
    if not isinstance(data, dict):
        raise ConfigError(f"配置文件 {path} 必须是键值映射")
    unknown = sorted(set(data) - set(FLAT_KEYS))
    if unknown:
        raise ConfigError(f"配置文件 {path} 含未知配置项: {unknown}")
    return data


def env_defaults(include_policy: bool = True) -> dict:
    """
    从环境变量读取默认值

    PRIVACY_AUDIT_SEED / PRIVACY_AUDIT_THREADS / PRIVACY_AUDIT_FORMAT，
    include_policy 时再读 PRIVACY_AUDIT_MIN_GRADE。
    """
    keys = ["seed", "threads", "format"] + (["min_grade"] if include_policy else [])
    values = {}
    for key in keys:
        raw = os.getenv(f"{ENV_PREFIX}{key.upper()}")
        if raw:
            values[key] = raw.strip()
    return values


def merge_flat(*layers: dict) -> dict:
    """后面的层覆盖前面的层，None 不覆盖"""
    merged: dict = {}
    for layer in layers:
        for key, value in layer.items():
            if value is not None:
                merged[key] = value
    return merged


def list_metrics():
    """列出所有可用指标"""
    print("可用的隐私指标：")
    print("-" * 50)
    for name, info in METRIC_REGISTRY.items():
        print(f"\n📦 {name}")
        print(f"   说明: {info['description']}")
        print(f"   需要 holdout: {'是' if info['needs_holdout'] else '否'}")


if __name__ == "__main__":
    list_metrics()
