"""
审计报告 - 编排完整审计、序列化报告、计算 CI 退出码
"""
import json
import logging
from contextlib import contextmanager
from pathlib import Path
from typing import Literal, Optional, Union

from jinja2 import Environment, FileSystemLoader
from pydantic import BaseModel, Field, ValidationError

from anonymity import QID_CAVEAT, AnonymityResult, QuasiIdentifierSet, k_anonymity, suppress_direct_identifiers
from attacks import AiaReport, MiaReport, mia_run, aia_run
from config import AuditConfig, GatePolicy
from dataset import (
    CsvDialect,
    SplitConfig,
    cap_records_per_entity,
    dedup_exact,
    encode,
    fit_encoder,
    load_csv,
    split_holdout,
    write_csv,
)
from errors import ConfigError, PolicyError, PrivacyAuditError, StageError
from filters import DP_FILTER_WARNING, SIMILARITY_DEFAULT_NOTE, FilterSummary, apply_privacy_filters
from metrics import DcrReport, ImsResult, NnaaResult, NndrReport, dcr_suite, ims_test, nnaa_privacy_loss, nndr_suite

logger = logging.getLogger(__name__)

SCHEMA_VERSION = 1
TOOL_VERSION = "0.1.0"
TEMPLATE_DIR = Path(__file__).parent / "templates"

ENCODING_NOTE = (
    "数值列 min-max 归一化，类别列 one-hot 后乘 1/√2，两个不同类别之间的距离为 1；"
    "所有表共用在训练集上拟合的同一编码空间"
)


class SplitInfo(BaseModel):
    n_train: int
    n_holdout: int
    n_synth: int
    source: Literal["file", "split"] = Field(description="holdout 来自文件还是从训练集切分")
    seed: int
    holdout_fraction: Optional[float] = None


class AnonymityBlock(BaseModel):
    real: AnonymityResult
    synthetic: AnonymityResult


class PrivacyReport(BaseModel):
    """一次审计的完整结果；未启用的指标为 None，序列化时省略"""
    schema_version: int = SCHEMA_VERSION
    tool_version: str = TOOL_VERSION
    config: AuditConfig
    split: SplitInfo
    enabled_metrics: list[str]
    ims: Optional[ImsResult] = None
    dcr: Optional[DcrReport] = None
    nndr: Optional[NndrReport] = None
    nnaa: Optional[NnaaResult] = None
    mia: Optional[MiaReport] = None
    aia: Optional[AiaReport] = None
    kanon: Optional[AnonymityBlock] = None
    filter: Optional[list[FilterSummary]] = None
    warnings: list[str] = Field(default_factory=list)


@contextmanager
def _stage(name: str):
    """把阶段内的库错误包装成 StageError，消息带上阶段名"""
    try:
        yield
    except StageError:
        raise
    except (PrivacyAuditError, ValidationError) as exc:
        raise StageError(name, str(exc)) from exc


# ============================================================
# 审计编排
# ============================================================

def run_audit(cfg: AuditConfig) -> PrivacyReport:
    """
    加载 -> 切分 -> 拟合编码器 -> 逐个运行启用的指标 -> 组装报告

    相同配置与输入得到逐字节相同的结构化报告。
    """
    if not cfg.synth:
        raise ConfigError("synthetic table required")
    if not cfg.train:
        raise ConfigError("training table required")
    enabled = cfg.enabled_metrics
    if not enabled:
        raise ConfigError("没有启用任何指标")
    dialect = CsvDialect(delimiter=cfg.delimiter, missing_marker=cfg.missing_marker)
    workers = cfg.threads
    warnings: list[str] = []

    with _stage("load"):
        train = load_csv(cfg.train, dialect=dialect)
        synth = load_csv(cfg.synth, schema_hint=train.schema, dialect=dialect)
        holdout = load_csv(cfg.holdout, schema_hint=train.schema, dialect=dialect) if cfg.holdout else None

    if cfg.entity_column:
        with _stage("cap"):
            train, removed = cap_records_per_entity(train, cfg.entity_column, cfg.max_records_per_entity)
            if holdout is not None:
                holdout, removed_holdout = cap_records_per_entity(
                    holdout, cfg.entity_column, cfg.max_records_per_entity
                )
                removed += removed_holdout
            if removed:
                warnings.append(
                    f"按 {cfg.entity_column} 限制每个个体最多 {cfg.max_records_per_entity} 条记录，"
                    f"去除了 {removed} 条真实记录"
                )

    if cfg.direct_identifiers:
        with _stage("suppress"):
            qids = QuasiIdentifierSet(direct_identifiers=cfg.direct_identifiers)
            train = suppress_direct_identifiers(train, qids)
            synth = suppress_direct_identifiers(synth, qids)
            if holdout is not None:
                holdout = suppress_direct_identifiers(holdout, qids)

    with _stage("split"):
        if holdout is None:
            train, holdout = split_holdout(train, SplitConfig(cfg.holdout_fraction, cfg.seed))
            split = SplitInfo(
                n_train=len(train), n_holdout=len(holdout), n_synth=len(synth),
                source="split", seed=cfg.seed, holdout_fraction=cfg.holdout_fraction,
            )
        else:
            split = SplitInfo(
                n_train=len(train), n_holdout=len(holdout), n_synth=len(synth),
                source="file", seed=cfg.seed,
            )
        _, duplicates = dedup_exact(train)
        if duplicates:
            warnings.append(
                f"训练集含 {duplicates} 条完全重复记录；重复记录更容易被生成器记住，建议先去重"
            )

    with _stage("encode"):
        stats = fit_encoder(train)
        train_matrix = encode(train, stats)
        holdout_matrix = encode(holdout, stats)
        synth_matrix = encode(synth, stats)
        warnings.append(ENCODING_NOTE)
        clamps = holdout_matrix.clamp_count + synth_matrix.clamp_count
        if clamps:
            warnings.append(f"编码时有 {clamps} 个数值单元格超出训练集范围，已截断到 [-0.5, 1.5]")
        missing = train_matrix.missing_count + holdout_matrix.missing_count + synth_matrix.missing_count
        if missing:
            warnings.append(f"共有 {missing} 个缺失单元格：数值编码为 0.5，类别编码为全 0")

    blocks: dict = {}
    thresholds = cfg.thresholds
    for metric in enabled:
        logger.info(f"运行指标: {metric}")
        with _stage(metric):
            if metric == "ims":
                blocks["ims"] = ims_test(train, holdout, synth)
            elif metric == "dcr":
                blocks["dcr"] = dcr_suite(
                    train_matrix, holdout_matrix, synth_matrix, thresholds.dcr_share_tolerance, workers,
                    seed=cfg.seed, share_repetitions=thresholds.dcr_share_repetitions,
                )
            elif metric == "nndr":
                blocks["nndr"] = nndr_suite(
                    train_matrix, holdout_matrix, synth_matrix, thresholds.nndr_tolerance, workers
                )
            elif metric == "nnaa":
                blocks["nnaa"] = nnaa_privacy_loss(
                    train_matrix, holdout_matrix, synth_matrix,
                    n_repetitions=thresholds.nnaa_repetitions,
                    seed=cfg.seed,
                    sampling=thresholds.nnaa_sampling,
                    max_privacy_loss=thresholds.nnaa_max_loss,
                    workers=workers,
                )
            elif metric == "mia":
                blocks["mia"] = mia_run(train, holdout, synth, cfg.mia, stats, workers)
            elif metric == "aia":
                blocks["aia"] = aia_run(train, synth, cfg.aia_config(train.schema.names), stats, workers)
            elif metric == "kanon":
                if not cfg.qid:
                    raise ConfigError("kanon 需要指定 qid")
                qids = QuasiIdentifierSet(qid_columns=cfg.qid, sensitive_columns=cfg.sensitive)
                blocks["kanon"] = AnonymityBlock(
                    real=k_anonymity(train.concat(holdout), qids, thresholds.min_k),
                    synthetic=k_anonymity(synth, qids, thresholds.min_k),
                )
                warnings.append(QID_CAVEAT)
            elif metric == "filter":
                filtered, results = apply_privacy_filters(synth, train, cfg.filters, stats, workers)
                blocks["filter"] = [r.summary() for r in results]
                if cfg.filter_output:
                    write_csv(filtered, cfg.filter_output, dialect)
                warnings.append(DP_FILTER_WARNING)
                if cfg.filters.similarity and cfg.filters.similarity_threshold is None:
                    warnings.append(SIMILARITY_DEFAULT_NOTE)

    return PrivacyReport(
        config=cfg,
        split=split,
        enabled_metrics=enabled,
        warnings=warnings,
        **blocks,
    )


# ============================================================
# 序列化
# ============================================================

def render_report(report: PrivacyReport, format: str = "structured") -> bytes:
    """
    structured：键排序的 JSON，便于 diff；human：每个指标一段文本，判定逐行 PASS/FAIL
    """
    if format == "structured":
        data = report.model_dump(mode="json", exclude_none=True)
        text = json.dumps(data, sort_keys=True, indent=2, ensure_ascii=False) + "\n"
        return text.encode("utf-8")
    if format == "human":
        env = Environment(
            loader=FileSystemLoader(TEMPLATE_DIR),
            keep_trailing_newline=True,
            trim_blocks=True,
            lstrip_blocks=True,
        )
        template = env.get_template("report.txt.j2")
        return template.render(report=report, verdicts=verdicts(report)).encode("utf-8")
    raise ConfigError(f"未知报告格式: {format}，可选: structured / human")


def parse_report(data: Union[bytes, str]) -> PrivacyReport:
    return PrivacyReport.model_validate_json(data)


def save_report(report: PrivacyReport, path: Union[str, Path], format: str = "structured") -> None:
    Path(path).write_bytes(render_report(report, format))
    logger.info(f"报告已写出: {path}")


# ============================================================
# CI 门禁
# ============================================================

def verdicts(report: PrivacyReport) -> dict[str, bool]:
    """全部判定，键为 "指标.判定名"，按键排序"""
    found: dict[str, bool] = {}
    if report.ims is not None:
        found["ims.passed"] = report.ims.passed
    for metric in ("dcr", "nndr", "nnaa"):
        block = getattr(report, metric)
        if block is not None:
            for name, passed in block.verdicts.items():
                found[f"{metric}.{name}"] = passed
    if report.kanon is not None:
        for name, passed in report.kanon.synthetic.verdicts.items():
            found[f"kanon.{name}"] = passed
    return dict(sorted(found.items()))


def exit_code(report: PrivacyReport, policy: GatePolicy) -> int:
    """
    0：MIA 等级不低于最低等级且所有必需判定通过；2：策略未通过

    Raises:
        PolicyError: 策略引用了未启用的指标或不存在的判定
    """
    enabled = set(report.enabled_metrics)
    if policy.min_grade is not None and ("mia" not in enabled or report.mia is None):
        raise PolicyError("最低等级策略需要启用 mia")
    available = verdicts(report)
    for name in policy.required_verdicts:
        metric = name.split(".", 1)[0]
        if metric not in enabled:
            raise PolicyError(f"策略引用了未启用的指标: {metric}")
        if name not in available:
            raise PolicyError(f"未知判定: {name}，可选: {list(available)}")

    passed = True
    if policy.min_grade is not None and not report.mia.grade.at_least(policy.min_grade):
        logger.warning(f"MIA 等级 {report.mia.grade.value} 低于要求的 {policy.min_grade.value}")
        passed = False
    failed = [name for name in policy.required_verdicts if not available[name]]
    if failed:
        logger.warning(f"未通过的判定: {failed}")
        passed = False
    return 0 if passed else 2
