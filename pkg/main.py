"""
合成数据隐私审计 - 命令行入口

用法示例：
    uv run python main.py audit --train train.csv --synth synth.csv --min-grade Good
    uv run python main.py mia --train train.csv --synth synth.csv --format human
    uv run python main.py filter --train train.csv --synth synth.csv --output filtered.csv
    uv run python main.py generate population --spec fixtures/population.yaml --output train.csv
    uv run python main.py metrics

退出码：0 通过，2 门禁策略未通过，1 运行错误
"""
import argparse
import logging
import sys
from typing import Optional

from pydantic import ValidationError

from baselines import gen_copy, gen_independent, gen_perturb, load_population_spec, sample_population
from config import METRIC_REGISTRY, env_defaults, from_flat, list_metrics, load_config_file, merge_flat
from dataset import CsvDialect, load_csv, write_csv
from errors import ConfigError, PrivacyAuditError
from report import exit_code, render_report, run_audit, save_report

logger = logging.getLogger(__name__)

AUDIT_COMMANDS = ["audit"] + list(METRIC_REGISTRY)
GENERATORS = ["population", "copy", "perturb", "independent"]


def _add_audit_args(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--train", help="训练集 CSV")
    parser.add_argument("--synth", help="合成数据 CSV")
    parser.add_argument("--holdout", help="holdout CSV；不提供时从训练集切分")
    parser.add_argument("--holdout-fraction", type=float, help="切分比例，默认 0.05")
    parser.add_argument("--seed", type=int, help="随机种子")
    parser.add_argument("--qid", help="准标识符，逗号分隔")
    parser.add_argument("--sensitive", help="敏感字段，逗号分隔")
    parser.add_argument("--config", help="扁平配置文件（YAML / JSON）")
    parser.add_argument("--report", help="报告输出路径；不提供时写到标准输出")
    parser.add_argument("--format", choices=["structured", "human"], help="报告格式")
    parser.add_argument("--min-grade", help="MIA 最低等级（Excellent/VeryGood/Good/Moderate/Poor）")
    parser.add_argument("--threads", type=int, help="近邻查询线程数，不影响结果")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="privacy-audit", description="合成数据的经验隐私审计")
    parser.add_argument("-v", "--verbose", action="store_true", help="输出 DEBUG 日志")
    sub = parser.add_subparsers(dest="command", required=True)

    for name in AUDIT_COMMANDS:
        help_text = "运行完整审计" if name == "audit" else METRIC_REGISTRY[name]["description"]
        p = sub.add_parser(name, help=help_text)
        _add_audit_args(p)
        if name == "filter":
            p.add_argument("--output", help="过滤后合成表的输出路径")

    gen = sub.add_parser("generate", help="生成基线数据")
    gen.add_argument("kind", choices=GENERATORS)
    gen.add_argument("--output", required=True, help="输出 CSV")
    gen.add_argument("--train", help="copy / perturb / independent 的输入训练集")
    gen.add_argument("--spec", help="population 的总体配置（YAML / JSON）")
    gen.add_argument("--n-rows", type=int, help="覆盖总体配置中的行数")
    gen.add_argument("--seed", type=int, help="随机种子")
    gen.add_argument("--sigma", type=float, default=0.1, help="perturb 的噪声强度")

    sub.add_parser("metrics", help="列出所有指标")
    return parser


def _flags_to_flat(args: argparse.Namespace) -> dict:
    flat = {
        "train": args.train,
        "synth": args.synth,
        "holdout": args.holdout,
        "holdout_fraction": args.holdout_fraction,
        "seed": args.seed,
        "qid": args.qid,
        "sensitive": args.sensitive,
        "report": args.report,
        "format": args.format,
        "min_grade": args.min_grade,
        "threads": args.threads,
    }
    if args.command != "audit":
        flat["metrics"] = [args.command]
    if args.command == "filter":
        flat["filter_output"] = args.output
    return flat


def _run_audit_command(args: argparse.Namespace) -> int:
    file_values = load_config_file(args.config) if args.config else {}
    flag_values = _flags_to_flat(args)
    gated = args.command in ("audit", "mia")
    cfg = from_flat(merge_flat(env_defaults(include_policy=gated), file_values, flag_values))

    report = run_audit(cfg)
    if cfg.report:
        save_report(report, cfg.report, cfg.format)
    else:
        sys.stdout.write(render_report(report, cfg.format).decode("utf-8"))
    return exit_code(report, cfg.policy)


def _run_generate(args: argparse.Namespace) -> int:
    seed = args.seed if args.seed is not None else 0
    if args.kind == "population":
        if not args.spec:
            raise ConfigError("generate population 需要 --spec")
        spec = load_population_spec(args.spec)
        update = {"seed": seed} if args.seed is not None else {}
        if args.n_rows is not None:
            update["n_rows"] = args.n_rows
        table = sample_population(spec.model_copy(update=update))
    else:
        if not args.train:
            raise ConfigError(f"generate {args.kind} 需要 --train")
        train = load_csv(args.train)
        if args.kind == "copy":
            table = gen_copy(train)
        elif args.kind == "perturb":
            table = gen_perturb(train, args.sigma, seed)
        else:
            table = gen_independent(train, seed)
    write_csv(table, args.output, CsvDialect())
    return 0


def main(argv: Optional[list[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(
        level=logging.DEBUG if args.verbose else logging.WARNING,
        format="%(asctime)s - %(levelname)s - %(message)s",
    )
    try:
        if args.command == "metrics":
            list_metrics()
            return 0
        if args.command == "generate":
            return _run_generate(args)
        return _run_audit_command(args)
    except (PrivacyAuditError, ValidationError) as exc:
        logger.error(str(exc))
        return 1


if __name__ == "__main__":
    sys.exit(main())
