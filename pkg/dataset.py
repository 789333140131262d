"""
数据集模块 - 表格数据的加载、校验、规范化、切分与编码

下游所有指标（IMS / DCR / NNDR / NNAA / MIA / AIA）共享这里产出的同一个编码空间：
- 数值列：按训练表 min-max 缩放到 [0, 1]，越界值线性外推后截断到 [-0.5, 1.5]
- 类别列：one-hot 后乘以 1/√2，类别不同的两行在该列上的距离恰好为 1
- 缺失值：数值列编码为 0.5，类别列编码为全 0 块
"""
import logging
import math
import re
from dataclasses import dataclass
from enum import Enum
from functools import cached_property
from pathlib import Path
from typing import Iterable, Optional, Sequence, Union

import numpy as np
import pandas as pd

from errors import ConfigError, DataError, SchemaMismatchError

logger = logging.getLogger(__name__)

CATEGORY_SCALE = 1.0 / math.sqrt(2.0)
CLAMP_LOW = -0.5
CLAMP_HIGH = 1.5
MISSING_NUMERIC_CODE = 0.5

_NUMBER_RE = re.compile(r"[+-]?(?:\d+(?:\.\d*)?|\.\d+)(?:[eE][+-]?\d+)?")


# ============================================================
# Schema
# ============================================================

class ColumnKind(str, Enum):
    """列类型"""
    NUMERIC = "numeric"
    CATEGORICAL = "categorical"


@dataclass(frozen=True)
class Column:
    name: str
    kind: ColumnKind


@dataclass(frozen=True)
class Schema:
    """有序的列定义；列名唯一且非空，至少一列"""
    columns: tuple[Column, ...]

    def __post_init__(self):
        object.__setattr__(self, "columns", tuple(self.columns))
        if not self.columns:
            raise DataError("schema 至少需要一列")
        names = [c.name for c in self.columns]
        if any(not name for name in names):
            raise DataError("列名不能为空")
        duplicated = sorted({n for n in names if names.count(n) > 1})
        if duplicated:
            raise DataError(f"列名重复: {duplicated}")

    @classmethod
    def from_mapping(cls, kinds: dict[str, Union[str, ColumnKind]]) -> "Schema":
        """{"age": "numeric", "sex": "categorical"} -> Schema"""
        return cls(tuple(Column(name, ColumnKind(kind)) for name, kind in kinds.items()))

    @property
    def names(self) -> list[str]:
        return [c.name for c in self.columns]

    @property
    def numeric_names(self) -> list[str]:
        return [c.name for c in self.columns if c.kind is ColumnKind.NUMERIC]

    @property
    def categorical_names(self) -> list[str]:
        return [c.name for c in self.columns if c.kind is ColumnKind.CATEGORICAL]

    def kind_of(self, name: str) -> ColumnKind:
        for c in self.columns:
            if c.name == name:
                return c.kind
        raise DataError(f"未知列: {name}")

    def require(self, names: Iterable[str]) -> None:
        unknown = [n for n in names if n not in self]
        if unknown:
            raise DataError(f"未知列: {unknown}")

    def select(self, names: Iterable[str]) -> "Schema":
        """按 schema 原有顺序保留指定列"""
        wanted = set(names)
        self.require(wanted)
        return Schema(tuple(c for c in self.columns if c.name in wanted))

    def drop(self, names: Iterable[str]) -> "Schema":
        unwanted = set(names)
        self.require(unwanted)
        return Schema(tuple(c for c in self.columns if c.name not in unwanted))

    def __contains__(self, name: object) -> bool:
        return any(c.name == name for c in self.columns)

    def __len__(self) -> int:
        return len(self.columns)


# ============================================================
# 单元格规范化
# ============================================================

def format_number(value: float) -> str:
    """数值的规范形式：最短往返表示，1.0 与 1.00 得到同一个字符串，-0.0 归一为 0.0"""
    return repr(float(value) + 0.0)


def parse_number(text: str) -> Optional[float]:
    """严格解析实数字面量；nan / inf / 1_000 之类一律视为非数值"""
    if not _NUMBER_RE.fullmatch(text):
        return None
    value = float(text)
    return value if math.isfinite(value) else None


def _is_missing(value: object) -> bool:
    return value is None or value is pd.NA


def _coerce_column(column: Column, values: Sequence) -> pd.api.extensions.ExtensionArray:
    if column.kind is ColumnKind.NUMERIC:
        if isinstance(values, np.ndarray) and values.dtype.kind in "fiu":
            if not np.all(np.isfinite(values)):
                raise DataError(f"数值列 {column.name} 含 NaN/inf，缺失值请用 None 表示")
            return pd.array(values.astype(np.float64), dtype="Float64")
        cells: list[Optional[float]] = []
        for value in values:
            if _is_missing(value):
                cells.append(None)
                continue
            number = parse_number(value.strip()) if isinstance(value, str) else float(value)
            if number is None or not math.isfinite(number):
                raise DataError(f"数值列 {column.name} 含非法值: {value!r}")
            cells.append(number)
        return pd.array(cells, dtype="Float64")
    return pd.array(
        [None if _is_missing(v) else str(v).strip() for v in values], dtype="string"
    )


# ============================================================
# Table
# ============================================================

@dataclass(frozen=True, eq=False)
class Table:
    """
    不可变的表格数据

    frame 的列与 schema 一一对应：数值列为 pandas Float64，类别列为 string，
    缺失值统一是 pd.NA（显式标记，不是 NaN）。
    """
    schema: Schema
    frame: pd.DataFrame

    def __post_init__(self):
        if list(self.frame.columns) != self.schema.names:
            raise DataError(
                f"数据列 {list(self.frame.columns)} 与 schema {self.schema.names} 不一致"
            )

    @classmethod
    def from_columns(cls, schema: Schema, columns: dict[str, Sequence]) -> "Table":
        data = {}
        n_rows: Optional[int] = None
        for column in schema.columns:
            if column.name not in columns:
                raise DataError(f"缺少列: {column.name}")
            values = columns[column.name]
            if n_rows is None:
                n_rows = len(values)
            elif len(values) != n_rows:
                raise DataError(f"列 {column.name} 长度 {len(values)} 与其他列 {n_rows} 不一致")
            data[column.name] = _coerce_column(column, values)
        return cls(schema, pd.DataFrame(data, columns=schema.names))

    @classmethod
    def from_rows(cls, schema: Schema, rows: Iterable[Sequence]) -> "Table":
        """逐行构造；None 表示缺失"""
        rows = [list(r) for r in rows]
        for i, row in enumerate(rows):
            if len(row) != len(schema):
                raise DataError(f"第 {i} 行有 {len(row)} 个单元格，schema 需要 {len(schema)} 个")
        columns = {
            name: [row[j] for row in rows] for j, name in enumerate(schema.names)
        }
        return cls.from_columns(schema, columns)

    def __len__(self) -> int:
        return len(self.frame)

    @property
    def n_rows(self) -> int:
        return len(self.frame)

    # ---------- 列访问 ----------

    def numeric_values(self, name: str) -> np.ndarray:
        """数值列转 float64 数组（缺失位置为 NaN，只在计算内部使用）"""
        if self.schema.kind_of(name) is not ColumnKind.NUMERIC:
            raise DataError(f"列 {name} 不是数值列")
        return self.frame[name].to_numpy(dtype="float64", na_value=np.nan)

    def category_values(self, name: str) -> np.ndarray:
        if self.schema.kind_of(name) is not ColumnKind.CATEGORICAL:
            raise DataError(f"列 {name} 不是类别列")
        return self.frame[name].to_numpy(dtype=object, na_value=None)

    def missing_mask(self, name: str) -> np.ndarray:
        return self.frame[name].isna().to_numpy()

    @cached_property
    def canonical_rows(self) -> list[tuple]:
        """每行的规范元组：数值用 format_number，类别用去空白字符串，缺失为 None"""
        columns = []
        for column in self.schema.columns:
            if column.kind is ColumnKind.NUMERIC:
                columns.append(
                    [None if math.isnan(v) else format_number(v)
                     for v in self.numeric_values(column.name)]
                )
            else:
                columns.append(list(self.category_values(column.name)))
        return list(zip(*columns))

    # ---------- 变换（都返回新表） ----------

    def take(self, indices: Sequence[int]) -> "Table":
        return Table(self.schema, self.frame.iloc[np.asarray(indices, dtype=np.int64)].reset_index(drop=True))

    def select(self, names: Iterable[str]) -> "Table":
        schema = self.schema.select(names)
        return Table(schema, self.frame[schema.names].copy())

    def drop(self, names: Iterable[str]) -> "Table":
        schema = self.schema.drop(names)
        return Table(schema, self.frame[schema.names].copy())

    def concat(self, other: "Table") -> "Table":
        require_same_schema(self, other, "concat")
        return Table(self.schema, pd.concat([self.frame, other.frame], ignore_index=True))

    def copy(self) -> "Table":
        return Table(self.schema, self.frame.copy())


def require_same_schema(left: Table, right: Table, what: str) -> None:
    if left.schema != right.schema:
        raise SchemaMismatchError(
            f"{what}: schema 不一致 {left.schema.names} vs {right.schema.names}"
        )


def _sort_key(row: tuple) -> tuple:
    return tuple((0, "") if cell is None else (1, cell) for cell in row)


def canonical_order(table: Table) -> np.ndarray:
    """
    按规范元组排序后的行序

    所有带种子的抽样都在这个顺序上进行，因此输入行顺序不会影响抽样结果。
    """
    keys = table.canonical_rows
    order = sorted(range(len(keys)), key=lambda i: _sort_key(keys[i]))
    return np.asarray(order, dtype=np.int64)


# ============================================================
# CSV 读写
# ============================================================

@dataclass(frozen=True)
class CsvDialect:
    """CSV 方言：分隔符、缺失值标记、编码"""
    delimiter: str = ","
    missing_marker: str = ""
    encoding: str = "utf-8"

    @property
    def read_encoding(self) -> str:
        """UTF-8 读取时去掉 Excel 导出常带的 BOM"""
        if self.encoding.lower().replace("_", "-") in ("utf-8", "utf8"):
            return "utf-8-sig"
        return self.encoding


_RAGGED_RE = re.compile(r"Expected \d+ fields in line (\d+)")


def _read_raw(path: Path, dialect: CsvDialect) -> pd.DataFrame:
    """整张文件按字符串读入，表头也作为第 0 行，行号与文件物理行一致"""
    try:
        return pd.read_csv(
            path,
            sep=dialect.delimiter,
            header=None,
            dtype=str,
            keep_default_na=False,
            na_values=[dialect.missing_marker],
            encoding=dialect.read_encoding,
        )
    except pd.errors.EmptyDataError:
        raise DataError(f"{path}: 文件为空，缺少表头") from None
    except pd.errors.ParserError as exc:
        match = _RAGGED_RE.search(str(exc))
        if match:
            raise DataError(f"ragged row at line {match.group(1)}") from exc
        raise DataError(f"无法解析文件 {path}: {exc}") from exc
    except (OSError, UnicodeDecodeError) as exc:
        raise DataError(f"无法读取文件 {path}: {exc}") from exc


def load_csv(
    path: Union[str, Path],
    schema_hint: Optional[Schema] = None,
    dialect: Optional[CsvDialect] = None,
) -> Table:
    """
    读取带表头的 CSV

    一列只有在所有非缺失单元格都能解析成有限实数时才推断为数值列，否则为类别列；
    全部缺失的列推断为类别列。单元格去掉首尾空白后等于缺失标记即为缺失。
    比表头短的行按 pandas 的方式补成缺失值。

    Raises:
        DataError: 文件不可读、行比表头长、空表、schema hint 与表头不一致
    """
    dialect = dialect or CsvDialect()
    path = Path(path)
    marker = dialect.missing_marker
    raw = _read_raw(path, dialect).apply(lambda col: col.str.strip())
    header = [marker if pd.isna(name) else name for name in raw.iloc[0]]
    body = raw.iloc[1:].reset_index(drop=True)
    if body.empty:
        raise DataError(f"{path}: 表中没有数据行")
    missing = body.isna() | (body == marker)

    if schema_hint is not None:
        if schema_hint.names != header:
            raise DataError(
                f"{path}: schema hint 列名 {schema_hint.names} 与表头 {header} 不一致"
            )
        schema = schema_hint
    else:
        kinds = {}
        for j, name in enumerate(header):
            present = body.iloc[:, j][~missing.iloc[:, j]]
            numeric = not present.empty and present.map(parse_number).notna().all()
            kinds[name] = ColumnKind.NUMERIC if numeric else ColumnKind.CATEGORICAL
        schema = Schema(tuple(Column(name, kind) for name, kind in kinds.items()))

    columns: dict[str, list] = {}
    for j, column in enumerate(schema.columns):
        values = [None if m else cell for cell, m in zip(body.iloc[:, j], missing.iloc[:, j])]
        if column.kind is ColumnKind.NUMERIC:
            parsed = [None if cell is None else parse_number(cell) for cell in values]
            for row, (cell, number) in enumerate(zip(values, parsed)):
                if cell is not None and number is None:
                    raise DataError(f"{path}: 第 {row + 1} 个数据行列 {column.name} 不是数值: {cell!r}")
            values = parsed
        columns[column.name] = values

    table = Table.from_columns(schema, columns)
    logger.info(f"已加载 {path.name}: {len(table)} 行 × {len(schema)} 列")
    return table


def write_csv(table: Table, path: Union[str, Path], dialect: Optional[CsvDialect] = None) -> None:
    """按与输入相同的方言写回 CSV，数值写规范形式"""
    dialect = dialect or CsvDialect()
    path = Path(path)
    frame = pd.DataFrame(table.canonical_rows, columns=table.schema.names, dtype=object)
    frame.to_csv(
        path,
        sep=dialect.delimiter,
        index=False,
        na_rep=dialect.missing_marker,
        lineterminator="\n",
        encoding=dialect.encoding,
    )
    logger.info(f"已写出 {path.name}: {len(table)} 行")


# ============================================================
# Holdout 切分
# ============================================================

@dataclass(frozen=True)
class SplitConfig:
    """holdout 切分参数，默认留出 5%"""
    holdout_fraction: float = 0.05
    seed: int = 0

    def __post_init__(self):
        if not 0.0 < self.holdout_fraction < 1.0:
            raise ConfigError(f"holdout_fraction 必须在 (0, 1) 内: {self.holdout_fraction}")
        if self.seed < 0:
            raise ConfigError(f"seed 必须非负: {self.seed}")


def split_holdout(table: Table, cfg: SplitConfig) -> tuple[Table, Table]:
    """
    带种子的均匀抽样切分

    |holdout| = round(fraction × n)，截断到 [1, n-1]；相同种子得到相同切分。
    """
    n = len(table)
    if n < 2:
        raise DataError(f"切分 holdout 至少需要 2 行，当前 {n} 行")
    n_holdout = int(math.floor(cfg.holdout_fraction * n + 0.5))
    n_holdout = min(max(n_holdout, 1), n - 1)

    order = canonical_order(table)
    rng = np.random.default_rng(cfg.seed)
    holdout_idx = np.sort(order[rng.permutation(n)[:n_holdout]])
    mask = np.ones(n, dtype=bool)
    mask[holdout_idx] = False
    train_idx = np.flatnonzero(mask)
    logger.info(f"holdout 切分: train {len(train_idx)} 行, holdout {len(holdout_idx)} 行 (seed={cfg.seed})")
    return table.take(train_idx), table.take(holdout_idx)


# ============================================================
# 编码器
# ============================================================

@dataclass(frozen=True, eq=False)
class EncodingStats:
    """在训练表上拟合的编码参数"""
    schema: Schema
    numeric_ranges: dict[str, tuple[float, float]]
    vocabularies: dict[str, tuple[str, ...]]

    @cached_property
    def column_slices(self) -> dict[str, slice]:
        """每个原始列在编码矩阵中占据的维度区间"""
        slices, start = {}, 0
        for column in self.schema.columns:
            width = 1 if column.kind is ColumnKind.NUMERIC else len(self.vocabularies[column.name])
            slices[column.name] = slice(start, start + width)
            start += width
        return slices

    @property
    def n_dims(self) -> int:
        return sum(s.stop - s.start for s in self.column_slices.values())

    def column_range(self, name: str) -> float:
        low, high = self.numeric_ranges[name]
        return high - low

    def dims_for(self, names: Iterable[str]) -> np.ndarray:
        """指定列（按 schema 顺序）对应的编码维度下标"""
        wanted = set(names)
        self.schema.require(wanted)
        dims = [
            np.arange(self.column_slices[c.name].start, self.column_slices[c.name].stop)
            for c in self.schema.columns if c.name in wanted
        ]
        return np.concatenate(dims) if dims else np.zeros(0, dtype=np.int64)


def fit_encoder(train: Table) -> EncodingStats:
    """数值列记录 (min, max)，类别列记录排序后的词表"""
    if len(train) == 0:
        raise DataError("拟合编码器需要非空训练表")
    ranges = {}
    for name in train.schema.numeric_names:
        values = train.numeric_values(name)
        values = values[~np.isnan(values)]
        ranges[name] = (float(values.min()), float(values.max())) if values.size else (0.0, 0.0)
    vocabularies = {
        name: tuple(sorted({v for v in train.category_values(name) if v is not None}))
        for name in train.schema.categorical_names
    }
    return EncodingStats(train.schema, ranges, vocabularies)


@dataclass(frozen=True, eq=False)
class EncodedMatrix:
    """
    编码后的稠密矩阵（只读）

    clamp_count 记录被截断到 [-0.5, 1.5] 的数值单元格数，
    missing_mask 是 (n_rows, n_columns) 的缺失单元格标记，二者都会写进报告。
    """
    values: np.ndarray
    stats: Optional[EncodingStats] = None
    clamp_count: int = 0
    missing_mask: Optional[np.ndarray] = None

    def __post_init__(self):
        values = np.array(self.values, dtype=np.float64, order="C")
        if values.ndim != 2:
            raise DataError(f"编码矩阵必须是二维的，当前 ndim={values.ndim}")
        values.flags.writeable = False
        object.__setattr__(self, "values", values)

    @property
    def n_rows(self) -> int:
        return self.values.shape[0]

    @property
    def n_dims(self) -> int:
        return self.values.shape[1]

    @property
    def missing_count(self) -> int:
        return 0 if self.missing_mask is None else int(self.missing_mask.sum())

    def take(self, indices: Sequence[int]) -> "EncodedMatrix":
        indices = np.asarray(indices, dtype=np.int64)
        mask = None if self.missing_mask is None else self.missing_mask[indices]
        return EncodedMatrix(self.values[indices], self.stats, 0, mask)

    def concat(self, other: "EncodedMatrix") -> "EncodedMatrix":
        if other.n_dims != self.n_dims:
            raise DataError(f"维度不一致: {self.n_dims} vs {other.n_dims}")
        return EncodedMatrix(np.vstack([self.values, other.values]), self.stats)

    def select_columns(self, names: Iterable[str]) -> "EncodedMatrix":
        """只保留指定原始列对应的子空间（AIA 的 QID 子空间）"""
        if self.stats is None:
            raise DataError("没有编码参数的矩阵无法按列选择")
        return EncodedMatrix(self.values[:, self.stats.dims_for(names)], self.stats)


def encode(table: Table, stats: EncodingStats) -> EncodedMatrix:
    """
    逐行编码

    越界数值先按线性公式编码再截断到 [-0.5, 1.5]；未见过的类别与缺失类别编码为全 0 块；
    缺失数值编码为 0.5。
    """
    if table.schema != stats.schema:
        raise SchemaMismatchError(
            f"表的 schema {table.schema.names} 与编码器 {stats.schema.names} 不一致"
        )
    n = len(table)
    out = np.zeros((n, stats.n_dims), dtype=np.float64)
    missing = np.zeros((n, len(table.schema)), dtype=bool)
    clamps = 0
    for j, column in enumerate(table.schema.columns):
        span = stats.column_slices[column.name]
        missing[:, j] = table.missing_mask(column.name)
        if column.kind is ColumnKind.NUMERIC:
            low, high = stats.numeric_ranges[column.name]
            x = table.numeric_values(column.name)
            if high > low:
                scaled = (x - low) / (high - low)
            else:
                scaled = np.full(n, 0.5)
            scaled[missing[:, j]] = MISSING_NUMERIC_CODE
            clipped = np.clip(scaled, CLAMP_LOW, CLAMP_HIGH)
            clamps += int(np.count_nonzero(clipped != scaled))
            out[:, span.start] = clipped
        else:
            vocab = list(stats.vocabularies[column.name])
            codes = pd.Categorical(table.frame[column.name], categories=vocab).codes
            rows = np.flatnonzero(codes >= 0)
            out[rows, span.start + codes[rows]] = CATEGORY_SCALE
    if clamps:
        logger.debug(f"编码时截断了 {clamps} 个越界数值单元格")
    return EncodedMatrix(out, stats, clamps, missing)


# ============================================================
# 去重 / 按个体限量
# ============================================================

def dedup_exact(table: Table) -> tuple[Table, int]:
    """保留每个完整规范元组的首次出现，顺序稳定"""
    seen: set[tuple] = set()
    keep: list[int] = []
    for i, key in enumerate(table.canonical_rows):
        if key not in seen:
            seen.add(key)
            keep.append(i)
    removed = len(table) - len(keep)
    if removed == 0:
        return table, 0
    logger.info(f"去除了 {removed} 条完全重复记录")
    return table.take(keep), removed


def cap_records_per_entity(table: Table, entity_column: str, max_records: int) -> tuple[Table, int]:
    """
    限制同一个体的记录条数

    每个实体值只保留前 max_records 行；实体列缺失的行无法归属到个体，全部保留。
    """
    if max_records < 1:
        raise ConfigError(f"max_records 必须 ≥ 1: {max_records}")
    table.schema.require([entity_column])
    entity = table.frame[entity_column]
    rank = entity.groupby(entity, dropna=False, sort=False).cumcount()
    keep = (entity.isna() | (rank < max_records)).to_numpy(dtype=bool)
    removed = int((~keep).sum())
    if removed == 0:
        return table, 0
    logger.info(f"按 {entity_column} 限制每个个体最多 {max_records} 条记录，去除了 {removed} 条")
    return table.take(np.flatnonzero(keep)), removed
