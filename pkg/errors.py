"""
异常模块 - 隐私审计统一的错误层级

全部继承自 ValueError，调用方既可以精确捕获，也可以像普通参数错误一样处理。
"""


class PrivacyAuditError(ValueError):
    """所有审计错误的基类"""


class DataError(PrivacyAuditError):
    """数据读取 / 校验失败"""


class SchemaMismatchError(DataError):
    """两张表（或表与编码器）的 schema 不一致"""


class NeighborSearchError(PrivacyAuditError):
    """近邻查询的前置条件不满足（维度不符、k 过大等）"""


class ConfigError(PrivacyAuditError):
    """配置非法"""


class PolicyError(ConfigError):
    """CI 门禁策略引用了未启用的指标"""


class StageError(PrivacyAuditError):
    """审计流程中某个阶段失败，消息里带上阶段名"""

    def __init__(self, stage: str, message: str):
        self.stage = stage
        super().__init__(f"[{stage}] {message}")
