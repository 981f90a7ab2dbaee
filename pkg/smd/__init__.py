"""
SMD - 小批量随机镜像下降引擎、批次抽样与运行轨迹
"""
from .engine import (
    STOP_KINDS,
    IterateState,
    NumericalError,
    StochasticMirrorDescent,
    StopSpec,
)
from .sampler import SAMPLER_KINDS, Sampler, partial_fisher_yates
from .trace import BASE_COLUMNS, RunTrace, format_float, read_trace_csv

__all__ = [
    "BASE_COLUMNS",
    "SAMPLER_KINDS",
    "STOP_KINDS",
    "IterateState",
    "NumericalError",
    "RunTrace",
    "Sampler",
    "StochasticMirrorDescent",
    "StopSpec",
    "format_float",
    "partial_fisher_yates",
    "read_trace_csv",
]
