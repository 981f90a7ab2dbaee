"""
Operators - 分块线性算子、批次下标集合与二进制容器
"""
from .block_operator import (
    Batch,
    BatchIndexSet,
    BlockLinearOperator,
    NormEstimate,
    RowBlockOperator,
    as_batch,
)
from .container import load_operator, save_operator

__all__ = [
    "Batch",
    "BatchIndexSet",
    "BlockLinearOperator",
    "NormEstimate",
    "RowBlockOperator",
    "as_batch",
    "load_operator",
    "save_operator",
]
