"""
Dual - 随机对偶分块梯度法、对偶目标与原始-对偶等价检查
"""
from .rdbgm import (
    EQUIVALENCE_TOL,
    DualState,
    EquivalenceReport,
    RandomizedDualBlockGradient,
    check_equivalence,
    dual_objective,
    dual_point,
)

__all__ = [
    "EQUIVALENCE_TOL",
    "DualState",
    "EquivalenceReport",
    "RandomizedDualBlockGradient",
    "check_equivalence",
    "dual_objective",
    "dual_point",
]
