"""
步长规则 - (s1) 常数/查表、(s2) 残差比值、(s3) 带偏差原理门控
"""
import logging
import math
from dataclasses import dataclass, field, replace
from typing import Callable, Dict, Mapping, Optional, Sequence, Tuple

import numpy as np

from operators import BatchIndexSet, BlockLinearOperator

logger = logging.getLogger(__name__)

STEP_KINDS = ("S1", "S2", "S3")

# μ̃1 缺省值 = MU1_SCALE / min_i ‖A_i‖²
MU1_SCALE = 1e6


@dataclass(frozen=True)
class StepRule:
    """
    步长规则

    S1 三选一: t（全局常数）、table（按批次查表）、mu0（t_I = μ0 / Σ_{i∈I}‖A_i‖²）
    S2/S3: mu0、mu1(μ̃1)；S3 另有 tau
    """
    kind: str
    t: Optional[float] = None
    table: Optional[Mapping[Tuple[int, ...], float]] = field(default=None, compare=False)
    mu0: Optional[float] = None
    mu1: Optional[float] = None
    tau: float = 1.0

    def __post_init__(self):
        if self.kind not in STEP_KINDS:
            raise ValueError(f"未知步长规则: {self.kind}，可选: {', '.join(STEP_KINDS)}")
        if self.kind == "S1":
            given = [v is not None for v in (self.t, self.table, self.mu0)]
            if sum(given) != 1:
                raise ValueError("S1 需要且只需要 t、table、mu0 之一")
            if self.t is not None and not self.t > 0:
                raise ValueError(f"S1 常数步长必须为正: {self.t}")
            if self.table is not None and any(not v > 0 for v in self.table.values()):
                raise ValueError("S1 步长表中的值必须为正")
        else:
            if self.mu0 is None or not self.mu0 > 0:
                raise ValueError(f"{self.kind} 需要 mu0 > 0")
            if self.mu1 is not None and not self.mu1 > 0:
                raise ValueError(f"{self.kind} 需要 mu1 > 0")
        if self.mu0 is not None and not self.mu0 > 0:
            raise ValueError(f"mu0 必须为正: {self.mu0}")
        if self.tau < 1.0:
            raise ValueError(f"tau 必须 ≥ 1: {self.tau}")

    @classmethod
    def constant(cls, t: float) -> "StepRule":
        return cls("S1", t=t)

    @classmethod
    def from_table(cls, table: Mapping[Sequence[int], float]) -> "StepRule":
        return cls("S1", table={tuple(sorted(k)): float(v) for k, v in table.items()})

    @classmethod
    def normalized(cls, mu0: float) -> "StepRule":
        return cls("S1", mu0=mu0)

    @classmethod
    def s2(cls, mu0: float, mu1: Optional[float] = None) -> "StepRule":
        return cls("S2", mu0=mu0, mu1=mu1)

    @classmethod
    def s3(cls, mu0: float, mu1: Optional[float] = None, tau: float = 1.0) -> "StepRule":
        return cls("S3", mu0=mu0, mu1=mu1, tau=tau)

    @property
    def is_constant(self) -> bool:
        """所有批次共用同一个常数步长"""
        if self.kind != "S1":
            return False
        if self.t is not None:
            return True
        return self.table is not None and len(set(self.table.values())) == 1

    def describe(self) -> Dict:
        info = {"kind": self.kind, "t": self.t, "mu0": self.mu0, "mu1": self.mu1, "tau": self.tau}
        if self.table is not None:
            info["table_size"] = len(self.table)
        return info


def batch_noise_level(levels: np.ndarray, batch: BatchIndexSet) -> float:
    """δ_I = sqrt(Σ_{i∈I} δ_i²)"""
    sub = levels[list(batch.indices)]
    return float(np.sqrt(np.dot(sub, sub)))


def s1_upper_bound(block_norms: np.ndarray, b: int, full_norm: Optional[float] = None) -> float:
    """
    max_{|I|=b} ‖A_I‖² 的上界：b 个最大单块范数平方之和

    b = p 时可直接用整体范数。
    """
    if full_norm is not None and b == len(block_norms):
        return float(full_norm) ** 2
    squares = np.sort(np.asarray(block_norms) ** 2)[::-1]
    return float(squares[:b].sum())


def max_constant_step(sigma: float, op: BlockLinearOperator, b: int, tol: float = 1e-2) -> float:
    """满足 t < 4σ/‖A_I‖²（对所有 |I| = b）的常数步长上界"""
    full = op.estimate_norm(op.all_blocks(), tol).value if b == op.p else None
    return 4.0 * sigma / s1_upper_bound(op.block_norms(tol), b, full)


def resolve_rule(
    rule: StepRule,
    op: BlockLinearOperator,
    sigma: float,
    b: int,
    tol: float = 1e-2,
) -> StepRule:
    """
    在引擎构造时校验规则并补全缺省参数

    - S1 常数: t < 4σ / max_I‖A_I‖²
    - S1 查表: 每项 t_I < 4σ / ‖A_I‖²_est
    - μ0 > 4σ 拒绝；μ0 = 4σ（c_0 = 0）允许但给出警告
    - S2/S3 未给 μ̃1 时取 1e6 / min_i‖A_i‖²
    """
    bound = 4.0 * sigma
    if rule.mu0 is not None:
        if rule.mu0 > bound:
            raise ValueError(f"mu0={rule.mu0} 超过 4σ={bound}")
        if rule.mu0 == bound:
            logger.warning(f"mu0 = 4σ = {bound}：c_0 = 0，下降估计退化")

    if rule.kind == "S1":
        if rule.t is not None:
            t_max = max_constant_step(sigma, op, b, tol)
            if rule.t >= t_max:
                raise ValueError(f"S1 常数步长 t={rule.t} 不满足 t < 4σ/‖A_I‖² (上界 {t_max:.6g})")
        elif rule.table is not None:
            for key, t in rule.table.items():
                norm = op.estimate_norm(key, tol).value
                if t * norm * norm >= bound:
                    raise ValueError(f"S1 步长表 t_{key}={t} 不满足 t < 4σ/‖A_I‖²")
        return rule

    if rule.mu1 is None:
        min_sq = float(np.min(op.block_norms(tol)) ** 2)
        if min_sq == 0.0:
            raise ValueError("存在零算子分块，无法确定 μ̃1 缺省值")
        rule = replace(rule, mu1=MU1_SCALE / min_sq)
        logger.debug(f"μ̃1 缺省为 {rule.mu1:.6g}")
    return rule


def compute_step(
    rule: StepRule,
    residual: np.ndarray,
    adjoint_residual: np.ndarray,
    batch: BatchIndexSet,
    delta_batch: float = 0.0,
    dual_norm: Callable[[np.ndarray], float] = np.linalg.norm,
    block_norms_sq: Optional[np.ndarray] = None,
    gate_residual: Optional[np.ndarray] = None,
) -> float:
    """
    计算本次迭代的步长

    Args:
        rule: 步长规则
        residual: A_I x − y_I
        adjoint_residual: A_I^* (A_I x − y_I)（对偶空间元素）
        batch: 当前批次
        delta_batch: δ_I，仅 S3 使用
        dual_norm: 对偶空间范数
        block_norms_sq: 单块范数平方，仅归一化 S1 使用
        gate_residual: S3 门控比较 τδ_I 的残差分量，缺省为 residual
    """
    if rule.kind == "S1":
        if rule.t is not None:
            return float(rule.t)
        if rule.table is not None:
            try:
                return float(rule.table[batch.indices])
            except KeyError:
                raise ValueError(f"S1 步长表中没有批次 {batch.indices}") from None
        if block_norms_sq is None:
            raise ValueError("归一化 S1 需要 block_norms_sq")
        return float(rule.mu0 / block_norms_sq[list(batch.indices)].sum())

    res_sq = float(np.dot(residual, residual))
    if res_sq == 0.0:
        return 0.0
    if rule.kind == "S3":
        gate_sq = res_sq if gate_residual is None else float(np.dot(gate_residual, gate_residual))
        if math.sqrt(gate_sq) <= rule.tau * delta_batch:
            return 0.0

    cap = rule.mu1 if rule.mu1 is not None else math.inf
    grad_sq = float(dual_norm(adjoint_residual)) ** 2
    if grad_sq == 0.0:
        if math.isinf(cap):
            raise ValueError("‖A_I^* r‖ = 0 且 μ̃1 未设定")
        return float(cap)
    return float(min(rule.mu0 * res_sq / grad_sq, cap))
