"""
TV 增广系统

引入 z = Dx，把 min β‖Dx‖₁ + ½‖Dx‖² + ½‖x‖² 改写为对 (x, z) 的约束问题，
第 i 个复合分块为

    B_i = [[A_i, 0], [D, −I]]，数据 (y_i, 0)

配合直积镜像映射 (½‖x‖², β‖z‖₁ + ½‖z‖²)，通用引擎即为逐点软阈值的 TV 迭代。

步长说明：(s3) 门控只看数据行 |A_i x − y_i| ≤ τδ_i（见 gate_residual）。
(s2)/(s3) 的分母取复合块的伴随残差 ‖A_i^T r + D^T s‖² + ‖s‖²，
而不是分开计算的 ‖A_i^T r‖² + ‖D^T s‖²，因此 TV 实验的步长与分量写法的 TV 迭代不同；
两者都满足通用步长条件。
"""
import logging
from dataclasses import dataclass
from typing import Optional

import numpy as np
import scipy.sparse as sp

from mirror import ElasticNetMap, ProductMap, QuadraticMap
from operators import Batch, BlockLinearOperator, RowBlockOperator, as_batch

from .integral import IntegralProblem, build_integral

logger = logging.getLogger(__name__)


def forward_difference(n: int) -> sp.csr_matrix:
    """(n−1)×n 前向差分，无周期边界"""
    if n < 2:
        raise ValueError(f"差分算子需要 n ≥ 2: {n}")
    return sp.diags([-np.ones(n - 1), np.ones(n - 1)], [0, 1], shape=(n - 1, n), format="csr")


def plateau_truth(t: np.ndarray) -> np.ndarray:
    """三段平台的分片常数信号（替代仅以图形给出的真解）"""
    x = np.zeros_like(t, dtype=float)
    x[(t >= 0.15) & (t < 0.35)] = 0.5
    x[(t >= 0.45) & (t < 0.60)] = 1.0
    x[(t >= 0.70) & (t < 0.85)] = 0.3
    return x


class CompositeTVOperator(BlockLinearOperator):
    """复合分块 B_i，输入为堆叠向量 (x, z)，每块输出 (A_i x, Dx − z)"""

    def __init__(self, base: RowBlockOperator, D: Optional[sp.csr_matrix] = None):
        if not base.unit_blocks:
            raise ValueError("TV 增广系统要求基础算子为单行分块")
        D = forward_difference(base.m) if D is None else sp.csr_matrix(D)
        if D.shape[1] != base.m:
            raise ValueError(f"差分算子列数 {D.shape[1]} 与 x 维度 {base.m} 不一致")
        self.base = base
        self.D = D
        self.n_x = base.m
        self.n_z = D.shape[0]
        super().__init__(self.n_x + self.n_z, [1 + self.n_z] * base.p)

    def split_primal(self, v: np.ndarray):
        return v[: self.n_x], v[self.n_x:]

    def apply(self, batch: Batch, v: np.ndarray) -> np.ndarray:
        batch = as_batch(batch, self.p)
        x, z = self.split_primal(self._check_primal(v))
        ax = self.base.apply(batch, x)
        s = self.D @ x - z
        out = np.empty((batch.size, 1 + self.n_z))
        out[:, 0] = ax
        out[:, 1:] = s
        return out.ravel()

    def adjoint_apply(self, batch: Batch, u: np.ndarray) -> np.ndarray:
        batch = as_batch(batch, self.p)
        u = self._check_data(batch, u).reshape(batch.size, 1 + self.n_z)
        r = u[:, 0]
        s = u[0, 1:] if batch.size == 1 else u[:, 1:].sum(axis=0)
        return np.concatenate((self.base.adjoint_apply(batch, r) + self.D.T @ s, -s))

    def stack_data(self, y: np.ndarray) -> np.ndarray:
        """(y_i) → 每块 (y_i, 0)"""
        out = np.zeros((self.p, 1 + self.n_z))
        out[:, 0] = y
        return out.ravel()

    def gate_residual(self, batch: Batch, r: np.ndarray) -> np.ndarray:
        """只取数据行 A_i x − y_i；约束行 Dx − z 的数据恒为零，不参与门控"""
        batch = as_batch(batch, self.p)
        return np.asarray(r).reshape(batch.size, 1 + self.n_z)[:, 0]

    def gate_residual_norms(self, x: np.ndarray, y: np.ndarray) -> np.ndarray:
        r = self.apply_all(x) - y
        return np.abs(r.reshape(self.p, 1 + self.n_z)[:, 0])


@dataclass
class TVProblem:
    base: IntegralProblem
    beta: float
    op: CompositeTVOperator
    mirror: ProductMap
    x_true: np.ndarray
    y: np.ndarray

    @property
    def primal_slice(self) -> slice:
        return slice(0, self.op.n_x)


def build_tv(base: IntegralProblem, beta: float) -> TVProblem:
    """
    由积分方程问题构造 TV 增广系统与直积镜像映射

    z 的真值为 Dx†；数据向量按块堆叠为 (y_i, 0)。
    """
    if not beta > 0:
        raise ValueError(f"beta 必须为正: {beta}")
    op = CompositeTVOperator(base.op)
    mirror = ProductMap([QuadraticMap(op.n_x), ElasticNetMap(op.n_z, beta)])
    z_true = op.D @ base.x_true
    x_true = np.concatenate((base.x_true, z_true))
    logger.debug(f"TV 增广系统: p={op.p}, n_x={op.n_x}, n_z={op.n_z}, beta={beta}")
    return TVProblem(base, beta, op, mirror, x_true, op.stack_data(base.y))


def build_tv_default(p: int, beta: float) -> TVProblem:
    """高斯核积分方程加三段平台真解"""
    return build_tv(build_integral("gauss_0064", p, truth=plateau_truth), beta)
