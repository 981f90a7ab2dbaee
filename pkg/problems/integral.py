"""
第一类积分方程的梯形求积离散

    y_i = ∫_a^b k(s_i, t) x(t) dt ≈ Σ_j w_j k(s_i, t_j) x(t_j)

采样点与求积节点都是 [a, b] 上的 p 个等距点，w 为梯形权重（端点 h/2，内部 h）。
"""
import logging
from dataclasses import dataclass
from typing import Callable, Dict, Optional, Tuple

import numpy as np

from operators import RowBlockOperator

logger = logging.getLogger(__name__)

Kernel = Callable[[np.ndarray, np.ndarray], np.ndarray]
Signal = Callable[[np.ndarray], np.ndarray]


def convolution_kernel(s: np.ndarray, t: np.ndarray) -> np.ndarray:
    """k(s, t) = φ(s − t)，φ(u) = (1 + cos(πu/3)) 1{|u| < 3}"""
    u = s - t
    return np.where(np.abs(u) < 3.0, 1.0 + np.cos(np.pi * u / 3.0), 0.0)


def gaussian_kernel(s: np.ndarray, t: np.ndarray) -> np.ndarray:
    """k(s, t) = 4 exp(−(s − t)²/0.0064)"""
    return 4.0 * np.exp(-((s - t) ** 2) / 0.0064)


def power_kernel(s: np.ndarray, t: np.ndarray) -> np.ndarray:
    """k(s, t) = (0.1² + (s − t)²)^{−3/2}"""
    return (0.01 + (s - t) ** 2) ** -1.5


def smooth_truth(t: np.ndarray) -> np.ndarray:
    return np.sin(np.pi * t / 12.0) + np.sin(np.pi * t / 3.0) + t ** 2 * (1.0 - t) / 200.0


def bump_density(t: np.ndarray) -> np.ndarray:
    """未归一化的双峰密度，归一化常数在组装时按求积计算"""
    return np.exp(-60.0 * (t - 0.3) ** 2) + 0.3 * np.exp(-40.0 * (t - 0.8) ** 2)


def spike_truth(t: np.ndarray) -> np.ndarray:
    """χ[0.19, 0.22] − χ[0.50, 0.52] + 0.5 χ[0.78, 0.80]"""
    def box(lo, hi):
        return ((t >= lo) & (t <= hi)).astype(float)
    return box(0.19, 0.22) - box(0.50, 0.52) + 0.5 * box(0.78, 0.80)


@dataclass(frozen=True)
class IntegralKind:
    interval: Tuple[float, float]
    kernel: Kernel
    truth: Signal
    normalize: bool = False


INTEGRAL_KINDS: Dict[str, IntegralKind] = {
    "convolution_61": IntegralKind((-6.0, 6.0), convolution_kernel, smooth_truth),
    "gauss_0064": IntegralKind((0.0, 1.0), gaussian_kernel, bump_density, normalize=True),
    "power_kernel": IntegralKind((0.0, 1.0), power_kernel, spike_truth),
}


def trapezoid_weights(a: float, b: float, p: int) -> np.ndarray:
    h = (b - a) / (p - 1)
    w = np.full(p, h)
    w[0] = w[-1] = h / 2.0
    return w


@dataclass
class IntegralProblem:
    """离散积分方程：算子行为核值乘梯形权重，y_i = ⟨row_i, x†⟩"""
    kind: str
    interval: Tuple[float, float]
    nodes: np.ndarray
    weights: np.ndarray
    op: RowBlockOperator
    x_true: np.ndarray
    y: np.ndarray

    @property
    def p(self) -> int:
        return self.op.p


def build_integral(
    kind: str,
    p: int,
    kernel: Optional[Kernel] = None,
    truth: Optional[Signal] = None,
    operator: Optional[RowBlockOperator] = None,
) -> IntegralProblem:
    """
    组装积分方程问题

    Args:
        kind: convolution_61 / gauss_0064 / power_kernel
        p: 采样点数（同时是求积节点数）
        kernel: 替换核函数
        truth: 替换真解
        operator: 已装配的 p×p 算子（如从容器文件读入），给定时不再计算核矩阵
    """
    if kind not in INTEGRAL_KINDS:
        raise ValueError(f"未知积分方程: {kind}，可选: {', '.join(INTEGRAL_KINDS)}")
    if p < 2:
        raise ValueError(f"p 必须 ≥ 2: {p}")
    spec = INTEGRAL_KINDS[kind]
    a, b = spec.interval
    nodes = np.linspace(a, b, p)
    weights = trapezoid_weights(a, b, p)

    if operator is not None:
        if (operator.data_dim, operator.m) != (p, p):
            raise ValueError(f"算子形状 {(operator.data_dim, operator.m)} 与 p={p} 不一致")
        op = operator
    else:
        k = (kernel or spec.kernel)(nodes[:, None], nodes[None, :])
        op = RowBlockOperator(k * weights[None, :])

    x_true = np.asarray((truth or spec.truth)(nodes), dtype=float)
    if spec.normalize and truth is None:
        x_true = x_true / float(np.dot(weights, x_true))
    y = op.apply_all(x_true)
    logger.debug(f"积分方程 {kind}: p={p}, 区间=[{a}, {b}]")
    return IntegralProblem(kind, (a, b), nodes, weights, op, x_true, y)
