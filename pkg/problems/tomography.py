"""
二维平行束 CT - 射线-像素精确相交长度与改进 Shepp-Logan 体模

几何约定：
    像素边长 1，n×n 图像以原点为中心，占据 [−n/2, n/2]²
    角度 θ 在 [1°, 180°] 上等距，射线为直线 {x : ⟨x, (cos θ, sin θ)⟩ = s}
    探测器偏移 s 在 [−n√2/2, n√2/2] 上等距，间距 = 对角线/(n_rays − 1)
    图像按列堆叠（列主序）成向量，第 0 行在最上方
"""
import logging
from dataclasses import dataclass
from typing import List, Optional, Tuple

import numpy as np
import scipy.sparse as sp

from operators import RowBlockOperator

logger = logging.getLogger(__name__)

# 改进（Toft）Shepp-Logan: 强度, 半轴 a, 半轴 b, 中心 x0, 中心 y0, 旋转角（度）
SHEPP_LOGAN = (
    (1.0, 0.6900, 0.9200, 0.00, 0.0000, 0.0),
    (-0.8, 0.6624, 0.8740, 0.00, -0.0184, 0.0),
    (-0.2, 0.1100, 0.3100, 0.22, 0.0000, -18.0),
    (-0.2, 0.1600, 0.4100, -0.22, 0.0000, 18.0),
    (0.1, 0.2100, 0.2500, 0.00, 0.3500, 0.0),
    (0.1, 0.0460, 0.0460, 0.00, 0.1000, 0.0),
    (0.1, 0.0460, 0.0460, 0.00, -0.1000, 0.0),
    (0.1, 0.0460, 0.0230, -0.08, -0.6050, 0.0),
    (0.1, 0.0230, 0.0230, 0.00, -0.6060, 0.0),
    (0.1, 0.0230, 0.0460, 0.06, -0.6050, 0.0),
)

LENGTH_EPS = 1e-12


def pixel_centers(n: int) -> Tuple[np.ndarray, np.ndarray]:
    """归一化到 [−1, 1] 的像素中心坐标 (X, Y)，形状 n×n，行号向下"""
    c = (np.arange(n) + 0.5 - n / 2.0) / (n / 2.0)
    return np.meshgrid(c, -c)


def shepp_logan(n: int) -> np.ndarray:
    """n×n 改进 Shepp-Logan 体模，值截断到 [0, 1]"""
    X, Y = pixel_centers(n)
    img = np.zeros((n, n))
    for value, a, b, x0, y0, phi in SHEPP_LOGAN:
        rad = np.deg2rad(phi)
        c, s = np.cos(rad), np.sin(rad)
        dx, dy = X - x0, Y - y0
        xr = dx * c + dy * s
        yr = -dx * s + dy * c
        img[(xr / a) ** 2 + (yr / b) ** 2 <= 1.0] += value
    return np.clip(img, 0.0, 1.0)


def trace_ray(n: int, theta: float, offset: float) -> Tuple[np.ndarray, np.ndarray]:
    """
    一条射线穿过的像素（列主序下标）及相交长度

    沿射线参数化 P(τ) = s·ν + τ·d，收集与全部网格线的交点参数，
    相邻交点之间的线段落在同一个像素内。
    """
    normal = np.array([np.cos(theta), np.sin(theta)])
    direction = np.array([-normal[1], normal[0]])
    origin = offset * normal
    half = n / 2.0
    grid = np.arange(n + 1) - half

    lo, hi = -np.inf, np.inf
    crossings: List[np.ndarray] = []
    for axis in range(2):
        d, o = direction[axis], origin[axis]
        if abs(d) < 1e-14:
            if not -half < o < half:
                return np.empty(0, dtype=np.int64), np.empty(0)
            continue
        taus = (grid - o) / d
        lo = max(lo, min(taus[0], taus[-1]))
        hi = min(hi, max(taus[0], taus[-1]))
        crossings.append(taus)
    if not hi > lo:
        return np.empty(0, dtype=np.int64), np.empty(0)

    taus = np.concatenate(crossings)
    taus = np.unique(np.concatenate(([lo, hi], taus[(taus > lo) & (taus < hi)])))
    lengths = np.diff(taus)
    mids = 0.5 * (taus[:-1] + taus[1:])
    px = np.floor(origin[0] + mids * direction[0] + half).astype(np.int64)
    py = np.floor(origin[1] + mids * direction[1] + half).astype(np.int64)
    keep = (lengths > LENGTH_EPS) & (px >= 0) & (px < n) & (py >= 0) & (py < n)
    row = n - 1 - py[keep]
    return px[keep] * n + row, lengths[keep]


@dataclass
class TomographyProblem:
    n: int
    angles: np.ndarray
    offsets: np.ndarray
    op: RowBlockOperator
    phantom: np.ndarray
    x_true: np.ndarray
    y: np.ndarray

    @property
    def p(self) -> int:
        return self.op.p


def build_tomography(
    n: int,
    n_angles: int = 90,
    n_rays: int = 367,
    operator: Optional[RowBlockOperator] = None,
) -> TomographyProblem:
    """
    组装平行束 CT 问题，删除全零行

    Args:
        n: 图像边长（像素）
        n_angles: 投影角度数
        n_rays: 每个角度的射线数
        operator: 已装配的投影算子（如从容器文件读入），给定时跳过射线追踪
    """
    if n < 2 or n_angles < 1 or n_rays < 2:
        raise ValueError(f"非法 CT 几何: n={n}, n_angles={n_angles}, n_rays={n_rays}")
    angles = np.deg2rad(np.linspace(1.0, 180.0, n_angles)) if n_angles > 1 else np.deg2rad([90.0])
    half_diag = n * np.sqrt(2.0) / 2.0
    offsets = np.linspace(-half_diag, half_diag, n_rays)
    phantom = shepp_logan(n)
    x_true = phantom.flatten(order="F")
    if operator is not None:
        if operator.m != n * n:
            raise ValueError(f"算子列数 {operator.m} 与图像尺寸 {n}×{n} 不一致")
        return TomographyProblem(n, angles, offsets, operator, phantom, x_true, operator.apply_all(x_true))

    indptr, indices, data, n_rows = [0], [], [], 0
    for theta in angles:
        for s in offsets:
            cols, lengths = trace_ray(n, theta, s)
            if cols.size == 0:
                continue
            order = np.argsort(cols)
            indices.append(cols[order])
            data.append(lengths[order])
            indptr.append(indptr[-1] + cols.size)
            n_rows += 1

    matrix = sp.csr_matrix(
        (np.concatenate(data), np.concatenate(indices), np.asarray(indptr)),
        shape=(n_rows, n * n),
    )
    op = RowBlockOperator(matrix)
    logger.info(f"CT 算子: {matrix.shape[0]}×{matrix.shape[1]}, nnz={matrix.nnz}")
    return TomographyProblem(n, angles, offsets, op, phantom, x_true, op.apply_all(x_true))
