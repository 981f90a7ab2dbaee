"""
镜像映射 - 正则项 R、凸性模 σ、镜像求解 ∇R*(ξ)、共轭值与 Bregman 距离

每种映射自带对偶配对 ⟨ξ, x⟩、原空间范数与对偶范数，以及把欧氏伴随梯度
A^T r 变成对偶空间元素的 to_dual。二次族全部是欧氏几何；熵单纯形使用
求积权重 w 的加权配对，因此 to_dual(g) = g / w。
"""
import logging
from abc import ABC, abstractmethod
from typing import Any, Dict, List, Optional, Sequence, Tuple

import numpy as np
from scipy.special import kl_div, logsumexp, xlogy

logger = logging.getLogger(__name__)

# Bregman 距离低于该值时视为舍入误差，截断为 0
BREGMAN_CLAMP = 1e-12
SIMPLEX_TOL = 1e-9


class MirrorMap(ABC):
    """镜像映射基类"""

    kind: str = "abstract"
    sigma: float = 0.5

    def __init__(self, dim: int):
        if dim < 1:
            raise ValueError(f"维度必须为正: {dim}")
        self.dim = int(dim)

    def _check(self, v: np.ndarray, name: str = "ξ") -> np.ndarray:
        v = np.asarray(v, dtype=float)
        if v.shape != (self.dim,):
            raise ValueError(f"{name} 维度不匹配: 期望 ({self.dim},), 实际 {v.shape}")
        return v

    def _check_finite(self, xi: np.ndarray) -> np.ndarray:
        xi = self._check(xi)
        if not np.all(np.isfinite(xi)):
            raise ValueError(f"{self.kind}: ξ 含有非有限值")
        return xi

    # ---- 几何 ----

    def pair(self, xi: np.ndarray, x: np.ndarray) -> float:
        return float(np.dot(xi, x))

    def norm(self, x: np.ndarray) -> float:
        return float(np.linalg.norm(x))

    def dual_norm(self, xi: np.ndarray) -> float:
        return float(np.linalg.norm(xi))

    def to_dual(self, g: np.ndarray) -> np.ndarray:
        return g

    # ---- 正则项 ----

    @abstractmethod
    def mirror_solve(self, xi: np.ndarray) -> np.ndarray:
        """R(x) − ⟨ξ, x⟩ 的唯一极小点"""

    @abstractmethod
    def evaluate(self, x: np.ndarray) -> float:
        """R(x)，可行集之外返回 +inf"""

    @abstractmethod
    def _bregman(self, xi: np.ndarray, x: np.ndarray, x_ref: np.ndarray) -> float:
        """假定 x = mirror_solve(ξ) 且 R(x_ref) 有限"""

    def conjugate_value(self, xi: np.ndarray) -> float:
        """R*(ξ) = ⟨ξ, x̂⟩ − R(x̂)，x̂ = mirror_solve(ξ)"""
        x_hat = self.mirror_solve(xi)
        return self.pair(xi, x_hat) - self.evaluate(x_hat)

    def bregman(self, xi: np.ndarray, x: np.ndarray, x_ref: np.ndarray) -> float:
        """D^ξ(x_ref, x) = R(x_ref) − R(x) − ⟨ξ, x_ref − x⟩"""
        xi = self._check(xi)
        x = self._check(x, "x")
        x_ref = self._check(x_ref, "x_ref")
        if not np.isfinite(self.evaluate(x_ref)):
            return float("inf")
        value = self._bregman(xi, x, x_ref)
        return 0.0 if value < BREGMAN_CLAMP else float(value)

    def describe(self) -> Dict[str, Any]:
        return {"kind": self.kind, "dim": self.dim, "sigma": self.sigma}


class QuadraticMap(MirrorMap):
    """R(x) = ½‖x‖²，镜像求解为恒等"""

    kind = "quadratic"

    def mirror_solve(self, xi):
        return self._check_finite(xi).copy()

    def evaluate(self, x):
        x = self._check(x, "x")
        return 0.5 * float(np.dot(x, x))

    def conjugate_value(self, xi):
        xi = self._check_finite(xi)
        return 0.5 * float(np.dot(xi, xi))

    def _bregman(self, xi, x, x_ref):
        d = x_ref - x
        return 0.5 * float(np.dot(d, d))


class NonnegQuadraticMap(MirrorMap):
    """R(x) = ½‖x‖² + ι_{x≥0}，镜像求解为投影 max(ξ, 0)"""

    kind = "nonneg_quadratic"

    def mirror_solve(self, xi):
        return np.maximum(self._check_finite(xi), 0.0)

    def evaluate(self, x):
        x = self._check(x, "x")
        if np.any(x < 0):
            return float("inf")
        return 0.5 * float(np.dot(x, x))

    def _bregman(self, xi, x, x_ref):
        # ξ = x − max(−ξ, 0)
        d = x_ref - x
        return 0.5 * float(np.dot(d, d)) + float(np.dot(np.maximum(-xi, 0.0), x_ref))


class ElasticNetMap(MirrorMap):
    """R(x) = β‖x‖₁ + ½‖x‖²，镜像求解为软阈值"""

    kind = "elastic_net"

    def __init__(self, dim: int, beta: float):
        super().__init__(dim)
        if beta < 0:
            raise ValueError(f"β 必须非负: {beta}")
        self.beta = float(beta)

    def mirror_solve(self, xi):
        xi = self._check_finite(xi)
        return np.sign(xi) * np.maximum(np.abs(xi) - self.beta, 0.0)

    def evaluate(self, x):
        x = self._check(x, "x")
        return self.beta * float(np.abs(x).sum()) + 0.5 * float(np.dot(x, x))

    def _bregman(self, xi, x, x_ref):
        # 每一项 β|x̄_j| − (ξ_j − x_j)x̄_j 非负，因为 |ξ_j − x_j| ≤ β
        d = x_ref - x
        linear = self.beta * np.abs(x_ref) - (xi - x) * x_ref
        return 0.5 * float(np.dot(d, d)) + float(np.maximum(linear, 0.0).sum())

    def describe(self):
        return {**super().describe(), "beta": self.beta}


class EntropySimplexMap(MirrorMap):
    """
    负 Boltzmann-Shannon 熵加单纯形指示函数

    R(x) = Σ w_j x_j log x_j，约束 x ≥ 0 且 ⟨w, x⟩ = 1。
    配对、范数均按求积权重 w 离散：⟨ξ, x⟩_w = Σ w ξ x，原空间范数为加权 L¹，
    对偶范数为最大模。在该几何下 σ = 1/2（Pinsker 不等式）。
    """

    kind = "entropy_simplex"

    def __init__(self, dim: int, weights: Optional[Sequence[float]] = None):
        super().__init__(dim)
        w = np.full(dim, 1.0 / dim) if weights is None else np.asarray(weights, dtype=float)
        if w.shape != (dim,) or np.any(w <= 0):
            raise ValueError("求积权重必须为正且与维度一致")
        self.weights = w

    def pair(self, xi, x):
        return float(np.dot(self.weights * xi, x))

    def norm(self, x):
        return float(np.dot(self.weights, np.abs(x)))

    def dual_norm(self, xi):
        return float(np.max(np.abs(xi)))

    def to_dual(self, g):
        return g / self.weights

    def mirror_solve(self, xi):
        xi = self._check_finite(xi)
        e = np.exp(xi - xi.max())
        return e / np.dot(self.weights, e)

    def evaluate(self, x):
        x = self._check(x, "x")
        if np.any(x < 0) or abs(float(np.dot(self.weights, x)) - 1.0) > SIMPLEX_TOL:
            return float("inf")
        return float(np.dot(self.weights, xlogy(x, x)))

    def conjugate_value(self, xi):
        # R*(ξ) = log Σ w e^ξ
        xi = self._check_finite(xi)
        return float(logsumexp(xi, b=self.weights))

    def _bregman(self, xi, x, x_ref):
        return float(np.dot(self.weights, kl_div(x_ref, x)))

    def describe(self):
        return {**super().describe(), "weights": "trapezoid" if self.weights.std() > 0 else "uniform"}


class ProductMap(MirrorMap):
    """多个映射的直积，σ 取各分量的最小值"""

    kind = "product"

    def __init__(self, components: Sequence[MirrorMap]):
        if not components:
            raise ValueError("直积映射至少需要一个分量")
        self.components: List[MirrorMap] = list(components)
        super().__init__(sum(c.dim for c in self.components))
        self.sigma = min(c.sigma for c in self.components)
        bounds = np.cumsum([0] + [c.dim for c in self.components])
        self.slices: List[slice] = [slice(int(a), int(b)) for a, b in zip(bounds[:-1], bounds[1:])]

    def _parts(self, v: np.ndarray) -> List[Tuple[MirrorMap, np.ndarray]]:
        return [(c, v[s]) for c, s in zip(self.components, self.slices)]

    def pair(self, xi, x):
        return sum(c.pair(a, b) for (c, a), (_, b) in zip(self._parts(xi), self._parts(x)))

    def norm(self, x):
        return float(np.sqrt(sum(c.norm(part) ** 2 for c, part in self._parts(x))))

    def dual_norm(self, xi):
        return float(np.sqrt(sum(c.dual_norm(part) ** 2 for c, part in self._parts(xi))))

    def to_dual(self, g):
        return np.concatenate([c.to_dual(part) for c, part in self._parts(g)])

    def mirror_solve(self, xi):
        xi = self._check_finite(xi)
        return np.concatenate([c.mirror_solve(part) for c, part in self._parts(xi)])

    def evaluate(self, x):
        x = self._check(x, "x")
        return float(sum(c.evaluate(part) for c, part in self._parts(x)))

    def conjugate_value(self, xi):
        xi = self._check_finite(xi)
        return float(sum(c.conjugate_value(part) for c, part in self._parts(xi)))

    def _bregman(self, xi, x, x_ref):
        return sum(
            c._bregman(xi[s], x[s], x_ref[s]) for c, s in zip(self.components, self.slices)
        )

    def describe(self):
        return {**super().describe(), "components": [c.describe() for c in self.components]}


MIRROR_KINDS = ("quadratic", "nonneg_quadratic", "entropy_simplex", "elastic_net", "product")


def build_mirror(
    kind: str,
    dim: int,
    beta: Optional[float] = None,
    weights: Optional[Sequence[float]] = None,
    components: Optional[Sequence[MirrorMap]] = None,
) -> MirrorMap:
    """按名称构造镜像映射"""
    if kind == "quadratic":
        return QuadraticMap(dim)
    if kind == "nonneg_quadratic":
        return NonnegQuadraticMap(dim)
    if kind == "entropy_simplex":
        return EntropySimplexMap(dim, weights)
    if kind == "elastic_net":
        if beta is None:
            raise ValueError("elastic_net 需要参数 beta")
        return ElasticNetMap(dim, beta)
    if kind == "product":
        product = ProductMap(components or [])
        if product.dim != dim:
            raise ValueError(f"直积维度 {product.dim} 与期望 {dim} 不一致")
        return product
    raise ValueError(f"未知镜像映射: {kind}，可选: {', '.join(MIRROR_KINDS)}")
