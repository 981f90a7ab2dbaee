"""
问题注册表 - 按名称构造实验问题

    sgd_conv  卷积核积分方程，光滑真解，二次映射
    ct        平行束 CT，Shepp-Logan 体模，非负二次映射
    entropy   高斯核积分方程，概率密度真解，熵单纯形映射
    sparse    幂核积分方程，稀疏真解，弹性网映射
    tv        高斯核积分方程，分片常数真解，TV 增广系统
"""
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Dict, Mapping, Optional

import numpy as np

from mirror import MirrorMap, build_mirror
from operators import BlockLinearOperator, load_operator

from .integral import build_integral
from .tomography import build_tomography
from .tv import build_tv_default

logger = logging.getLogger(__name__)

PROBLEM_DEFAULTS: Dict[str, Dict[str, Any]] = {
    "sgd_conv": {"p": 1000},
    "ct": {"n": 256, "n_angles": 90, "n_rays": 367},
    "entropy": {"p": 1000},
    "sparse": {"p": 1000, "beta": 80.0},
    "tv": {"p": 1000, "beta": 400.0},
}
PROBLEM_IDS = tuple(PROBLEM_DEFAULTS)

DEFAULT_MIRRORS = {
    "sgd_conv": "quadratic",
    "ct": "nonneg_quadratic",
    "entropy": "entropy_simplex",
    "sparse": "elastic_net",
    "tv": "product",
}

# 误差指标：相对 L² 平方、L¹ 平方、相对欧氏平方
DEFAULT_METRICS = {
    "sgd_conv": "rel_l2",
    "ct": "rel_sq",
    "entropy": "l1_sq",
    "sparse": "rel_l2",
    "tv": "rel_l2",
}


@dataclass
class ProblemInstance:
    """组装好的问题：算子、真解、精确数据及缺省配置"""
    problem_id: str
    op: BlockLinearOperator
    x_true: np.ndarray
    y: np.ndarray
    params: Dict[str, Any]
    weights: Optional[np.ndarray] = None
    primal_slice: slice = None
    product_mirror: Optional[MirrorMap] = None
    info: Dict[str, Any] = field(default_factory=dict)

    def __post_init__(self):
        if self.primal_slice is None:
            self.primal_slice = slice(0, self.op.m)

    @property
    def default_mirror(self) -> str:
        return DEFAULT_MIRRORS[self.problem_id]

    @property
    def default_metric(self) -> str:
        return DEFAULT_METRICS[self.problem_id]

    def make_mirror(self, kind: Optional[str] = None, beta: Optional[float] = None) -> MirrorMap:
        """构造与问题维度一致的镜像映射；熵映射使用求积权重"""
        kind = kind or self.default_mirror
        if self.product_mirror is not None:
            if kind != "product":
                raise ValueError(f"{self.problem_id} 只支持 product 镜像映射")
            return self.product_mirror
        if kind == "product":
            raise ValueError(f"{self.problem_id} 不支持 product 镜像映射")
        if beta is None:
            beta = self.params.get("beta")
        return build_mirror(kind, self.op.m, beta=beta, weights=self.weights if kind == "entropy_simplex" else None)

    def describe(self) -> Dict[str, Any]:
        return {
            "id": self.problem_id,
            "params": dict(self.params),
            "p": self.op.p,
            "m": self.op.m,
            "data_dim": self.op.data_dim,
            "storage": self.op.storage,
            **self.info,
        }


def build_problem(
    problem_id: str,
    params: Optional[Mapping[str, Any]] = None,
    operator_file: Optional[str] = None,
) -> ProblemInstance:
    """
    按名称构造问题

    Args:
        problem_id: sgd_conv / ct / entropy / sparse / tv
        params: 覆盖缺省尺寸参数（p、n、n_angles、n_rays、beta）
        operator_file: save_operator 写出的算子容器，给定时复用其中的矩阵
    """
    if problem_id not in PROBLEM_DEFAULTS:
        raise ValueError(f"未知问题: {problem_id}，可选: {', '.join(PROBLEM_IDS)}")
    merged = dict(PROBLEM_DEFAULTS[problem_id])
    unknown = set(params or {}) - set(merged)
    if unknown:
        raise ValueError(f"{problem_id} 不接受参数: {', '.join(sorted(unknown))}")
    merged.update(params or {})

    operator = None
    if operator_file is not None:
        if problem_id == "tv":
            raise ValueError("tv 的复合算子由基础算子现场组装，不支持 operator_file")
        if not Path(operator_file).is_file():
            raise ValueError(f"算子文件不存在: {operator_file}")
        operator = load_operator(operator_file)
        logger.info(f"从 {operator_file} 载入算子: {operator.data_dim}×{operator.m}, storage={operator.storage}")

    if problem_id == "ct":
        ct = build_tomography(int(merged["n"]), int(merged["n_angles"]), int(merged["n_rays"]), operator)
        info = {"nnz": ct.op.nnz, "image": [ct.n, ct.n]}
        return ProblemInstance(problem_id, ct.op, ct.x_true, ct.y, merged, info=info)

    if problem_id == "tv":
        tv = build_tv_default(int(merged["p"]), float(merged["beta"]))
        return ProblemInstance(
            problem_id, tv.op, tv.x_true, tv.y, merged,
            weights=tv.base.weights, primal_slice=tv.primal_slice, product_mirror=tv.mirror,
            info={"n_x": tv.op.n_x, "n_z": tv.op.n_z},
        )

    kind = {"sgd_conv": "convolution_61", "entropy": "gauss_0064", "sparse": "power_kernel"}[problem_id]
    integral = build_integral(kind, int(merged["p"]), operator=operator)
    return ProblemInstance(
        problem_id, integral.op, integral.x_true, integral.y, merged,
        weights=integral.weights, info={"kernel": kind, "interval": list(integral.interval)},
    )
