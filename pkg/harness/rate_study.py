"""
收敛率实验 - 源条件 A*λ† ∈ ∂R(x†) 下 E‖x_{n_δ} − x†‖² 与 δ 的对数斜率，以及精确数据下对偶目标差随 n 的衰减
"""
import logging
import math
import threading
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Any, Dict, List, Optional, Sequence, Tuple

import numpy as np

from dual import RandomizedDualBlockGradient, dual_objective
from mirror import MirrorMap, QuadraticMap, build_mirror
from noise import corrupt_absolute
from operators import RowBlockOperator
from smd import Sampler, StochasticMirrorDescent, StopSpec
from stepsize import StepRule, max_constant_step

from .config import ExperimentConfig, RateSection
from .ensemble import derive_seed

logger = logging.getLogger(__name__)


class UnsupportedExperimentError(ValueError):
    """镜像映射没有可构造的源条件实例"""


@dataclass
class IllPosedOperator:
    """A = U diag(s) V^T"""
    op: RowBlockOperator
    U: np.ndarray
    s: np.ndarray
    V: np.ndarray


def ill_posed_operator(rows: int, cols: int, decay: float = 1e-5, seed: int = 0) -> IllPosedOperator:
    """
    随机病态矩阵：正交因子由 QR 得到，奇异值平方从 1 几何衰减到 decay
    """
    if not 0 < decay < 1:
        raise ValueError(f"decay 必须在 (0, 1) 内: {decay}")
    k = min(rows, cols)
    rng = np.random.default_rng(seed)
    U, _ = np.linalg.qr(rng.standard_normal((rows, k)))
    V, _ = np.linalg.qr(rng.standard_normal((cols, k)))
    s = np.sqrt(np.geomspace(1.0, decay, k))
    return IllPosedOperator(RowBlockOperator((U * s) @ V.T), U, s, V)


@dataclass
class SourceConditionInstance:
    """源元素 λ†、真解 x† = ∇R*(A*λ†) 与精确数据 y = Ax†"""
    op: RowBlockOperator
    lam: np.ndarray
    x_true: np.ndarray
    y: np.ndarray


def source_condition_instance(ill: IllPosedOperator, mirror: MirrorMap, seed: int = 0) -> SourceConditionInstance:
    """λ† 在 U 基下取随机 ±1 系数；只支持二次映射（此时 x† = A^T λ†）"""
    if type(mirror) is not QuadraticMap:
        raise UnsupportedExperimentError(f"收敛率实验只支持 quadratic 镜像映射，收到 {mirror.kind}")
    signs = np.random.default_rng(seed).choice([-1.0, 1.0], size=ill.U.shape[1])
    lam = ill.U @ signs
    x_true = mirror.mirror_solve(ill.op.adjoint_all(lam))
    return SourceConditionInstance(ill.op, lam, x_true, ill.op.apply_all(x_true))


def stopping_index(c: float, p: int, b: int, delta: float) -> int:
    """n_δ = ceil(c·p/(b·δ))，使 (b/p)·n_δ 与 δ^{-1} 同阶"""
    if delta <= 0:
        raise ValueError(f"delta 必须为正: {delta}")
    return int(math.ceil(c * p / (b * delta)))


@dataclass
class RateRow:
    delta: float
    n_delta: int
    mean_err: float
    errors: List[float] = field(default_factory=list, repr=False)

    def to_dict(self) -> Dict[str, Any]:
        return {"delta": self.delta, "n_delta": self.n_delta, "mean_err": self.mean_err}


@dataclass
class RateStudyResult:
    rows: List[RateRow]
    slope: float
    intercept: float
    t: float
    b: int
    K: int

    def passed(self, band: Tuple[float, float] = (0.7, 1.3)) -> bool:
        lo, hi = band
        return bool(lo <= self.slope <= hi)

    def to_dict(self) -> Dict[str, Any]:
        return {
            "slope": self.slope,
            "intercept": self.intercept,
            "t": self.t,
            "b": self.b,
            "K": self.K,
            "rows": [row.to_dict() for row in self.rows],
        }


def fit_slope(xs: Sequence[float], errors: Sequence[float]) -> Tuple[float, float]:
    """log(errors) 对 log(xs) 的最小二乘直线，xs 为 δ 或迭代次数"""
    slope, intercept = np.polyfit(np.log(xs), np.log(errors), 1)
    return float(slope), float(intercept)


def _final_error(
    instance: SourceConditionInstance,
    mirror: MirrorMap,
    rule: StepRule,
    b: int,
    seed: int,
    y_delta: np.ndarray,
    levels: np.ndarray,
    n_iters: int,
) -> float:
    engine = StochasticMirrorDescent(
        instance.op, mirror, rule, Sampler("uniform", b, seed), y_delta, levels,
        x_true=instance.x_true, record_every=n_iters + 1,
    )
    trace = engine.run(n_iters, StopSpec("fixed", n=n_iters))
    e = trace.final_x - instance.x_true
    return float(np.dot(e, e))


def rate_study(
    instance: SourceConditionInstance,
    mirror: MirrorMap,
    b: int,
    t: Optional[float] = None,
    deltas: Sequence[float] = (1e-1, 1e-2, 1e-3, 1e-4),
    c: float = 1.0,
    K: int = 20,
    master_seed: int = 0,
    noise_model: str = "gaussian",
    noise_seed: int = 0,
    threads: int = 1,
) -> RateStudyResult:
    """
    对每个 δ 运行 K 次常数步长 SMD 到 n_δ，拟合均方误差的对数斜率

    同一 δ 的 K 次运行共享一份总范数恰为 δ 的带噪数据。

    Args:
        t: 常数步长，缺省取 0.95 倍允许上界
        c: 停止常数
    """
    if type(mirror) is not QuadraticMap:
        raise UnsupportedExperimentError(f"收敛率实验只支持 quadratic 镜像映射，收到 {mirror.kind}")
    if len(deltas) < 2:
        raise ValueError("至少需要两个噪声水平才能拟合斜率")
    op = instance.op
    if t is None:
        t = 0.95 * max_constant_step(mirror.sigma, op, b)
    rule = StepRule.constant(t)
    seeds = [derive_seed(master_seed, k) for k in range(K)]
    logger.info(f"收敛率实验: p={op.p}, m={op.m}, b={b}, t={t:.6g}, K={K}, deltas={list(deltas)}")

    rows: List[RateRow] = []
    for j, delta in enumerate(deltas):
        n_delta = stopping_index(c, op.p, b, delta)
        data = corrupt_absolute(instance.y, delta, noise_model, derive_seed(noise_seed, j))
        errors = [math.nan] * K
        lock = threading.Lock()

        def work(k: int):
            err = _final_error(instance, mirror, rule, b, seeds[k], data.y_delta, data.levels, n_delta)
            with lock:
                errors[k] = err

        with ThreadPoolExecutor(max_workers=threads, thread_name_prefix="rate") as pool:
            for future in [pool.submit(work, k) for k in range(K)]:
                future.result()

        mean_err = float(sum(errors) / K)
        rows.append(RateRow(float(delta), n_delta, mean_err, errors))
        logger.info(f"δ={delta:g}: n_δ={n_delta}, E‖x−x†‖²={mean_err:.4e}")

    slope, intercept = fit_slope([r.delta for r in rows], [r.mean_err for r in rows])
    logger.info(f"拟合斜率 {slope:.4f}")
    return RateStudyResult(rows, slope, intercept, float(t), b, K)


def exact_data_error(
    instance: SourceConditionInstance,
    mirror: MirrorMap,
    n_iters: int = 300_000,
    b: Optional[int] = None,
    t: Optional[float] = None,
    seed: int = 0,
) -> float:
    """精确数据下迭代 n_iters 次后的 ‖x − x†‖²；缺省整批"""
    b = instance.op.p if b is None else b
    if t is None:
        t = 0.95 * max_constant_step(mirror.sigma, instance.op, b)
    levels = np.zeros(instance.op.p)
    return _final_error(instance, mirror, StepRule.constant(t), b, seed, instance.y, levels, n_iters)


def build_rate_instance(section: RateSection, mirror_kind: Optional[str] = None) -> Tuple[SourceConditionInstance, MirrorMap]:
    """按 rate 配置构造随机病态算子与源条件实例"""
    mirror = build_mirror(mirror_kind or "quadratic", section.cols)
    ill = ill_posed_operator(section.rows, section.cols, section.decay, section.operator_seed)
    return source_condition_instance(ill, mirror, section.operator_seed), mirror


def run_rate_study(cfg: ExperimentConfig) -> RateStudyResult:
    """按完整实验配置运行收敛率实验"""
    section = cfg.rate or RateSection()
    instance, mirror = build_rate_instance(section, cfg.mirror.kind)
    return rate_study(
        instance,
        mirror,
        section.b,
        section.t,
        section.deltas,
        section.c,
        section.K,
        cfg.run.master_seed,
        section.noise_model,
        cfg.noise.seed,
        cfg.run.threads,
    )


@dataclass
class DualRateResult:
    """精确数据下对偶目标差 E[d_y(λ_n) − d_y(λ†)] 在记录点上的均值与尾部斜率"""
    iterations: List[int]
    mean_gap: List[float]
    slope: float
    intercept: float
    tail_from: int
    t: float
    b: int
    K: int

    def passed(self, band: Tuple[float, float] = (-1.3, -0.7)) -> bool:
        lo, hi = band
        return bool(lo <= self.slope <= hi)

    def to_dict(self) -> Dict[str, Any]:
        return {
            "slope": self.slope,
            "intercept": self.intercept,
            "tail_from": self.tail_from,
            "t": self.t,
            "b": self.b,
            "K": self.K,
            "rows": [{"n": n, "mean_gap": g} for n, g in zip(self.iterations, self.mean_gap)],
        }


def _dual_gaps(
    instance: SourceConditionInstance,
    mirror: MirrorMap,
    rule: StepRule,
    b: int,
    seed: int,
    record_at: Sequence[int],
) -> np.ndarray:
    solver = RandomizedDualBlockGradient(instance.op, mirror, rule, Sampler("uniform", b, seed), instance.y)
    floor = dual_objective(mirror, instance.op, instance.lam, instance.y)
    gaps = np.empty(len(record_at))
    state = solver.initial_state()
    for j, n in enumerate(record_at):
        while state.n < n:
            state = solver.step(state)
        gaps[j] = dual_objective(mirror, instance.op, state.lam, instance.y) - floor
    return gaps


def dual_rate_study(
    instance: SourceConditionInstance,
    mirror: MirrorMap,
    b: int,
    t: Optional[float] = None,
    n_iters: int = 20_000,
    K: int = 8,
    master_seed: int = 0,
    tail_from: Optional[int] = None,
    n_points: int = 40,
    threads: int = 1,
) -> DualRateResult:
    """
    精确数据上运行 K 次对偶分块梯度法，拟合 E[d_y(λ_n) − d_y(λ†)] 对 n 的对数斜率

    实例的 λ† 满足 A∇R*(A^*λ†) = y，是 d_y 的极小点，因此差值非负。

    Args:
        t: 常数步长，缺省取 0.95 倍允许上界
        tail_from: 只用 n ≥ tail_from 的记录点拟合，缺省 n_iters // 100
        n_points: 对数均匀分布的记录点个数
    """
    if n_iters < 2:
        raise ValueError(f"n_iters 必须 ≥ 2: {n_iters}")
    op = instance.op
    if t is None:
        t = 0.95 * max_constant_step(mirror.sigma, op, b)
    rule = StepRule.constant(t)
    tail_from = max(1, n_iters // 100) if tail_from is None else tail_from
    record_at = np.unique(np.geomspace(1, n_iters, n_points).astype(int)).tolist()
    tail = [j for j, n in enumerate(record_at) if n >= tail_from]
    if len(tail) < 2:
        raise ValueError(f"tail_from={tail_from} 之后的记录点不足两个")
    seeds = [derive_seed(master_seed, k) for k in range(K)]
    logger.info(f"对偶收敛率: p={op.p}, m={op.m}, b={b}, t={t:.6g}, K={K}, n_iters={n_iters}")

    gaps = np.empty((K, len(record_at)))
    lock = threading.Lock()

    def work(k: int):
        row = _dual_gaps(instance, mirror, rule, b, seeds[k], record_at)
        with lock:
            gaps[k] = row

    with ThreadPoolExecutor(max_workers=threads, thread_name_prefix="dual-rate") as pool:
        for future in [pool.submit(work, k) for k in range(K)]:
            future.result()

    mean_gap = gaps.mean(axis=0)
    slope, intercept = fit_slope([record_at[j] for j in tail], mean_gap[tail])
    logger.info(f"对偶目标差尾部斜率 {slope:.4f} (n ≥ {tail_from})")
    return DualRateResult(record_at, mean_gap.tolist(), slope, intercept, tail_from, float(t), b, K)
