"""
小批量随机镜像下降引擎

    x_n     = ∇R*(ξ_n)
    I_n     ~ Sampler
    t_n     = StepRule(A_I x_n − y_I, A_I^*(A_I x_n − y_I), δ_I)
    ξ_{n+1} = ξ_n − t_n A_I^*(A_I x_n − y_I)

直积映射把 (ξ, η) 和 (x, z) 堆叠成一个向量，同一套迭代即可处理 TV 增广系统。
"""
import logging
import math
from dataclasses import dataclass
from typing import Callable, Dict, Optional

import numpy as np

from mirror import MirrorMap
from operators import BatchIndexSet, BlockLinearOperator
from stepsize import StepRule, batch_noise_level, compute_step, resolve_rule

from .sampler import Sampler
from .trace import RunTrace

logger = logging.getLogger(__name__)

STOP_KINDS = ("fixed", "a_priori", "discrepancy_all")


class NumericalError(RuntimeError):
    """迭代出现非有限值"""


@dataclass
class IterateState:
    """迭代状态：对偶变量 ξ、原变量 x = ∇R*(ξ)、计数 n、随机数发生器"""
    xi: np.ndarray
    x: np.ndarray
    n: int
    rng: np.random.Generator


@dataclass(frozen=True)
class StopSpec:
    """
    停止规则

    fixed: 迭代 n 次（缺省为预算）
    a_priori: n = ceil(c·scale/δ²)，不超过预算
    discrepancy_all: 每轮扫描检查门控残差 ‖A_i x − y_i^δ‖ ≤ τδ_i 对所有 i 成立
    """
    kind: str = "fixed"
    n: Optional[int] = None
    c: float = 1.0
    scale: float = 1.0
    tau: Optional[float] = None

    def __post_init__(self):
        if self.kind not in STOP_KINDS:
            raise ValueError(f"未知停止规则: {self.kind}，可选: {', '.join(STOP_KINDS)}")
        if self.n is not None and self.n < 1:
            raise ValueError(f"停止迭代数必须 ≥ 1: {self.n}")
        if self.c <= 0 or self.scale <= 0:
            raise ValueError("a_priori 常数必须为正")

    def iteration_cap(self, budget: int, delta: float) -> int:
        if self.kind == "fixed" and self.n is not None:
            return min(self.n, budget)
        if self.kind == "a_priori" and delta > 0:
            return min(math.ceil(self.c * self.scale / delta ** 2), budget)
        return budget


class StochasticMirrorDescent:
    """
    随机镜像下降求解器

    一个实例严格串行；不同实例共享只读的算子和数据，可以并发运行。
    """

    def __init__(
        self,
        op: BlockLinearOperator,
        mirror: MirrorMap,
        rule: StepRule,
        sampler: Sampler,
        y_delta: np.ndarray,
        levels: Optional[np.ndarray] = None,
        x_true: Optional[np.ndarray] = None,
        primal_slice: Optional[slice] = None,
        metrics: Optional[Dict[str, Callable[[np.ndarray], float]]] = None,
        full_residual_every: Optional[int] = None,
        record_every: int = 1,
        norm_tol: float = 1e-2,
    ):
        if mirror.dim != op.m:
            raise ValueError(f"镜像映射维度 {mirror.dim} 与算子输入维度 {op.m} 不一致")
        y_delta = np.asarray(y_delta, dtype=float)
        if y_delta.shape != (op.data_dim,):
            raise ValueError(f"数据长度 {y_delta.shape} 与算子输出维度 {op.data_dim} 不一致")
        levels = np.zeros(op.p) if levels is None else np.asarray(levels, dtype=float)
        if levels.shape != (op.p,) or np.any(levels < 0):
            raise ValueError("噪声水平必须是长度为 p 的非负向量")
        if x_true is not None:
            x_true = np.asarray(x_true, dtype=float)
            if x_true.shape != (op.m,):
                raise ValueError(f"真解维度 {x_true.shape} 与 m={op.m} 不一致")
        if record_every < 1:
            raise ValueError(f"record_every 必须 ≥ 1: {record_every}")

        self.op = op
        self.mirror = mirror
        self.sampler = sampler.check(op.p)
        self.rule = resolve_rule(rule, op, mirror.sigma, sampler.b, norm_tol)
        self.y_delta = y_delta
        self.levels = levels
        self.delta = float(np.sqrt(np.dot(levels, levels)))
        self.x_true = x_true
        self.primal_slice = primal_slice or slice(0, op.m)
        self.metrics = dict(metrics or {})
        self.full_residual_every = full_residual_every or max(1, op.p // sampler.b)
        self.record_every = record_every

        self._block_norms_sq = None
        if self.rule.kind == "S1" and self.rule.mu0 is not None:
            self._block_norms_sq = op.block_norms(norm_tol) ** 2

        if x_true is not None:
            ref = x_true[self.primal_slice]
            self._true_sq = float(np.dot(ref, ref)) or 1.0

    @property
    def c0(self) -> Optional[float]:
        """c_0 = 1 − μ0/(4σ)，仅 S2/S3"""
        if self.rule.kind == "S1":
            return None
        return 1.0 - self.rule.mu0 / (4.0 * self.mirror.sigma)

    def initial_state(self) -> IterateState:
        xi = np.zeros(self.op.m)
        return IterateState(xi, self.mirror.mirror_solve(xi), 0, self.sampler.make_rng())

    def residual(self, batch: BatchIndexSet, x: np.ndarray) -> np.ndarray:
        return self.op.apply(batch, x) - self.y_delta[self.op.rows_of(batch)]

    def step(
        self,
        state: IterateState,
        trace: Optional[RunTrace] = None,
        batch: Optional[BatchIndexSet] = None,
    ) -> IterateState:
        """执行一次迭代；给定 batch 时不消耗随机数"""
        n = state.n
        if batch is None:
            batch = self.sampler.sample_batch(state.rng, self.op.p, n)
        r = self.residual(batch, state.x)
        g = self.mirror.to_dual(self.op.adjoint_apply(batch, r))
        delta_batch, gate = 0.0, None
        if self.rule.kind == "S3":
            delta_batch = batch_noise_level(self.levels, batch)
            gate = self.op.gate_residual(batch, r)
        t = compute_step(self.rule, r, g, batch, delta_batch, self.mirror.dual_norm, self._block_norms_sq, gate)

        if trace is not None and n % self.record_every == 0:
            self._record(trace, state, batch, t, r)

        if t == 0.0:
            return IterateState(state.xi, state.x, n + 1, state.rng)
        xi = state.xi - t * g
        if not np.all(np.isfinite(xi)):
            raise NumericalError(f"第 {n} 次迭代出现非有限对偶变量 (t={t:.3g})")
        return IterateState(xi, self.mirror.mirror_solve(xi), n + 1, state.rng)

    def evaluate_metrics(self, xi: np.ndarray, x: np.ndarray) -> Dict[str, float]:
        """相对误差 ‖x − x†‖²/‖x†‖²、Bregman 距离 Δ 与附加指标"""
        values: Dict[str, float] = {}
        if self.x_true is not None:
            e = x[self.primal_slice] - self.x_true[self.primal_slice]
            values["rel_err"] = float(np.dot(e, e)) / self._true_sq
            values["bregman"] = self.mirror.bregman(xi, x, self.x_true)
        for name, fn in self.metrics.items():
            values[name] = float(fn(x[self.primal_slice]))
        return values

    def _record(self, trace: RunTrace, state: IterateState, batch: BatchIndexSet, t: float, r: np.ndarray):
        full_res = float("nan")
        if state.n % self.full_residual_every == 0:
            full_res = float(np.linalg.norm(self.op.apply_all(state.x) - self.y_delta))
        values = self.evaluate_metrics(state.xi, state.x)
        trace.append(
            state.n,
            batch.indices,
            t,
            float(math.sqrt(np.dot(r, r))),
            full_res,
            values.pop("rel_err", float("nan")),
            values.pop("bregman", float("nan")),
            values,
        )

    def discrepancy_met(self, x: np.ndarray, tau: float) -> bool:
        norms = self.op.gate_residual_norms(x, self.y_delta)
        return bool(np.all(norms <= tau * self.levels))

    def run(
        self,
        budget: int,
        stop: Optional[StopSpec] = None,
        state: Optional[IterateState] = None,
    ) -> RunTrace:
        """
        迭代到预算或停止条件

        Args:
            budget: 最大迭代次数
            stop: 停止规则，缺省为迭代满预算
            state: 起始状态，缺省 ξ_0 = 0
        """
        if budget < 1:
            raise ValueError(f"迭代预算必须 ≥ 1: {budget}")
        stop = stop or StopSpec()
        cap = stop.iteration_cap(budget, self.delta)
        tau = stop.tau if stop.tau is not None else self.rule.tau
        sweep = math.ceil(self.op.p / self.sampler.b)
        state = state or self.initial_state()
        trace = RunTrace(stop_reason="budget" if cap == budget else stop.kind)

        logger.debug(f"SMD 开始: p={self.op.p}, m={self.op.m}, b={self.sampler.b}, "
                     f"rule={self.rule.kind}, cap={cap}")
        while state.n < cap:
            if stop.kind == "discrepancy_all" and state.n % sweep == 0 and self.discrepancy_met(state.x, tau):
                trace.stop_reason = "discrepancy_all"
                break
            state = self.step(state, trace)

        trace.final_x = state.x
        trace.final = {"n": float(state.n), **self.evaluate_metrics(state.xi, state.x)}
        trace.final["full_res"] = float(np.linalg.norm(self.op.apply_all(state.x) - self.y_delta))
        self.last_state = state
        logger.debug(f"SMD 结束: n={state.n}, reason={trace.stop_reason}")
        return trace
