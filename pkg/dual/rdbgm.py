"""
小批量随机对偶分块梯度法与原始-对偶等价检查

对偶问题 d(λ) = R*(A^*λ) − ⟨λ, y^δ⟩，每步只更新被抽中分块的 λ_I：

    x_n       = ∇R*(A^*λ_n)
    λ_{n+1,I} = λ_{n,I} − t_I (A_I x_n − y_I^δ)

与 (s1) 步长的随机镜像下降逐次等价：ξ_n = A^*λ_n。
"""
import logging
from dataclasses import dataclass, field
from typing import Dict, List, Optional

import numpy as np

from mirror import MirrorMap
from operators import BatchIndexSet, BlockLinearOperator
from smd import RunTrace, Sampler, StochasticMirrorDescent
from stepsize import StepRule, compute_step, resolve_rule, s1_upper_bound

logger = logging.getLogger(__name__)

EQUIVALENCE_TOL = 1e-10


@dataclass
class DualState:
    """对偶状态：堆叠的 λ（长度为数据维度）、计数 n、随机数发生器"""
    lam: np.ndarray
    n: int
    rng: np.random.Generator


def dual_point(mirror: MirrorMap, op: BlockLinearOperator, lam: np.ndarray) -> np.ndarray:
    """A^*λ 在镜像映射配对下对应的对偶元素"""
    return mirror.to_dual(op.adjoint_all(lam))


def dual_objective(mirror: MirrorMap, op: BlockLinearOperator, lam: np.ndarray, y: np.ndarray) -> float:
    """d_y(λ) = R*(A^*λ) − ⟨λ, y⟩"""
    lam = np.asarray(lam, dtype=float)
    return mirror.conjugate_value(dual_point(mirror, op, lam)) - float(np.dot(lam, y))


class RandomizedDualBlockGradient:
    """
    随机对偶分块梯度法

    仅支持 (s1) 步长；b > 1 时要求所有批次共用一个常数步长。
    """

    def __init__(
        self,
        op: BlockLinearOperator,
        mirror: MirrorMap,
        rule: StepRule,
        sampler: Sampler,
        y_delta: np.ndarray,
        norm_tol: float = 1e-2,
    ):
        if rule.kind != "S1":
            raise ValueError(f"对偶分块梯度法只支持 S1 步长，收到 {rule.kind}")
        if sampler.b > 1 and not rule.is_constant:
            raise ValueError("b > 1 时对偶分块梯度法要求常数步长 t_I = t")
        if mirror.dim != op.m:
            raise ValueError(f"镜像映射维度 {mirror.dim} 与算子输入维度 {op.m} 不一致")
        y_delta = np.asarray(y_delta, dtype=float)
        if y_delta.shape != (op.data_dim,):
            raise ValueError(f"数据长度 {y_delta.shape} 与算子输出维度 {op.data_dim} 不一致")

        self.op = op
        self.mirror = mirror
        self.sampler = sampler.check(op.p)
        self.rule = resolve_rule(rule, op, mirror.sigma, sampler.b, norm_tol)
        self.y_delta = y_delta
        self.norm_tol = norm_tol
        self._block_norms_sq = None
        if self.rule.mu0 is not None:
            self._block_norms_sq = op.block_norms(norm_tol) ** 2

        self.diagnostics = self._diagnostics()
        logger.info(f"对偶分块梯度: c_1={self.diagnostics['c1']:.6g}, t_max={self.diagnostics['t_max']:.6g}")

    def _diagnostics(self) -> Dict[str, float]:
        """c_1 = min_I (1 − t_I‖A_I‖²/(4σ))，t_max = max_I t_I"""
        four_sigma = 4.0 * self.mirror.sigma
        rule = self.rule
        if rule.t is not None:
            bound = s1_upper_bound(self.op.block_norms(self.norm_tol), self.sampler.b)
            return {"c1": 1.0 - rule.t * bound / four_sigma, "t_max": float(rule.t)}
        if rule.table is not None:
            c1, t_max = np.inf, 0.0
            for key, t in rule.table.items():
                norm = self.op.estimate_norm(key, self.norm_tol).value
                c1 = min(c1, 1.0 - t * norm * norm / four_sigma)
                t_max = max(t_max, t)
            return {"c1": float(c1), "t_max": float(t_max)}
        return {"c1": 1.0 - rule.mu0 / four_sigma, "t_max": float(rule.mu0 / np.min(self._block_norms_sq))}

    def initial_state(self) -> DualState:
        return DualState(np.zeros(self.op.data_dim), 0, self.sampler.make_rng())

    def primal(self, lam: np.ndarray) -> np.ndarray:
        return self.mirror.mirror_solve(dual_point(self.mirror, self.op, lam))

    def step(self, state: DualState, batch: Optional[BatchIndexSet] = None) -> DualState:
        if batch is None:
            batch = self.sampler.sample_batch(state.rng, self.op.p, state.n)
        x = self.primal(state.lam)
        rows = self.op.rows_of(batch)
        r = self.op.apply(batch, x) - self.y_delta[rows]
        t = compute_step(self.rule, r, r, batch, block_norms_sq=self._block_norms_sq)
        lam = state.lam.copy()
        lam[rows] = lam[rows] - t * r
        return DualState(lam, state.n + 1, state.rng)

    def run(self, budget: int, record_every: int = 1) -> RunTrace:
        """迭代 budget 次，轨迹的附加列 dual_obj 记录 d_y(λ_n)"""
        if budget < 1:
            raise ValueError(f"迭代预算必须 ≥ 1: {budget}")
        state = self.initial_state()
        trace = RunTrace(stop_reason="budget")
        while state.n < budget:
            n = state.n
            batch = self.sampler.sample_batch(state.rng, self.op.p, n)
            if n % record_every == 0:
                x = self.primal(state.lam)
                res = self.op.apply(batch, x) - self.y_delta[self.op.rows_of(batch)]
                trace.append(
                    n, batch.indices, float("nan"), float(np.linalg.norm(res)),
                    extras={"dual_obj": dual_objective(self.mirror, self.op, state.lam, self.y_delta)},
                )
            state = self.step(state, batch)
        trace.final = {"n": float(state.n), "dual_obj": dual_objective(self.mirror, self.op, state.lam, self.y_delta)}
        trace.final_x = self.primal(state.lam)
        self.last_state = state
        return trace


@dataclass
class EquivalenceReport:
    """等价检查结果"""
    max_deviation: float
    scale: float
    iterations: int
    seed: int
    deviations: List[float] = field(default_factory=list, repr=False)

    @property
    def relative(self) -> float:
        return self.max_deviation / self.scale if self.scale > 0 else self.max_deviation

    @property
    def passed(self) -> bool:
        return self.relative <= EQUIVALENCE_TOL

    def to_line(self) -> str:
        return (f"max_dev={self.max_deviation:.3e} rel={self.relative:.3e} "
                f"iters={self.iterations} seed={self.seed} {'OK' if self.passed else 'FAIL'}")


def check_equivalence(
    op: BlockLinearOperator,
    mirror: MirrorMap,
    rule: StepRule,
    sampler: Sampler,
    y_delta: np.ndarray,
    n_iters: int,
    dual_rule: Optional[StepRule] = None,
) -> EquivalenceReport:
    """
    在同一条批次路径上同时运行原始 SMD 与对偶分块梯度法

    Args:
        dual_rule: 对偶引擎的步长规则，缺省与原始引擎相同；传入不同规则可作负对照

    Returns:
        max_n ‖ξ_n − A^*λ_n‖∞ 以及相对尺度 max_n ‖ξ_n‖∞
    """
    if n_iters < 1:
        raise ValueError(f"迭代次数必须 ≥ 1: {n_iters}")
    primal = StochasticMirrorDescent(op, mirror, rule, sampler, y_delta)
    dual = RandomizedDualBlockGradient(op, mirror, dual_rule or rule, sampler, y_delta)

    rng = sampler.make_rng()
    path = [sampler.sample_batch(rng, op.p, n) for n in range(n_iters)]

    p_state = primal.initial_state()
    d_state = dual.initial_state()
    deviations, scale = [], 0.0
    for batch in path:
        p_state = primal.step(p_state, batch=batch)
        d_state = dual.step(d_state, batch=batch)
        xi_dual = dual_point(mirror, op, d_state.lam)
        deviations.append(float(np.max(np.abs(p_state.xi - xi_dual))))
        scale = max(scale, float(np.max(np.abs(p_state.xi))))

    report = EquivalenceReport(max(deviations), scale, n_iters, sampler.seed, deviations)
    logger.debug(f"等价检查: {report.to_line()}")
    return report
