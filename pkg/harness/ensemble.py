"""
集成实验 - K 次独立运行的逐迭代均值与半收敛诊断
"""
import csv
import io
import logging
import math
import threading
from concurrent.futures import ThreadPoolExecutor, as_completed
from dataclasses import dataclass, field
from typing import Callable, Dict, List, Optional, Sequence

import numpy as np

from mirror import MirrorMap
from noise import NoiseSpec, NoisyData, corrupt, warn_if_unbounded
from problems import ProblemInstance, build_problem
from smd import RunTrace, Sampler, StochasticMirrorDescent, StopSpec, format_float

from .config import ExperimentConfig

logger = logging.getLogger(__name__)


class EnsembleRunError(RuntimeError):
    """集成中某次运行失败"""

    def __init__(self, seed: int, cause: BaseException):
        self.seed = seed
        self.cause = cause
        super().__init__(f"seed={seed} 运行失败: {type(cause).__name__}: {cause}")


def derive_seed(master: int, k: int) -> int:
    """第 k 次运行的种子 = master ⊕ k"""
    return int(master) ^ int(k)


def error_metrics(instance: ProblemInstance, names: Sequence[str]) -> Dict[str, Callable[[np.ndarray], float]]:
    """
    按名称构造原变量误差指标（在原变量切片上计算）

    rel_l2: Σw(x−x†)²/Σw x†²，l1_sq: (Σw|x−x†|)²，rel_sq: ‖x−x†‖²/‖x†‖²
    """
    x_true = instance.x_true[instance.primal_slice]
    w = instance.weights if instance.weights is not None else np.ones_like(x_true)
    true_l2 = float(np.dot(w, x_true * x_true)) or 1.0
    true_sq = float(np.dot(x_true, x_true)) or 1.0
    table = {
        "rel_l2": lambda x: float(np.dot(w, (x - x_true) ** 2)) / true_l2,
        "l1_sq": lambda x: float(np.dot(w, np.abs(x - x_true))) ** 2,
        "rel_sq": lambda x: float(np.dot(x - x_true, x - x_true)) / true_sq,
    }
    return {name: table[name] for name in names if name in table}


@dataclass
class SemiconvergenceReport:
    n_star: int
    min_value: float
    ratio: float

    def to_dict(self) -> Dict[str, float]:
        return {"n_star": self.n_star, "min_value": self.min_value, "ratio": self.ratio}


def semiconvergence_report(n: Sequence[int], values: Sequence[float]) -> SemiconvergenceReport:
    """
    n* = 均值误差的最小点，ratio = n* 之后的最大误差 / 最小误差

    单调下降时 n* 为最后一次迭代，ratio = 1。
    """
    values = np.asarray(values, dtype=float)
    if values.size < 2:
        raise ValueError("半收敛诊断至少需要两个记录点")
    k = int(np.nanargmin(values))
    min_value = float(values[k])
    tail = values[k + 1:]
    tail = tail[~np.isnan(tail)]
    if tail.size == 0:
        ratio = 1.0
    elif min_value > 0:
        ratio = max(1.0, float(tail.max()) / min_value)
    else:
        ratio = math.inf if float(tail.max()) > 0 else 1.0
    return SemiconvergenceReport(int(n[k]), min_value, ratio)


@dataclass
class EnsembleResult:
    """逐迭代均值；停止较早的运行把最终值向后沿用"""
    n: np.ndarray
    means: Dict[str, np.ndarray]
    seeds: List[int]
    final_means: Dict[str, float]
    stop_reasons: List[str]
    traces: Optional[List[RunTrace]] = field(default=None, repr=False)

    @property
    def K(self) -> int:
        return len(self.seeds)

    def report(self, metric: Optional[str] = None) -> SemiconvergenceReport:
        metric = metric or next(iter(self.means))
        return semiconvergence_report(self.n, self.means[metric])

    def to_csv(self) -> str:
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        names = list(self.means)
        writer.writerow(["n"] + names)
        for k, n in enumerate(self.n):
            writer.writerow([str(int(n))] + [format_float(self.means[name][k]) for name in names])
        return buf.getvalue()

    def to_gnuplot(self) -> str:
        names = list(self.means)
        lines = ["# " + " ".join(["n"] + names)]
        for k, n in enumerate(self.n):
            lines.append(" ".join([str(int(n))] + [format(float(self.means[name][k]), ".17g") for name in names]))
        return "\n".join(lines) + "\n"


def _series(trace: RunTrace, name: str) -> np.ndarray:
    if name == "bregman":
        return trace.column("bregman")
    if name == "residual":
        return trace.column("full_res")
    return trace.column(name)


def _final(trace: RunTrace, name: str) -> float:
    key = {"residual": "full_res"}.get(name, name)
    return float(trace.final.get(key, math.nan))


def aggregate(traces: Sequence[RunTrace], metrics: Sequence[str]) -> Dict[str, np.ndarray]:
    """在最长运行的记录网格加最终迭代上求均值，按运行下标顺序累加"""
    longest = max(traces, key=lambda tr: tr.final.get("n", len(tr)))
    grid = list(longest.n)
    n_end = int(max(tr.final.get("n", 0) for tr in traces))
    if not grid or grid[-1] < n_end:
        grid.append(n_end)
    grid_arr = np.asarray(grid)

    means: Dict[str, np.ndarray] = {}
    for name in metrics:
        total = np.zeros(grid_arr.size)
        for trace in traces:
            series = _series(trace, name)
            row = np.full(grid_arr.size, _final(trace, name))
            row[: series.size] = series
            total += row
        means[name] = total / len(traces)
    return {"n": grid_arr, **means}


class EnsembleRunner:
    """
    按配置组装问题、数据与引擎，线程池并发执行 K 次运行

    问题和带噪数据在所有运行间只读共享。
    """

    def __init__(self, cfg: ExperimentConfig, instance: Optional[ProblemInstance] = None):
        if cfg.problem is None and instance is None:
            raise ValueError("集成实验需要 problem 配置")
        self.cfg = cfg
        self.instance = instance or build_problem(cfg.problem.id, cfg.problem.params, cfg.problem.operator_file)
        self.mirror: MirrorMap = self.instance.make_mirror(cfg.mirror.kind, cfg.mirror.beta)
        self.rule = cfg.step.to_rule()
        self.metrics = list(cfg.run.metrics)

        block_dims = None if self.instance.op.unit_blocks else self.instance.op.block_dims
        self.noise_spec = NoiseSpec(cfg.noise.model, cfg.noise.delta_rel, cfg.noise.seed)
        warn_if_unbounded(self.noise_spec, self.rule.kind)
        self._block_dims = block_dims
        self.shared_data = corrupt(self.instance.y, self.noise_spec, block_dims)

    def data_for(self, k: int) -> NoisyData:
        if not self.cfg.noise.fresh_per_run:
            return self.shared_data
        spec = NoiseSpec(self.noise_spec.model, self.noise_spec.delta_rel, derive_seed(self.noise_spec.seed, k))
        return corrupt(self.instance.y, spec, self._block_dims)

    def build_engine(self, seed: int, data: NoisyData) -> StochasticMirrorDescent:
        cfg = self.cfg
        return StochasticMirrorDescent(
            self.instance.op,
            self.mirror,
            self.rule,
            Sampler(cfg.sampler.kind, cfg.sampler.b, seed),
            data.y_delta,
            data.levels,
            x_true=self.instance.x_true,
            primal_slice=self.instance.primal_slice,
            metrics=error_metrics(self.instance, self.metrics),
            full_residual_every=cfg.run.full_residual_every,
            record_every=cfg.output.trace_every,
        )

    def stop_spec(self) -> StopSpec:
        s = self.cfg.run.stop
        return StopSpec(s.kind, s.n, s.c, s.scale, s.tau)

    def run_one(self, k: int, seed: int) -> RunTrace:
        engine = self.build_engine(seed, self.data_for(k))
        trace = engine.run(self.cfg.run.iters, self.stop_spec())
        logger.debug(f"运行 {k} (seed={seed}) 完成: n={int(trace.final['n'])}")
        return trace

    def run(
        self,
        threads: Optional[int] = None,
        seeds: Optional[Sequence[int]] = None,
        keep_traces: Optional[bool] = None,
    ) -> EnsembleResult:
        cfg = self.cfg
        seeds = list(seeds) if seeds is not None else [derive_seed(cfg.run.master_seed, k) for k in range(cfg.run.K)]
        threads = threads or cfg.run.threads
        keep = cfg.output.keep_traces if keep_traces is None else keep_traces
        logger.info(f"集成实验: problem={self.instance.problem_id}, K={len(seeds)}, threads={threads}, "
                    f"rule={self.rule.kind}, b={cfg.sampler.b}")

        results: Dict[int, RunTrace] = {}
        results_lock = threading.Lock()
        with ThreadPoolExecutor(max_workers=threads, thread_name_prefix="run") as pool:
            futures = {pool.submit(self.run_one, k, seed): (k, seed) for k, seed in enumerate(seeds)}
            for future in as_completed(futures):
                k, seed = futures[future]
                try:
                    trace = future.result()
                except Exception as e:
                    for other in futures:
                        other.cancel()
                    logger.error(f"运行 {k} (seed={seed}) 失败: {e}")
                    raise EnsembleRunError(seed, e) from e
                with results_lock:
                    results[k] = trace

        traces = [results[k] for k in range(len(seeds))]
        table = aggregate(traces, self.metrics)
        grid = table.pop("n")
        final_means = {name: float(np.mean([_final(tr, name) for tr in traces])) for name in self.metrics}
        return EnsembleResult(
            grid, table, seeds, final_means, [tr.stop_reason for tr in traces], traces if keep else None
        )


def run_ensemble(cfg: ExperimentConfig, instance: Optional[ProblemInstance] = None, **kwargs) -> EnsembleResult:
    """按配置运行 K 次并汇总均值"""
    return EnsembleRunner(cfg, instance).run(**kwargs)
