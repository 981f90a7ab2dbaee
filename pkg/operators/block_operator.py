"""
分块线性算子 - A = (A_1, ..., A_p) 的逐块正向/伴随作用与谱范数估计
"""
import logging
import threading
from abc import ABC, abstractmethod
from dataclasses import dataclass
from typing import Dict, Iterable, Optional, Sequence, Tuple, Union

import numpy as np
import scipy.sparse as sp

logger = logging.getLogger(__name__)

# 幂迭代起始向量的固定种子，保证范数估计可复现
POWER_ITERATION_SEED = 20230101


@dataclass(frozen=True)
class BatchIndexSet:
    """批次下标集合（0-based，严格递增）"""
    indices: Tuple[int, ...]

    def __post_init__(self):
        if not self.indices:
            raise ValueError("批次不能为空")
        for a, b in zip(self.indices, self.indices[1:]):
            if b <= a:
                raise ValueError(f"批次下标必须严格递增: {self.indices}")

    @property
    def size(self) -> int:
        return len(self.indices)

    def check(self, p: int) -> "BatchIndexSet":
        if self.indices[0] < 0 or self.indices[-1] >= p:
            raise ValueError(f"批次下标超出范围 [0, {p}): {self.indices}")
        return self

    @classmethod
    def of(cls, indices: Iterable[int], p: Optional[int] = None) -> "BatchIndexSet":
        """从任意可迭代下标构造，自动排序"""
        batch = cls(tuple(sorted(int(i) for i in indices)))
        if p is not None:
            batch.check(p)
        return batch

    def __iter__(self):
        return iter(self.indices)

    def __len__(self) -> int:
        return len(self.indices)


Batch = Union[BatchIndexSet, Sequence[int]]


def as_batch(batch: Batch, p: int) -> BatchIndexSet:
    if isinstance(batch, BatchIndexSet):
        return batch.check(p)
    return BatchIndexSet.of(batch, p)


@dataclass(frozen=True)
class NormEstimate:
    """谱范数的上估计；stale=True 表示迭代次数用尽仍未达到容差"""
    value: float
    stale: bool
    iterations: int


class BlockLinearOperator(ABC):
    """
    分块线性算子基类

    子类只需实现 apply / adjoint_apply；范数估计、缓存、残差分块等在基类完成。
    构造后除 norm_cache 外不可变，norm_cache 由锁保护，可被并发的集成运行共享。
    """

    def __init__(self, m: int, block_dims: Sequence[int]):
        if m < 1:
            raise ValueError(f"输入维度必须为正: m={m}")
        if len(block_dims) < 1 or any(int(d) < 1 for d in block_dims):
            raise ValueError("每个分块的输出维度必须为正")
        self.m = int(m)
        self.block_dims: Tuple[int, ...] = tuple(int(d) for d in block_dims)
        self.offsets = np.concatenate(([0], np.cumsum(self.block_dims))).astype(np.int64)
        self.unit_blocks = all(d == 1 for d in self.block_dims)
        self.norm_cache: Dict[Tuple[Tuple[int, ...], float], NormEstimate] = {}
        self._cache_lock = threading.Lock()

    @property
    def p(self) -> int:
        return len(self.block_dims)

    @property
    def data_dim(self) -> int:
        return int(self.offsets[-1])

    @property
    def storage(self) -> str:
        return "implicit"

    def all_blocks(self) -> BatchIndexSet:
        return BatchIndexSet(tuple(range(self.p)))

    def batch_dim(self, batch: Batch) -> int:
        batch = as_batch(batch, self.p)
        if self.unit_blocks:
            return batch.size
        return sum(self.block_dims[i] for i in batch)

    def rows_of(self, batch: Batch) -> np.ndarray:
        """批次在堆叠数据向量中对应的行下标"""
        batch = as_batch(batch, self.p)
        if self.unit_blocks:
            return np.asarray(batch.indices, dtype=np.int64)
        return np.concatenate([np.arange(self.offsets[i], self.offsets[i + 1]) for i in batch])

    def _check_primal(self, x: np.ndarray) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        if x.ndim != 1 or x.shape[0] != self.m:
            raise ValueError(f"输入向量维度不匹配: 期望 {self.m}, 实际 {x.shape}")
        return x

    def _check_data(self, batch: BatchIndexSet, u: np.ndarray) -> np.ndarray:
        u = np.asarray(u, dtype=float)
        expected = self.batch_dim(batch)
        if u.ndim != 1 or u.shape[0] != expected:
            raise ValueError(f"数据向量维度不匹配: 期望 {expected}, 实际 {u.shape}")
        return u

    @abstractmethod
    def apply(self, batch: Batch, x: np.ndarray) -> np.ndarray:
        """返回按下标顺序拼接的 A_i x, i ∈ I"""

    @abstractmethod
    def adjoint_apply(self, batch: Batch, u: np.ndarray) -> np.ndarray:
        """返回 Σ_{i∈I} A_i^T u_i"""

    def apply_all(self, x: np.ndarray) -> np.ndarray:
        return self.apply(self.all_blocks(), x)

    def adjoint_all(self, u: np.ndarray) -> np.ndarray:
        return self.adjoint_apply(self.all_blocks(), u)

    def block_residual_norms(self, x: np.ndarray, y: np.ndarray) -> np.ndarray:
        """逐块残差范数 ‖A_i x − y_i‖"""
        r = self.apply_all(x) - y
        return np.sqrt(np.add.reduceat(r * r, self.offsets[:-1]))

    def gate_residual(self, batch: Batch, r: np.ndarray) -> np.ndarray:
        """偏差原理门控所看的残差分量；缺省为整个批次残差"""
        return r

    def gate_residual_norms(self, x: np.ndarray, y: np.ndarray) -> np.ndarray:
        """逐块门控残差范数，与 gate_residual 一致"""
        return self.block_residual_norms(x, y)

    def estimate_norm(self, batch: Batch, tol: float = 1e-2, max_iters: int = 1000) -> NormEstimate:
        """
        用 A_I^T A_I 上的幂迭代估计 ‖A_I‖，返回 (1 + tol) 倍的上估计

        Args:
            batch: 批次
            tol: 相对容差，同时作为放大系数
            max_iters: 最大迭代次数，用尽时返回 stale 估计
        """
        if tol <= 0:
            raise ValueError(f"tol 必须为正: {tol}")
        batch = as_batch(batch, self.p)
        key = (batch.indices, float(tol))
        with self._cache_lock:
            cached = self.norm_cache.get(key)
        if cached is not None:
            return cached

        estimate = self._power_iteration(batch, tol, max_iters)
        if estimate.stale:
            logger.warning(f"范数估计未收敛: batch={batch.indices[:5]}... iters={estimate.iterations}")
        with self._cache_lock:
            self.norm_cache[key] = estimate
        return estimate

    def _power_iteration(self, batch: BatchIndexSet, tol: float, max_iters: int) -> NormEstimate:
        # 单行块：奇异值即行向量的欧氏范数
        if self.batch_dim(batch) == 1:
            row = self.adjoint_apply(batch, np.ones(1))
            return NormEstimate(float(np.linalg.norm(row)) * (1.0 + tol), False, 1)

        # Rayleigh 商单调不减；相对增量 ≤ tol²/10 时它与最大特征值的相对差远小于 tol，
        # 放大 (1 + tol) 后仍是上界
        inner_tol = tol * tol * 0.1
        rng = np.random.default_rng(POWER_ITERATION_SEED)
        v = rng.standard_normal(self.m)
        v /= np.linalg.norm(v)
        rayleigh = 0.0
        for k in range(1, max_iters + 1):
            w = self.adjoint_apply(batch, self.apply(batch, v))
            new_rayleigh = float(np.dot(v, w))
            norm_w = np.linalg.norm(w)
            if norm_w == 0.0:
                return NormEstimate(0.0, False, k)
            v = w / norm_w
            if abs(new_rayleigh - rayleigh) <= inner_tol * abs(new_rayleigh):
                return NormEstimate(np.sqrt(new_rayleigh) * (1.0 + tol), False, k)
            rayleigh = new_rayleigh
        return NormEstimate(np.sqrt(max(rayleigh, 0.0)) * (1.0 + tol), True, max_iters)

    def block_norms(self, tol: float = 1e-2) -> np.ndarray:
        """每个单块的范数上估计"""
        return np.array([self.estimate_norm((i,), tol).value for i in range(self.p)])

    def to_dense(self) -> np.ndarray:
        """稠密矩阵形式，仅用于小规模检查"""
        eye = np.eye(self.m)
        return np.column_stack([self.apply_all(eye[:, j]) for j in range(self.m)])


class RowBlockOperator(BlockLinearOperator):
    """
    行分块算子：把矩阵的行按 block_dims 依次切成 p 块

    支持稠密 ndarray 与 scipy CSR 两种存储。
    """

    def __init__(self, matrix: Union[np.ndarray, sp.spmatrix], block_dims: Optional[Sequence[int]] = None):
        if sp.issparse(matrix):
            matrix = sp.csr_matrix(matrix, dtype=float)
        else:
            matrix = np.ascontiguousarray(matrix, dtype=float)
            if matrix.ndim != 2:
                raise ValueError("矩阵必须是二维的")
        n_rows, m = matrix.shape
        if block_dims is None:
            block_dims = [1] * n_rows
        if sum(block_dims) != n_rows:
            raise ValueError(f"block_dims 之和 {sum(block_dims)} 与行数 {n_rows} 不一致")
        super().__init__(m, block_dims)
        self.matrix = matrix

    @property
    def storage(self) -> str:
        return "csr" if sp.issparse(self.matrix) else "dense"

    @property
    def nnz(self) -> int:
        if sp.issparse(self.matrix):
            return int(self.matrix.nnz)
        return int(np.count_nonzero(self.matrix))

    def _rows(self, batch: BatchIndexSet):
        return self.matrix[self.rows_of(batch)]

    def apply(self, batch: Batch, x: np.ndarray) -> np.ndarray:
        batch = as_batch(batch, self.p)
        x = self._check_primal(x)
        return np.asarray(self._rows(batch) @ x).ravel()

    def adjoint_apply(self, batch: Batch, u: np.ndarray) -> np.ndarray:
        batch = as_batch(batch, self.p)
        u = self._check_data(batch, u)
        return np.asarray(self._rows(batch).T @ u).ravel()

    def apply_all(self, x: np.ndarray) -> np.ndarray:
        return np.asarray(self.matrix @ self._check_primal(x)).ravel()

    def adjoint_all(self, u: np.ndarray) -> np.ndarray:
        u = np.asarray(u, dtype=float)
        if u.shape != (self.data_dim,):
            raise ValueError(f"数据向量维度不匹配: 期望 {self.data_dim}, 实际 {u.shape}")
        return np.asarray(self.matrix.T @ u).ravel()

    def to_dense(self) -> np.ndarray:
        if sp.issparse(self.matrix):
            return self.matrix.toarray()
        return self.matrix.copy()
