"""
噪声模型 - y_i^δ = y_i + δ_rel |y_i| ε_i 以及噪声水平记账
"""
import logging
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

logger = logging.getLogger(__name__)

NOISE_MODELS = ("gaussian", "uniform")


@dataclass(frozen=True)
class NoiseSpec:
    """噪声设定"""
    model: str = "gaussian"
    delta_rel: float = 0.0
    seed: int = 0

    def __post_init__(self):
        if self.model not in NOISE_MODELS:
            raise ValueError(f"未知噪声模型: {self.model}，可选: {', '.join(NOISE_MODELS)}")
        if self.delta_rel < 0:
            raise ValueError(f"delta_rel 必须非负: {self.delta_rel}")


@dataclass
class NoisyData:
    """带噪数据及逐块噪声水平"""
    y_delta: np.ndarray
    levels: np.ndarray
    delta: float


def _draw(model: str, rng: np.random.Generator, size: int) -> np.ndarray:
    if model == "gaussian":
        return rng.standard_normal(size)
    return rng.uniform(-1.0, 1.0, size)


def _block_norms(v: np.ndarray, block_dims: Optional[Sequence[int]]) -> np.ndarray:
    if block_dims is None:
        return np.abs(v)
    offsets = np.concatenate(([0], np.cumsum(block_dims)))[:-1]
    return np.sqrt(np.add.reduceat(v * v, offsets))


def total_level(levels: np.ndarray) -> float:
    """δ = sqrt(Σ δ_i²)"""
    return float(np.sqrt(np.dot(levels, levels)))


def corrupt(y: np.ndarray, spec: NoiseSpec, block_dims: Optional[Sequence[int]] = None) -> NoisyData:
    """
    按相对噪声水平加噪

    逐分量 y^δ = y + δ_rel |y| ε，逐块 δ_i = δ_rel ‖y_i‖；均匀噪声下 ‖y_i^δ − y_i‖ ≤ δ_i 必然成立。
    """
    y = np.asarray(y, dtype=float)
    rng = np.random.default_rng(spec.seed)
    eps = _draw(spec.model, rng, y.shape[0])
    y_delta = y + spec.delta_rel * np.abs(y) * eps
    levels = spec.delta_rel * _block_norms(y, block_dims)
    return NoisyData(y_delta, levels, total_level(levels))


def corrupt_absolute(
    y: np.ndarray,
    delta: float,
    model: str = "gaussian",
    seed: int = 0,
    block_dims: Optional[Sequence[int]] = None,
) -> NoisyData:
    """把噪声向量缩放到总范数恰为 δ（收敛率实验使用）"""
    if delta < 0:
        raise ValueError(f"delta 必须非负: {delta}")
    y = np.asarray(y, dtype=float)
    eps = _draw(model, np.random.default_rng(seed), y.shape[0])
    noise = eps * (delta / np.linalg.norm(eps))
    levels = _block_norms(noise, block_dims)
    return NoisyData(y + noise, levels, float(delta))


def expected_batch_noise(levels: Sequence, b: int):
    """
    E[δ_I²] = (b/p) δ²，对均匀抽取的 |I| = b 批次

    用 Python 算术实现，传入 Fraction 时结果也是精确的 Fraction。
    """
    p = len(levels)
    if not 1 <= b <= p:
        raise ValueError(f"批大小必须满足 1 ≤ b ≤ p: b={b}, p={p}")
    return b * sum(d * d for d in levels) / p


def warn_if_unbounded(spec: NoiseSpec, rule_kind: str) -> bool:
    """高斯噪声下 |y_i^δ − y_i| ≤ δ_i 不保证成立，与 S3 搭配时给出警告"""
    if rule_kind == "S3" and spec.model == "gaussian" and spec.delta_rel > 0:
        logger.warning("S3 与高斯噪声搭配：δ_i 不是噪声的确定上界，偏差原理门控可能过早关闭")
        return True
    return False
