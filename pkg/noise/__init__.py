"""
Noise - 数据加噪与噪声水平
"""
from .model import (
    NOISE_MODELS,
    NoisyData,
    NoiseSpec,
    corrupt,
    corrupt_absolute,
    expected_batch_noise,
    total_level,
    warn_if_unbounded,
)

__all__ = [
    "NOISE_MODELS",
    "NoisyData",
    "NoiseSpec",
    "corrupt",
    "corrupt_absolute",
    "expected_batch_noise",
    "total_level",
    "warn_if_unbounded",
]
