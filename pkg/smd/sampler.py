"""
批次抽样器 - 均匀子集（部分 Fisher-Yates）与循环 Kaczmarz 顺序
"""
from dataclasses import dataclass
from typing import Dict

import numpy as np

from operators import BatchIndexSet

SAMPLER_KINDS = ("uniform", "cyclic")


@dataclass(frozen=True)
class Sampler:
    """批次抽样器；随机状态放在迭代状态中，抽样器本身不可变"""
    kind: str = "uniform"
    b: int = 1
    seed: int = 0

    def __post_init__(self):
        if self.kind not in SAMPLER_KINDS:
            raise ValueError(f"未知抽样器: {self.kind}，可选: {', '.join(SAMPLER_KINDS)}")
        if self.b < 1:
            raise ValueError(f"批大小必须 ≥ 1: {self.b}")
        if self.kind == "cyclic" and self.b != 1:
            raise ValueError("循环抽样只支持 b = 1")

    def make_rng(self) -> np.random.Generator:
        return np.random.default_rng(self.seed)

    def check(self, p: int) -> "Sampler":
        if self.b > p:
            raise ValueError(f"批大小 b={self.b} 超过分块数 p={p}")
        return self

    def sample_batch(self, rng: np.random.Generator, p: int, n: int) -> BatchIndexSet:
        """第 n 次迭代的批次"""
        if self.kind == "cyclic":
            return BatchIndexSet((n % p,))
        if self.b > p:
            raise ValueError(f"批大小 b={self.b} 超过分块数 p={p}")
        if self.b == p:
            return BatchIndexSet(tuple(range(p)))
        return BatchIndexSet(tuple(sorted(partial_fisher_yates(rng, p, self.b))))


def partial_fisher_yates(rng: np.random.Generator, p: int, b: int) -> list:
    """在 {0,…,p−1} 上做前 b 步 Fisher-Yates 交换，字典只记录被换动的位置"""
    picks = rng.integers(np.arange(b), p)
    swapped: Dict[int, int] = {}
    chosen = []
    for j, k in enumerate(picks.tolist()):
        vk = swapped.get(k, k)
        swapped[k] = swapped.get(j, j)
        chosen.append(vk)
    return chosen
