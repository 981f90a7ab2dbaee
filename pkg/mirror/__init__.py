"""
Mirror - 闭式镜像映射（二次、非负二次、熵单纯形、弹性网、直积）
"""
from .maps import (
    MIRROR_KINDS,
    ElasticNetMap,
    EntropySimplexMap,
    MirrorMap,
    NonnegQuadraticMap,
    ProductMap,
    QuadraticMap,
    build_mirror,
)

__all__ = [
    "MIRROR_KINDS",
    "ElasticNetMap",
    "EntropySimplexMap",
    "MirrorMap",
    "NonnegQuadraticMap",
    "ProductMap",
    "QuadraticMap",
    "build_mirror",
]
