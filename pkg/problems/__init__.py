"""
Problems - 积分方程、平行束 CT、TV 增广系统与问题注册表
"""
from .integral import (
    INTEGRAL_KINDS,
    IntegralProblem,
    build_integral,
    convolution_kernel,
    gaussian_kernel,
    power_kernel,
    trapezoid_weights,
)
from .registry import DEFAULT_METRICS, PROBLEM_DEFAULTS, PROBLEM_IDS, ProblemInstance, build_problem
from .tomography import TomographyProblem, build_tomography, shepp_logan, trace_ray
from .tv import CompositeTVOperator, TVProblem, build_tv, build_tv_default, forward_difference, plateau_truth

__all__ = [
    "DEFAULT_METRICS",
    "INTEGRAL_KINDS",
    "PROBLEM_DEFAULTS",
    "PROBLEM_IDS",
    "CompositeTVOperator",
    "IntegralProblem",
    "ProblemInstance",
    "TVProblem",
    "TomographyProblem",
    "build_integral",
    "build_problem",
    "build_tomography",
    "build_tv",
    "build_tv_default",
    "convolution_kernel",
    "forward_difference",
    "gaussian_kernel",
    "plateau_truth",
    "power_kernel",
    "shepp_logan",
    "trace_ray",
    "trapezoid_weights",
]
