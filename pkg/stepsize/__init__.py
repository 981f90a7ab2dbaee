"""
Stepsize - 步长规则 (s1)/(s2)/(s3)
"""
from .rules import (
    MU1_SCALE,
    STEP_KINDS,
    StepRule,
    batch_noise_level,
    compute_step,
    max_constant_step,
    resolve_rule,
    s1_upper_bound,
)

__all__ = [
    "MU1_SCALE",
    "STEP_KINDS",
    "StepRule",
    "batch_noise_level",
    "compute_step",
    "max_constant_step",
    "resolve_rule",
    "s1_upper_bound",
]
