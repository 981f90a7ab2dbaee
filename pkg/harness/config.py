"""
实验配置 - pydantic 模型与分层加载

优先级从高到低：
1) --set key=value 覆盖（点分路径）
2) 配置文件（JSON）
3) 环境变量 SMD_THREADS / SMD_OUTPUT_DIR / SMD_MASTER_SEED
4) 模型缺省值
"""
import copy
import json
import logging
import os
from pathlib import Path
from typing import Any, Dict, List, Literal, Mapping, Optional, Sequence, Tuple, Union

from pydantic import BaseModel, ConfigDict, Field, ValidationError, model_validator

from stepsize import StepRule

logger = logging.getLogger(__name__)

ENV_KEYS = {
    "SMD_THREADS": ("run", "threads"),
    "SMD_OUTPUT_DIR": ("output", "dir"),
    "SMD_MASTER_SEED": ("run", "master_seed"),
}

METRIC_NAMES = ("rel_l2", "l1_sq", "rel_sq", "bregman", "residual")


class ConfigError(ValueError):
    """配置错误，messages 为带行号的错误列表"""

    def __init__(self, messages: Sequence[str]):
        self.messages = list(messages)
        super().__init__("\n".join(self.messages))


class _Section(BaseModel):
    model_config = ConfigDict(extra="forbid")


class ProblemSection(_Section):
    id: str
    params: Dict[str, Union[int, float]] = Field(default_factory=dict)
    operator_file: Optional[str] = None


class MirrorSection(_Section):
    kind: Optional[str] = None
    beta: Optional[float] = None


class StepSection(_Section):
    kind: Literal["S1", "S2", "S3"] = "S2"
    t: Optional[float] = Field(default=None, gt=0)
    mu0: Optional[float] = Field(default=None, gt=0)
    mu1: Optional[float] = Field(default=None, gt=0)
    tau: float = Field(default=1.0, ge=1.0)

    def to_rule(self) -> StepRule:
        """S1 给 t 为常数步长，给 mu0 为归一化步长；S2/S3 的 mu0 缺省为 1"""
        if self.kind == "S1":
            if self.t is not None:
                return StepRule.constant(self.t)
            if self.mu0 is not None:
                return StepRule.normalized(self.mu0)
            raise ValueError("S1 步长需要 t 或 mu0")
        mu0 = 1.0 if self.mu0 is None else self.mu0
        if self.kind == "S2":
            return StepRule.s2(mu0, self.mu1)
        return StepRule.s3(mu0, self.mu1, self.tau)


class SamplerSection(_Section):
    kind: Literal["uniform", "cyclic"] = "uniform"
    b: int = Field(default=1, ge=1)


class NoiseSection(_Section):
    model: Literal["gaussian", "uniform"] = "gaussian"
    delta_rel: float = Field(default=0.0, ge=0.0)
    seed: int = 0
    fresh_per_run: bool = False


class StopSection(_Section):
    kind: Literal["fixed", "a_priori", "discrepancy_all"] = "fixed"
    n: Optional[int] = Field(default=None, ge=1)
    c: float = Field(default=1.0, gt=0)
    scale: float = Field(default=1.0, gt=0)
    tau: Optional[float] = Field(default=None, ge=1.0)


class RunSection(_Section):
    iters: int = Field(default=1000, ge=1)
    K: int = Field(default=1, ge=1)
    stop: StopSection = Field(default_factory=StopSection)
    metrics: List[str] = Field(default_factory=lambda: ["rel_l2", "bregman"])
    master_seed: int = 0
    threads: int = Field(default=1, ge=1)
    full_residual_every: Optional[int] = Field(default=None, ge=1)

    @model_validator(mode="after")
    def _check_metrics(self):
        unknown = [m for m in self.metrics if m not in METRIC_NAMES]
        if unknown:
            raise ValueError(f"未知指标 {unknown}，可选: {', '.join(METRIC_NAMES)}")
        return self


class OutputSection(_Section):
    dir: str = "outputs"
    trace_every: int = Field(default=1, ge=1)
    gnuplot: bool = False
    keep_traces: bool = False


class RateSection(_Section):
    rows: int = Field(default=30, ge=2)
    cols: int = Field(default=40, ge=2)
    decay: float = Field(default=1e-5, gt=0, lt=1)
    operator_seed: int = 2023
    b: int = Field(default=10, ge=1)
    t: Optional[float] = Field(default=None, gt=0)
    c: float = Field(default=1.0, gt=0)
    deltas: List[float] = Field(default_factory=lambda: [1e-1, 1e-2, 1e-3, 1e-4])
    K: int = Field(default=20, ge=1)
    noise_model: Literal["gaussian", "uniform"] = "gaussian"
    slope_band: Tuple[float, float] = (0.7, 1.3)

    @model_validator(mode="after")
    def _check_deltas(self):
        if len(self.deltas) < 2 or any(d <= 0 for d in self.deltas):
            raise ValueError("deltas 至少需要两个正数")
        if self.b > self.rows:
            raise ValueError(f"b={self.b} 超过分块数 rows={self.rows}")
        return self


class ExperimentConfig(_Section):
    """完整实验配置；未知键一律拒绝"""
    problem: Optional[ProblemSection] = None
    mirror: MirrorSection = Field(default_factory=MirrorSection)
    step: StepSection = Field(default_factory=StepSection)
    sampler: SamplerSection = Field(default_factory=SamplerSection)
    noise: NoiseSection = Field(default_factory=NoiseSection)
    run: RunSection = Field(default_factory=RunSection)
    output: OutputSection = Field(default_factory=OutputSection)
    rate: Optional[RateSection] = None
    description: str = ""

    @model_validator(mode="after")
    def _check_sampler(self):
        if self.sampler.kind == "cyclic" and self.sampler.b != 1:
            raise ValueError("循环抽样只支持 b = 1")
        return self

    def resolved(self) -> Dict[str, Any]:
        """完整解析后的配置（含缺省值），写入 meta.json"""
        return self.model_dump(mode="json")


def parse_override(item: str) -> Tuple[List[str], Any]:
    """'noise.delta_rel=0.1' → (['noise', 'delta_rel'], 0.1)；值按 JSON 解析，失败时作字符串"""
    if "=" not in item:
        raise ConfigError([f"--set {item}: 需要 key=value 形式"])
    key, raw = item.split("=", 1)
    path = [k for k in key.strip().split(".") if k]
    if not path:
        raise ConfigError([f"--set {item}: 键为空"])
    try:
        value = json.loads(raw)
    except json.JSONDecodeError:
        value = raw
    return path, value


def _set_path(tree: Dict[str, Any], path: Sequence[str], value: Any):
    node = tree
    for key in path[:-1]:
        child = node.get(key)
        if not isinstance(child, dict):
            child = {}
            node[key] = child
        node = child
    node[path[-1]] = value


def _deep_merge(base: Dict[str, Any], top: Mapping[str, Any]) -> Dict[str, Any]:
    out = copy.deepcopy(base)
    for key, value in top.items():
        if isinstance(value, Mapping) and isinstance(out.get(key), dict):
            out[key] = _deep_merge(out[key], value)
        else:
            out[key] = copy.deepcopy(value)
    return out


def _locate(text: str, loc: Sequence[Any]) -> Optional[int]:
    """在 JSON 原文中按键路径依次向下查找，返回最后一个命中的行号（从 1 开始）"""
    lines = text.splitlines()
    start, found = 0, None
    for key in loc:
        if not isinstance(key, str):
            continue
        needle = f'"{key}"'
        for i in range(start, len(lines)):
            if needle in lines[i]:
                found, start = i + 1, i + 1
                break
    return found


def _env_layer(env: Mapping[str, str]) -> Dict[str, Any]:
    layer: Dict[str, Any] = {}
    for name, path in ENV_KEYS.items():
        raw = env.get(name)
        if raw is None or raw == "":
            continue
        value: Any = raw
        if path[1] in ("threads", "master_seed"):
            try:
                value = int(raw)
            except ValueError:
                raise ConfigError([f"环境变量 {name}={raw!r} 不是整数"]) from None
        _set_path(layer, path, value)
    return layer


def load_config(
    path: Optional[Union[str, Path]] = None,
    overrides: Sequence[str] = (),
    env: Optional[Mapping[str, str]] = None,
) -> ExperimentConfig:
    """
    分层加载实验配置

    Args:
        path: JSON 配置文件
        overrides: --set 覆盖项
        env: 环境变量（缺省 os.environ）

    Raises:
        ConfigError: 文件缺失、JSON 语法错误或模式校验失败
    """
    env = os.environ if env is None else env
    tree = _env_layer(env)
    text, source = "", "<defaults>"

    if path is not None:
        source = str(path)
        p = Path(path).expanduser()
        if not p.is_file():
            raise ConfigError([f"{source}: 配置文件不存在"])
        text = p.read_text(encoding="utf-8")
        try:
            data = json.loads(text) if text.strip() else {}
        except json.JSONDecodeError as e:
            raise ConfigError([f"{source}:{e.lineno}:{e.colno}: JSON 语法错误: {e.msg}"]) from None
        if not isinstance(data, dict):
            raise ConfigError([f"{source}:1: 顶层必须是 JSON 对象"])
        tree = _deep_merge(tree, data)

    for item in overrides:
        key_path, value = parse_override(item)
        _set_path(tree, key_path, value)

    try:
        cfg = ExperimentConfig.model_validate(tree)
    except ValidationError as e:
        messages = []
        for err in e.errors():
            loc = [str(k) for k in err["loc"]]
            line = _locate(text, err["loc"]) if text else None
            anchor = f"{source}:{line}" if line else source
            messages.append(f"{anchor}: {'.'.join(loc) or '<root>'}: {err['msg']}")
        raise ConfigError(messages) from None

    logger.debug(f"配置已加载: {source}, 覆盖 {len(overrides)} 项")
    return cfg
