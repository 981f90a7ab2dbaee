"""
运行轨迹 - 逐次迭代记录，列式存储，可写成 CSV
"""
import csv
import io
import math
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Tuple

import numpy as np

BASE_COLUMNS = ("n", "indices", "t", "batch_res", "full_res", "rel_err", "bregman")


def format_float(value: float) -> str:
    """17 位有效数字；NaN 写成空串"""
    if value is None or (isinstance(value, float) and math.isnan(value)):
        return ""
    return format(float(value), ".17g")


@dataclass
class RunTrace:
    """
    一次运行的轨迹

    第 n 条记录描述更新前的状态：x_n、Δ_n，以及把 n 推进到 n+1 的批次和步长。
    final 保存最终迭代的误差指标。
    """
    n: List[int] = field(default_factory=list)
    indices: List[Tuple[int, ...]] = field(default_factory=list)
    step: List[float] = field(default_factory=list)
    batch_res: List[float] = field(default_factory=list)
    full_res: List[float] = field(default_factory=list)
    rel_err: List[float] = field(default_factory=list)
    bregman: List[float] = field(default_factory=list)
    extras: Dict[str, List[float]] = field(default_factory=dict)
    final: Dict[str, float] = field(default_factory=dict)
    final_x: Optional[np.ndarray] = None
    stop_reason: str = ""

    def append(
        self,
        n: int,
        indices: Tuple[int, ...],
        step: float,
        batch_res: float,
        full_res: float = float("nan"),
        rel_err: float = float("nan"),
        bregman: float = float("nan"),
        extras: Optional[Dict[str, float]] = None,
    ):
        if self.n and n <= self.n[-1]:
            raise ValueError(f"轨迹记录必须按 n 严格递增: {n} <= {self.n[-1]}")
        self.n.append(n)
        self.indices.append(indices)
        self.step.append(step)
        self.batch_res.append(batch_res)
        self.full_res.append(full_res)
        self.rel_err.append(rel_err)
        self.bregman.append(bregman)
        for name, value in (extras or {}).items():
            self.extras.setdefault(name, []).append(value)

    def __len__(self) -> int:
        return len(self.n)

    def column(self, name: str) -> np.ndarray:
        if name == "t":
            name = "step"
        if name in self.extras:
            return np.asarray(self.extras[name], dtype=float)
        return np.asarray(getattr(self, name), dtype=float)

    def to_csv(self) -> str:
        """CSV 文本：下标用分号连接，浮点 17 位有效数字，跳过的全残差留空"""
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        extra_names = sorted(self.extras)
        writer.writerow(list(BASE_COLUMNS) + extra_names)
        for k in range(len(self.n)):
            row = [
                str(self.n[k]),
                ";".join(str(i) for i in self.indices[k]),
                format_float(self.step[k]),
                format_float(self.batch_res[k]),
                format_float(self.full_res[k]),
                format_float(self.rel_err[k]),
                format_float(self.bregman[k]),
            ]
            row.extend(format_float(self.extras[name][k]) for name in extra_names)
            writer.writerow(row)
        return buf.getvalue()

    def to_gnuplot(self) -> str:
        """gnuplot 数据块：空白分隔，注释行为列名，缺失值写 NaN"""
        extra_names = sorted(self.extras)
        lines = ["# " + " ".join(["n", "t", "batch_res", "full_res", "rel_err", "bregman"] + extra_names)]
        for k in range(len(self.n)):
            values = [self.step[k], self.batch_res[k], self.full_res[k], self.rel_err[k], self.bregman[k]]
            values.extend(self.extras[name][k] for name in extra_names)
            lines.append(" ".join([str(self.n[k])] + [format(float(v), ".17g") for v in values]))
        return "\n".join(lines) + "\n"


def read_trace_csv(text: str) -> RunTrace:
    """从 CSV 文本恢复轨迹"""
    reader = csv.reader(io.StringIO(text))
    header = next(reader)
    extra_names = header[len(BASE_COLUMNS):]

    def parse(value: str) -> float:
        return float(value) if value else float("nan")

    trace = RunTrace()
    for row in reader:
        extras = {name: parse(v) for name, v in zip(extra_names, row[len(BASE_COLUMNS):])}
        trace.append(
            int(row[0]),
            tuple(int(i) for i in row[1].split(";") if i),
            parse(row[2]),
            parse(row[3]),
            parse(row[4]),
            parse(row[5]),
            parse(row[6]),
            extras,
        )
    return trace
