"""
Artifact Writer - 实验产物落盘（先写临时文件再改名）
"""
import json
import logging
import os
from contextlib import contextmanager
from datetime import datetime
from pathlib import Path
from typing import Any, Dict, Iterator, Optional, TextIO

from smd import RunTrace

logger = logging.getLogger(__name__)


class ArtifactWriter:
    """
    输出目录管理器

    功能：
    - 原子写入：中断时不会留下半截的最终文件
    - 轨迹写成 CSV 或 gnuplot 数据块
    - meta.json 回显完整解析后的配置
    """

    def __init__(self, out_dir: str = "outputs"):
        self.out_dir = Path(out_dir)
        self.out_dir.mkdir(parents=True, exist_ok=True)
        self.written: Dict[str, str] = {}

    def path(self, name: str) -> Path:
        return self.out_dir / name

    @contextmanager
    def open_atomic(self, name: str) -> Iterator[TextIO]:
        """写入 name.tmp，正常退出后 os.replace 为 name；异常时删除临时文件"""
        final = self.path(name)
        tmp = final.with_name(final.name + ".tmp")
        f = open(tmp, "w", encoding="utf-8", newline="")
        try:
            yield f
            f.close()
            os.replace(tmp, final)
        except BaseException:
            f.close()
            tmp.unlink(missing_ok=True)
            raise
        self.written[name] = str(final)
        logger.debug(f"已写入 {final}")

    def write_text(self, name: str, text: str) -> Path:
        with self.open_atomic(name) as f:
            f.write(text)
        return self.path(name)

    def write_json(self, name: str, data: Dict[str, Any]) -> Path:
        return self.write_text(name, json.dumps(data, ensure_ascii=False, indent=2) + "\n")

    def write_trace(self, trace: RunTrace, name: str = "trace.csv", gnuplot: bool = False) -> Path:
        if gnuplot:
            name = Path(name).with_suffix(".dat").name
            return self.write_text(name, trace.to_gnuplot())
        return self.write_text(name, trace.to_csv())

    def write_meta(
        self,
        command: str,
        config: Dict[str, Any],
        extra: Optional[Dict[str, Any]] = None,
    ) -> Path:
        """meta.json：子命令、完整配置、产物清单与附加结果"""
        meta = {
            "command": command,
            "created_at": datetime.now().isoformat(),
            "config": config,
            "artifacts": sorted(self.written),
        }
        meta.update(extra or {})
        return self.write_json("meta.json", meta)
