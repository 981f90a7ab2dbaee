"""
终端输出 - rich Console 封装与日志配置
"""
import logging
from typing import Any, Dict, Optional, Sequence

from rich.console import Console
from rich.markup import escape
from rich.table import Table
from rich.theme import Theme

CUSTOM_THEME = Theme({
    "info": "cyan",
    "warning": "yellow",
    "error": "red bold",
    "success": "green",
    "dim": "dim white",
    "highlight": "bold white",
})

LOG_FORMAT = '%(asctime)s - [%(threadName)-10s] - %(levelname)s - %(message)s'


def setup_logging(verbose: bool = False):
    """设置日志；线程名用于区分集成中的并发运行"""
    level = logging.DEBUG if verbose else logging.INFO
    logging.basicConfig(level=level, format=LOG_FORMAT, datefmt='%H:%M:%S')


class ConsoleUI:
    """实验结果的终端展示，日志之外面向用户的输出都走这里"""

    def __init__(self, console: Optional[Console] = None):
        self.console = console or Console(theme=CUSTOM_THEME)

    def print(self, text: str = "", style: str = None):
        self.console.print(text, style=style)

    def print_error(self, text: str):
        self.console.print(f"[error]Error:[/error] {escape(text)}")

    def print_success(self, text: str):
        self.console.print(f"[success]✓[/success] {escape(text)}")

    def print_info(self, text: str):
        self.console.print(f"[info]ℹ[/info] {escape(text)}")

    def show_state(self, state: str, details: Optional[Dict[str, Any]] = None):
        """显示运行状态与关键参数"""
        color = {"completed": "green", "failed": "red", "running": "cyan"}.get(state, "white")
        self.console.print(f"\n[{color}]● {state}[/{color}]")
        for k, v in (details or {}).items():
            self.console.print(f"  [dim]{k}:[/dim] {escape(str(v))}")

    def table(self, headers: Sequence[str], rows: Sequence[Sequence[Any]], title: str = ""):
        table = Table(title=title, show_header=True, header_style="bold")
        for h in headers:
            table.add_column(h)
        for row in rows:
            table.add_row(*[escape(str(x)) for x in row])
        self.console.print(table)

    def spinner(self, text: str = "Running..."):
        return self.console.status(f"[info]{text}[/info]", spinner="dots")
