"""
CLI - 实验命令行与终端输出
"""
from .app import EXIT_CONFIG, EXIT_FAILED, EXIT_NUMERICAL, EXIT_OK, build_parser, main
from .console import CUSTOM_THEME, ConsoleUI, setup_logging

__all__ = [
    "EXIT_CONFIG",
    "EXIT_FAILED",
    "EXIT_NUMERICAL",
    "EXIT_OK",
    "build_parser",
    "main",
    "CUSTOM_THEME",
    "ConsoleUI",
    "setup_logging",
]
