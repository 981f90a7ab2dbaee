"""
SMD Inverse - CLI入口

小批量随机镜像下降求解病态线性系统的命令行界面
"""
import sys

from cli import main

if __name__ == "__main__":
    sys.exit(main())
