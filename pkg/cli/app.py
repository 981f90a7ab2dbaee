"""
CLI - 随机镜像下降实验的命令行入口

Usage:
    python main.py run --config configs/ex54_desk.json --set noise.delta_rel=0.1
    python main.py ensemble --config configs/ex51_desk.json --threads 4
    python main.py equivalence-check --b 3 --mirror elastic_net
    python main.py rate-study --config configs/rate_study.json
    python main.py problem-info ct --set problem.params.n=64
    python main.py problem-info ct --save-operator outputs/ct256.smdop

Environment Variables:
    SMD_THREADS       - 集成运行的线程数
    SMD_OUTPUT_DIR    - 输出目录
    SMD_MASTER_SEED   - 主种子
"""
import argparse
import logging
import sys
from typing import Callable, Dict, List, Optional

import numpy as np

from dual import check_equivalence
from harness import (
    ArtifactWriter,
    ConfigError,
    EnsembleRunError,
    EnsembleRunner,
    ExperimentConfig,
    RateSection,
    UnsupportedExperimentError,
    build_rate_instance,
    exact_data_error,
    load_config,
    run_rate_study,
    semiconvergence_report,
)
from mirror import build_mirror
from operators import RowBlockOperator, save_operator
from problems import PROBLEM_IDS, build_problem
from smd import NumericalError, Sampler
from stepsize import StepRule, max_constant_step

from .console import ConsoleUI, setup_logging

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_FAILED = 1
EXIT_CONFIG = 2
EXIT_NUMERICAL = 3

EXACT_DATA_TOL = 1e-8


def resolve_config(args: argparse.Namespace, require_problem: bool = False) -> ExperimentConfig:
    """配置文件加 --set 覆盖；--seed/--threads/--out/--gnuplot 优先级最高"""
    overrides = list(args.set or [])
    if args.seed is not None:
        overrides.append(f"run.master_seed={args.seed}")
    if args.threads is not None:
        overrides.append(f"run.threads={args.threads}")
    if args.out is not None:
        overrides.append(f"output.dir={args.out}")
    if args.gnuplot:
        overrides.append("output.gnuplot=true")
    cfg = load_config(args.config, overrides)
    if require_problem and cfg.problem is None:
        raise ConfigError([f"{args.config or '<defaults>'}: 缺少 problem 段"])
    return cfg


def _final_row(final: Dict[str, float]) -> List[List[str]]:
    return [[k, str(int(v)) if k == "n" else f"{v:.6e}"] for k, v in final.items()]


def cmd_run(args: argparse.Namespace, ui: ConsoleUI) -> int:
    """单次运行，写出 trace.csv 与 meta.json"""
    cfg = resolve_config(args, require_problem=True)
    runner = EnsembleRunner(cfg)
    seed = cfg.run.master_seed
    ui.show_state("running", {
        "problem": runner.instance.problem_id,
        "mirror": runner.mirror.kind,
        "rule": runner.rule.kind,
        "b": cfg.sampler.b,
        "seed": seed,
    })

    engine = runner.build_engine(seed, runner.data_for(0))
    with ui.spinner(f"迭代 {cfg.run.iters} 次"):
        trace = engine.run(cfg.run.iters, runner.stop_spec())

    writer = ArtifactWriter(cfg.output.dir)
    writer.write_trace(trace, gnuplot=cfg.output.gnuplot)
    writer.write_meta("run", cfg.resolved(), {
        "seed": seed,
        "stop_reason": trace.stop_reason,
        "final": trace.final,
        "problem": runner.instance.describe(),
        "rule": engine.rule.describe(),
    })
    ui.table(["metric", "final"], _final_row(trace.final), title="最终迭代")
    ui.print_success(f"轨迹已写入 {writer.out_dir}")
    return EXIT_OK


def cmd_ensemble(args: argparse.Namespace, ui: ConsoleUI) -> int:
    """K 次运行取均值，写出 ensemble.csv 与 meta.json"""
    cfg = resolve_config(args, require_problem=True)
    runner = EnsembleRunner(cfg)
    ui.show_state("running", {
        "problem": runner.instance.problem_id,
        "K": cfg.run.K,
        "threads": cfg.run.threads,
        "rule": runner.rule.kind,
    })
    with ui.spinner(f"{cfg.run.K} 次运行"):
        result = runner.run()

    writer = ArtifactWriter(cfg.output.dir)
    if cfg.output.gnuplot:
        writer.write_text("ensemble.dat", result.to_gnuplot())
    else:
        writer.write_text("ensemble.csv", result.to_csv())
    for k, trace in enumerate(result.traces or []):
        writer.write_trace(trace, f"trace_{k:03d}.csv", cfg.output.gnuplot)

    reports = {}
    rows = []
    for name, values in result.means.items():
        if np.all(np.isnan(values)) or values.size < 2:
            continue
        report = semiconvergence_report(result.n, values)
        reports[name] = report.to_dict()
        rows.append([name, report.n_star, f"{report.min_value:.6e}", f"{report.ratio:.4f}",
                     f"{result.final_means[name]:.6e}"])

    writer.write_meta("ensemble", cfg.resolved(), {
        "seeds": result.seeds,
        "stop_reasons": result.stop_reasons,
        "final_means": result.final_means,
        "semiconvergence": reports,
        "problem": runner.instance.describe(),
    })
    ui.table(["metric", "n*", "min", "ratio", "final"], rows, title=f"集成均值 (K={result.K})")
    ui.print_success(f"结果已写入 {writer.out_dir}")
    return EXIT_OK


def cmd_equivalence(args: argparse.Namespace, ui: ConsoleUI) -> int:
    """随机系统上的原始 SMD 与对偶分块梯度法逐步比较"""
    rng = np.random.default_rng(args.seed or 0)
    A = rng.standard_normal((args.p, args.m))
    op = RowBlockOperator(A)
    y = A @ rng.standard_normal(args.m)
    mirror = build_mirror(args.mirror, args.m, beta=args.beta)
    t = 0.5 * max_constant_step(mirror.sigma, op, args.b)
    dual_rule = StepRule.constant(t * args.mismatch) if args.mismatch else None

    report = check_equivalence(
        op, mirror, StepRule.constant(t), Sampler("uniform", args.b, args.seed or 0), y, args.iters, dual_rule
    )
    ui.print(report.to_line())
    if report.passed:
        ui.print_success("原始与对偶迭代一致")
        return EXIT_OK
    ui.print_error("原始与对偶迭代不一致")
    return EXIT_FAILED


def cmd_rate_study(args: argparse.Namespace, ui: ConsoleUI) -> int:
    """收敛率实验：拟合斜率落在配置区间内则通过"""
    cfg = resolve_config(args)
    band = tuple(cfg.rate.slope_band) if cfg.rate else (0.7, 1.3)
    with ui.spinner("收敛率实验"):
        result = run_rate_study(cfg)

    rows = [[f"{r.delta:g}", r.n_delta, f"{r.mean_err:.6e}"] for r in result.rows]
    ui.table(["delta", "n_delta", "E|x-x†|²"], rows, title=f"slope = {result.slope:.4f}")
    extra = {"rate": result.to_dict(), "slope_band": list(band), "passed": result.passed(band)}

    passed = result.passed(band)
    if args.exact_check:
        instance, mirror = build_rate_instance(cfg.rate or RateSection(), cfg.mirror.kind)
        err = exact_data_error(instance, mirror, args.exact_iters, seed=cfg.run.master_seed)
        extra["exact_data_error"] = err
        ui.print_info(f"精确数据误差 ‖x − x†‖² = {err:.3e}")
        passed = passed and err < EXACT_DATA_TOL

    writer = ArtifactWriter(cfg.output.dir)
    lines = ["delta,n_delta,mean_err"] + [f"{r.delta!r},{r.n_delta},{r.mean_err!r}" for r in result.rows]
    writer.write_text("rate_study.csv", "\n".join(lines) + "\n")
    writer.write_meta("rate-study", cfg.resolved(), extra)

    if passed:
        ui.print_success(f"斜率 {result.slope:.4f} 在区间 {band} 内")
        return EXIT_OK
    ui.print_error(f"斜率 {result.slope:.4f} 不在区间 {band} 内或精确数据误差过大")
    return EXIT_FAILED


def cmd_problem_info(args: argparse.Namespace, ui: ConsoleUI) -> int:
    """打印问题尺寸、非零元与范数估计"""
    overrides = list(args.set or [])
    if args.problem:
        overrides.insert(0, f"problem.id={args.problem}")
    cfg = load_config(args.config, overrides)
    if cfg.problem is None:
        raise ConfigError(["problem-info 需要问题名或带 problem 段的配置"])
    instance = build_problem(cfg.problem.id, cfg.problem.params, cfg.problem.operator_file)
    op = instance.op
    if args.save_operator:
        if not isinstance(op, RowBlockOperator):
            raise ValueError(f"{cfg.problem.id} 的算子不是行分块矩阵，无法保存")
        path = save_operator(op, args.save_operator)
        ui.print_success(f"算子已写入 {path}")
    info = instance.describe()
    info["norm_estimate"] = op.estimate_norm(op.all_blocks()).value
    block_norms = op.block_norms()
    info["block_norm_min"] = float(block_norms.min())
    info["block_norm_max"] = float(block_norms.max())
    info["default_mirror"] = instance.default_mirror
    info["default_metric"] = instance.default_metric
    ui.table(["key", "value"], [[k, v] for k, v in info.items()], title=cfg.problem.id)
    return EXIT_OK


def _add_common(parser: argparse.ArgumentParser):
    parser.add_argument("--config", help="JSON 配置文件")
    parser.add_argument("--set", action="append", metavar="KEY=VALUE", help="点分路径覆盖，可重复")
    parser.add_argument("--out", help="输出目录 (默认: outputs)")
    parser.add_argument("--seed", type=int, help="主种子")
    parser.add_argument("--threads", type=int, help="集成运行线程数")
    parser.add_argument("--gnuplot", action="store_true", help="输出 gnuplot 数据块而不是 CSV")
    parser.add_argument("-v", "--verbose", action="store_true", help="显示 DEBUG 日志")


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    _add_common(common)

    parser = argparse.ArgumentParser(
        description="小批量随机镜像下降：病态线性系统求解与实验",
        formatter_class=argparse.RawDescriptionHelpFormatter,
        epilog="""
示例:
  python main.py run --config configs/ex54_desk.json --set noise.delta_rel=0.1
  python main.py ensemble --config configs/ex51_desk.json --threads 4
  python main.py equivalence-check --b 1 --mirror elastic_net
  python main.py rate-study --config configs/rate_study.json

退出码: 0 成功, 1 判据未通过, 2 配置错误, 3 数值错误
        """
    )
    sub = parser.add_subparsers(dest="command", required=True)

    sub.add_parser("run", parents=[common], help="单次运行")
    sub.add_parser("ensemble", parents=[common], help="K 次运行取均值")

    eq = sub.add_parser("equivalence-check", parents=[common], help="原始-对偶等价检查")
    eq.add_argument("--p", type=int, default=20, help="分块数 (默认: 20)")
    eq.add_argument("--m", type=int, default=30, help="未知量维数 (默认: 30)")
    eq.add_argument("--b", type=int, default=3, help="批大小 (默认: 3)")
    eq.add_argument("--iters", type=int, default=200, help="迭代次数 (默认: 200)")
    eq.add_argument("--mirror", default="quadratic", choices=["quadratic", "elastic_net"], help="镜像映射")
    eq.add_argument("--beta", type=float, default=1.0, help="弹性网 β (默认: 1.0)")
    eq.add_argument("--mismatch", type=float, default=None, help=argparse.SUPPRESS)

    rate = sub.add_parser("rate-study", parents=[common], help="收敛率实验")
    rate.add_argument("--exact-check", action="store_true", help="附加精确数据收敛检查")
    rate.add_argument("--exact-iters", type=int, default=300_000, help="精确数据检查的迭代次数")

    info = sub.add_parser("problem-info", parents=[common], help="问题信息")
    info.add_argument("problem", nargs="?", help=f"问题名: {', '.join(PROBLEM_IDS)}")
    info.add_argument("--save-operator", metavar="PATH", help="把装配好的算子写入容器文件，供 problem.operator_file 复用")
    return parser


COMMANDS: Dict[str, Callable[[argparse.Namespace, ConsoleUI], int]] = {
    "run": cmd_run,
    "ensemble": cmd_ensemble,
    "equivalence-check": cmd_equivalence,
    "rate-study": cmd_rate_study,
    "problem-info": cmd_problem_info,
}


def main(argv: Optional[List[str]] = None, ui: Optional[ConsoleUI] = None) -> int:
    args = build_parser().parse_args(argv)
    setup_logging(args.verbose)
    ui = ui or ConsoleUI()
    try:
        return COMMANDS[args.command](args, ui)
    except ConfigError as e:
        for message in e.messages:
            ui.print_error(message)
        return EXIT_CONFIG
    except NumericalError as e:
        ui.print_error(f"数值错误: {e}")
        return EXIT_NUMERICAL
    except EnsembleRunError as e:
        ui.print_error(str(e))
        if isinstance(e.cause, NumericalError):
            return EXIT_NUMERICAL
        if isinstance(e.cause, ValueError):
            return EXIT_CONFIG
        return EXIT_FAILED
    except (UnsupportedExperimentError, ValueError) as e:
        ui.print_error(str(e))
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
