"""
Harness单元测试
"""
import json
import math
import os
import tempfile
import unittest
from pathlib import Path

import numpy as np

from mirror import ElasticNetMap, NonnegQuadraticMap, QuadraticMap
from problems import build_problem
from smd import RunTrace, read_trace_csv
from harness import (
    ArtifactWriter,
    ConfigError,
    EnsembleRunError,
    EnsembleRunner,
    ExperimentConfig,
    aggregate,
    derive_seed,
    error_metrics,
    ill_posed_operator,
    load_config,
    parse_override,
    rate_study,
    run_ensemble,
    semiconvergence_report,
    source_condition_instance,
    stopping_index,
)


def small_config(**sections) -> ExperimentConfig:
    data = {
        "problem": {"id": "sgd_conv", "params": {"p": 30}},
        "step": {"kind": "S2", "mu0": 1.0},
        "sampler": {"kind": "uniform", "b": 2},
        "noise": {"model": "uniform", "delta_rel": 0.05, "seed": 11},
        "run": {"iters": 60, "K": 3, "master_seed": 5, "metrics": ["rel_l2", "bregman"]},
    }
    for key, value in sections.items():
        data[key] = {**data.get(key, {}), **value}
    return ExperimentConfig.model_validate(data)


class TestConfig(unittest.TestCase):
    """测试配置加载"""

    def setUp(self):
        self.tmp = tempfile.TemporaryDirectory()
        self.dir = Path(self.tmp.name)

    def tearDown(self):
        self.tmp.cleanup()

    def write(self, data) -> Path:
        path = self.dir / "cfg.json"
        path.write_text(json.dumps(data, indent=2), encoding="utf-8")
        return path

    def test_defaults(self):
        """空配置得到完整缺省值"""
        cfg = load_config(env={})
        self.assertIsNone(cfg.problem)
        self.assertEqual(cfg.run.K, 1)
        self.assertEqual(cfg.step.kind, "S2")
        self.assertEqual(cfg.resolved()["output"]["dir"], "outputs")

    def test_unknown_key_line_anchor(self):
        """未知键被拒绝，错误信息带行号"""
        path = self.write({"problem": {"id": "sgd_conv"}, "run": {"iters": 5, "bogus": 1}})
        text = path.read_text(encoding="utf-8")
        line = next(i + 1 for i, s in enumerate(text.splitlines()) if '"bogus"' in s)
        with self.assertRaises(ConfigError) as ctx:
            load_config(path, env={})
        self.assertEqual(len(ctx.exception.messages), 1)
        self.assertTrue(ctx.exception.messages[0].startswith(f"{path}:{line}: run.bogus"))

    def test_missing_and_malformed(self):
        """文件缺失或 JSON 语法错误"""
        with self.assertRaises(ConfigError):
            load_config(self.dir / "nope.json", env={})
        bad = self.dir / "bad.json"
        bad.write_text('{"run": {"iters": }', encoding="utf-8")
        with self.assertRaises(ConfigError) as ctx:
            load_config(bad, env={})
        self.assertIn("JSON", str(ctx.exception))

    def test_layering(self):
        """--set > 文件 > 环境变量 > 缺省值"""
        env = {"SMD_THREADS": "4", "SMD_MASTER_SEED": "9", "SMD_OUTPUT_DIR": "env_out"}
        cfg = load_config(env=env)
        self.assertEqual((cfg.run.threads, cfg.run.master_seed, cfg.output.dir), (4, 9, "env_out"))

        path = self.write({"run": {"threads": 2}})
        cfg = load_config(path, env=env)
        self.assertEqual((cfg.run.threads, cfg.run.master_seed), (2, 9))

        cfg = load_config(path, ["run.threads=3", "noise.delta_rel=0.1"], env=env)
        self.assertEqual(cfg.run.threads, 3)
        self.assertEqual(cfg.noise.delta_rel, 0.1)

    def test_bad_env(self):
        """环境变量不是整数"""
        with self.assertRaises(ConfigError):
            load_config(env={"SMD_THREADS": "many"})

    def test_parse_override(self):
        """值按 JSON 解析，否则作字符串"""
        self.assertEqual(parse_override("step.kind=S3"), (["step", "kind"], "S3"))
        self.assertEqual(parse_override("run.metrics=[\"l1_sq\"]"), (["run", "metrics"], ["l1_sq"]))
        with self.assertRaises(ConfigError):
            parse_override("noequals")

    def test_schema_checks(self):
        """循环抽样要求 b = 1，未知指标被拒绝"""
        with self.assertRaises(ConfigError):
            load_config(overrides=["sampler.kind=cyclic", "sampler.b=2"], env={})
        with self.assertRaises(ConfigError):
            load_config(overrides=['run.metrics=["linf"]'], env={})

    def test_step_rules(self):
        """步长段转换为规则"""
        cfg = load_config(overrides=["step.kind=S1", "step.t=0.1"], env={})
        self.assertEqual(cfg.step.to_rule().t, 0.1)
        cfg = load_config(overrides=["step.kind=S3", "step.tau=2"], env={})
        rule = cfg.step.to_rule()
        self.assertEqual((rule.kind, rule.mu0, rule.tau), ("S3", 1.0, 2.0))
        with self.assertRaises(ValueError):
            load_config(overrides=["step.kind=S1"], env={}).step.to_rule()


class TestEnsemble(unittest.TestCase):
    """测试集成运行"""

    def test_derive_seed(self):
        """seed_k = master ⊕ k"""
        self.assertEqual([derive_seed(5, k) for k in range(4)], [5, 4, 7, 6])

    def test_single_run_equals_trace(self):
        """K=1 的均值就是单条轨迹（末尾补最终迭代）"""
        result = run_ensemble(small_config(run={"K": 1}), keep_traces=True)
        trace = result.traces[0]
        np.testing.assert_array_equal(result.means["rel_l2"][:-1], trace.column("rel_l2"))
        np.testing.assert_array_equal(result.means["bregman"][:-1], trace.column("bregman"))
        self.assertEqual(result.means["rel_l2"][-1], trace.final["rel_l2"])
        self.assertEqual(int(result.n[-1]), 60)

    def test_duplicated_seeds(self):
        """强制相同种子：均值等于任一轨迹"""
        result = run_ensemble(small_config(), seeds=[7, 7], keep_traces=True)
        np.testing.assert_array_equal(result.means["rel_l2"][:-1], result.traces[1].column("rel_l2"))

    def test_deterministic(self):
        """相同配置与种子得到逐位相同的结果，与线程数无关"""
        a = run_ensemble(small_config(), threads=1)
        b = run_ensemble(small_config(), threads=3)
        self.assertEqual(a.to_csv(), b.to_csv())
        self.assertEqual(a.seeds, [5, 4, 7])

    def test_aggregate_exact_mean(self):
        """均值是 K 个值的算术平均；提前停止的运行沿用最终值"""
        a, b = RunTrace(), RunTrace()
        for n, v in enumerate([1.0, 0.5, 0.25]):
            a.append(n, (0,), 1.0, 0.0, extras={"rel_l2": v})
        a.final = {"n": 3.0, "rel_l2": 0.125}
        b.append(0, (1,), 1.0, 0.0, extras={"rel_l2": 3.0})
        b.final = {"n": 1.0, "rel_l2": 2.0}
        table = aggregate([a, b], ["rel_l2"])
        np.testing.assert_array_equal(table["n"], [0, 1, 2, 3])
        np.testing.assert_array_equal(table["rel_l2"], [2.0, 1.25, 1.125, 1.0625])

    def test_fresh_noise(self):
        """逐次重抽噪声时各运行的数据不同"""
        runner = EnsembleRunner(small_config(noise={"fresh_per_run": True}))
        self.assertFalse(np.array_equal(runner.data_for(0).y_delta, runner.data_for(1).y_delta))
        shared = EnsembleRunner(small_config())
        self.assertIs(shared.data_for(0), shared.data_for(1))

    def test_failure_names_seed(self):
        """单次运行失败时报告种子"""

        class Broken(EnsembleRunner):
            def run_one(self, k, seed):
                if seed == 4:
                    raise FloatingPointError("boom")
                return super().run_one(k, seed)

        with self.assertRaises(EnsembleRunError) as ctx:
            Broken(small_config()).run(threads=2)
        self.assertEqual(ctx.exception.seed, 4)
        self.assertIn("seed=4", str(ctx.exception))

    def test_error_metrics(self):
        """x = 0 时相对误差为 1"""
        instance = build_problem("sparse", {"p": 40})
        metrics = error_metrics(instance, ["rel_l2", "l1_sq", "rel_sq", "bregman"])
        self.assertEqual(set(metrics), {"rel_l2", "l1_sq", "rel_sq"})
        zero = np.zeros(instance.op.m)
        self.assertAlmostEqual(metrics["rel_l2"](zero), 1.0, places=14)
        self.assertAlmostEqual(metrics["rel_sq"](zero), 1.0, places=14)
        l1 = float(np.dot(instance.weights, np.abs(instance.x_true)))
        self.assertAlmostEqual(metrics["l1_sq"](zero), l1 * l1, places=12)

    def test_exact_data_convergence(self):
        """δ_rel=0、二次映射、卷积核 p=200：固定预算内均值相对误差² 低于 1e-2"""
        cfg = small_config(
            problem={"params": {"p": 200}},
            mirror={"kind": "quadratic"},
            sampler={"b": 1},
            noise={"delta_rel": 0.0},
            run={"iters": 20_000, "K": 2, "metrics": ["rel_l2"]},
            output={"trace_every": 1000},
        )
        result = run_ensemble(cfg, threads=2)
        self.assertTrue(np.all(EnsembleRunner(cfg).shared_data.levels == 0.0))
        self.assertEqual(result.stop_reasons, ["budget", "budget"])
        self.assertLess(result.final_means["rel_l2"], 1e-2)
        self.assertLess(result.means["rel_l2"][-1], result.means["rel_l2"][0])

    def test_csv(self):
        """集成 CSV 表头为 n 加各指标"""
        result = run_ensemble(small_config(run={"K": 2, "iters": 10}))
        lines = result.to_csv().splitlines()
        self.assertEqual(lines[0], "n,rel_l2,bregman")
        self.assertEqual(len(lines), 1 + 11)


class TestSemiconvergence(unittest.TestCase):
    """测试半收敛诊断"""

    def test_scan(self):
        """(4,1,2,3)：n*=1，最小值 1，比值 3"""
        report = semiconvergence_report([0, 1, 2, 3], [4.0, 1.0, 2.0, 3.0])
        self.assertEqual((report.n_star, report.min_value, report.ratio), (1, 1.0, 3.0))

    def test_monotone(self):
        """单调下降：比值 1，n* 为最后一次"""
        report = semiconvergence_report([0, 10, 20], [3.0, 2.0, 1.0])
        self.assertEqual((report.n_star, report.ratio), (20, 1.0))

    def test_too_short(self):
        """少于两个记录点"""
        with self.assertRaises(ValueError):
            semiconvergence_report([0], [1.0])


class TestRateStudy(unittest.TestCase):
    """测试收敛率实验"""

    def test_stopping_index(self):
        """δ 减半时 n_δ 加倍，且 (b/p)·n_δ·δ ∈ [c, c + (b/p)δ]"""
        self.assertEqual(stopping_index(1.0, 30, 10, 0.01), 300)
        self.assertEqual(stopping_index(1.0, 30, 10, 0.005), 600)
        for delta in (1e-1, 3e-2, 1e-3, 7e-4):
            n = stopping_index(1.0, 30, 10, delta)
            scaled = (10 / 30) * n * delta
            self.assertGreaterEqual(scaled, 1.0 - 1e-12)
            self.assertLessEqual(scaled, 1.0 + (10 / 30) * delta + 1e-12)

    def test_ill_posed_operator(self):
        """奇异值平方从 1 几何衰减"""
        ill = ill_posed_operator(30, 40, 1e-5, seed=2023)
        s = np.linalg.svd(ill.op.matrix, compute_uv=False)
        np.testing.assert_allclose(s, ill.s, rtol=1e-8)
        self.assertAlmostEqual(s[0] ** 2, 1.0, places=10)
        self.assertAlmostEqual(s[-1] ** 2, 1e-5, places=12)

    def test_source_condition(self):
        """二次映射下 x† = A^T λ†"""
        ill = ill_posed_operator(8, 10, 1e-3, seed=1)
        instance = source_condition_instance(ill, QuadraticMap(10), seed=1)
        np.testing.assert_allclose(instance.x_true, ill.op.matrix.T @ instance.lam, rtol=1e-14)
        np.testing.assert_allclose(instance.y, ill.op.matrix @ instance.x_true, rtol=1e-14)

    def test_unsupported(self):
        """非二次映射没有可构造的源条件实例"""
        from harness import UnsupportedExperimentError

        ill = ill_posed_operator(8, 10, 1e-3, seed=1)
        with self.assertRaises(UnsupportedExperimentError):
            source_condition_instance(ill, ElasticNetMap(10, 1.0))
        instance = source_condition_instance(ill, QuadraticMap(10))
        with self.assertRaises(UnsupportedExperimentError):
            rate_study(instance, NonnegQuadraticMap(10), b=2)

    def test_small_study(self):
        """小规模实验：每个 δ 一行，误差有限且随 δ 减小"""
        ill = ill_posed_operator(10, 12, 1e-3, seed=4)
        mirror = QuadraticMap(12)
        instance = source_condition_instance(ill, mirror, seed=4)
        result = rate_study(instance, mirror, b=2, deltas=[1e-1, 1e-2], K=2, threads=2)
        self.assertEqual([row.n_delta for row in result.rows], [50, 500])
        self.assertTrue(all(math.isfinite(row.mean_err) for row in result.rows))
        self.assertLess(result.rows[1].mean_err, result.rows[0].mean_err)
        self.assertEqual(result.to_dict()["K"], 2)


class TestArtifacts(unittest.TestCase):
    """测试产物落盘"""

    def setUp(self):
        self.tmp = tempfile.TemporaryDirectory()
        self.writer = ArtifactWriter(self.tmp.name)

    def tearDown(self):
        self.tmp.cleanup()

    def test_interrupted_write(self):
        """写入中途异常：不留下最终文件和临时文件"""
        with self.assertRaises(RuntimeError):
            with self.writer.open_atomic("ensemble.csv") as f:
                f.write("n,rel_l2\n")
                raise RuntimeError("interrupted")
        self.assertEqual(os.listdir(self.tmp.name), [])

    def test_replace_keeps_old_on_failure(self):
        """覆盖失败时旧文件保持不变"""
        self.writer.write_text("trace.csv", "old\n")
        with self.assertRaises(KeyboardInterrupt):
            with self.writer.open_atomic("trace.csv") as f:
                f.write("new")
                raise KeyboardInterrupt
        self.assertEqual(self.writer.path("trace.csv").read_text(encoding="utf-8"), "old\n")

    def test_trace_and_meta(self):
        """轨迹 CSV 可读回，meta.json 回显配置"""
        trace = RunTrace()
        trace.append(0, (1, 2), 0.5, 1.25, 2.0, 0.75, 0.5)
        self.writer.write_trace(trace)
        self.writer.write_trace(trace, gnuplot=True)
        back = read_trace_csv(self.writer.path("trace.csv").read_text(encoding="utf-8"))
        self.assertEqual(back.indices, [(1, 2)])
        self.assertTrue(self.writer.path("trace.dat").exists())

        cfg = small_config().resolved()
        self.writer.write_meta("run", cfg, {"exit_code": 0})
        meta = json.loads(self.writer.path("meta.json").read_text(encoding="utf-8"))
        self.assertEqual(meta["config"], cfg)
        self.assertEqual(meta["artifacts"], ["trace.csv", "trace.dat"])
        self.assertEqual(meta["exit_code"], 0)


if __name__ == "__main__":
    unittest.main(verbosity=2)
