"""
SMD单元测试
"""
import itertools
import unittest
from collections import Counter

import numpy as np

from mirror import ElasticNetMap, EntropySimplexMap, QuadraticMap
from noise import NoiseSpec, corrupt
from operators import BatchIndexSet, RowBlockOperator
from smd import (
    BASE_COLUMNS,
    NumericalError,
    Sampler,
    StochasticMirrorDescent,
    StopSpec,
    partial_fisher_yates,
    read_trace_csv,
)
from stepsize import StepRule, batch_noise_level


def random_problem(rows=12, cols=5, seed=0):
    rng = np.random.default_rng(seed)
    A = rng.standard_normal((rows, cols))
    x_true = rng.standard_normal(cols)
    return RowBlockOperator(A), x_true, A @ x_true


def bregman_path(trace):
    return np.append(trace.column("bregman"), trace.final["bregman"])


class TestSampler(unittest.TestCase):
    """测试批次抽样"""

    def test_cyclic(self):
        """循环顺序 p=3: 0,1,2,0"""
        sampler = Sampler("cyclic")
        rng = sampler.make_rng()
        got = [sampler.sample_batch(rng, 3, n).indices for n in range(4)]
        self.assertEqual(got, [(0,), (1,), (2,), (0,)])

    def test_full_batch(self):
        """b = p 时总是全部分块"""
        sampler = Sampler("uniform", b=4, seed=3)
        rng = sampler.make_rng()
        for n in range(10):
            self.assertEqual(sampler.sample_batch(rng, 4, n).indices, (0, 1, 2, 3))

    def test_uniform_frequencies(self):
        """p=4, b=2 抽 60000 次，6 个子集频率均在 1/6 ± 0.01 内"""
        sampler = Sampler("uniform", b=2, seed=11)
        rng = sampler.make_rng()
        counts = Counter(sampler.sample_batch(rng, 4, n).indices for n in range(60000))
        self.assertEqual(set(counts), set(itertools.combinations(range(4), 2)))
        for subset, count in counts.items():
            self.assertAlmostEqual(count / 60000, 1 / 6, delta=0.01, msg=str(subset))

    def test_partial_fisher_yates_distinct(self):
        """抽出的下标互不相同且在范围内"""
        rng = np.random.default_rng(5)
        for _ in range(200):
            chosen = partial_fisher_yates(rng, 9, 4)
            self.assertEqual(len(set(chosen)), 4)
            self.assertTrue(all(0 <= i < 9 for i in chosen))

    def test_invalid(self):
        """b > p 或循环 b > 1 被拒绝"""
        with self.assertRaises(ValueError):
            Sampler("uniform", b=5).check(4)
        with self.assertRaises(ValueError):
            Sampler("cyclic", b=2)
        with self.assertRaises(ValueError):
            Sampler("uniform", b=0)


class TestStep(unittest.TestCase):
    """测试单步迭代"""

    def test_hand_example(self):
        """A=(1,0), y=(2), t=0.5: ξ_1 = x_1 = (1,0)"""
        op = RowBlockOperator(np.array([[1.0, 0.0]]))
        engine = StochasticMirrorDescent(op, QuadraticMap(2), StepRule.constant(0.5), Sampler(), np.array([2.0]))
        state = engine.step(engine.initial_state())
        np.testing.assert_array_equal(state.xi, [1.0, 0.0])
        np.testing.assert_array_equal(state.x, [1.0, 0.0])
        self.assertEqual(state.n, 1)

    def test_zero_residual_fixed_point(self):
        """批次残差为零时 ξ 与 x 不变"""
        op, _, _ = random_problem()
        y = np.zeros(op.data_dim)
        for rule in (StepRule.constant(0.01), StepRule.s2(1.0)):
            engine = StochasticMirrorDescent(op, QuadraticMap(op.m), rule, Sampler(b=3, seed=1), y)
            state = engine.initial_state()
            after = engine.step(state)
            np.testing.assert_array_equal(after.xi, state.xi)
            np.testing.assert_array_equal(after.x, state.x)

    def test_full_batch_matches_landweber(self):
        """b = p 且常数步长时与全批量迭代一致"""
        op, _, y = random_problem(seed=2)
        A = op.to_dense()
        t = 1.0 / np.linalg.norm(A, 2) ** 2
        engine = StochasticMirrorDescent(op, QuadraticMap(op.m), StepRule.constant(t), Sampler(b=op.p), y)
        state = engine.initial_state()
        xi = np.zeros(op.m)
        for _ in range(30):
            state = engine.step(state)
            xi = xi - t * A.T @ (A @ xi - y)
            np.testing.assert_allclose(state.xi, xi, rtol=1e-12, atol=1e-14)

    def test_state_invariant(self):
        """每一步后 x = mirror_solve(ξ) 精确成立"""
        rng = np.random.default_rng(4)
        A = np.abs(rng.standard_normal((8, 6)))
        op = RowBlockOperator(A)
        x_true = np.ones(6)
        for mirror in (EntropySimplexMap(6), ElasticNetMap(6, 0.3)):
            engine = StochasticMirrorDescent(op, mirror, StepRule.s2(1.0), Sampler(b=2, seed=8), A @ x_true)
            state = engine.initial_state()
            for _ in range(50):
                state = engine.step(state)
                np.testing.assert_array_equal(state.x, mirror.mirror_solve(state.xi))

    def test_given_batch(self):
        """显式给定批次"""
        op, _, y = random_problem()
        engine = StochasticMirrorDescent(op, QuadraticMap(op.m), StepRule.s2(1.0), Sampler(b=2), y)
        state = engine.step(engine.initial_state(), batch=BatchIndexSet((3, 7)))
        self.assertEqual(state.n, 1)
        self.assertTrue(np.any(state.xi != 0))

    def test_non_finite(self):
        """对偶变量溢出时抛出 NumericalError"""
        op = RowBlockOperator(np.array([[1.0], [1.0]]), block_dims=[2])
        y = np.array([1.5e308, 1.5e308])
        engine = StochasticMirrorDescent(op, QuadraticMap(1), StepRule.constant(0.5), Sampler(), y)
        with np.errstate(over="ignore", invalid="ignore"):
            with self.assertRaises(NumericalError):
                engine.step(engine.initial_state())

    def test_dimension_mismatch(self):
        """维度不一致"""
        op, _, y = random_problem()
        with self.assertRaises(ValueError):
            StochasticMirrorDescent(op, QuadraticMap(op.m + 1), StepRule.s2(1.0), Sampler(), y)
        with self.assertRaises(ValueError):
            StochasticMirrorDescent(op, QuadraticMap(op.m), StepRule.s2(1.0), Sampler(), y[:-1])
        with self.assertRaises(ValueError):
            StochasticMirrorDescent(op, QuadraticMap(op.m), StepRule.s2(1.0), Sampler(b=op.p + 1), y)


class TestRun(unittest.TestCase):
    """测试运行与下降性质"""

    def test_budget_rejected(self):
        """预算为 0 被拒绝"""
        op, _, y = random_problem()
        engine = StochasticMirrorDescent(op, QuadraticMap(op.m), StepRule.s2(1.0), Sampler(), y)
        with self.assertRaises(ValueError):
            engine.run(0)

    def test_exact_data_monotone(self):
        """精确数据下 S1/S2/S3 的 Δ_n 沿路径不增"""
        op, x_true, y = random_problem(seed=6)
        t = 0.9 * 2.0 / float(np.max(np.linalg.norm(op.to_dense(), axis=1)) ** 2)
        for rule in (StepRule.constant(t), StepRule.s2(1.0), StepRule.s3(1.0)):
            engine = StochasticMirrorDescent(
                op, QuadraticMap(op.m), rule, Sampler(b=1, seed=2), y, x_true=x_true
            )
            path = bregman_path(engine.run(400))
            self.assertTrue(np.all(np.diff(path) <= 1e-12), rule.kind)
            self.assertLess(path[-1], path[0])

    def test_s3_noisy_monotone(self):
        """τ=2, μ0=σ 时带噪数据上 Δ_n 不增"""
        op, x_true, y = random_problem(seed=7)
        data = corrupt(y, NoiseSpec("uniform", 0.05, seed=3))
        mirror = QuadraticMap(op.m)
        engine = StochasticMirrorDescent(
            op, mirror, StepRule.s3(mirror.sigma, tau=2.0), Sampler(b=2, seed=5),
            data.y_delta, data.levels, x_true=x_true,
        )
        path = bregman_path(engine.run(600))
        self.assertTrue(np.all(np.diff(path) <= 1e-12))

    def test_noisy_descent_bound(self):
        """Δ_{n+1} − Δ_n ≤ μ̃1 δ_I²/(4c_0)"""
        op, x_true, y = random_problem(seed=9)
        data = corrupt(y, NoiseSpec("uniform", 0.1, seed=4))
        engine = StochasticMirrorDescent(
            op, QuadraticMap(op.m), StepRule.s2(1.0, mu1=1.0), Sampler(b=3, seed=6),
            data.y_delta, data.levels, x_true=x_true,
        )
        trace = engine.run(500)
        path = bregman_path(trace)
        for k, indices in enumerate(trace.indices):
            delta_sq = batch_noise_level(data.levels, BatchIndexSet(indices)) ** 2
            bound = engine.rule.mu1 * delta_sq / (4 * engine.c0) + 1e-9
            self.assertLessEqual(path[k + 1] - path[k], bound)

    def test_reproducible(self):
        """相同种子产生逐位相同的轨迹"""
        op, x_true, y = random_problem(seed=10)
        texts = []
        for _ in range(2):
            engine = StochasticMirrorDescent(
                op, QuadraticMap(op.m), StepRule.s2(1.0), Sampler(b=3, seed=42), y, x_true=x_true
            )
            texts.append(engine.run(100).to_csv())
        self.assertEqual(texts[0], texts[1])

    def test_fixed_stop(self):
        """fixed(n) 停止规则"""
        op, _, y = random_problem()
        engine = StochasticMirrorDescent(op, QuadraticMap(op.m), StepRule.s2(1.0), Sampler(), y)
        trace = engine.run(100, StopSpec("fixed", n=17))
        self.assertEqual(len(trace), 17)
        self.assertEqual(trace.final["n"], 17.0)

    def test_a_priori_cap(self):
        """a_priori: n = ceil(c·scale/δ²)，δ=0 时取预算"""
        stop = StopSpec("a_priori", c=1.0, scale=2.0)
        self.assertEqual(stop.iteration_cap(10 ** 6, 0.1), 200)
        self.assertEqual(stop.iteration_cap(50, 0.1), 50)
        self.assertEqual(stop.iteration_cap(50, 0.0), 50)
        with self.assertRaises(ValueError):
            StopSpec("early")

    def test_discrepancy_stop(self):
        """方阵系统上 S3 迭代满足全部块的偏差原理后停止"""
        rng = np.random.default_rng(12)
        A = np.eye(6) + 0.1 * rng.standard_normal((6, 6))
        x_true = rng.uniform(1.0, 2.0, 6)
        op = RowBlockOperator(A)
        data = corrupt(A @ x_true, NoiseSpec("uniform", 0.02, seed=1))
        engine = StochasticMirrorDescent(
            op, QuadraticMap(6), StepRule.s3(1.0, tau=1.01), Sampler("cyclic"),
            data.y_delta, data.levels, x_true=x_true,
        )
        trace = engine.run(5000, StopSpec("discrepancy_all"))
        self.assertEqual(trace.stop_reason, "discrepancy_all")
        self.assertLess(trace.final["n"], 5000)
        self.assertEqual(int(trace.final["n"]) % 6, 0)
        self.assertTrue(engine.discrepancy_met(trace.final_x, 1.01))


class TestTrace(unittest.TestCase):
    """测试轨迹输出"""

    def setUp(self):
        op, x_true, y = random_problem(seed=13)
        engine = StochasticMirrorDescent(
            op, QuadraticMap(op.m), StepRule.s2(1.0), Sampler(b=2, seed=1), y,
            x_true=x_true, full_residual_every=3,
            metrics={"l1": lambda x: float(np.abs(x).sum())},
        )
        self.trace = engine.run(10)

    def test_csv_format(self):
        """表头、分号下标、跳过的全残差留空"""
        lines = self.trace.to_csv().strip().split("\n")
        self.assertEqual(lines[0].split(","), list(BASE_COLUMNS) + ["l1"])
        self.assertEqual(len(lines), 11)
        first = lines[1].split(",")
        self.assertEqual(first[0], "0")
        self.assertEqual(len(first[1].split(";")), 2)
        self.assertNotEqual(first[4], "")
        self.assertEqual(lines[2].split(",")[4], "")

    def test_csv_roundtrip(self):
        """CSV 读回后数值逐位一致"""
        back = read_trace_csv(self.trace.to_csv())
        self.assertEqual(back.indices, self.trace.indices)
        np.testing.assert_array_equal(back.column("t"), self.trace.column("t"))
        np.testing.assert_array_equal(back.column("l1"), self.trace.column("l1"))

    def test_strictly_increasing(self):
        """记录必须按 n 严格递增"""
        with self.assertRaises(ValueError):
            self.trace.append(3, (0,), 0.1, 0.0)


if __name__ == "__main__":
    unittest.main(verbosity=2)
