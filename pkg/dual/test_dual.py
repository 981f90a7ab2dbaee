"""
Dual单元测试
"""
import unittest

import numpy as np

from dual import RandomizedDualBlockGradient, check_equivalence, dual_objective
from harness import dual_rate_study, ill_posed_operator, source_condition_instance
from mirror import ElasticNetMap, EntropySimplexMap, QuadraticMap
from operators import BatchIndexSet, RowBlockOperator
from smd import Sampler
from stepsize import StepRule, max_constant_step


def random_system(p=20, m=30, seed=0):
    rng = np.random.default_rng(seed)
    A = rng.standard_normal((p, m))
    x_true = rng.standard_normal(m)
    return RowBlockOperator(A), A @ x_true


class TestDualStep(unittest.TestCase):
    """测试对偶单步"""

    def test_hand_example(self):
        """A=(1,0), y=(2), t=0.5: λ_1 = 1, x_1 = (1,0)"""
        op = RowBlockOperator(np.array([[1.0, 0.0]]))
        engine = RandomizedDualBlockGradient(op, QuadraticMap(2), StepRule.constant(0.5), Sampler(), np.array([2.0]))
        state = engine.step(engine.initial_state())
        np.testing.assert_array_equal(state.lam, [1.0])
        np.testing.assert_array_equal(engine.primal(state.lam), [1.0, 0.0])

    def test_zero_residual(self):
        """批次残差为零时 λ 不变"""
        op, _ = random_system()
        engine = RandomizedDualBlockGradient(op, QuadraticMap(op.m), StepRule.constant(0.005), Sampler(seed=1), np.zeros(op.p))
        state = engine.initial_state()
        after = engine.step(state)
        np.testing.assert_array_equal(after.lam, state.lam)

    def test_only_drawn_blocks_change(self):
        """批次外的分量逐位不变"""
        op, y = random_system()
        engine = RandomizedDualBlockGradient(op, QuadraticMap(op.m), StepRule.constant(0.005), Sampler(b=3, seed=2), y)
        state = engine.initial_state()
        for _ in range(20):
            before = state.lam.copy()
            batch = engine.sampler.sample_batch(state.rng, op.p, state.n)
            state = engine.step(state, batch)
            outside = np.setdiff1d(np.arange(op.p), batch.indices)
            np.testing.assert_array_equal(state.lam[outside], before[outside])

    def test_support(self):
        """从未抽中的分块保持为零"""
        op, y = random_system()
        engine = RandomizedDualBlockGradient(op, QuadraticMap(op.m), StepRule.constant(0.005), Sampler("cyclic"), y)
        state = engine.initial_state()
        for _ in range(5):
            state = engine.step(state)
        self.assertTrue(np.all(state.lam[:5] != 0))
        np.testing.assert_array_equal(state.lam[5:], 0.0)

    def test_rejects_non_s1(self):
        """S2 规则或 b > 1 的非常数步长被拒绝"""
        op, y = random_system()
        with self.assertRaises(ValueError):
            RandomizedDualBlockGradient(op, QuadraticMap(op.m), StepRule.s2(1.0), Sampler(), y)
        with self.assertRaises(ValueError):
            RandomizedDualBlockGradient(op, QuadraticMap(op.m), StepRule.normalized(1.0), Sampler(b=2), y)
        table = StepRule.from_table({(0, 1): 0.001, (0, 2): 0.002})
        with self.assertRaises(ValueError):
            RandomizedDualBlockGradient(op, QuadraticMap(op.m), table, Sampler(b=2), y)

    def test_diagnostics(self):
        """c_1 ∈ (0, 1]，t_max 为常数步长"""
        op, y = random_system()
        engine = RandomizedDualBlockGradient(op, QuadraticMap(op.m), StepRule.constant(0.005), Sampler(b=3), y)
        self.assertGreater(engine.diagnostics["c1"], 0.0)
        self.assertLessEqual(engine.diagnostics["c1"], 1.0)
        self.assertEqual(engine.diagnostics["t_max"], 0.005)


class TestDualObjective(unittest.TestCase):
    """测试对偶目标"""

    def test_zero_lambda(self):
        """λ = 0 时 d = −R(mirror_solve(0))"""
        op, y = random_system(m=6, p=4)
        for mirror in (QuadraticMap(6), ElasticNetMap(6, 0.5), EntropySimplexMap(6)):
            expected = -mirror.evaluate(mirror.mirror_solve(np.zeros(6)))
            self.assertAlmostEqual(dual_objective(mirror, op, np.zeros(4), y), expected, places=14)
        self.assertEqual(dual_objective(QuadraticMap(6), op, np.zeros(4), y), 0.0)

    def test_quadratic_closed_form(self):
        """二次映射下 d = ½‖A^Tλ‖² − ⟨λ, y⟩"""
        op, y = random_system(seed=3)
        A = op.to_dense()
        lam = np.random.default_rng(4).standard_normal(op.p)
        expected = 0.5 * np.dot(A.T @ lam, A.T @ lam) - np.dot(lam, y)
        self.assertAlmostEqual(dual_objective(QuadraticMap(op.m), op, lam, y), expected, places=9)

    def test_descent_in_mean(self):
        """精确数据下对偶目标的集成均值沿迭代下降"""
        op, y = random_system(p=10, m=15, seed=5)
        t = 0.5 * max_constant_step(0.5, op, 2)
        curves = []
        for seed in range(20):
            engine = RandomizedDualBlockGradient(op, QuadraticMap(op.m), StepRule.constant(t), Sampler(b=2, seed=seed), y)
            curves.append(engine.run(150, record_every=25).column("dual_obj"))
        mean = np.mean(curves, axis=0)
        self.assertTrue(np.all(np.diff(mean) <= 1e-12))
        self.assertLess(mean[-1], mean[0])


class TestDualRate(unittest.TestCase):
    """测试精确数据下对偶目标差的衰减率"""

    @classmethod
    def setUpClass(cls):
        cls.mirror = QuadraticMap(40)
        cls.instance = source_condition_instance(ill_posed_operator(30, 40, 1e-5, 2023), cls.mirror, 2023)

    def test_gap_closed_form(self):
        """二次映射下 d_y(λ) − d_y(λ†) = ½‖A^T(λ − λ†)‖² ≥ 0"""
        inst = self.instance
        A = inst.op.to_dense()
        lam = np.random.default_rng(8).standard_normal(inst.op.p)
        gap = dual_objective(self.mirror, inst.op, lam, inst.y) - dual_objective(self.mirror, inst.op, inst.lam, inst.y)
        e = A.T @ (lam - inst.lam)
        self.assertAlmostEqual(gap, 0.5 * np.dot(e, e), places=9)
        self.assertGreater(gap, 0.0)

    def test_tail_slope(self):
        """b=10、20000 次迭代：E[d_y(λ_n) − d_y(λ†)] 的尾部对数斜率在 [−1.3, −0.7]"""
        result = dual_rate_study(self.instance, self.mirror, b=10, n_iters=20_000, K=8, master_seed=7, threads=4)
        self.assertEqual(result.tail_from, 200)
        self.assertEqual(result.iterations[-1], 20_000)
        self.assertTrue(np.all(np.asarray(result.mean_gap) > 0.0))
        self.assertLess(result.mean_gap[-1], result.mean_gap[0])
        self.assertTrue(result.passed(), f"slope={result.slope:.4f}")
        self.assertEqual(len(result.to_dict()["rows"]), len(result.iterations))

    def test_tail_too_short(self):
        """尾部记录点不足两个时报错"""
        with self.assertRaises(ValueError):
            dual_rate_study(self.instance, self.mirror, b=10, n_iters=50, K=1, tail_from=50)


class TestEquivalence(unittest.TestCase):
    """测试原始-对偶逐次等价"""

    def _report(self, mirror, b, seed=7, mismatch=None):
        op, y = random_system(seed=seed)
        t = 0.5 * max_constant_step(mirror.sigma, op, b)
        dual_rule = StepRule.constant(t * mismatch) if mismatch else None
        return check_equivalence(op, mirror, StepRule.constant(t), Sampler(b=b, seed=seed), y, 200, dual_rule)

    def test_single_iteration(self):
        """单步偏差在舍入量级"""
        op, y = random_system()
        t = 0.5 * max_constant_step(0.5, op, 1)
        report = check_equivalence(op, QuadraticMap(op.m), StepRule.constant(t), Sampler(seed=1), y, 1)
        self.assertLessEqual(report.max_deviation, 1e-14 * max(report.scale, 1.0))

    def test_quadratic(self):
        """二次映射 b ∈ {1, 3}"""
        for b in (1, 3):
            report = self._report(QuadraticMap(30), b)
            self.assertTrue(report.passed, report.to_line())
            self.assertEqual(report.iterations, 200)

    def test_elastic_net(self):
        """弹性网映射 b ∈ {1, 3}"""
        for b in (1, 3):
            report = self._report(ElasticNetMap(30, 0.5), b)
            self.assertTrue(report.passed, report.to_line())

    def test_mismatched_steps_detected(self):
        """步长不一致时检查失败"""
        report = self._report(QuadraticMap(30), 3, mismatch=1.5)
        self.assertFalse(report.passed)
        self.assertIn("FAIL", report.to_line())

    def test_given_batch_path(self):
        """显式批次不消耗随机数"""
        op, y = random_system()
        engine = RandomizedDualBlockGradient(op, QuadraticMap(op.m), StepRule.constant(0.005), Sampler(b=3, seed=4), y)
        state = engine.initial_state()
        first = engine.step(state, BatchIndexSet((0, 1, 2)))
        np.testing.assert_array_equal(first.lam[3:], 0.0)


if __name__ == "__main__":
    unittest.main(verbosity=2)
