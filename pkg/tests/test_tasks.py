import numpy as np
import pytest

from qafel import tasks as t
from qafel.config import TaskConfig


def simple_quadratic():
    # f(x) = x^2 / 2 with a single one-sample client.
    return t.QuadraticTask(A=[np.array([[1.0]])], b=[np.array([0.0])])


def two_client_quadratic():
    # F_1 = (x-1)^2/2, F_2 = (x+1)^2/2; minimizer 0, f(0) = 1/2.
    return t.QuadraticTask(
        A=[np.array([[1.0]]), np.array([[1.0]])],
        b=[np.array([1.0]), np.array([-1.0])],
    )


class TestQuadratic:
    def test_single_client_basics(self):
        task = simple_quadratic()
        assert task.L == pytest.approx(1.0)
        assert t.loss(task, np.array([2.0])) == pytest.approx(2.0)
        assert t.full_gradient(task, np.array([2.0])) == pytest.approx([2.0])
        assert task.minimizer() == pytest.approx([0.0])

    def test_two_client_symmetry(self):
        task = two_client_quadratic()
        assert task.minimizer() == pytest.approx([0.0])
        assert task.optimal_value() == pytest.approx(0.5)
        assert t.full_gradient(task, np.array([0.0])) == pytest.approx([0.0])

    def test_identity_design_gradient(self):
        task = t.QuadraticTask(A=[np.eye(2)], b=[np.zeros(2)])
        assert t.full_gradient(task, np.array([2.0, -1.0])) == pytest.approx([2.0, -1.0])

    def test_full_gradient_is_client_average(self):
        task = t.make_quadratic_task(n_clients=5, dim=6, heterogeneity=0.7, seed=3)
        x = np.random.default_rng(0).standard_normal(6)
        manual = sum(task.client_gradient(n, x) for n in range(5)) / 5
        assert np.allclose(t.full_gradient(task, x), manual, rtol=1e-12, atol=1e-12)

    def test_homogeneous_clients_identical(self):
        task = t.make_quadratic_task(n_clients=4, dim=5, heterogeneity=0.0, seed=1)
        x = np.random.default_rng(1).standard_normal(5)
        g0 = task.client_gradient(0, x)
        for n in range(1, 4):
            assert np.allclose(task.client_gradient(n, x), g0, atol=1e-12)

    def test_smoothness_constant_is_tight(self):
        task = t.make_quadratic_task(n_clients=3, dim=4, heterogeneity=0.5, seed=7)
        rng = np.random.default_rng(2)
        for _ in range(1000):
            n = int(rng.integers(3))
            x, xp = rng.standard_normal(4), rng.standard_normal(4)
            lhs = np.linalg.norm(task.client_gradient(n, x) - task.client_gradient(n, xp))
            assert lhs <= (task.L + 1e-6) * np.linalg.norm(x - xp)

    def test_degenerate_flagged(self):
        task = t.QuadraticTask(A=[np.array([[1.0, 0.0]])], b=[np.array([0.0])])
        assert task.degenerate
        with pytest.raises(t.TaskError):
            task.minimizer()

    def test_shape_validation(self):
        with pytest.raises(t.TaskError):
            t.QuadraticTask(A=[np.ones((2, 2))], b=[np.ones(3)])
        with pytest.raises(t.TaskError):
            t.QuadraticTask(A=[], b=[])


class TestStochasticGradients:
    @pytest.mark.parametrize("kind", ["quadratic", "logistic"])
    def test_shard_mean_equals_client_gradient(self, kind):
        if kind == "quadratic":
            task = t.make_quadratic_task(n_clients=3, dim=4, heterogeneity=0.5, seed=0)
        else:
            task = t.make_logistic_task(
                n_clients=3, dim=4, partition=t.PartitionConfig(skew=0.5), seed=0
            )
        x = np.random.default_rng(5).standard_normal(4)
        for n in range(task.n_clients):
            m = task.shard_size(n)
            mean = sum(task.sample_gradient(n, x, j) for j in range(m)) / m
            assert np.allclose(mean, task.client_gradient(n, x), rtol=1e-12, atol=1e-12)

    def test_single_sample_shard_is_exact(self):
        task = simple_quadratic()
        x = np.array([3.0])
        g = t.stochastic_gradient(task, 0, x, np.random.default_rng(0))
        assert np.allclose(g, task.client_gradient(0, x))

    def test_consumes_exactly_one_draw(self):
        task = t.make_quadratic_task(n_clients=2, dim=3, heterogeneity=0.3, seed=0)
        rng_a = np.random.default_rng(42)
        t.stochastic_gradient(task, 1, np.zeros(3), rng_a)
        rng_b = np.random.default_rng(42)
        rng_b.integers(task.shard_size(1))
        assert rng_a.integers(1 << 30) == rng_b.integers(1 << 30)

    def test_invalid_client(self):
        task = simple_quadratic()
        with pytest.raises(t.TaskError):
            t.stochastic_gradient(task, 5, np.zeros(1), np.random.default_rng(0))


class TestLogistic:
    def test_labels_are_plus_minus_one(self):
        task = t.make_logistic_task(
            n_clients=6, dim=4, partition=t.PartitionConfig(skew=0.3), seed=2
        )
        for yn in task.y:
            assert np.all(np.abs(yn) == 1.0)

    def test_full_skew_gives_pure_label_clients(self):
        task = t.make_logistic_task(
            n_clients=4, dim=3, partition=t.PartitionConfig(skew=1.0), seed=0
        )
        for n, yn in enumerate(task.y):
            expected = 1.0 if n % 2 == 0 else -1.0
            assert np.all(yn == expected)

    def test_regularized_descent_converges(self):
        task = t.make_logistic_task(
            n_clients=3, dim=4, partition=t.PartitionConfig(), seed=1, reg=0.05
        )
        x = np.zeros(4)
        for _ in range(4000):
            x = x - (1.0 / task.L) * t.full_gradient(task, x)
        assert np.linalg.norm(t.full_gradient(task, x)) < 1e-6

    def test_single_sample_gradient_formula(self):
        # Label +1, zero features: data gradient is 0, only regularization acts.
        task = t.LogisticTask(X=[np.zeros((1, 3))], y=[np.array([1.0])], reg=0.0)
        assert np.allclose(task.sample_gradient(0, np.zeros(3), 0), np.zeros(3))

    def test_partition_validation(self):
        with pytest.raises(t.TaskError):
            t.PartitionConfig(skew=1.5)
        with pytest.raises(t.TaskError):
            t.PartitionConfig(samples_min=5, samples_max=2)

    def test_bad_labels_rejected(self):
        with pytest.raises(t.TaskError):
            t.LogisticTask(X=[np.ones((1, 2))], y=[np.array([2.0])], reg=0.0)


class TestConstants:
    def test_estimated_L_close_to_exact(self):
        task = t.make_quadratic_task(n_clients=3, dim=5, heterogeneity=0.5, seed=4)
        est = t.estimate_constants(task, probe_points=100, rng=np.random.default_rng(0))
        assert est.L <= task.L + 1e-9
        assert est.L >= 0.99 * task.L
        assert est.is_lower_bound

    def test_estimates_are_nonnegative(self):
        task = t.make_quadratic_task(n_clients=2, dim=4, heterogeneity=0.5, seed=9)
        est = t.estimate_constants(task, probe_points=20, rng=np.random.default_rng(3))
        assert est.G > 0.0
        assert est.sigma2 >= 0.0

    def test_homogeneous_variance_zero_with_full_shards(self):
        # One-row shards make the sample gradient exact, so sigma2 = 0.
        task = t.QuadraticTask(A=[np.array([[1.0]])], b=[np.array([0.5])])
        est = t.estimate_constants(task, probe_points=10, rng=np.random.default_rng(0))
        assert est.sigma2 == 0.0


class TestFiniteDifferences:
    def test_quadratic(self):
        task = t.make_quadratic_task(n_clients=3, dim=4, heterogeneity=0.5, seed=0)
        x = np.random.default_rng(0).standard_normal(4)
        assert t.finite_difference_check(task, x, h=1e-5) < 1e-6

    def test_logistic(self):
        task = t.make_logistic_task(
            n_clients=3, dim=4, partition=t.PartitionConfig(skew=0.5), seed=0
        )
        x = np.random.default_rng(1).standard_normal(4)
        assert t.finite_difference_check(task, x, h=1e-5) < 1e-4

    def test_invalid_step(self):
        with pytest.raises(t.TaskError):
            t.finite_difference_check(simple_quadratic(), np.zeros(1), h=0.0)


class TestBuildTask:
    def test_dispatch(self):
        quad = t.build_task(TaskConfig(kind="quadratic", n_clients=3, dim=4))
        assert quad.kind == "quadratic" and quad.n_clients == 3 and quad.dim == 4
        logi = t.build_task(TaskConfig(kind="logistic", n_clients=2, dim=3))
        assert logi.kind == "logistic" and logi.n_clients == 2 and logi.dim == 3

    def test_reproducible_from_seed(self):
        cfg = TaskConfig(kind="logistic", n_clients=3, dim=4, seed=11)
        a, b = t.build_task(cfg), t.build_task(cfg)
        for xa, xb in zip(a.X, b.X):
            assert np.array_equal(xa, xb)

    def test_unknown_kind(self):
        with pytest.raises(t.TaskError):
            t.build_task(TaskConfig(kind="svm"))
