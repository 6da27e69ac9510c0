"""Desk-scale optimization tasks with per-client stochastic gradient oracles.

Two families are provided: linear least squares (closed-form smoothness
constant and minimizer) and L2-regularized binary logistic regression over
label-skewed client shards.  The global objective is the unweighted mean
of the per-client losses, and single-sample stochastic gradients are
unbiased estimates of the per-client gradient.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np


class TaskError(ValueError):
    pass


@dataclass(frozen=True)
class PartitionConfig:
    """Synthetic shard generator knobs for the classification task.

    ``skew`` in [0, 1] mixes between identical client label distributions
    (0) and single-label clients (1).
    """

    skew: float = 0.0
    samples_min: int = 8
    samples_max: int = 32
    seed: int = 0

    def __post_init__(self) -> None:
        if not 0.0 <= self.skew <= 1.0:
            raise TaskError(f"skew must be in [0, 1], got {self.skew}")
        if self.samples_min < 1 or self.samples_max < self.samples_min:
            raise TaskError("need 1 <= samples_min <= samples_max")


@dataclass
class QuadraticTask:
    """f(x) = (1/N) sum_n 0.5 ||A_n x - b_n||^2."""

    A: list[np.ndarray]
    b: list[np.ndarray]
    L: float = field(init=False)
    degenerate: bool = field(init=False)

    kind = "quadratic"

    def __post_init__(self) -> None:
        if not self.A or len(self.A) != len(self.b):
            raise TaskError("need one (A_n, b_n) pair per client")
        d = self.A[0].shape[1]
        if d == 0:
            raise TaskError("dimension must be >= 1")
        self.A = [np.asarray(a, dtype=np.float64) for a in self.A]
        self.b = [np.asarray(v, dtype=np.float64) for v in self.b]
        for a, v in zip(self.A, self.b):
            if a.ndim != 2 or a.shape[1] != d or v.shape != (a.shape[0],):
                raise TaskError("inconsistent client data shapes")
            if a.shape[0] == 0:
                raise TaskError("empty shard")
        self.L = max(
            float(np.linalg.eigvalsh(a.T @ a)[-1]) for a in self.A
        )
        gram = sum(a.T @ a for a in self.A)
        self.degenerate = np.linalg.matrix_rank(gram) < d

    @property
    def n_clients(self) -> int:
        return len(self.A)

    @property
    def dim(self) -> int:
        return self.A[0].shape[1]

    def shard_size(self, client: int) -> int:
        return self.A[client].shape[0]

    def client_loss(self, client: int, x: np.ndarray) -> float:
        r = self.A[client] @ np.asarray(x, dtype=np.float64) - self.b[client]
        return 0.5 * float(r @ r)

    def client_gradient(self, client: int, x: np.ndarray) -> np.ndarray:
        a = self.A[client]
        return a.T @ (a @ np.asarray(x, dtype=np.float64) - self.b[client])

    def sample_gradient(self, client: int, x: np.ndarray, j: int) -> np.ndarray:
        # One row, scaled by the shard size so the shard mean is the full
        # client gradient.
        a = self.A[client]
        row = a[j]
        return a.shape[0] * (row @ np.asarray(x, dtype=np.float64) - self.b[client][j]) * row

    def minimizer(self) -> np.ndarray:
        if self.degenerate:
            raise TaskError("minimizer is not unique for a degenerate task")
        gram = sum(a.T @ a for a in self.A)
        rhs = sum(a.T @ v for a, v in zip(self.A, self.b))
        return np.linalg.solve(gram, rhs)

    def optimal_value(self) -> float:
        return loss(self, self.minimizer())


@dataclass
class LogisticTask:
    """L2-regularized binary logistic regression with labels in {-1, +1}."""

    X: list[np.ndarray]
    y: list[np.ndarray]
    reg: float = 0.0
    L: float = field(init=False)
    degenerate: bool = field(init=False)

    kind = "logistic"

    def __post_init__(self) -> None:
        if not self.X or len(self.X) != len(self.y):
            raise TaskError("need one (X_n, y_n) pair per client")
        d = self.X[0].shape[1]
        if d == 0:
            raise TaskError("dimension must be >= 1")
        self.X = [np.asarray(xn, dtype=np.float64) for xn in self.X]
        self.y = [np.asarray(yn, dtype=np.float64) for yn in self.y]
        for xn, yn in zip(self.X, self.y):
            if xn.ndim != 2 or xn.shape[1] != d or yn.shape != (xn.shape[0],):
                raise TaskError("inconsistent client data shapes")
            if xn.shape[0] == 0:
                raise TaskError("empty shard")
            if not np.all(np.abs(yn) == 1.0):
                raise TaskError("labels must be -1 or +1")
        self.L = self.reg + 0.25 * max(
            float(np.linalg.eigvalsh(xn.T @ xn)[-1]) / xn.shape[0] for xn in self.X
        )
        self.degenerate = self.reg == 0.0

    @property
    def n_clients(self) -> int:
        return len(self.X)

    @property
    def dim(self) -> int:
        return self.X[0].shape[1]

    def shard_size(self, client: int) -> int:
        return self.X[client].shape[0]

    def client_loss(self, client: int, w: np.ndarray) -> float:
        w = np.asarray(w, dtype=np.float64)
        margins = self.y[client] * (self.X[client] @ w)
        data = float(np.mean(np.logaddexp(0.0, -margins)))
        return data + 0.5 * self.reg * float(w @ w)

    def client_gradient(self, client: int, w: np.ndarray) -> np.ndarray:
        w = np.asarray(w, dtype=np.float64)
        xn, yn = self.X[client], self.y[client]
        margins = yn * (xn @ w)
        coeff = -yn / (1.0 + np.exp(margins))  # -y * sigmoid(-margin)
        return xn.T @ coeff / xn.shape[0] + self.reg * w

    def sample_gradient(self, client: int, w: np.ndarray, j: int) -> np.ndarray:
        w = np.asarray(w, dtype=np.float64)
        xj, yj = self.X[client][j], self.y[client][j]
        margin = yj * (xj @ w)
        return -yj / (1.0 + np.exp(margin)) * xj + self.reg * w


Task = QuadraticTask | LogisticTask


def make_quadratic_task(
    n_clients: int,
    dim: int,
    heterogeneity: float,
    seed: int,
    rows_per_client: int = 0,
) -> QuadraticTask:
    """Random least-squares task; ``heterogeneity`` spreads both the
    per-client design matrices and their targets (0 = identical clients)."""
    if n_clients < 1 or dim < 1:
        raise TaskError("need n_clients >= 1 and dim >= 1")
    rows = rows_per_client if rows_per_client > 0 else max(4, 2 * dim)
    rng = np.random.default_rng(np.random.SeedSequence([seed, 0x5154]))
    base = rng.standard_normal((rows, dim)) / np.sqrt(rows)
    x_star = rng.standard_normal(dim)
    A, b = [], []
    for _ in range(n_clients):
        a_n = base + heterogeneity * rng.standard_normal((rows, dim)) / np.sqrt(rows)
        target = x_star + heterogeneity * rng.standard_normal(dim)
        b.append(a_n @ target)
        A.append(a_n)
    return QuadraticTask(A=A, b=b)


def make_logistic_task(
    n_clients: int,
    dim: int,
    partition: PartitionConfig,
    seed: int,
    reg: float = 1e-2,
) -> LogisticTask:
    """Two-Gaussian binary classification over label-skewed client shards."""
    if n_clients < 1 or dim < 1:
        raise TaskError("need n_clients >= 1 and dim >= 1")
    rng = np.random.default_rng(np.random.SeedSequence([seed, partition.seed, 0x10615]))
    center = rng.standard_normal(dim)
    center *= 1.5 / np.linalg.norm(center)
    X, y = [], []
    for n in range(n_clients):
        m = int(rng.integers(partition.samples_min, partition.samples_max + 1))
        # skew=0: p(+1)=1/2 everywhere; skew=1: alternating pure-label clients.
        p_pos = 0.5 + partition.skew * (0.5 if n % 2 == 0 else -0.5)
        labels = np.where(rng.random(m) < p_pos, 1.0, -1.0)
        feats = labels[:, None] * center[None, :] + rng.standard_normal((m, dim))
        X.append(feats)
        y.append(labels)
    return LogisticTask(X=X, y=y, reg=reg)


def build_task(cfg) -> Task:
    """Builds a task from a config object with task.* fields (see config)."""
    if cfg.kind == "quadratic":
        return make_quadratic_task(
            n_clients=cfg.n_clients,
            dim=cfg.dim,
            heterogeneity=cfg.heterogeneity,
            seed=cfg.seed,
            rows_per_client=cfg.rows_per_client,
        )
    if cfg.kind == "logistic":
        partition = PartitionConfig(
            skew=cfg.skew,
            samples_min=cfg.samples_min,
            samples_max=cfg.samples_max,
            seed=cfg.seed,
        )
        return make_logistic_task(
            n_clients=cfg.n_clients,
            dim=cfg.dim,
            partition=partition,
            seed=cfg.seed,
            reg=cfg.reg,
        )
    raise TaskError(f"unknown task kind {cfg.kind!r}")


def loss(task: Task, x: np.ndarray) -> float:
    return sum(task.client_loss(n, x) for n in range(task.n_clients)) / task.n_clients


def full_gradient(task: Task, x: np.ndarray) -> np.ndarray:
    g = np.zeros(task.dim, dtype=np.float64)
    for n in range(task.n_clients):
        g += task.client_gradient(n, x)
    return g / task.n_clients


def stochastic_gradient(
    task: Task, client: int, x: np.ndarray, rng: np.random.Generator
) -> np.ndarray:
    """Gradient of one uniformly sampled shard element (unbiased for the
    client gradient); consumes exactly one draw."""
    if not 0 <= client < task.n_clients:
        raise TaskError(f"client {client} out of range")
    j = int(rng.integers(task.shard_size(client)))
    return task.sample_gradient(client, x, j)


@dataclass(frozen=True)
class ConstantEstimates:
    """Sampled task constants; all values are lower bounds on the truth."""

    L: float
    sigma2: float
    G: float
    is_lower_bound: bool = True


def estimate_constants(
    task: Task,
    probe_points: int,
    rng: np.random.Generator,
    probe_radius: float = 1.0,
) -> ConstantEstimates:
    """Probes smoothness, per-sample gradient variance, and the gradient
    norm bound.

    The smoothness probe combines random secants with iterated
    gradient-difference directions (power iteration on the Hessian for
    quadratic losses), which drives the estimate to the top curvature.
    """
    if probe_points < 2:
        raise TaskError("need probe_points >= 2")
    d = task.dim
    l_hat = 0.0
    sigma2_hat = 0.0
    g_hat = 0.0
    for n in range(task.n_clients):
        x = probe_radius * rng.standard_normal(d)
        u = rng.standard_normal(d)
        u /= np.linalg.norm(u)
        g_x = task.client_gradient(n, x)
        for _ in range(probe_points):
            diff = task.client_gradient(n, x + u) - g_x
            ratio = float(np.linalg.norm(diff))
            l_hat = max(l_hat, ratio)
            norm = np.linalg.norm(diff)
            if norm == 0.0:
                u = rng.standard_normal(d)
                u /= np.linalg.norm(u)
            else:
                u = diff / norm
        for _ in range(max(2, probe_points // 10)):
            p = probe_radius * rng.standard_normal(d)
            g_full = task.client_gradient(n, p)
            g_hat = max(g_hat, float(g_full @ g_full))
            m = task.shard_size(n)
            spread = 0.0
            for j in range(m):
                delta = task.sample_gradient(n, p, j) - g_full
                spread += float(delta @ delta)
            sigma2_hat = max(sigma2_hat, spread / m)
    return ConstantEstimates(L=l_hat, sigma2=sigma2_hat, G=g_hat)


def finite_difference_check(task: Task, x: np.ndarray, h: float) -> float:
    """Max deviation between the analytic gradient and central differences,
    relative to the gradient scale (floored at 1)."""
    if h <= 0:
        raise TaskError("h must be > 0")
    x = np.asarray(x, dtype=np.float64)
    g = full_gradient(task, x)
    fd = np.empty_like(g)
    for i in range(x.size):
        e = np.zeros_like(x)
        e[i] = h
        fd[i] = (loss(task, x + e) - loss(task, x - e)) / (2.0 * h)
    scale = max(1.0, float(np.max(np.abs(g))))
    return float(np.max(np.abs(fd - g))) / scale
