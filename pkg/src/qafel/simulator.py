"""Deterministic discrete-event engine for buffered asynchronous training.

Clients arrive at a constant rate, train for a half-normal duration, and
upload compressed deltas; the server buffers K of them per global step.
At most ``concurrency_cap`` jobs train in parallel; excess arrivals wait
in a FIFO queue.  Every run is a pure function of (config, master seed).
"""

from __future__ import annotations

import heapq
from collections import deque
from dataclasses import dataclass, field

import numpy as np

from . import seeding, tasks as tasks_mod
from .protocol import (
    ClientState,
    ClientUpdate,
    HyperParams,
    ProtocolError,
    ServerState,
    SyncMode,
    apply_broadcast,
    apply_sync,
    local_sgd,
    nonbroadcast_sync,
    server_flush,
    server_receive,
)
from .quantizers import quantize


class SimulationError(RuntimeError):
    pass


@dataclass(frozen=True)
class DelayModel:
    """Half-normal training durations, constant-rate arrivals, and a cap
    on the number of clients training in parallel."""

    sigma: float = 1.0
    arrival_rate: float = 100.0
    concurrency_cap: int = 100

    def __post_init__(self) -> None:
        if self.sigma <= 0 or self.arrival_rate <= 0:
            raise SimulationError("sigma and arrival_rate must be > 0")
        if self.concurrency_cap < 1:
            raise SimulationError("concurrency_cap must be >= 1")

    @property
    def mean_duration(self) -> float:
        return self.sigma * float(np.sqrt(2.0 / np.pi))


def sample_duration(model: DelayModel, rng: np.random.Generator) -> float:
    return abs(float(rng.standard_normal())) * model.sigma


# Event kinds, ordered only for tie-breaking readability.
_ARRIVAL = 0
_COMPLETE = 1


@dataclass
class _Job:
    job_id: int
    client_id: int
    y0: np.ndarray | None = None
    start_version: int = 0
    uploads_at_start: int = 0
    start_time: float = 0.0


@dataclass(frozen=True)
class UpdateRecord:
    """One delivered client update, with the counters needed to replay
    staleness under a different buffer size."""

    job_id: int
    client_id: int
    start_version: int
    tau: int
    bit_size: int
    uploads_at_start: int
    upload_index: int  # uploads delivered before this one


@dataclass(frozen=True)
class MetricsRow:
    t: int
    sim_time: float
    uploads: int
    bytes_up: int
    bytes_down: int
    grad_norm_sq: float
    loss: float
    mean_staleness: float
    max_staleness: int
    running_R: float


@dataclass
class MetricsLog:
    rows: list[MetricsRow] = field(default_factory=list)
    updates: list[UpdateRecord] = field(default_factory=list)
    uploads_total: int = 0
    bytes_up_total: int = 0
    bytes_down_total: int = 0
    n_flushes: int = 0
    reached_target_at_uploads: int | None = None
    in_flight_trace: list[tuple[float, int]] = field(default_factory=list)
    # Populated only when run_simulation(record_models=True).
    model_history: list[np.ndarray] | None = None
    hidden_history: list[np.ndarray] | None = None
    snapshots: list[tuple[int, int, np.ndarray]] | None = None
    meta: dict = field(default_factory=dict)


def run_simulation(
    config,
    master_seed: int,
    task=None,
    record_models: bool = False,
) -> MetricsLog:
    """Runs one seeded experiment to ``t_max`` server steps or the target
    loss, returning one metrics row per server step (plus the initial one).
    """
    if config.t_max < 1:
        raise SimulationError("t_max must be >= 1 (runs must terminate)")
    if task is None:
        task = tasks_mod.build_task(config.task)
    hp: HyperParams = config.hp
    delay: DelayModel = config.delay
    broadcast = hp.mode is SyncMode.BROADCAST

    x0 = np.zeros(task.dim, dtype=np.float32)
    server = ServerState.initial(x0, c_max=hp.c_max)
    clients = [ClientState.initial(n, x0) for n in range(task.n_clients)]

    dur_rng = seeding.duration_rng(master_seed)
    assign_rng = seeding.assignment_rng(master_seed)

    log = MetricsLog()
    if record_models:
        log.model_history = [server.x.copy()]
        log.hidden_history = [server.x_hat.copy()]
        log.snapshots = []
    log.meta = {"seed": master_seed, "mode": hp.mode.value}

    heap: list[tuple[float, int, int, object]] = []
    seq = 0

    def push(time: float, kind: int, payload) -> None:
        nonlocal seq
        heapq.heappush(heap, (time, seq, kind, payload))
        seq += 1

    in_flight = 0
    waiting: deque[_Job] = deque()
    buffer_taus: list[int] = []

    def record_row(now: float) -> None:
        x64 = server.x.astype(np.float64)
        g = tasks_mod.full_gradient(task, x64)
        gsq = float(g @ g)
        cur_loss = tasks_mod.loss(task, x64)
        prev = log.rows[-1].running_R * len(log.rows) if log.rows else 0.0
        running = (prev + gsq) / (len(log.rows) + 1)
        log.rows.append(
            MetricsRow(
                t=server.step,
                sim_time=now,
                uploads=log.uploads_total,
                bytes_up=log.bytes_up_total,
                bytes_down=log.bytes_down_total,
                grad_norm_sq=gsq,
                loss=cur_loss,
                mean_staleness=(sum(buffer_taus) / len(buffer_taus)) if buffer_taus else 0.0,
                max_staleness=max(buffer_taus, default=0),
                running_R=running,
            )
        )

    def start_job(job: _Job, now: float) -> None:
        nonlocal in_flight
        client = clients[job.client_id]
        if not broadcast:
            payload = nonbroadcast_sync(server, client.hidden_version)
            apply_sync(client, payload)
            log.bytes_down_total += sum(m.byte_size for m in payload.messages)
        job.y0 = client.hidden_copy.copy()
        job.start_version = client.hidden_version
        job.uploads_at_start = log.uploads_total
        job.start_time = now
        if record_models and log.snapshots is not None:
            log.snapshots.append((job.job_id, job.start_version, job.y0.copy()))
        in_flight += 1
        log.in_flight_trace.append((now, in_flight))
        push(now + sample_duration(delay, dur_rng), _COMPLETE, job)

    def deliver(job: _Job, now: float) -> bool:
        """Processes an upload; returns True when the run should stop."""
        grad_rng = seeding.gradient_rng(master_seed, job.job_id)
        delta = local_sgd(task, job.client_id, job.y0, hp, grad_rng)
        msg = quantize(config.q_client, delta, seeding.client_quantizer_rng(master_seed, job.job_id))
        update = ClientUpdate(
            client_id=job.client_id,
            start_version=job.start_version,
            message=msg,
            raw_norm=float(np.linalg.norm(delta)),
        )
        tau = server_receive(server, update, hp)
        buffer_taus.append(tau)
        log.updates.append(
            UpdateRecord(
                job_id=job.job_id,
                client_id=job.client_id,
                start_version=job.start_version,
                tau=tau,
                bit_size=msg.bit_size,
                uploads_at_start=job.uploads_at_start,
                upload_index=log.uploads_total,
            )
        )
        log.uploads_total += 1
        log.bytes_up_total += msg.byte_size

        if server.buffer_count < hp.K:
            return False
        q = server_flush(server, config.q_server, hp, seeding.server_quantizer_rng(master_seed, server.step))
        if not np.all(np.isfinite(server.x)):
            raise SimulationError(
                f"non-finite model at step {server.step}; diverging configuration"
            )
        log.n_flushes += 1
        if broadcast:
            log.bytes_down_total += q.byte_size
            for client in clients:
                apply_broadcast(client, q, server.step)
        if record_models:
            log.model_history.append(server.x.copy())
            log.hidden_history.append(server.x_hat.copy())
        record_row(now)
        buffer_taus.clear()
        row = log.rows[-1]
        if (
            config.target_loss is not None
            and row.loss <= config.target_loss
            and log.reached_target_at_uploads is None
        ):
            log.reached_target_at_uploads = log.uploads_total
        return server.step >= config.t_max or (
            config.target_loss is not None and row.loss <= config.target_loss
        )

    record_row(0.0)
    n_task_clients = task.n_clients
    push(0.0, _ARRIVAL, 0)
    done = False
    while heap and not done:
        now, _, kind, payload = heapq.heappop(heap)
        if kind == _ARRIVAL:
            arrival_index = payload
            push((arrival_index + 1) / delay.arrival_rate, _ARRIVAL, arrival_index + 1)
            if config.uniform_assignment:
                client_id = int(assign_rng.integers(n_task_clients))
            else:
                client_id = arrival_index % n_task_clients
            job = _Job(job_id=arrival_index, client_id=client_id)
            if in_flight < delay.concurrency_cap:
                start_job(job, now)
            else:
                waiting.append(job)
        else:
            in_flight -= 1
            log.in_flight_trace.append((now, in_flight))
            # Deliver before starting a deferred job so the freed slot sees
            # the post-flush server state.
            done = deliver(payload, now)
            if waiting and not done:
                start_job(waiting.popleft(), now)
    return log


def staleness_trace(log: MetricsLog) -> list[int]:
    """Staleness of every applied update, in delivery order."""
    return [record.tau for record in log.updates]


def frozen_trace(log: MetricsLog) -> list[tuple[int, int]]:
    """(uploads before start, uploads before delivery) per update; enough
    to replay staleness under any buffer size."""
    return [(record.uploads_at_start, record.upload_index) for record in log.updates]


def replay_staleness(trace: list[tuple[int, int]], K: int) -> list[int]:
    """Staleness sequence the same completion trace would produce with
    buffer size K: flushes completed = uploads_delivered // K."""
    if K < 1:
        raise SimulationError("K must be >= 1")
    return [(u_deliver // K) - (u_start // K) for u_start, u_deliver in trace]


def time_average_in_flight(log: MetricsLog, skip_fraction: float = 0.2) -> float:
    """Time-averaged number of concurrently training clients after warm-up."""
    trace = log.in_flight_trace
    if len(trace) < 2:
        return 0.0
    t_end = trace[-1][0]
    t_start = t_end * skip_fraction
    total = 0.0
    span = 0.0
    for (t0, count), (t1, _) in zip(trace, trace[1:]):
        lo, hi = max(t0, t_start), t1
        if hi > lo:
            total += count * (hi - lo)
            span += hi - lo
    return total / span if span > 0 else 0.0
