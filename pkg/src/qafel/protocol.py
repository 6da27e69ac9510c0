"""Server and client state machines for buffered asynchronous training
with a bidirectionally quantized shared hidden state.

All model state is float32 so that the dense wire encoding is lossless
and the hidden-state replicas stay bit-identical across server and
clients.  With identity codecs on both directions, the server trajectory
reduces exactly to plain buffered asynchronous aggregation.
"""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass, field
from enum import Enum
from math import sqrt

import numpy as np

from . import tasks as tasks_mod
from .quantizers import QuantizedMessage, QuantizerSpec, dequantize, quantize


class ProtocolError(RuntimeError):
    pass


class SyncMode(Enum):
    BROADCAST = "broadcast"
    NON_BROADCAST = "non_broadcast"


@dataclass(frozen=True)
class HyperParams:
    eta_g: float
    eta_l: tuple[float, ...]
    K: int
    momentum_beta: float = 0.0
    staleness_scaling: bool = False
    mode: SyncMode = SyncMode.BROADCAST
    c_max: int = 16

    def __post_init__(self) -> None:
        if self.eta_g <= 0 or any(e <= 0 for e in self.eta_l) or not self.eta_l:
            raise ProtocolError("learning rates must be positive and P >= 1")
        if self.K < 1:
            raise ProtocolError("buffer size K must be >= 1")
        if not 0.0 <= self.momentum_beta < 1.0:
            raise ProtocolError("momentum must be in [0, 1)")
        if self.c_max < 1:
            raise ProtocolError("c_max must be >= 1")

    @property
    def P(self) -> int:
        return len(self.eta_l)

    @classmethod
    def constant_lr(cls, eta_g: float, eta_l: float, P: int, K: int, **kwargs) -> "HyperParams":
        return cls(eta_g=eta_g, eta_l=(eta_l,) * P, K=K, **kwargs)


@dataclass
class ServerState:
    x: np.ndarray                 # global model
    x_hat: np.ndarray             # shared hidden state
    buffer_sum: np.ndarray
    buffer_count: int
    step: int
    momentum: np.ndarray
    stored: deque                 # (version, message) ring for catch-up sync

    @classmethod
    def initial(cls, x0: np.ndarray, c_max: int = 16) -> "ServerState":
        x0 = np.asarray(x0, dtype=np.float32).copy()
        return cls(
            x=x0,
            x_hat=x0.copy(),
            buffer_sum=np.zeros_like(x0),
            buffer_count=0,
            step=0,
            momentum=np.zeros_like(x0),
            stored=deque(maxlen=c_max),
        )


@dataclass
class ClientState:
    client_id: int
    hidden_copy: np.ndarray
    hidden_version: int = 0
    start_version: int = 0

    @classmethod
    def initial(cls, client_id: int, x0: np.ndarray) -> "ClientState":
        return cls(client_id=client_id, hidden_copy=np.asarray(x0, np.float32).copy())


@dataclass(frozen=True)
class ClientUpdate:
    client_id: int
    start_version: int
    message: QuantizedMessage
    raw_norm: float


def local_sgd(
    task,
    client_id: int,
    y0: np.ndarray,
    hp: HyperParams,
    rng: np.random.Generator,
) -> np.ndarray:
    """Runs the P-step local loop from ``y0`` and returns y_P - y_0."""
    y0 = np.asarray(y0, dtype=np.float32)
    y = y0.copy()
    for eta in hp.eta_l:
        g = tasks_mod.stochastic_gradient(task, client_id, y, rng)
        if not np.all(np.isfinite(g)):
            raise ProtocolError(
                f"non-finite gradient for client {client_id} at ||y||={np.linalg.norm(y):.3g}"
            )
        y = y - eta * g.astype(np.float32)
    return y - y0


def client_local_train(
    client: ClientState, task, hp: HyperParams, rng: np.random.Generator
) -> np.ndarray:
    """Snapshots the hidden state, trains locally, returns the raw delta."""
    client.start_version = client.hidden_version
    return local_sgd(task, client.client_id, client.hidden_copy, hp, rng)


def client_compress(
    client: ClientState,
    delta: np.ndarray,
    q_client: QuantizerSpec,
    rng: np.random.Generator,
) -> ClientUpdate:
    if not q_client.unbiased:
        raise ProtocolError("client quantizer must be unbiased")
    msg = quantize(q_client, delta, rng)
    return ClientUpdate(
        client_id=client.client_id,
        start_version=client.start_version,
        message=msg,
        raw_norm=float(np.linalg.norm(delta)),
    )


def server_receive(state: ServerState, update: ClientUpdate, hp: HyperParams) -> int:
    """Buffers a client update, down-weighted by staleness if enabled.

    Returns the staleness of the applied update."""
    if state.buffer_count >= hp.K:
        raise ProtocolError("receive with a full buffer; flush first")
    contrib = dequantize(update.message)
    if contrib.size != state.x.size:
        raise ProtocolError(
            f"dimension mismatch: update {contrib.size}, model {state.x.size}"
        )
    tau = state.step - update.start_version
    weight = 1.0 / sqrt(1.0 + tau) if hp.staleness_scaling else 1.0
    state.buffer_sum += weight * contrib
    state.buffer_count += 1
    return tau


def server_flush(
    state: ServerState,
    q_server: QuantizerSpec,
    hp: HyperParams,
    rng: np.random.Generator,
) -> QuantizedMessage:
    """Applies the buffered average with momentum, advances the hidden
    state by a quantized correction, and returns it for delivery."""
    if state.buffer_count != hp.K:
        raise ProtocolError(
            f"flush with {state.buffer_count}/{hp.K} buffered updates"
        )
    averaged = state.buffer_sum / hp.K
    state.momentum = hp.momentum_beta * state.momentum + averaged
    state.x = state.x + hp.eta_g * state.momentum
    if not np.all(np.isfinite(state.x)):
        raise ProtocolError(
            f"non-finite model after step {state.step}; diverging configuration"
        )
    q = quantize(q_server, state.x - state.x_hat, rng)
    state.x_hat = state.x_hat + dequantize(q)
    state.step += 1
    state.stored.append((state.step, q))
    state.buffer_sum = np.zeros_like(state.x)
    state.buffer_count = 0
    return q


def apply_broadcast(client: ClientState, q: QuantizedMessage, version: int) -> None:
    if version != client.hidden_version + 1:
        raise ProtocolError(
            f"out-of-order broadcast: have version {client.hidden_version}, got {version}"
        )
    client.hidden_copy = client.hidden_copy + dequantize(q)
    client.hidden_version = version


@dataclass(frozen=True)
class SyncPayload:
    """Catch-up transmission for a client without broadcast capability."""

    snapshot: bool
    messages: tuple[QuantizedMessage, ...]
    target_version: int

    @property
    def bits_sent(self) -> int:
        return sum(m.bit_size for m in self.messages)


def nonbroadcast_sync(state: ServerState, client_version: int) -> SyncPayload:
    """Returns either the stored incremental corrections the client is
    missing, or a full dense snapshot of the hidden state if the client
    is more than the storage window behind."""
    if client_version > state.step:
        raise ProtocolError(
            f"client claims version {client_version} > server step {state.step}"
        )
    lag = state.step - client_version
    if lag == 0:
        return SyncPayload(snapshot=False, messages=(), target_version=state.step)
    stored = {version: msg for version, msg in state.stored}
    needed = range(client_version + 1, state.step + 1)
    if lag <= state.stored.maxlen and all(v in stored for v in needed):
        return SyncPayload(
            snapshot=False,
            messages=tuple(stored[v] for v in needed),
            target_version=state.step,
        )
    snap = quantize(QuantizerSpec.identity(), state.x_hat)
    return SyncPayload(snapshot=True, messages=(snap,), target_version=state.step)


def apply_sync(client: ClientState, payload: SyncPayload) -> None:
    if payload.snapshot:
        client.hidden_copy = dequantize(payload.messages[0])
        client.hidden_version = payload.target_version
    else:
        for msg in payload.messages:
            apply_broadcast(client, msg, client.hidden_version + 1)
        if client.hidden_version != payload.target_version:
            raise ProtocolError("sync payload did not reach the server version")
