"""Numpy Q-network: ReLU MLP, Adam, replay buffer and (E)TD batch updates.

Weights are stored as ``(fan_in, fan_out)`` matrices so a batch of row-vector
states propagates as ``x @ W + b``. Everything is float64.
"""
from __future__ import annotations

import base64
import copy
import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import NamedTuple, Sequence

import numpy as np

from .env import N_ACTIONS

DEFAULT_SIZES = (22, 64, 64, 64, N_ACTIONS)
TD, ETD = "td", "etd"


class TrainingError(RuntimeError):
    pass


class CheckpointError(ValueError):
    pass


@dataclass
class QNetworkParams:
    weights: list[np.ndarray]
    biases: list[np.ndarray]

    def __post_init__(self) -> None:
        if len(self.weights) != len(self.biases) or not self.weights:
            raise ValueError("need one bias per weight matrix")
        for i, (w, b) in enumerate(zip(self.weights, self.biases)):
            if w.ndim != 2 or b.shape != (w.shape[1],):
                raise ValueError(f"layer {i}: weight {w.shape} / bias {b.shape} mismatch")
            if i and w.shape[0] != self.weights[i - 1].shape[1]:
                raise ValueError(f"layer {i} input {w.shape[0]} != previous output")

    @property
    def sizes(self) -> tuple[int, ...]:
        return (self.weights[0].shape[0],) + tuple(w.shape[1] for w in self.weights)

    def copy(self) -> "QNetworkParams":
        return QNetworkParams([w.copy() for w in self.weights], [b.copy() for b in self.biases])

    def arrays(self) -> list[np.ndarray]:
        return [a for pair in zip(self.weights, self.biases) for a in pair]

    def digest(self) -> str:
        h = hashlib.sha256()
        for a in self.arrays():
            h.update(np.ascontiguousarray(a, dtype="<f8").tobytes())
        return h.hexdigest()

    def all_finite(self) -> bool:
        return all(np.isfinite(a).all() for a in self.arrays())

    @classmethod
    def zeros(cls, sizes: Sequence[int] = DEFAULT_SIZES) -> "QNetworkParams":
        return cls([np.zeros((a, b)) for a, b in zip(sizes[:-1], sizes[1:])],
                   [np.zeros(b) for b in sizes[1:]])


def init_params(sizes: Sequence[int], rng: np.random.Generator) -> QNetworkParams:
    """He-uniform weights (limit ``sqrt(6/fan_in)``), zero biases."""
    ws, bs = [], []
    for fan_in, fan_out in zip(sizes[:-1], sizes[1:]):
        lim = np.sqrt(6.0 / fan_in)
        ws.append(rng.uniform(-lim, lim, (fan_in, fan_out)))
        bs.append(np.zeros(fan_out))
    return QNetworkParams(ws, bs)


def _forward_cache(params: QNetworkParams, x: np.ndarray):
    acts = [x]
    pre = []
    h = x
    last = len(params.weights) - 1
    for i, (w, b) in enumerate(zip(params.weights, params.biases)):
        z = h @ w + b
        pre.append(z)
        h = np.maximum(z, 0.0) if i < last else z
        acts.append(h)
    return acts, pre


def forward(params: QNetworkParams, state: np.ndarray) -> np.ndarray:
    """Q-values for one state (shape ``(A,)``) or a batch (shape ``(B, A)``)."""
    x = np.asarray(state, dtype=np.float64)
    if x.shape[-1] != params.sizes[0]:
        raise ValueError(f"state length {x.shape[-1]} != network input {params.sizes[0]}")
    h = x
    last = len(params.weights) - 1
    for i, (w, b) in enumerate(zip(params.weights, params.biases)):
        h = h @ w + b
        if i < last:
            np.maximum(h, 0.0, out=h)
    return h


def loss_and_grad(params: QNetworkParams, states: np.ndarray, actions: np.ndarray,
                  targets: np.ndarray) -> tuple[float, list[np.ndarray], list[np.ndarray]]:
    """``0.5 * mean((target - Q(s, a))^2)`` and its gradient; only taken actions contribute."""
    acts, pre = _forward_cache(params, states)
    q = acts[-1]
    rows = np.arange(len(actions))
    diff = q[rows, actions] - targets
    loss = 0.5 * float(np.mean(diff * diff))
    delta = np.zeros_like(q)
    delta[rows, actions] = diff / len(actions)
    gw: list[np.ndarray] = [None] * len(params.weights)  # type: ignore[list-item]
    gb: list[np.ndarray] = [None] * len(params.weights)  # type: ignore[list-item]
    for i in range(len(params.weights) - 1, -1, -1):
        gw[i] = acts[i].T @ delta
        gb[i] = delta.sum(axis=0)
        if i:
            delta = (delta @ params.weights[i].T) * (pre[i - 1] > 0)
    return loss, gw, gb


@dataclass
class AdamState:
    m: list[np.ndarray]
    v: list[np.ndarray]
    step: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    @classmethod
    def for_params(cls, params: QNetworkParams, **kw) -> "AdamState":
        return cls([np.zeros_like(a) for a in params.arrays()],
                   [np.zeros_like(a) for a in params.arrays()], **kw)

    def copy(self) -> "AdamState":
        return copy.deepcopy(self)

    def all_finite(self) -> bool:
        return all(np.isfinite(a).all() for a in self.m + self.v)


def adam_update(params: QNetworkParams, adam: AdamState, grads: list[np.ndarray], lr: float) -> None:
    """One in-place Adam step; ``grads`` ordered like ``params.arrays()``."""
    adam.step += 1
    b1, b2 = adam.beta1, adam.beta2
    c1 = 1.0 - b1 ** adam.step
    c2 = 1.0 - b2 ** adam.step
    for p, g, m, v in zip(params.arrays(), grads, adam.m, adam.v):
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * (g * g)
        p -= lr * (m / c1) / (np.sqrt(v / c2) + adam.eps)


def td_target(r, next_q, gamma: float, terminal):
    """``r + gamma * max_a next_q`` with no bootstrap on terminal steps. Scalar or batched."""
    best = np.max(next_q, axis=-1)
    return r + np.where(terminal, 0.0, gamma * best)


def etd_target(r, next_q, gamma: float, gamma_prime_1, terminal):
    """TD target whose bootstrap term is further scaled by the one-step error discount."""
    g1 = np.asarray(gamma_prime_1, dtype=np.float64)
    if np.any((g1 < 0.5) | (g1 > 1.0)):
        raise ValueError(f"gamma_prime_1 must lie in [0.5, 1], got {gamma_prime_1}")
    best = np.max(next_q, axis=-1)
    return r + np.where(terminal, 0.0, (g1 * gamma) * best)


@dataclass(frozen=True)
class ReplayTransition:
    state: np.ndarray
    action_index: int
    reward: float
    next_state: np.ndarray
    terminal: bool
    gamma_prime_1: float = 1.0

    def __post_init__(self) -> None:
        if not 0 <= self.action_index < N_ACTIONS:
            raise ValueError(f"invalid action index {self.action_index}")
        if not 0.5 <= self.gamma_prime_1 <= 1.0:
            raise ValueError(f"gamma_prime_1 must lie in [0.5, 1], got {self.gamma_prime_1}")


class Batch(NamedTuple):
    states: np.ndarray
    actions: np.ndarray
    rewards: np.ndarray
    next_states: np.ndarray
    terminals: np.ndarray
    gamma1: np.ndarray

    @classmethod
    def of(cls, transitions: Sequence[ReplayTransition]) -> "Batch":
        return cls(np.array([t.state for t in transitions], dtype=np.float64),
                   np.array([t.action_index for t in transitions], dtype=np.intp),
                   np.array([t.reward for t in transitions], dtype=np.float64),
                   np.array([t.next_state for t in transitions], dtype=np.float64),
                   np.array([t.terminal for t in transitions], dtype=bool),
                   np.array([t.gamma_prime_1 for t in transitions], dtype=np.float64))


class ReplayBuffer:
    """Fixed-capacity FIFO ring buffer with uniform sampling (with replacement)."""

    def __init__(self, capacity: int, state_dim: int):
        if capacity < 1:
            raise ValueError("capacity must be >= 1")
        self.capacity = capacity
        self.states = np.zeros((capacity, state_dim))
        self.next_states = np.zeros((capacity, state_dim))
        self.actions = np.zeros(capacity, dtype=np.intp)
        self.rewards = np.zeros(capacity)
        self.terminals = np.zeros(capacity, dtype=bool)
        self.gamma1 = np.ones(capacity)
        self._next = 0
        self.size = 0

    def __len__(self) -> int:
        return self.size

    def push(self, state, action: int, reward: float, next_state, terminal: bool,
             gamma_prime_1: float = 1.0) -> None:
        if not 0 <= action < N_ACTIONS:
            raise ValueError(f"invalid action index {action}")
        if not 0.5 <= gamma_prime_1 <= 1.0:
            raise ValueError(f"gamma_prime_1 must lie in [0.5, 1], got {gamma_prime_1}")
        i = self._next
        self.states[i] = state
        self.next_states[i] = next_state
        self.actions[i] = action
        self.rewards[i] = reward
        self.terminals[i] = terminal
        self.gamma1[i] = gamma_prime_1
        self._next = (i + 1) % self.capacity
        self.size = min(self.size + 1, self.capacity)

    def add(self, t: ReplayTransition) -> None:
        self.push(t.state, t.action_index, t.reward, t.next_state, t.terminal, t.gamma_prime_1)

    def _order(self) -> np.ndarray:
        """Slot indices from oldest to newest."""
        if self.size < self.capacity:
            return np.arange(self.size)
        return (np.arange(self.capacity) + self._next) % self.capacity

    def contents(self) -> Batch:
        return self._take(self._order())

    def _take(self, idx: np.ndarray) -> Batch:
        return Batch(self.states[idx], self.actions[idx], self.rewards[idx],
                     self.next_states[idx], self.terminals[idx], self.gamma1[idx])

    def sample(self, batch_size: int, rng: np.random.Generator) -> Batch:
        if self.size == 0:
            raise ValueError("cannot sample from an empty buffer")
        return self._take(rng.integers(0, self.size, batch_size))


def batch_targets(target_params: QNetworkParams, batch: Batch, gamma: float, mode: str) -> np.ndarray:
    next_q = forward(target_params, batch.next_states)
    if mode == TD:
        return td_target(batch.rewards, next_q, gamma, batch.terminals)
    if mode == ETD:
        return etd_target(batch.rewards, next_q, gamma, batch.gamma1, batch.terminals)
    raise ValueError(f"unknown mode {mode!r}")


def train_batch(params: QNetworkParams, target_params: QNetworkParams, adam: AdamState,
                batch: Batch | Sequence[ReplayTransition], gamma: float, lr: float,
                mode: str = TD, check_finite: bool = False) -> tuple[QNetworkParams, AdamState, float]:
    """One Adam step on the squared (E)TD error; updates ``params`` and ``adam`` in place.

    An exactly-zero gradient skips the step (the Adam counter is not advanced).
    """
    if not isinstance(batch, Batch):
        batch = Batch.of(batch)
    if len(batch.actions) == 0:
        raise ValueError("empty batch")
    targets = batch_targets(target_params, batch, gamma, mode)
    loss, gw, gb = loss_and_grad(params, batch.states, batch.actions, targets)
    grads = [g for pair in zip(gw, gb) for g in pair]
    if not np.isfinite(loss) or not all(np.isfinite(g).all() for g in grads):
        raise TrainingError(
            f"non-finite loss/gradient at adam step {adam.step}: loss={loss}, "
            f"max|target|={np.max(np.abs(targets))}, max|reward|={np.max(np.abs(batch.rewards))}")
    if not any(g.any() for g in grads):
        return params, adam, loss
    adam_update(params, adam, grads, lr)
    if check_finite and not (params.all_finite() and adam.all_finite()):
        raise TrainingError(f"parameters or moments became non-finite at adam step {adam.step}")
    return params, adam, loss


def select_action(params: QNetworkParams, state: np.ndarray, epsilon: float,
                  rng: np.random.Generator) -> int:
    """Epsilon-greedy; greedy ties go to the lowest action index."""
    if not 0 <= epsilon <= 1:
        raise ValueError(f"epsilon must be in [0, 1], got {epsilon}")
    if rng.random() < epsilon:
        return int(rng.integers(N_ACTIONS))
    return int(np.argmax(forward(params, state)))


def greedy_action(params: QNetworkParams, state: np.ndarray) -> int:
    return int(np.argmax(forward(params, state)))


def sync_target(params: QNetworkParams) -> QNetworkParams:
    return params.copy()


# --- checkpoint (JSON, arrays as base64 little-endian float64) ---

FORMAT = "etdgrid-checkpoint"
FORMAT_VERSION = 1


def _enc(a: np.ndarray) -> dict:
    return {"shape": list(a.shape),
            "data": base64.b64encode(np.ascontiguousarray(a, dtype="<f8").tobytes()).decode("ascii")}


def _dec(d: dict) -> np.ndarray:
    raw = base64.b64decode(d["data"])
    arr = np.frombuffer(raw, dtype="<f8").astype(np.float64)
    shape = tuple(d["shape"])
    if arr.size != int(np.prod(shape)):
        raise CheckpointError(f"array payload of {arr.size} values does not fit shape {shape}")
    return arr.reshape(shape)


def _params_to(p: QNetworkParams) -> dict:
    return {"weights": [_enc(w) for w in p.weights], "biases": [_enc(b) for b in p.biases]}


def _params_from(d: dict, sizes: Sequence[int]) -> QNetworkParams:
    ws = [_dec(w) for w in d["weights"]]
    bs = [_dec(b) for b in d["biases"]]
    expected = list(zip(sizes[:-1], sizes[1:]))
    if [w.shape for w in ws] != expected or [b.shape for b in bs] != [(o,) for _, o in expected]:
        raise CheckpointError(f"stored arrays do not match layer sizes {list(sizes)}")
    return QNetworkParams(ws, bs)


@dataclass
class Checkpoint:
    params: QNetworkParams
    target: QNetworkParams | None = None
    adam: AdamState | None = None
    rng_state: dict | None = None
    extra: dict = field(default_factory=dict)


def save_checkpoint(path: str | Path, ckpt: Checkpoint) -> None:
    doc: dict = {"format": FORMAT, "version": FORMAT_VERSION,
                 "layer_sizes": list(ckpt.params.sizes),
                 "params": _params_to(ckpt.params), "extra": ckpt.extra}
    if ckpt.target is not None:
        doc["target"] = _params_to(ckpt.target)
    if ckpt.adam is not None:
        a = ckpt.adam
        doc["adam"] = {"step": a.step, "beta1": a.beta1, "beta2": a.beta2, "eps": a.eps,
                       "m": [_enc(x) for x in a.m], "v": [_enc(x) for x in a.v]}
    if ckpt.rng_state is not None:
        doc["rng_state"] = ckpt.rng_state
    Path(path).write_text(json.dumps(doc, sort_keys=True, indent=1) + "\n", encoding="utf-8")


def load_checkpoint(path: str | Path, expected_sizes: Sequence[int] | None = None) -> Checkpoint:
    path = Path(path)
    if not path.is_file():
        raise FileNotFoundError(f"checkpoint not found: {path}")
    try:
        doc = json.loads(path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise CheckpointError(f"{path}: not a checkpoint ({exc})") from None
    if doc.get("format") != FORMAT or doc.get("version") != FORMAT_VERSION:
        raise CheckpointError(f"{path}: unsupported format {doc.get('format')!r} v{doc.get('version')}")
    sizes = [int(s) for s in doc["layer_sizes"]]
    if expected_sizes is not None and list(expected_sizes) != sizes:
        raise CheckpointError(f"{path}: layer sizes {sizes} != expected {list(expected_sizes)}")
    params = _params_from(doc["params"], sizes)
    target = _params_from(doc["target"], sizes) if "target" in doc else None
    adam = None
    if "adam" in doc:
        a = doc["adam"]
        m = [_dec(x) for x in a["m"]]
        v = [_dec(x) for x in a["v"]]
        shapes = [x.shape for x in params.arrays()]
        if [x.shape for x in m] != shapes or [x.shape for x in v] != shapes:
            raise CheckpointError(f"{path}: Adam moments do not match parameter shapes")
        adam = AdamState(m, v, int(a["step"]), a["beta1"], a["beta2"], a["eps"])
    return Checkpoint(params, target, adam, doc.get("rng_state"), doc.get("extra", {}))
