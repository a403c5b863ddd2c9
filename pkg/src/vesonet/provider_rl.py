"""Deliverability signal and the DQN policy steering provider vehicles.

Content deliverability of a road segment is consumers minus providers; the
reward for a navigation decision is the change in deliverability (sign
selectable). The Q-function is a small numpy feed-forward net trained with
plain SGD on the squared TD error, with a replay buffer, epsilon-greedy
exploration and a periodically synced target network.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from .counters import OpCounter
from .road_net import SegmentOccupancy

PAD_SENTINEL = -1.0

REWARD_MODES = ("increase", "decrease")


class RLError(Exception):
    pass


class DeadEndError(RLError):
    """No feasible action at the current intersection."""


@dataclass(frozen=True)
class Deliverability:
    segment: Tuple[int, int]
    tick: int
    value: int


def content_deliverability(segment: Tuple[int, int], occupancy: SegmentOccupancy) -> Deliverability:
    """Consumers minus providers on the segment at the snapshot tick."""
    return Deliverability(segment, occupancy.as_of_tick, occupancy.consumers - occupancy.providers)


def reward(old_cd: float, new_cd: float, mode: str = "increase") -> float:
    """Reward for a navigation decision.

    "increase" pays the growth in deliverability (new - old), so maximizing
    reward maximizes deliverability; "decrease" is the inverted form
    (old - new), kept selectable.
    """
    if mode == "increase":
        return new_cd - old_cd
    if mode == "decrease":
        return old_cd - new_cd
    raise ValueError(f"unknown reward mode {mode!r}")


@dataclass(frozen=True, eq=False)
class RLState:
    """Per-exit normalized deliverability (padded with a -1 sentinel) plus the
    normalized remaining detour budget and distance to destination."""

    features: np.ndarray
    feasible: Tuple[bool, ...]

    def __post_init__(self) -> None:
        if not np.all(np.isfinite(self.features)):
            raise ValueError("state features must be finite")


def make_state(
    exit_cds: Sequence[float],
    feasible: Sequence[bool],
    budget_frac: float,
    dist_frac: float,
    n_slots: int,
) -> RLState:
    if len(exit_cds) != len(feasible) or len(exit_cds) > n_slots:
        raise ValueError("exit features and feasibility flags must match and fit the slots")
    features = np.full(n_slots + 2, PAD_SENTINEL, dtype=np.float64)
    features[: len(exit_cds)] = exit_cds
    features[n_slots] = budget_frac
    features[n_slots + 1] = dist_frac
    flags = tuple(feasible) + (False,) * (n_slots - len(feasible))
    return RLState(features, flags)


@dataclass(frozen=True, eq=False)
class Transition:
    state: RLState
    action: int
    reward: float
    next_state: RLState
    terminal: bool

    def __post_init__(self) -> None:
        if not np.isfinite(self.reward):
            raise ValueError("reward must be finite")


@dataclass(frozen=True)
class DQNConfig:
    gamma: float = 0.95
    learning_rate: float = 1e-3
    epsilon_start: float = 1.0
    epsilon_end: float = 0.05
    epsilon_decay_steps: int = 5000
    buffer_capacity: int = 10000
    batch_size: int = 32
    target_sync_period: int = 500
    rng_seed: int = 0
    hidden: Tuple[int, ...] = (64, 64)
    reward_mode: str = "increase"

    def __post_init__(self) -> None:
        if not 0.0 <= self.gamma < 1.0:
            raise ValueError("gamma must be in [0, 1)")
        if self.learning_rate <= 0:
            raise ValueError("learning rate must be > 0")
        if not 0.0 <= self.epsilon_end <= self.epsilon_start <= 1.0:
            raise ValueError("need 0 <= epsilon_end <= epsilon_start <= 1")
        if self.epsilon_decay_steps < 1:
            raise ValueError("epsilon_decay_steps must be >= 1")
        if self.buffer_capacity < 1 or self.batch_size < 1:
            raise ValueError("buffer capacity and batch size must be >= 1")
        if self.batch_size > self.buffer_capacity:
            raise ValueError("batch size cannot exceed buffer capacity")
        if self.target_sync_period < 1:
            raise ValueError("target_sync_period must be >= 1")
        if self.reward_mode not in REWARD_MODES:
            raise ValueError(f"reward_mode must be one of {REWARD_MODES}")


def epsilon_at(config: DQNConfig, step: int) -> float:
    """Linear schedule from epsilon_start to epsilon_end, reaching the end
    value exactly at epsilon_decay_steps."""
    frac = min(max(step, 0) / config.epsilon_decay_steps, 1.0)
    return config.epsilon_start + (config.epsilon_end - config.epsilon_start) * frac


class QNetwork:
    """Feed-forward Q-function: hidden rectifier layers, linear output."""

    def __init__(self, input_size: int, n_actions: int, hidden: Tuple[int, ...] = (64, 64),
                 seed: int = 0) -> None:
        self.input_size = input_size
        self.n_actions = n_actions
        self.hidden = tuple(hidden)
        rng = np.random.default_rng([seed, 0xD0])
        dims = [input_size, *self.hidden, n_actions]
        self.weights: List[np.ndarray] = []
        self.biases: List[np.ndarray] = []
        for fan_in, fan_out in zip(dims[:-1], dims[1:]):
            scale = np.sqrt(2.0 / fan_in)
            self.weights.append(rng.normal(0.0, scale, size=(fan_out, fan_in)))
            self.biases.append(np.zeros(fan_out))

    def forward(self, x: np.ndarray, counter: Optional[OpCounter] = None) -> np.ndarray:
        single = x.ndim == 1
        acts = np.atleast_2d(np.asarray(x, dtype=np.float64))
        for i in range(len(self.weights)):
            acts = acts @ self.weights[i].T + self.biases[i]
            if i + 1 < len(self.weights):
                acts = np.maximum(acts, 0.0)
        if counter is not None:
            counter.add("net_passes")
        return acts[0] if single else acts

    def _forward_cached(self, batch: np.ndarray) -> Tuple[np.ndarray, List[np.ndarray]]:
        acts = [np.asarray(batch, dtype=np.float64)]
        for i in range(len(self.weights)):
            z = acts[-1] @ self.weights[i].T + self.biases[i]
            if i + 1 < len(self.weights):
                z = np.maximum(z, 0.0)
            acts.append(z)
        return acts[-1], acts

    def _backward(self, acts: List[np.ndarray], d_out: np.ndarray
                  ) -> List[Tuple[np.ndarray, np.ndarray]]:
        grads: List[Tuple[np.ndarray, np.ndarray]] = [None] * len(self.weights)  # type: ignore
        delta = d_out
        for i in range(len(self.weights) - 1, -1, -1):
            grads[i] = (delta.T @ acts[i], delta.sum(axis=0))
            if i > 0:
                delta = (delta @ self.weights[i]) * (acts[i] > 0.0)
        return grads

    def apply_gradients(self, grads: List[Tuple[np.ndarray, np.ndarray]], lr: float) -> None:
        for i, (dw, db) in enumerate(grads):
            self.weights[i] -= lr * dw
            self.biases[i] -= lr * db

    def get_params(self) -> List[np.ndarray]:
        params: List[np.ndarray] = []
        for w, b in zip(self.weights, self.biases):
            params.append(w)
            params.append(b)
        return params

    def copy_from(self, other: "QNetwork") -> None:
        self.weights = [w.copy() for w in other.weights]
        self.biases = [b.copy() for b in other.biases]

    def clone(self) -> "QNetwork":
        twin = QNetwork(self.input_size, self.n_actions, self.hidden)
        twin.copy_from(self)
        return twin

    def save(self, path: str) -> None:
        arrays: Dict[str, np.ndarray] = {
            "meta": np.array([self.input_size, self.n_actions, len(self.hidden)]),
            "hidden": np.array(self.hidden, dtype=np.int64),
        }
        for i, (w, b) in enumerate(zip(self.weights, self.biases)):
            arrays[f"w{i}"] = w
            arrays[f"b{i}"] = b
        np.savez(path, **arrays)

    @classmethod
    def load(cls, path: str) -> "QNetwork":
        data = np.load(path)
        meta = data["meta"]
        net = cls(int(meta[0]), int(meta[1]), tuple(int(h) for h in data["hidden"]))
        net.weights = [data[f"w{i}"] for i in range(len(net.weights))]
        net.biases = [data[f"b{i}"] for i in range(len(net.biases))]
        return net


def select_action(net: QNetwork, state: RLState, epsilon: float,
                  rng: np.random.Generator, counter: Optional[OpCounter] = None) -> int:
    """Epsilon-greedy over the feasible actions, greedy ties to lowest index."""
    feasible = [i for i, ok in enumerate(state.feasible) if ok]
    if not feasible:
        raise DeadEndError("no feasible exit at this intersection")
    if rng.random() < epsilon:
        return feasible[int(rng.integers(len(feasible)))]
    q = net.forward(state.features, counter)
    masked = np.full(net.n_actions, -np.inf)
    masked[feasible] = q[feasible]
    return int(np.argmax(masked))


def q_backup(q_old: float, r: float, max_next_q: float, beta: float, gamma: float) -> float:
    """Tabular Bellman update, the oracle form for the network training step."""
    return q_old + beta * (r + gamma * max_next_q - q_old)


class ReplayBuffer:
    """Bounded FIFO experience memory; eviction order equals insertion order."""

    def __init__(self, capacity: int) -> None:
        if capacity < 1:
            raise ValueError("capacity must be >= 1")
        self.capacity = capacity
        self._items: List[Transition] = []
        self._next = 0

    def push(self, transition: Transition) -> None:
        if len(self._items) < self.capacity:
            self._items.append(transition)
        else:
            self._items[self._next] = transition
            self._next = (self._next + 1) % self.capacity

    def sample(self, batch_size: int, rng: np.random.Generator) -> List[Transition]:
        if batch_size > len(self._items):
            raise ValueError("not enough transitions to sample")
        idx = rng.choice(len(self._items), size=batch_size, replace=False)
        return [self._items[int(i)] for i in idx]

    def __len__(self) -> int:
        return len(self._items)

    def snapshot(self) -> List[Transition]:
        return list(self._items)


def _batch_tensors(batch: Sequence[Transition], n_actions: int
                   ) -> Tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
    states = np.stack([t.state.features for t in batch])
    actions = np.array([t.action for t in batch], dtype=np.int64)
    rewards = np.array([t.reward for t in batch], dtype=np.float64)
    next_states = np.stack([t.next_state.features for t in batch])
    terminal = np.array([t.terminal for t in batch], dtype=bool)
    feasible = np.zeros((len(batch), n_actions), dtype=bool)
    for i, t in enumerate(batch):
        for a, ok in enumerate(t.next_state.feasible):
            if a < n_actions and ok:
                feasible[i, a] = True
    return states, actions, rewards, next_states, terminal, feasible


def _td_targets(target_net: QNetwork, batch: Sequence[Transition], gamma: float,
                tensors) -> np.ndarray:
    _, _, rewards, next_states, terminal, feasible = tensors
    next_q = target_net.forward(next_states)
    masked = np.where(feasible, next_q, -np.inf)
    best_next = masked.max(axis=1)
    # Terminal transitions (and dead-end next states) bootstrap nothing.
    usable = ~terminal & feasible.any(axis=1)
    targets = rewards.copy()
    targets[usable] += gamma * best_next[usable]
    return targets


def td_loss(net: QNetwork, target_net: QNetwork, batch: Sequence[Transition],
            gamma: float) -> float:
    """Mean squared TD error of the batch under the online net, with targets
    from the target net; terminal transitions use the bare reward."""
    if not batch:
        raise ValueError("batch must be non-empty")
    tensors = _batch_tensors(batch, net.n_actions)
    states, actions = tensors[0], tensors[1]
    targets = _td_targets(target_net, batch, gamma, tensors)
    q = net.forward(states)
    predicted = q[np.arange(len(batch)), actions]
    return float(np.mean((targets - predicted) ** 2))


def td_loss_gradients(net: QNetwork, target_net: QNetwork, batch: Sequence[Transition],
                      gamma: float, counter: Optional[OpCounter] = None
                      ) -> Tuple[float, List[Tuple[np.ndarray, np.ndarray]]]:
    tensors = _batch_tensors(batch, net.n_actions)
    states, actions = tensors[0], tensors[1]
    targets = _td_targets(target_net, batch, gamma, tensors)
    q, acts = net._forward_cached(states)
    predicted = q[np.arange(len(batch)), actions]
    errors = targets - predicted
    loss = float(np.mean(errors ** 2))
    d_out = np.zeros_like(q)
    d_out[np.arange(len(batch)), actions] = -2.0 * errors / len(batch)
    grads = net._backward(acts, d_out)
    if counter is not None:
        counter.add("net_passes", 2)
    return loss, grads


class DQNAgent:
    """One shared policy for provider navigation.

    Holds the online and target networks, the replay buffer and the epsilon
    schedule; `train_step` performs one SGD step on the TD loss and syncs the
    target net every target_sync_period steps.
    """

    def __init__(self, input_size: int, n_actions: int, config: DQNConfig,
                 counter: Optional[OpCounter] = None) -> None:
        self.config = config
        self.online = QNetwork(input_size, n_actions, config.hidden, config.rng_seed)
        self.target = self.online.clone()
        self.buffer = ReplayBuffer(config.buffer_capacity)
        self.rng = np.random.default_rng([config.rng_seed, 0xAC7])
        self.counter = counter
        self.train_steps = 0
        self.curve: List[Tuple[int, float, float, float]] = []
        self._recent_rewards: List[float] = []

    @property
    def epsilon(self) -> float:
        return epsilon_at(self.config, self.train_steps)

    def act(self, state: RLState, greedy: bool = False) -> int:
        eps = 0.0 if greedy else self.epsilon
        return select_action(self.online, state, eps, self.rng, self.counter)

    def observe(self, transition: Transition) -> None:
        self.buffer.push(transition)
        self._recent_rewards.append(transition.reward)
        if len(self._recent_rewards) > 100:
            self._recent_rewards.pop(0)

    def train_step(self, batch: Optional[Sequence[Transition]] = None) -> Optional[float]:
        """One SGD step; returns the loss, or None when the buffer is still
        smaller than the batch size (no parameters change)."""
        if batch is None:
            if len(self.buffer) < self.config.batch_size:
                return None
            batch = self.buffer.sample(self.config.batch_size, self.rng)
        loss, grads = td_loss_gradients(self.online, self.target, batch,
                                        self.config.gamma, self.counter)
        self.online.apply_gradients(grads, self.config.learning_rate)
        self.train_steps += 1
        if self.train_steps % self.config.target_sync_period == 0:
            self.target.copy_from(self.online)
        mean_reward = (
            sum(self._recent_rewards) / len(self._recent_rewards)
            if self._recent_rewards
            else 0.0
        )
        self.curve.append((self.train_steps, loss, self.epsilon, mean_reward))
        return loss

    def save(self, path: str) -> None:
        self.online.save(path)

    def write_curve_csv(self, path: str) -> None:
        with open(path, "w", newline="") as handle:
            handle.write("step,loss,epsilon,mean_reward\n")
            for step, loss, eps, mean_reward in self.curve:
                handle.write(f"{step},{loss!r},{eps!r},{mean_reward!r}\n")
