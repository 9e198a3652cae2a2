"""DQN learner with prioritized replay and the cross-dataset training loop."""
from __future__ import annotations

import csv
import json
import logging
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .environment import STATE_CTX_LEN, EnvironmentConfig, FlatActionSpace, GridEnv, StateVector
from .hstep import HierarchicalPlugin
from .nn import Adam, NetConfig, QNetwork, huber, stack_states
from .primitives import catalog
from .tabular import DataError, LearningJob

log = logging.getLogger(__name__)


@dataclass
class AgentConfig:
    gamma: float = 0.99
    eps_start: float = 1.0
    eps_end: float = 0.05
    eps_decay_episodes: int = 2000
    capacity: int = 100_000
    batch_size: int = 32
    per_alpha: float = 0.6
    per_beta_start: float = 0.4
    per_beta_end: float = 1.0
    beta_anneal_episodes: int = 2000
    target_sync: int = 1000
    train_every: int = 4
    eval_eps: float = 0.05
    lr: float = 5e-4
    explore_all_levels: bool = True

    def __post_init__(self):
        if not 0 < self.gamma <= 1:
            raise ValueError("gamma must lie in (0, 1]")
        for name in ("eps_start", "eps_end", "eval_eps"):
            if not 0 <= getattr(self, name) <= 1:
                raise ValueError(f"{name} must lie in [0, 1]")
        if self.capacity < 1 or self.batch_size < 1 or self.target_sync < 1 or self.train_every < 1:
            raise ValueError("capacity, batch_size, target_sync and train_every must be positive")
        if self.per_alpha < 0 or not 0 <= self.per_beta_start <= 1 or not 0 <= self.per_beta_end <= 1:
            raise ValueError("prioritized replay exponents out of range")
        if self.lr <= 0:
            raise ValueError("lr must be positive")

    def epsilon(self, episode: int) -> float:
        frac = min(1.0, episode / max(1, self.eps_decay_episodes))
        return self.eps_start + frac * (self.eps_end - self.eps_start)

    def beta(self, episode: int) -> float:
        frac = min(1.0, episode / max(1, self.beta_anneal_episodes))
        return self.per_beta_start + frac * (self.per_beta_end - self.per_beta_start)


# -- prioritized replay --------------------------------------------------------


class SumTree:
    """Binary tree over a flat array; leaves hold sampling masses."""

    def __init__(self, capacity: int):
        self.capacity = capacity
        self.tree = np.zeros(2 * capacity - 1)

    @property
    def total(self) -> float:
        return float(self.tree[0])

    def update(self, slot: int, value: float) -> None:
        i = slot + self.capacity - 1
        change = value - self.tree[i]
        self.tree[i] = value
        while i > 0:
            i = (i - 1) // 2
            self.tree[i] += change

    def leaf(self, slot: int) -> float:
        return float(self.tree[slot + self.capacity - 1])

    def find(self, mass: float) -> int:
        """Slot whose cumulative range contains ``mass``."""
        i = 0
        while i < self.capacity - 1:
            left = 2 * i + 1
            if mass <= self.tree[left] or self.tree[left + 1] == 0:
                i = left
            else:
                mass -= self.tree[left]
                i = left + 1
        return i - (self.capacity - 1)


@dataclass(eq=False)
class Transition:
    s: StateVector
    a: int
    reward: float
    s_next: StateVector | None
    done: bool
    priority: float = 1.0


class PrioritizedReplay:
    def __init__(self, capacity: int, alpha: float = 0.6):
        self.capacity = capacity
        self.alpha = alpha
        self.tree = SumTree(capacity)
        self.data: list[Transition | None] = [None] * capacity
        self.pos = 0
        self.size = 0
        self.max_priority = 1.0

    def __len__(self) -> int:
        return self.size

    def store(self, t: Transition, priority: float | None = None) -> int:
        if not t.done and t.s_next is None:
            raise ValueError("non-terminal transition stored without its next state")
        p = self.max_priority if priority is None else float(priority)
        t.priority = p
        slot = self.pos
        self.data[slot] = t
        self.tree.update(slot, p**self.alpha)
        self.max_priority = max(self.max_priority, p)
        self.pos = (self.pos + 1) % self.capacity
        self.size = min(self.size + 1, self.capacity)
        return slot

    def probabilities(self) -> np.ndarray:
        leaves = np.array([self.tree.leaf(i) for i in range(self.size)])
        return leaves / leaves.sum()

    def sample(self, batch: int, beta: float, rng: np.random.Generator):
        """Stratified draw; returns (slots, transitions, importance weights)."""
        total = self.tree.total
        seg = total / batch
        slots = []
        for j in range(batch):
            mass = rng.uniform(seg * j, seg * (j + 1))
            slot = min(self.tree.find(mass), self.size - 1)
            slots.append(slot)
        slots = np.array(slots)
        probs = np.array([self.tree.leaf(s) for s in slots]) / total
        weights = (self.size * probs) ** (-beta)
        weights /= weights.max()
        return slots, [self.data[s] for s in slots], weights

    def update_priorities(self, slots, priorities) -> None:
        for s, p in zip(slots, priorities):
            p = float(p)
            self.data[s].priority = p
            self.tree.update(int(s), p**self.alpha)
            self.max_priority = max(self.max_priority, p)


# -- agent ---------------------------------------------------------------------


def net_config_for(env_cfg: EnvironmentConfig, flat_size: int | None = None, seed: int = 0, **overrides) -> NetConfig:
    base = dict(
        n_primitives=len(catalog()),
        n_actions=env_cfg.cluster_size if flat_size is None else flat_size,
        n_cells=env_cfg.n_cells,
        n_inputs=env_cfg.max_inputs,
        ctx_len=STATE_CTX_LEN,
        cand_rest=env_cfg.candidate_width,
        cand_slots=env_cfg.cluster_size if flat_size is None else 0,
        seed=seed,
    )
    base.update(overrides)
    return NetConfig(**base)


class DQNAgent:
    def __init__(self, net: QNetwork, config: AgentConfig | None = None, seed: int = 0):
        self.config = config or AgentConfig()
        self.net = net
        self.target = net.copy()
        self.optimizer = Adam(lr=self.config.lr)
        self.replay = PrioritizedReplay(self.config.capacity, self.config.per_alpha)
        self.rng = np.random.default_rng([seed, 2])
        self.learn_steps = 0
        self.sync_log: list[tuple[int, str]] = []
        self.skipped_losses = 0

    @property
    def n_slots(self) -> int:
        return self.net.config.cand_slots

    def batch(self, states: Sequence[StateVector]) -> dict:
        return stack_states(list(states), self.n_slots)

    def select(self, states: Sequence[StateVector], eps: float) -> list[int]:
        """Epsilon-greedy per state; greedy picks the first maximal Q."""
        # argmax Q equals argmax A: V and the mean shift are constant per row
        A = self.net.advantages(self.batch(states))
        picks = []
        for row in A:
            if eps > 0 and self.rng.random() < eps:
                picks.append(int(self.rng.integers(len(row))))
            else:
                picks.append(int(np.argmax(row)))
        return picks

    def q_of(self, state: StateVector) -> np.ndarray:
        return self.net.q_values(self.batch([state]))[0]

    def targets(self, transitions: Sequence[Transition]) -> np.ndarray:
        r = np.array([t.reward for t in transitions])
        done = np.array([t.done for t in transitions])
        y = r.copy()
        live = np.flatnonzero(~done)
        if len(live):
            q_next = self.target.q_values(self.batch([transitions[i].s_next for i in live]))
            y[live] += self.config.gamma * q_next.max(axis=1)
        return y

    def learn(self, transitions: Sequence[Transition], weights: np.ndarray | None = None):
        """One gradient step on the given transitions; returns (loss, td errors)."""
        B = len(transitions)
        w = np.ones(B) if weights is None else np.asarray(weights, dtype=np.float64)
        y = self.targets(transitions)
        _, _, Q, cache = self.net.forward(self.batch([t.s for t in transitions]), record=True)
        a = np.array([t.a for t in transitions])
        delta = Q[np.arange(B), a] - y
        losses, dl = huber(delta)
        loss = float(np.mean(w * losses))
        if not math.isfinite(loss):
            self.skipped_losses += 1
            log.warning("non-finite loss, training step skipped")
            return None, delta
        dQ = np.zeros_like(Q)
        dQ[np.arange(B), a] = w * dl / B
        grads = self.net.backward(cache, dQ)
        self.optimizer.step(self.net.params, grads)
        self.learn_steps += 1
        if self.learn_steps % self.config.target_sync == 0:
            self.sync_target()
        return loss, delta

    def sync_target(self) -> None:
        self.target = self.net.copy()
        self.sync_log.append((self.learn_steps, self.target.fingerprint()))

    def train_step(self, beta: float):
        if len(self.replay) < self.config.batch_size:
            return None
        slots, batch, weights = self.replay.sample(self.config.batch_size, beta, self.rng)
        loss, delta = self.learn(batch, weights)
        if loss is not None:
            self.replay.update_priorities(slots, np.abs(delta) + 1e-6)
        return loss


# -- episode drivers -----------------------------------------------------------


@dataclass
class EpisodeRecord:
    episode: int
    dataset: int
    total_reward: float
    epsilon: float
    loss_mean: float
    steps: list = field(default_factory=list)


class Runner:
    """Plays episodes in plugin or flat mode against an agent."""

    def __init__(self, agent: DQNAgent, env_config: EnvironmentConfig, flat: bool = False):
        self.agent = agent
        self.env = GridEnv(env_config)
        self.flat = FlatActionSpace(env_config) if flat else None
        self.plugin = None if flat else HierarchicalPlugin(self.env, agent.net.embed)

    def _selector(self, eps: float):
        explore_all = self.agent.config.explore_all_levels

        def select(states):
            final_level = len(states) == 1
            return self.agent.select(states, eps if (explore_all or final_level) else 0.0)

        return select

    def reset(self, job: LearningJob, seed: int):
        if self.flat is not None:
            self.env.reset(job, seed)
        else:
            self.plugin.reset(job, seed)

    def decide(self, eps: float):
        """One environment step; returns (final state, action index, reward, done)."""
        if self.flat is not None:
            state = self.env.encode_state()
            idx = self.agent.select([state], eps)[0]
            _, reward, done = self.env.step(self.flat.resolve(self.env, idx))
            return state, idx, reward, done
        res = self.plugin.step(self._selector(eps))
        return res.final_state, res.final_index, res.reward, res.done


def train_corpus(
    jobs: Sequence[LearningJob],
    episodes: int,
    seed: int = 0,
    env_config: EnvironmentConfig | None = None,
    agent_config: AgentConfig | None = None,
    flat: bool = False,
    net_overrides: dict | None = None,
    agent: DQNAgent | None = None,
):
    """Train one agent across ``jobs``; returns (agent, list of EpisodeRecord)."""
    env_config = env_config or EnvironmentConfig()
    agent_config = agent_config or AgentConfig()
    if agent is None:
        flat_size = len(FlatActionSpace(env_config)) if flat else None
        net = QNetwork(net_config_for(env_config, flat_size, seed, **(net_overrides or {})))
        agent = DQNAgent(net, agent_config, seed)
    runner = Runner(agent, env_config, flat)
    usable = []
    for j, job in enumerate(jobs):
        try:
            runner.env.check_job(job)
            usable.append(j)
        except DataError as exc:
            log.warning("skipping dataset %s: %s", job.name or j, exc)
    if not usable and episodes > 0:
        raise DataError("no usable dataset in the corpus")
    pick_rng = np.random.default_rng([seed, 1])
    records = []
    env_steps = 0
    for ep in range(episodes):
        eps = agent_config.epsilon(ep)
        beta = agent_config.beta(ep)
        d = usable[int(pick_rng.integers(len(usable)))]
        runner.reset(jobs[d], seed * 1_000_003 + ep)
        pending = None
        total, losses, done = 0.0, [], False
        while not done:
            state, idx, reward, done = runner.decide(eps)
            if pending is not None:
                # the previous decision's next state is this decision's state
                pending.s_next = state
                agent.replay.store(pending)
            pending = Transition(state, idx, reward, None, done)
            if done:
                pending.s_next = state.zeros_like()
                agent.replay.store(pending)
            total += reward
            env_steps += 1
            if env_steps % agent_config.train_every == 0:
                loss = agent.train_step(beta)
                if loss is not None:
                    losses.append(loss)
        records.append(
            EpisodeRecord(ep, d, total, eps, float(np.mean(losses)) if losses else float("nan"))
        )
    return agent, records


METRIC_FIELDS = ("episode", "dataset", "total_reward", "epsilon", "loss_mean")


def write_metrics(records: Sequence[EpisodeRecord], path) -> None:
    with Path(path).open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(METRIC_FIELDS)
        for r in records:
            w.writerow([r.episode, r.dataset, repr(r.total_reward), repr(r.epsilon), repr(r.loss_mean)])


def save_agent(agent: DQNAgent, directory, env_config: EnvironmentConfig, flat: bool) -> None:
    extra = {
        "mode": "flat" if flat else "plugin",
        "agent_config": asdict(agent.config),
        "env_config": env_config.to_json(),
    }
    agent.net.save(directory, extra)
    directory = Path(directory)
    (directory / "agent_config.json").write_text(json.dumps(asdict(agent.config), indent=2))
    (directory / "env_config.json").write_text(json.dumps(env_config.to_json(), indent=2))


def load_agent(directory, seed: int = 0):
    """Returns (agent, env_config, flat)."""
    manifest = json.loads((Path(directory) / "manifest.json").read_text())
    net = QNetwork.load(directory)
    agent = DQNAgent(net, AgentConfig(**manifest["agent_config"]), seed)
    return agent, EnvironmentConfig(**manifest["env_config"]), manifest["mode"] == "flat"
