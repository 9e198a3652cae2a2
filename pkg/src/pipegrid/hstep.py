"""Hierarchical action tournament over a dynamic open list.

The open list is cut into same-size clusters of n candidates; the agent picks
one winner per cluster, winners are clustered again, and so on until a single
cluster remains. Its winner is the action sent to the environment. The agent
only ever sees fixed n-slot decisions.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .environment import ActionCandidate, GridEnv, StateVector

# (states with cluster attached) -> one index per state, each in 0..n-1
AgentSelect = Callable[[list[StateVector]], Sequence[int]]


@dataclass
class ClusterSet:
    clusters: list[list[ActionCandidate]]
    members: list[list[int]]  # positions in the clustered list, -1 for padding
    level: int = 0

    @property
    def n_padding(self) -> int:
        return sum(m.count(-1) for m in self.members)

    def to_json(self) -> dict:
        return {"level": self.level, "members": self.members}


def _unit_rows(X: np.ndarray) -> np.ndarray:
    norms = np.linalg.norm(X, axis=1, keepdims=True)
    norms[norms == 0] = 1.0
    return X / norms


def cosine_kmeans(X: np.ndarray, k: int, rng: np.random.Generator, iters: int = 20) -> np.ndarray:
    """Spherical k-means with k-means++ seeding; returns unit centroids (k, d)."""
    U = _unit_rows(X)
    m = len(U)
    centroids = np.empty((k, U.shape[1]))
    centroids[0] = U[rng.integers(m)]
    dist = 1.0 - U @ centroids[0]
    for j in range(1, k):
        w = np.clip(dist, 0.0, None) ** 2
        total = w.sum()
        pick = rng.choice(m, p=w / total) if total > 0 else int(rng.integers(m))
        centroids[j] = U[pick]
        dist = np.minimum(dist, 1.0 - U @ centroids[j])
    assign = None
    for _ in range(iters):
        new = np.argmax(U @ centroids.T, axis=1)
        if assign is not None and np.array_equal(new, assign):
            break
        assign = new
        for j in range(k):
            rows = U[assign == j]
            if len(rows):
                c = rows.sum(0)
                norm = np.linalg.norm(c)
                if norm > 0:
                    centroids[j] = c / norm
    return centroids


def make_clusters(
    A: list[ActionCandidate],
    n: int,
    vectors: np.ndarray,
    seed: int = 0,
    level: int = 0,
) -> ClusterSet:
    """Split ``A`` into ceil(|A|/n) clusters of exactly n slots.

    ``vectors`` holds one dense row per candidate. Centroids come from cosine
    k-means; then each centroid, in index order, claims its n nearest
    unassigned candidates. Slots left over at the end are padding.
    """
    if not A:
        raise ValueError("cannot cluster an empty action list")
    size = len(A)
    if size <= n:
        idx = list(range(size)) + [-1] * (n - size)
        return ClusterSet([_slots(A, idx)], [idx], level)
    k = math.ceil(size / n)
    rng = np.random.default_rng(seed)
    centroids = cosine_kmeans(np.asarray(vectors, dtype=np.float64), k, rng)
    U = _unit_rows(np.asarray(vectors, dtype=np.float64))
    dist = 1.0 - U @ centroids.T  # (size, k)
    free = np.ones(size, dtype=bool)
    members = []
    for j in range(k):
        cand = np.flatnonzero(free)
        order = cand[np.argsort(dist[cand, j], kind="stable")][:n]
        free[order] = False
        idx = sorted(order.tolist())
        members.append(idx + [-1] * (n - len(idx)))
    return ClusterSet([_slots(A, m) for m in members], members, level)


def _slots(A, idx):
    return [A[i] if i >= 0 else ActionCandidate.padding() for i in idx]


def level_sizes(size: int, n: int) -> list[int]:
    """Candidate counts per tournament level, ending at the final winner."""
    sizes = [size]
    while sizes[-1] > n:
        sizes.append(math.ceil(sizes[-1] / n))
    sizes.append(1)
    return sizes


def query_count(size: int, n: int) -> int:
    return sum(math.ceil(s / n) for s in level_sizes(size, n)[:-1])


@dataclass
class StepResult:
    final_state: StateVector  # base state with the final cluster attached
    final_index: int
    final_action: ActionCandidate
    next_state: StateVector  # environment state after the action (no cluster)
    reward: float
    done: bool
    level_sizes: list[int] = field(default_factory=list)
    n_queries: int = 0


def tournament(
    A: list[ActionCandidate],
    base: StateVector,
    n: int,
    agent_select: AgentSelect,
    attach: Callable[[StateVector, list[ActionCandidate]], StateVector],
    vectorize: Callable[[list[ActionCandidate]], np.ndarray],
    seed: int = 0,
    trace: list | None = None,
):
    """Run the elimination levels; returns (final state, index, action, sizes, queries)."""
    current = list(A)
    sizes = [len(current)]
    queries = 0
    level = 0
    while True:
        cs = make_clusters(current, n, vectorize(current), seed=seed + 7919 * level, level=level)
        states = [attach(base, c) for c in cs.clusters]
        picks = [int(i) for i in agent_select(states)]
        queries += len(states)
        if trace is not None:
            trace.append({**cs.to_json(), "picks": picks})
        if len(cs.clusters) == 1:
            return states[0], picks[0], cs.clusters[0][picks[0]], sizes + [1], queries
        current = [c[i] for c, i in zip(cs.clusters, picks)]
        sizes.append(len(current))
        level += 1


class HierarchicalPlugin:
    """Wraps a GridEnv so the agent only chooses among n-slot clusters."""

    def __init__(self, env: GridEnv, embed: Callable[[np.ndarray], np.ndarray]):
        self.env = env
        self.embed = embed  # ids -> (len, d) embedding rows
        self.n = env.config.cluster_size
        self.trace: list[dict] | None = None
        self._step = 0

    def vectorize(self, cands: list[ActionCandidate]) -> np.ndarray:
        cfg = self.env.config
        ids = np.array([c.primitive_id for c in cands], dtype=np.int64)
        rest = np.stack([c.rest(cfg.max_inputs, cfg.n_cells) for c in cands])
        return np.hstack([self.embed(ids), rest])

    def attach(self, base: StateVector, cluster: list[ActionCandidate]) -> StateVector:
        cfg = self.env.config
        return base.with_cluster(cluster, cfg.max_inputs, cfg.n_cells)

    def _seed(self) -> int:
        return int(np.random.SeedSequence([self.episode_seed, self._step]).generate_state(1)[0] % (2**31))

    def reset(self, job, seed: int = 0) -> StateVector:
        self.episode_seed = seed
        self._step = 0
        self.base = self.env.reset(job, seed)
        A = self.env.open_list()
        first = make_clusters(A, self.n, self.vectorize(A), seed=self._seed())
        return self.attach(self.base, first.clusters[0])

    def step(self, agent_select: AgentSelect) -> StepResult:
        A = self.env.open_list()
        levels = [] if self.trace is not None else None
        final_state, idx, action, sizes, queries = tournament(
            A, self.base, self.n, agent_select, self.attach, self.vectorize, self._seed(), levels
        )
        cell = self.env.grid.cursor
        next_state, reward, done = self.env.step(action)
        if self.trace is not None:
            self.trace.append({"cell": cell, "levels": levels, "action": repr(action), "reward": reward})
        self._step += 1
        self.base = next_state
        return StepResult(final_state, idx, action, next_state, reward, done, sizes, queries)

    def trace_json(self) -> str:
        return json.dumps(self.trace or [], indent=2)


def hierarchical_step(env: GridEnv, plugin: HierarchicalPlugin, agent_select: AgentSelect) -> StepResult:
    """One environment step driven by the tournament."""
    assert plugin.env is env
    return plugin.step(agent_select)
