"""Inference-time pipeline search, Score ranking, vanilla and ensemble prediction."""
from __future__ import annotations

import csv
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .agent import DQNAgent, Runner
from .environment import EnvironmentConfig
from .pipeline import PipelineDag, Predictions, accuracy, execute, from_json, to_json
from .primitives import InvalidPipeline
from .tabular import LearningJob, Table

log = logging.getLogger(__name__)


class SearchError(RuntimeError):
    pass


@dataclass
class SearchConfig:
    K: int = 10
    episodes: int = 5000
    beta: float = 0.5
    eps: float = 0.05
    k_folds: int = 3
    seed: int = 0

    def __post_init__(self):
        if self.K < 1 or self.episodes < self.K:
            raise ValueError("need episodes >= K >= 1")
        if not 0 <= self.beta <= 1:
            raise ValueError("beta must lie in [0, 1]")
        if not 0 <= self.eps <= 1:
            raise ValueError("eps must lie in [0, 1]")


@dataclass
class ScoredPipeline:
    pipeline: dict
    kscore: float
    q_final: float
    q_norm: float = 0.0
    score: float = 0.0
    rank: int = 0
    order: int = 0  # discovery order
    _dag: PipelineDag | None = field(default=None, repr=False)

    @property
    def dag(self) -> PipelineDag:
        if self._dag is None:
            self._dag = from_json(self.pipeline)
        return self._dag


def mix_score(q_norm: float, kscore: float, beta: float) -> float:
    return beta * q_norm + (1.0 - beta) * kscore


def rank_candidates(cands: list[ScoredPipeline], beta: float) -> list[ScoredPipeline]:
    """Min-max normalize Q over the candidates, mix with KScore, sort and rank."""
    if not cands:
        return []
    qs = np.array([c.q_final for c in cands])
    lo, hi = qs.min(), qs.max()
    for c in cands:
        c.q_norm = 0.5 if hi == lo else float((c.q_final - lo) / (hi - lo))
        c.score = mix_score(c.q_norm, c.kscore, beta)
    ranked = sorted(cands, key=lambda c: (-c.score, -c.kscore, c.order))
    for r, c in enumerate(ranked, start=1):
        c.rank = r
    return ranked


def search(job: LearningJob, agent: DQNAgent, cfg: SearchConfig, env_config: EnvironmentConfig, flat: bool = False) -> list[ScoredPipeline]:
    """Roll out ``cfg.episodes`` episodes with exploration ``cfg.eps`` and keep
    the top-K distinct valid pipelines by Score."""
    env_config = EnvironmentConfig(**{**env_config.to_json(), "k_folds": cfg.k_folds})
    # exploration draws come from a generator tied to the search seed
    saved_rng, agent.rng = agent.rng, np.random.default_rng([cfg.seed, 3])
    try:
        found = _collect(job, agent, cfg, Runner(agent, env_config, flat))
    finally:
        agent.rng = saved_rng
    if not found:
        raise SearchError(f"no valid pipeline found in {cfg.episodes} episodes; try a larger episode budget")
    return rank_candidates(list(found.values()), cfg.beta)[: cfg.K]


def _collect(job, agent, cfg, runner) -> dict[str, ScoredPipeline]:
    found: dict[str, ScoredPipeline] = {}
    for ep in range(cfg.episodes):
        runner.reset(job, cfg.seed * 1_000_003 + ep)
        done = False
        while not done:
            state, idx, _, done = runner.decide(cfg.eps)
        kscore = runner.env.last_kscore
        if kscore is None:
            continue
        dag = runner.env.last_dag
        key = dag.structural_key()
        if key in found:
            continue
        q_final = float(agent.q_of(state)[idx])
        found[key] = ScoredPipeline(to_json(dag), float(kscore), q_final, order=len(found), _dag=dag)
    return found


def predict_vanilla(tops: Sequence[ScoredPipeline], train: Table, test: Table, seed: int = 0):
    """Refit the best pipeline that executes; returns (predictions, accuracy, pipeline)."""
    for sp in tops:
        try:
            preds = execute(sp.dag, train, test, seed)
        except InvalidPipeline as exc:
            log.warning("rank %d pipeline failed at refit (%s); trying the next one", sp.rank, exc)
            continue
        return preds, accuracy(preds.labels, test.y), sp
    raise SearchError("every candidate pipeline failed at refit")


def ensemble_weights(scores: Sequence[float]) -> np.ndarray:
    s = np.asarray(scores, dtype=np.float64)
    total = s.sum()
    if total <= 0:
        return np.full(len(s), 1.0 / len(s))
    return s / total


def combine_predictions(outs: Sequence[Predictions], scores: Sequence[float]) -> Predictions:
    """Weighted sum of per-class score matrices, then a row-wise argmax."""
    w = ensemble_weights(scores)
    mix = sum(wi * p.scores for wi, p in zip(w, outs))
    labels = np.argmax(mix, axis=1)  # first maximum: lowest class index on ties
    return Predictions(labels, mix)


def predict_ensemble(tops: Sequence[ScoredPipeline], train: Table, test: Table, seed: int = 0):
    """Score-weighted average of per-class score vectors; returns (predictions, accuracy)."""
    outs, scores = [], []
    for sp in tops:
        try:
            outs.append(execute(sp.dag, train, test, seed))
            scores.append(sp.score)
        except InvalidPipeline as exc:
            log.warning("rank %d pipeline failed at refit (%s); left out of the ensemble", sp.rank, exc)
    if not outs:
        raise SearchError("every ensemble member failed at refit")
    preds = combine_predictions(outs, scores)
    return preds, accuracy(preds.labels, test.y)


SCORE_FIELDS = ("pipeline_id", "KScore", "Q_final", "Qnorm", "Score", "rank")


def write_scores(tops: Sequence[ScoredPipeline], path) -> None:
    with Path(path).open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(SCORE_FIELDS)
        for sp in tops:
            w.writerow([f"pipeline_{sp.rank:02d}", repr(sp.kscore), repr(sp.q_final), repr(sp.q_norm), repr(sp.score), sp.rank])
