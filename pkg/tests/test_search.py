import csv

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from conftest import make_table
from pipegrid import toydata
from pipegrid.agent import AgentConfig, DQNAgent, net_config_for
from pipegrid.environment import ActionCandidate, EnvironmentConfig
from pipegrid.nn import QNetwork
from pipegrid.pipeline import Grid, Predictions, compile_grid, execute, to_json
from pipegrid.primitives import catalog
from pipegrid.search import (
    ScoredPipeline,
    SearchConfig,
    SearchError,
    combine_predictions,
    ensemble_weights,
    mix_score,
    predict_ensemble,
    predict_vanilla,
    rank_candidates,
    search,
    write_scores,
)
from pipegrid.tabular import LearningJob, split_train_test

ID = {p.name: p.id for p in catalog()}
TINY = dict(lstm_size=8, value_layers=(16,), adv_layers=(16,))


def sp(kscore, q, order):
    return ScoredPipeline({}, kscore, q, order=order)


def tree_only():
    return compile_grid(Grid.from_rows([[None, None, None, None, (ID["decision_tree"], [0]), None]]))


def scored(dag, score=1.0, rank=1):
    return ScoredPipeline(to_json(dag), 0.5, 0.0, score=score, rank=rank, _dag=dag)


def test_score_example():
    assert mix_score(0.8, 0.6, 0.5) == pytest.approx(0.7)


def test_beta_zero_ranks_by_kscore():
    cands = [sp(0.6, 9.0, 0), sp(0.9, -3.0, 1), sp(0.7, 1.0, 2)]
    ranked = rank_candidates(cands, 0.0)
    assert [c.kscore for c in ranked] == [0.9, 0.7, 0.6]
    assert [c.rank for c in ranked] == [1, 2, 3]


def test_beta_one_ranks_by_q():
    ranked = rank_candidates([sp(0.6, 9.0, 0), sp(0.9, -3.0, 1), sp(0.7, 1.0, 2)], 1.0)
    assert [c.q_final for c in ranked] == [9.0, 1.0, -3.0]
    assert ranked[0].q_norm == 1.0 and ranked[-1].q_norm == 0.0


def test_equal_q_normalizes_to_half_and_ties_by_order():
    ranked = rank_candidates([sp(0.5, 2.0, 1), sp(0.5, 2.0, 0)], 0.5)
    assert all(c.q_norm == 0.5 for c in ranked)
    assert [c.order for c in ranked] == [0, 1]


@settings(max_examples=100)
@given(st.floats(0, 1), st.floats(0, 1), st.floats(0, 1), st.floats(0, 0.5))
def test_score_monotone(q, k, beta, bump):
    assert mix_score(q, min(1, k + bump), beta) >= mix_score(q, k, beta)
    assert mix_score(min(1, q + bump), k, beta) >= mix_score(q, k, beta)


@settings(max_examples=50)
@given(st.lists(st.floats(0, 1), min_size=1, max_size=12))
def test_weights_sum_to_one(scores):
    w = ensemble_weights(scores)
    assert abs(w.sum() - 1.0) <= 1e-9 and np.all(w >= 0)


def test_zero_scores_uniform_weights():
    assert ensemble_weights([0.0, 0.0, 0.0]).tolist() == [1 / 3] * 3


def test_ensemble_tie_goes_to_lowest_class():
    a = Predictions(np.array([1]), np.array([[0.0, 1.0]]))
    b = Predictions(np.array([0]), np.array([[1.0, 0.0]]))
    assert combine_predictions([a, b], [0.4, 0.4]).labels.tolist() == [0]


def _memorize_split():
    rng = np.random.default_rng(0)
    y = rng.integers(0, 3, 60)
    t = make_table({"copy": y.astype(float), "noise": rng.normal(size=60)}, [f"c{v}" for v in y])
    return t, t  # test rows repeat train rows


def test_vanilla_memorization():
    train, test = _memorize_split()
    preds, acc, chosen = predict_vanilla([scored(tree_only())], train, test)
    assert acc == 1.0 and chosen.rank == 1


def test_vanilla_falls_through_invalid():
    train, test = _memorize_split()
    knn = compile_grid(Grid.from_rows([[None, None, None, None, (ID["knn"], [0]), None]]))
    nan_train = make_table({"copy": [np.nan] + [1.0] * 59}, ["c0"] * 30 + ["c1"] * 30)
    imputed = compile_grid(Grid.from_rows([[(ID["imputer"], [0]), None, None, None, (ID["decision_tree"], [1]), None]]))
    _, _, chosen = predict_vanilla([scored(knn, rank=1), scored(imputed, rank=2)], nan_train, nan_train)
    assert chosen.rank == 2
    with pytest.raises(SearchError):
        predict_vanilla([scored(knn)], nan_train, nan_train)


def test_vanilla_deterministic():
    t = toydata.TOY_DATASETS["blobs_missing"]()
    train, test = split_train_test(t, 0.8, 0)
    forest = compile_grid(Grid.from_rows([[(ID["imputer"], [0]), None, None, None, (ID["random_forest"], [1]), None]]))
    a, _, _ = predict_vanilla([scored(forest)], train, test, seed=3)
    b, _, _ = predict_vanilla([scored(forest)], train, test, seed=3)
    assert np.array_equal(a.scores, b.scores)


def test_single_class_test_slice():
    train, _ = _memorize_split()
    rows = np.flatnonzero(train.y == 0)
    test = train.take(rows)
    _, acc, _ = predict_vanilla([scored(tree_only())], train, test)
    preds = execute(tree_only(), train, test, 0)
    assert acc == np.mean(preds.labels == 0)


def test_ensemble_k1_equals_vanilla_and_identical_members():
    t = toydata.TOY_DATASETS["mixed_categorical"]()
    train, test = split_train_test(t, 0.8, 0)
    dag = compile_grid(Grid.from_rows([[(ID["one_hot_encoder"], [0]), None, None, None, (ID["logistic_regression"], [1]), None]]))
    van, acc_v, _ = predict_vanilla([scored(dag)], train, test)
    ens, acc_e = predict_ensemble([scored(dag, score=0.3)], train, test)
    assert np.array_equal(van.labels, ens.labels) and acc_v == acc_e
    triple, _ = predict_ensemble([scored(dag, 0.2), scored(dag, 0.5), scored(dag, 0.9)], train, test)
    assert np.array_equal(triple.labels, van.labels)


def test_config_invariants():
    with pytest.raises(ValueError):
        SearchConfig(K=5, episodes=3)
    with pytest.raises(ValueError):
        SearchConfig(beta=1.5)


def _agent(seed=0):
    net = QNetwork(net_config_for(EnvironmentConfig(), seed=seed, **TINY))
    return DQNAgent(net, AgentConfig(), seed)


def test_search_dedup_ranking_and_determinism(tmp_path):
    job = LearningJob(split_train_test(toydata.TOY_DATASETS["xor_negative"](), 0.8, 0)[0], name="xor")
    cfg = SearchConfig(K=5, episodes=25, beta=0.5, eps=1.0, seed=4)
    agent = _agent()
    before = agent.rng.bit_generator.state
    tops = search(job, agent, cfg, EnvironmentConfig())
    assert agent.rng.bit_generator.state == before
    assert 1 <= len(tops) <= 5
    assert [t.rank for t in tops] == list(range(1, len(tops) + 1))
    assert len({t.dag.structural_key() for t in tops}) == len(tops)
    for t in tops:
        assert t.score == pytest.approx(0.5 * t.q_norm + 0.5 * t.kscore)
    scores = [t.score for t in tops]
    assert scores == sorted(scores, reverse=True)
    write_scores(tops, tmp_path / "a.csv")
    write_scores(search(job, _agent(), cfg, EnvironmentConfig()), tmp_path / "b.csv")
    assert (tmp_path / "a.csv").read_bytes() == (tmp_path / "b.csv").read_bytes()
    with (tmp_path / "a.csv").open() as fh:
        assert next(csv.reader(fh)) == ["pipeline_id", "KScore", "Q_final", "Qnorm", "Score", "rank"]


def test_search_without_valid_pipeline_raises(monkeypatch):
    job = LearningJob(split_train_test(toydata.TOY_DATASETS["xor_negative"](), 0.8, 0)[0])
    # with only the blank action on offer no episode can build an estimator
    monkeypatch.setattr("pipegrid.environment.GridEnv.open_list", _blank_only)
    with pytest.raises(SearchError, match="larger"):
        search(job, _agent(), SearchConfig(K=1, episodes=2), EnvironmentConfig())


def _blank_only(self):
    mand = self.mandatory_input()
    self._open = [ActionCandidate(0, (mand,), True, np.zeros(12))]
    self._open_keys = {}
    return self._open
