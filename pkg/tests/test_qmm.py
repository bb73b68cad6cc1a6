import numpy as np
import pytest

from marginprune import qmm, qpsolver
from marginprune.dataset import Dataset, synth_diagonal
from marginprune.ensemble import Ensemble, fit_adaboost, fit_random_forest, weighted_vote
from marginprune.margins import margin_system, prediction_matrix
from marginprune.qmm import (AuditFailed, PruneResult, emargin_ladder, margin_constraint_audit,
                             qmm_prune, qmm_weights, rank_reduce)
from marginprune.tree import config_for


def test_duplicate_columns_fold():
    c = np.array([1, -1, 1, 1])
    d = np.array([1, 1, -1, 1])
    H = np.column_stack([c, c, d])
    rr = rank_reduce(H, np.array([0.2, 0.3, 0.5]))
    assert rr.rank == 2
    assert rr.pivots.tolist() == [0, 2] and rr.dropped.tolist() == [1]
    assert np.allclose(rr.alpha_prime, [0.5, 0.5])


def test_full_rank_is_identity(rng):
    H = rng.choice((-1, 1), size=(20, 4))
    a = rng.dirichlet(np.ones(4))
    rr = rank_reduce(H, a)
    assert rr.rank == 4 and np.allclose(rr.alpha_prime, a)


def test_linear_combination_fold_mostly_agrees():
    agree = []
    for seed in range(30):
        r = np.random.default_rng(seed)
        H = r.choice((-1, 1), size=(12, 3)).astype(float)
        # a +-1 column that is a combination of others: the negation of column 0
        H = np.column_stack([H, -H[:, 0]])
        a = r.dirichlet(np.ones(4))
        rr = rank_reduce(H, a)
        s0 = weighted_vote(H, a, 0)
        s1 = weighted_vote(rr.H_prime, rr.alpha_prime, 0)
        agree.append(np.mean(s0 == s1))
    assert np.mean(agree) >= 0.95 or np.median(agree) >= 0.95


def test_identical_stumps_collapse():
    d = synth_diagonal(100, 0, 0)
    e = fit_adaboost(d, 1, config_for("stump"))
    many = Ensemble(e.learners * 6, np.full(6, 1 / 6), "adaboost", e.tree_config)
    res = qmm_prune(many, d)
    assert len(res.survivors) == 1
    H = prediction_matrix(many.learners, d.features)
    assert np.array_equal(weighted_vote(H, res.weights), weighted_vote(H, many.alpha))


def test_optimal_solve_contract():
    d = synth_diagonal(300, 10, 1)
    e = fit_adaboost(d, 40, config_for("stump"))
    H = prediction_matrix(e.learners, d.features)
    res = qmm_prune(e, d, H=H)
    assert res.solver_status == qpsolver.OPTIMAL
    rr = rank_reduce(H, e.alpha)
    ms = margin_system(rr.H_prime, d.labels, rr.alpha_prime)
    audit = margin_constraint_audit(res, ms, res.upsilon_used)
    assert audit.min_slack >= -1e-6
    w = res.weights[rr.pivots]
    assert w @ ms.sigma @ w <= rr.alpha_prime @ ms.sigma @ rr.alpha_prime + 1e-8
    assert abs(res.weights.sum() - 1) < 1e-12
    assert res.weights[res.weights > 0].min() > qmm.WEIGHT_THRESHOLD


def test_not_psd_fallback(monkeypatch):
    d = synth_diagonal(60, 0, 2)
    e = fit_adaboost(d, 8, config_for("stump"))
    monkeypatch.setattr(qpsolver, "psd_check", lambda Q, rel_tol=1e-10: (qpsolver.NOT_PSD, -1.0))
    res = qmm_prune(e, d)
    assert res.solver_status == qpsolver.NOT_PSD
    assert res.diagnostics["fallback"] is True
    rr = rank_reduce(prediction_matrix(e.learners, d.features), e.alpha)
    assert np.allclose(res.weights[rr.pivots], rr.alpha_prime)
    assert res.upsilon_used is None


def test_fallback_audit_has_zero_slack():
    d = synth_diagonal(60, 0, 2)
    e = fit_adaboost(d, 5, config_for("stump"))
    H = prediction_matrix(e.learners, d.features)
    rr = rank_reduce(H, e.alpha)
    ms = margin_system(rr.H_prime, d.labels, rr.alpha_prime)
    w = np.zeros(e.T)
    w[rr.pivots] = rr.alpha_prime
    fake = PruneResult(w, np.flatnonzero(w > 0), None, qpsolver.NOT_PSD, pivots=rr.pivots)
    audit = margin_constraint_audit(fake, ms, 0.5)
    assert abs(audit.min_slack) < 1e-12


def test_audit_detects_violation():
    d = synth_diagonal(80, 5, 0)
    e = fit_adaboost(d, 6, config_for("stump"))
    H = prediction_matrix(e.learners, d.features)
    ms = margin_system(H, d.labels, e.alpha)
    w = np.zeros(e.T)
    w[np.argmax(ms.E.mean(axis=0) * -1)] = 1.0  # weakest learner alone
    bad = PruneResult(w, np.flatnonzero(w), 0.5, qpsolver.OPTIMAL)
    with pytest.raises(AuditFailed):
        margin_constraint_audit(bad, ms, 0.5)


def test_ladder_validation_and_defaults():
    H = np.array([[1, 1], [1, -1], [-1, 1]])
    with pytest.raises(ValueError):
        qmm_weights(H, np.ones(3), np.array([0.5, 0.5]), [0.1, 0.5])
    assert qmm.default_ladder("adaboost") == (0.5, 0.25, 0.05, 0.01)
    assert qmm.default_ladder("rf") == (0.25, 0.15, 0.05, 0.01)


def test_rf_uses_rf_ladder():
    d = synth_diagonal(200, 5, 3)
    e = fit_random_forest(d, 30, config_for("depth2"), seed=1)
    res = qmm_prune(e, d)
    assert res.upsilon_used in qmm.RF_LADDER


def test_emargin_ladder():
    d = synth_diagonal(200, 5, 3)
    e = fit_adaboost(d, 30, config_for("stump"))
    H = prediction_matrix(e.learners, d.features)
    lad = emargin_ladder(H, d.labels, e.alpha, 5.0, fallback=qmm.ADABOOST_LADDER)
    assert 0 < lad[0] <= 1
    assert all(a > b for a, b in zip(lad, lad[1:]))


def test_result_serialization():
    d = synth_diagonal(100, 3, 1)
    e = fit_adaboost(d, 10, config_for("stump"))
    res = qmm_prune(e, d)
    back = PruneResult.loads(res.dumps())
    assert np.array_equal(back.weights, res.weights)
    assert back.upsilon_used == res.upsilon_used
    assert back.pruning_rate == pytest.approx(1 - len(res.survivors) / 10)
