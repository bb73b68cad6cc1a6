"""Selection-based pruning baselines (kappa pruning, DREP) and pairwise diversity."""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .dataset import Dataset
from .ensemble import Ensemble, weighted_vote
from .margins import prediction_matrix
from .qmm import PruneResult


class DegenerateAgreement(ValueError):
    pass


@dataclass(frozen=True)
class KappaTable:
    counts: np.ndarray
    theta1: float
    theta2: float
    kappa: float
    degenerate: bool = False


def kappa_from_counts(C) -> KappaTable:
    """Cohen's kappa from a 2x2 table indexed (-1, +1) x (-1, +1)."""
    C = np.asarray(C, dtype=float)
    n = C.sum()
    theta1 = float(np.trace(C) / n)
    theta2 = float(C.sum(axis=1) @ C.sum(axis=0)) / n**2
    if theta2 >= 1.0:
        # both classifiers constant and identical
        return KappaTable(C.astype(int), theta1, theta2, 1.0, degenerate=True)
    return KappaTable(C.astype(int), theta1, theta2, (theta1 - theta2) / (1.0 - theta2))


def kappa(pred_a, pred_b, strict: bool = False) -> KappaTable:
    """Agreement between two +-1 prediction vectors.

    Two identical constant vectors give theta2 = 1; kappa is then reported
    as 1 with ``degenerate`` set, or DegenerateAgreement is raised when
    ``strict``.
    """
    a = np.asarray(pred_a)
    b = np.asarray(pred_b)
    if a.shape != b.shape:
        raise ValueError("prediction vectors differ in length")
    ia, ib = (a > 0).astype(int), (b > 0).astype(int)
    C = np.zeros((2, 2))
    np.add.at(C, (ia, ib), 1)
    out = kappa_from_counts(C)
    if strict and out.degenerate:
        raise DegenerateAgreement("both predictors are the same constant")
    return out


def pairwise_kappa(H) -> np.ndarray:
    """T x T matrix of kappa between learner columns (vectorized)."""
    P = (np.asarray(H) > 0).astype(float)
    n = P.shape[0]
    pos = P.sum(axis=0) / n
    both_pos = P.T @ P / n
    both_neg = (1 - P).T @ (1 - P) / n
    theta1 = both_pos + both_neg
    theta2 = np.outer(pos, pos) + np.outer(1 - pos, 1 - pos)
    with np.errstate(divide="ignore", invalid="ignore"):
        K = (theta1 - theta2) / (1 - theta2)
    return np.where(theta2 >= 1.0, 1.0, K)


def _result(T, chosen, weights, method):
    w = np.zeros(T)
    chosen = np.array(sorted(chosen), dtype=int)
    w[chosen] = weights[chosen] / weights[chosen].sum()
    return PruneResult(w, chosen, None, "Selected", method)


def kappa_prune(e: Ensemble, train: Dataset, keep: int | None = None, H=None) -> PruneResult:
    """Admit learners pair by pair, most disagreeing pairs (lowest kappa) first."""
    T = e.T
    if keep is None:
        keep = math.ceil(0.2 * T)
    if not 1 <= keep <= T:
        raise ValueError(f"keep must lie in 1..{T}")
    if H is None:
        H = prediction_matrix(e.learners, train.features)
    chosen: list[int] = []
    if keep == T:
        chosen = list(range(T))
    else:
        K = pairwise_kappa(H)
        iu, ju = np.triu_indices(T, k=1)
        order = np.lexsort((ju, iu, K[iu, ju]))
        seen = set()
        for p in order:
            for t in (int(iu[p]), int(ju[p])):
                if t not in seen and len(chosen) < keep:
                    seen.add(t)
                    chosen.append(t)
            if len(chosen) >= keep:
                break
        if not chosen:
            chosen = [0]
    res = _result(T, chosen, e.alpha, "kappa")
    res.diagnostics["admission_order"] = chosen
    return res


def drep_prune(e: Ensemble, train: Dataset, rho: float = 0.4, H=None, seed: int = 0,
               patience: int = 2) -> PruneResult:
    """Diversity-regularized greedy ordered selection.

    Start from the most accurate learner. Each step ranks the remaining
    learners by agreement with the current sub-ensemble vote, shortlists
    the ceil(rho * remaining) least agreeing ones and admits the shortlist
    member giving the lowest training error. Selection stops once the
    training error has not improved for ``patience`` consecutive steps and
    the shortest prefix with the best error is kept. Survivors get uniform
    weights.

    With uniform votes every even-sized sub-ensemble can tie on some rows,
    so a single non-improving step is common right after the first learner;
    ``patience=1`` stops there.
    """
    if not 0 < rho <= 1:
        raise ValueError("rho must lie in (0, 1]")
    if patience < 1:
        raise ValueError("patience must be >= 1")
    if H is None:
        H = prediction_matrix(e.learners, train.features)
    H = np.asarray(H, dtype=float)
    y = train.labels
    T = H.shape[1]
    errs = (H != y[:, None]).mean(axis=0)
    order = [int(np.argmin(errs))]
    path = [float(errs[order[0]])]
    votes = H[:, order[0]].copy()
    remaining = np.ones(T, dtype=bool)
    remaining[order[0]] = False
    best, stale = path[0], 0

    while remaining.any() and stale < patience:
        current = weighted_vote(votes[:, None], np.ones(1), seed)
        rem = np.flatnonzero(remaining)
        agreement = current @ H[:, rem] / len(y)
        k = math.ceil(rho * len(rem))
        shortlist = rem[np.argsort(agreement, kind="stable")[:k]]
        s = votes[:, None] + H[:, shortlist]
        pred = np.sign(s)
        ties = s == 0
        if ties.any():
            coin = np.random.default_rng(seed).choice((-1, 1), size=len(y))
            pred = np.where(ties, coin[:, None], pred)
        cand_err = (pred != y[:, None]).mean(axis=0)
        j = int(np.argmin(cand_err))
        t = int(shortlist[j])
        order.append(t)
        path.append(float(cand_err[j]))
        votes += H[:, t]
        remaining[t] = False
        if cand_err[j] < best:
            best, stale = float(cand_err[j]), 0
        else:
            stale += 1

    size = int(np.argmin(path)) + 1
    chosen = order[:size]
    res = _result(T, chosen, np.ones(T), "drep")
    res.diagnostics.update(train_error=path[size - 1], admission_order=chosen, error_path=path, rho=rho)
    return res


def diversity(H) -> float:
    """1 - mean pairwise disagreement rate over ordered pairs; 1.0 for a single learner."""
    H = np.asarray(H, dtype=float)
    n, T = H.shape
    if T < 2:
        return 1.0
    P = (H > 0).astype(float)
    agree_pos = P.T @ P
    agree_neg = (1 - P).T @ (1 - P)
    D = 1.0 - (agree_pos + agree_neg) / n
    return float(1.0 - (D.sum() - np.trace(D)) / (T * (T - 1)))
