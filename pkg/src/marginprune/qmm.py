"""Quadratic margin maximization: reweight an ensemble by a margin-constrained QP."""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg

from . import qpsolver
from .dataset import Dataset
from .ensemble import Ensemble
from .margins import (MarginSystem, emargin, lower_margin_block, margin_system,
                      prediction_matrix)

ADABOOST_LADDER = (0.50, 0.25, 0.05, 0.01)
RF_LADDER = (0.25, 0.15, 0.05, 0.01)
WEIGHT_THRESHOLD = 1e-6
FALLBACK = "Fallback"


class AllColumnsDegenerate(ValueError):
    pass


class AuditFailed(AssertionError):
    pass


def default_ladder(kind: str) -> tuple:
    return ADABOOST_LADDER if kind == "adaboost" else RF_LADDER


@dataclass(frozen=True)
class RankReduction:
    pivots: np.ndarray
    dropped: np.ndarray
    H_prime: np.ndarray
    alpha_prime: np.ndarray
    fold_report: dict
    rank: int


def rank_reduce(H, alpha, tol: float | None = None) -> RankReduction:
    """Drop linearly dependent columns of H found by pivoted QR.

    A dropped column identical to a kept one hands its weight to that
    column. Any other dependent column is regressed on the kept columns and
    its weight is spread by the nonnegative part of the coefficients. The
    folded weights are renormalized to sum to 1.
    """
    H = np.asarray(H, dtype=float)
    alpha = np.asarray(alpha, dtype=float)
    n, T = H.shape
    if T == 0 or n == 0:
        raise AllColumnsDegenerate("empty prediction matrix")
    R, piv = scipy.linalg.qr(H, mode="r", pivoting=True)
    diag = np.abs(np.diag(R))
    if diag.size == 0 or diag[0] == 0:
        raise AllColumnsDegenerate("prediction matrix is zero")
    if tol is None:
        tol = max(n, T) * np.finfo(float).eps * 10
    r = int(np.sum(diag > tol * diag[0]))
    pivots = np.sort(piv[:r])
    dropped = np.sort(piv[r:])
    Hp = H[:, pivots]

    a = alpha[pivots].copy()
    report = {}
    if dropped.size:
        # exact duplicates first, least squares for the rest
        key = {col.tobytes(): j for j, col in enumerate(Hp.T)}
        rest = []
        for g in dropped:
            j = key.get(H[:, g].tobytes())
            if j is None:
                rest.append(g)
            else:
                a[j] += alpha[g]
                report[int(g)] = [(int(pivots[j]), float(alpha[g]))]
        if rest:
            coef = np.linalg.lstsq(Hp, H[:, rest], rcond=None)[0]
            for c, g in zip(coef.T, rest):
                share = alpha[g] * np.clip(c, 0.0, None)
                a += share
                report[int(g)] = [(int(pivots[j]), float(v)) for j, v in enumerate(share) if v > 0]
    total = a.sum()
    if total <= 0:
        raise AllColumnsDegenerate("no weight left after folding")
    return RankReduction(pivots, dropped, Hp, a / total, report, r)


@dataclass
class PruneResult:
    weights: np.ndarray
    survivors: np.ndarray
    upsilon_used: float | None
    solver_status: str
    method: str = "qmm"
    pivots: np.ndarray | None = None
    diagnostics: dict = field(default_factory=dict)

    @property
    def T(self) -> int:
        return len(self.weights)

    @property
    def pruning_rate(self) -> float:
        return 1.0 - len(self.survivors) / self.T

    def to_dict(self) -> dict:
        return {
            "method": self.method,
            "weights": [float(v) for v in self.weights],
            "survivors": [int(i) for i in self.survivors],
            "upsilon_used": self.upsilon_used,
            "solver_status": self.solver_status,
            "pruning_rate": self.pruning_rate,
            "pivots": None if self.pivots is None else [int(i) for i in self.pivots],
            "diagnostics": _jsonable(self.diagnostics),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "PruneResult":
        return cls(np.array(d["weights"]), np.array(d["survivors"], dtype=int), d["upsilon_used"],
                   d["solver_status"], d.get("method", "qmm"),
                   None if d.get("pivots") is None else np.array(d["pivots"], dtype=int),
                   d.get("diagnostics", {}))

    def dumps(self) -> str:
        return json.dumps(self.to_dict(), indent=2)

    @classmethod
    def loads(cls, s: str) -> "PruneResult":
        return cls.from_dict(json.loads(s))


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    if isinstance(obj, np.generic):
        return obj.item()
    if isinstance(obj, float) and not math.isfinite(obj):
        return str(obj)
    return obj


def threshold_weights(w, threshold: float) -> np.ndarray:
    w = np.where(np.asarray(w) > threshold, w, 0.0)
    return w / w.sum()


def qmm_weights(H, y, alpha, ladder, weight_threshold: float = WEIGHT_THRESHOLD) -> PruneResult:
    """QMM on a precomputed prediction matrix; see :func:`qmm_prune`."""
    H = np.asarray(H)
    T = H.shape[1]
    ladder = list(ladder)
    if any(not 0 < u <= 1 for u in ladder) or any(a < b for a, b in zip(ladder, ladder[1:])):
        raise ValueError("ladder must be non-increasing values in (0, 1]")
    if weight_threshold < 0:
        raise ValueError("weight_threshold must be >= 0")

    rr = rank_reduce(H, alpha)
    ms = margin_system(rr.H_prime, y, rr.alpha_prime)
    verdict, min_pivot = qpsolver.psd_check(ms.sigma)
    base_obj = float(rr.alpha_prime @ ms.sigma @ rr.alpha_prime)
    diag = {"rank": rr.rank, "min_pivot": min_pivot, "alpha_objective": base_obj, "attempts": []}

    def full(wr):
        w = np.zeros(T)
        w[rr.pivots] = wr
        return w

    status = qpsolver.NOT_PSD
    if verdict == qpsolver.PSD:
        for u in ladder:
            block = lower_margin_block(ms, u)
            sol = qpsolver.solve(qpsolver.QpProblem(ms.sigma, block.Lambda, block.phi),
                                 warm_start=rr.alpha_prime)
            diag["attempts"].append({"upsilon": u, "status": sol.status,
                                     "iterations": sol.iterations, "kkt": sol.kkt_residual})
            status = sol.status
            if sol.ok:
                wr = threshold_weights(sol.w, weight_threshold)
                w = full(wr)
                new_m = ms.E @ wr
                diag.update(objective=float(wr @ ms.sigma @ wr),
                            solver_objective=sol.objective, kkt_residual=sol.kkt_residual,
                            min_lower_slack=float((block.Lambda @ wr - block.phi).min()),
                            margin_mean_before=float(ms.m.mean()), margin_mean_after=float(new_m.mean()),
                            margin_var_before=float(ms.m.var(ddof=1)), margin_var_after=float(new_m.var(ddof=1)))
                return PruneResult(w, np.flatnonzero(w > 0), u, qpsolver.OPTIMAL, "qmm", rr.pivots, diag)
    else:
        diag["attempts"].append({"upsilon": None, "status": qpsolver.NOT_PSD})

    # every rung failed: keep the rank-reduced original weights
    w = full(rr.alpha_prime)
    diag["objective"] = base_obj
    diag["fallback"] = True
    return PruneResult(w, np.flatnonzero(w > 0), None, status, "qmm", rr.pivots, diag)


def qmm_prune(e: Ensemble, train: Dataset, ladder=None,
              weight_threshold: float = WEIGHT_THRESHOLD, H=None) -> PruneResult:
    """Reweight ``e`` by minimizing the error covariance under lower-margin constraints.

    The first ``upsilon`` in ``ladder`` that yields an optimal QP wins;
    if none does, the result carries the rank-reduced original weights.
    """
    if ladder is None:
        ladder = default_ladder(e.kind)
    if H is None:
        H = prediction_matrix(e.learners, train.features)
    return qmm_weights(H, train.labels, e.alpha, ladder, weight_threshold)


def emargin_ladder(H, y, alpha, ln_hyp: float, delta: float = 0.05, fallback=None) -> list:
    """Ladder headed by the EMargin-selected upsilon, then smaller fallback values."""
    m = (np.asarray(H) * np.asarray(y)[:, None]) @ np.asarray(alpha)
    u = emargin(m, ln_hyp, delta).upsilon
    rest = [v for v in (fallback or ()) if v < u]
    return [u] + rest


@dataclass(frozen=True)
class MarginAudit:
    min_slack: float
    improved: int
    rows: int


def margin_constraint_audit(result: PruneResult, ms: MarginSystem, upsilon: float,
                            tol: float = 1e-6) -> MarginAudit:
    """Check the lower-margin constraints for ``result`` against ``ms``.

    ``ms`` may describe the full ensemble (one column per learner) or the
    rank-reduced system (one column per pivot).
    """
    w = result.weights
    if ms.T != len(w):
        if result.pivots is None or len(result.pivots) != ms.T:
            raise ValueError("margin system does not match the result's weights")
        w = w[result.pivots]
    block = lower_margin_block(ms, upsilon)
    slack = block.Lambda @ w - block.phi
    audit = MarginAudit(float(slack.min()), int(np.sum(slack > 1e-9)), len(slack))
    if audit.min_slack < -tol:
        raise AuditFailed(f"lower margin constraint violated by {-audit.min_slack:.3g}")
    return audit
