"""Margin matrices, cumulative margin distributions and EMargin selection."""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass

import numpy as np


class ShapeMismatch(ValueError):
    pass


class DomainError(ValueError):
    pass


class NoFeasibleTheta(ValueError):
    pass


@dataclass(frozen=True)
class MarginSystem:
    H: np.ndarray
    E: np.ndarray
    m: np.ndarray
    sigma: np.ndarray
    order: np.ndarray

    @property
    def n(self) -> int:
        return self.E.shape[0]

    @property
    def T(self) -> int:
        return self.E.shape[1]

    def lower_block(self, upsilon: float) -> "LowerMarginBlock":
        return lower_margin_block(self, upsilon)


@dataclass(frozen=True)
class LowerMarginBlock:
    Lambda: np.ndarray
    phi: np.ndarray
    upsilon: float
    rows: np.ndarray


@dataclass(frozen=True)
class EMarginResult:
    theta_star: float
    q_star: float
    upsilon: float
    hypothesis_space_log: float
    table: list


def prediction_matrix(learners, X) -> np.ndarray:
    if not learners:
        raise ValueError("no learners")
    X = np.asarray(X, dtype=float)
    return np.column_stack([t.predict(X) for t in learners]).astype(int)


def error_matrix(H, y) -> np.ndarray:
    return np.asarray(H) * np.asarray(y)[:, None]


def sample_covariance(E) -> np.ndarray:
    E = np.asarray(E, dtype=float)
    C = E - E.mean(axis=0)
    S = C.T @ C / (E.shape[0] - 1)
    return (S + S.T) / 2.0


def margin_system(H, y, alpha) -> MarginSystem:
    H = np.asarray(H)
    y = np.asarray(y)
    alpha = np.asarray(alpha, dtype=float)
    if H.ndim != 2 or H.shape[0] != y.shape[0] or H.shape[1] != alpha.shape[0]:
        raise ShapeMismatch(f"H {H.shape}, y {y.shape}, alpha {alpha.shape}")
    if H.shape[0] < 2:
        raise ShapeMismatch("need at least two observations for a covariance")
    E = error_matrix(H, y).astype(float)
    m = E @ alpha
    order = np.argsort(m, kind="stable")
    return MarginSystem(H, E, m, sample_covariance(E), order)


def lower_margin_block(ms: MarginSystem, upsilon: float) -> LowerMarginBlock:
    """Rows of E for the ceil(n * upsilon) smallest margins."""
    if not 0.0 < upsilon <= 1.0:
        raise ValueError("upsilon must lie in (0, 1]")
    # guard against 0.29 * 100 = 28.999999999999996 style rounding
    k = min(ms.n, math.ceil(ms.n * upsilon - 1e-9))
    rows = ms.order[:k]
    return LowerMarginBlock(ms.E[rows], ms.m[rows], upsilon, rows)


def cmd(m) -> list[tuple[float, float]]:
    """Empirical CDF of the margins at each distinct margin value."""
    m = np.sort(np.asarray(m, dtype=float))
    if m.size == 0:
        raise ValueError("no margins")
    values, counts = np.unique(m, return_counts=True)
    return list(zip(values.tolist(), (np.cumsum(counts) / m.size).tolist()))


def cmd_at(m, theta: float) -> float:
    """P[m <= theta] over the sample."""
    return float(np.mean(np.asarray(m) <= theta))


def write_cmd_csv(path, m, label=None):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["theta", "fraction"])
        w.writerows(cmd(m))


def kl_divergence(q: float, p: float) -> float:
    """Bernoulli KL divergence D(q || p) with 0 ln 0 = 0."""
    if not 0.0 < p < 1.0:
        raise DomainError(f"p must lie in (0, 1), got {p}")
    if not 0.0 <= q <= 1.0:
        raise DomainError(f"q must lie in [0, 1], got {q}")
    out = 0.0
    if q > 0:
        out += q * math.log(q / p)
    if q < 1:
        out += (1 - q) * math.log((1 - q) / (1 - p))
    return out


P_CAP = 1.0 - 1e-12


def kl_inverse(q: float, u: float) -> float:
    """Largest p in [q, 1) with D(q || p) = u, by bisection to machine precision.

    Bisecting until the bracket stops shrinking keeps D accurate even where
    it is steep near p = 1. Returns the cap 1 - 1e-12 when u is out of reach.
    """
    if not 0.0 <= q < 1.0:
        raise DomainError(f"q must lie in [0, 1), got {q}")
    if u < 0:
        raise DomainError("u must be >= 0")
    if u == 0:
        return q
    lo, hi = q, P_CAP
    if kl_divergence(q, hi) <= u:
        return P_CAP
    for _ in range(200):
        mid = (lo + hi) / 2.0
        if mid <= lo or mid >= hi:
            break
        if kl_divergence(q, mid) > u:
            hi = mid
        else:
            lo = mid
    return lo if abs(kl_divergence(q, lo) - u) <= abs(kl_divergence(q, hi) - u) else hi


def hypothesis_space_log(p: int, n_thresholds: int = 100, depth: int = 2) -> float:
    """ln|H| for trees with a fixed threshold grid.

    Each internal node picks a feature, a threshold and an orientation
    (2 * K * p choices); a stump has one internal node, a depth-2 tree three.
    """
    internal = {1: 1, 2: 3}.get(depth)
    if internal is None:
        raise ValueError("hypothesis space size is only defined for stumps and depth-2 trees")
    return internal * math.log(2 * n_thresholds * p)


def emargin_bound_term(theta: float, n: int, ln_hyp: float, delta: float) -> float:
    return (8.0 * ln_hyp / theta**2 * math.log(2.0 * n**2 / ln_hyp)
            + ln_hyp + math.log(1.0 / delta)) / n


def emargin(m, ln_hyp: float, delta: float = 0.05) -> EMarginResult:
    """EMargin and EMargin error of a margin sample.

    For q in {0, 1/n, ..., 1}, theta(q) is the supremum of theta in
    (sqrt(8/|H|), 1] with P[m <= theta] <= q. Since the empirical CDF jumps
    only at observed margins, that supremum is the first observed margin
    where the CDF exceeds q (or 1 when q = 1). The selected q minimizes
    kl_inverse(q, u(theta(q))); ``upsilon`` is P[m <= theta(q*)].
    """
    if ln_hyp <= 0:
        raise DomainError("ln|H| must be positive")
    if not 0.0 < delta < 1.0:
        raise DomainError("delta must lie in (0, 1)")
    m = np.sort(np.asarray(m, dtype=float))
    n = m.size
    lower = math.sqrt(8.0) * math.exp(-ln_hyp / 2.0)
    values, counts = np.unique(m, return_counts=True)
    F = np.cumsum(counts) / n

    table = []
    for k in range(n + 1):
        q = k / n
        if k == n:
            theta = 1.0
        else:
            jump = np.flatnonzero(F > q + 1e-12)
            theta = float(min(values[jump[0]], 1.0))
        if theta <= lower:
            continue
        u = emargin_bound_term(theta, n, ln_hyp, delta)
        bound = 1.0 if q >= 1.0 else kl_inverse(q, u)
        table.append((q, theta, u, bound))
    if not table:
        raise NoFeasibleTheta("every margin is at or below sqrt(8/|H|)")
    best = min(table, key=lambda r: (r[3], r[0]))
    q_star, theta_star = best[0], best[1]
    return EMarginResult(theta_star, q_star, cmd_at(m, theta_star), ln_hyp, table)


def write_emargin_csv(path, result: EMarginResult):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["q", "theta", "u", "kl_inverse"])
        w.writerows(result.table)
