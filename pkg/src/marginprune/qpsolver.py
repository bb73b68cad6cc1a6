"""Dense convex QP over the probability simplex.

    minimize    w' Q w
    subject to  A w >= b,  1'w = 1,  w >= 0

solved with a primal-dual interior-point method (Mehrotra predictor-corrector).
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.linalg
from scipy.optimize import linprog

OPTIMAL = "Optimal"
INFEASIBLE = "Infeasible"
NOT_PSD = "NotPSD"
ITERATION_LIMIT = "IterationLimit"

PSD = "PSD"

FEAS_TOL = 1e-7
CONV_TOL = 1e-8
KKT_TOL = 1e-6
MAX_ITER = 500
# after convergence, keep iterating toward this gap so degenerate active sets separate
REFINE_TOL = 1e-14
REFINE_ITER = 20
NBHD = 1e-3


@dataclass(frozen=True)
class QpProblem:
    Q: np.ndarray
    A_ineq: np.ndarray = None
    b_ineq: np.ndarray = None

    def __post_init__(self):
        Q = np.asarray(self.Q, dtype=float)
        if Q.ndim != 2 or Q.shape[0] != Q.shape[1]:
            raise ValueError("Q must be square")
        if not np.allclose(Q, Q.T, rtol=0, atol=1e-10):
            raise ValueError("Q must be symmetric")
        T = Q.shape[0]
        A = np.zeros((0, T)) if self.A_ineq is None else np.atleast_2d(np.asarray(self.A_ineq, dtype=float))
        b = np.zeros(0) if self.b_ineq is None else np.atleast_1d(np.asarray(self.b_ineq, dtype=float))
        if A.size == 0:
            A = np.zeros((0, T))
        if A.shape[1] != T or A.shape[0] != b.shape[0]:
            raise ValueError(f"inconsistent shapes Q {Q.shape}, A {A.shape}, b {b.shape}")
        object.__setattr__(self, "Q", (Q + Q.T) / 2.0)
        object.__setattr__(self, "A_ineq", A)
        object.__setattr__(self, "b_ineq", b)

    @property
    def T(self) -> int:
        return self.Q.shape[0]


@dataclass(frozen=True)
class QpSolution:
    status: str
    w: np.ndarray | None
    objective: float = float("nan")
    kkt_residual: float = float("inf")
    iterations: int = 0
    lam: np.ndarray | None = None
    mu: np.ndarray | None = None
    nu: float = float("nan")
    diagnostics: dict = field(default_factory=dict)

    @property
    def ok(self) -> bool:
        return self.status == OPTIMAL


def psd_check(Q, rel_tol: float = 1e-10) -> tuple[str, float]:
    """Symmetric-pivoted LDL' test; returns (PSD or NotPSD, smallest pivot seen)."""
    S = np.array(Q, dtype=float)
    n = S.shape[0]
    if n == 0:
        return PSD, 0.0
    tol = rel_tol * max(np.abs(np.diag(S)).max(), np.finfo(float).tiny)
    min_pivot = np.inf
    for _ in range(n):
        d = np.diag(S)
        min_pivot = min(min_pivot, d.min())
        if d.min() < -tol:
            return NOT_PSD, float(d.min())
        j = int(np.argmax(d))
        if d[j] <= tol:
            # remaining block is numerically zero on the diagonal; PSD forces the rest to vanish
            off = np.abs(S - np.diag(d)).max() if S.size > 1 else 0.0
            return (NOT_PSD if off > tol else PSD), float(min_pivot)
        col = S[:, j] / d[j]
        S = S - np.outer(col, S[j, :])
        keep = np.arange(S.shape[0]) != j
        S = S[np.ix_(keep, keep)]
        if S.size == 0:
            break
    return PSD, float(min_pivot)


def dedupe_rows(A, b):
    """Merge identical constraint rows, keeping the tightest right-hand side.

    Rows that hold for every point of the simplex (min_j A_ij >= b_i) are
    dropped too; they have no interior and stall the interior-point method.
    ``inverse`` maps each original row to its kept row, or -1 if dropped.
    """
    if A.shape[0] == 0:
        return A, b, np.zeros(0, dtype=int)
    uniq, inverse = np.unique(A, axis=0, return_inverse=True)
    inverse = inverse.ravel()
    bu = np.full(uniq.shape[0], -np.inf)
    np.maximum.at(bu, inverse, b)
    live = uniq.min(axis=1) < bu
    remap = np.cumsum(live) - 1
    inverse = np.where(live[inverse], remap[inverse], -1)
    return uniq[live], bu[live], inverse


def phase_one(A, b) -> tuple[float, np.ndarray]:
    """Minimum total constraint violation over the simplex (an LP)."""
    k, T = A.shape
    T = A.shape[1]
    if k == 0:
        return 0.0, np.full(T, 1.0 / T)
    c = np.concatenate([np.zeros(T), np.ones(k)])
    # -A w - v <= -b
    A_ub = np.hstack([-A, -np.eye(k)])
    A_eq = np.concatenate([np.ones(T), np.zeros(k)])[None, :]
    res = linprog(c, A_ub=A_ub, b_ub=-b, A_eq=A_eq, b_eq=[1.0], bounds=(0, None), method="highs")
    if res.status != 0:
        return np.inf, np.full(T, 1.0 / T)
    return float(res.fun), res.x[:T]


def kkt_residual(Q, A, b, w, lam, mu, nu) -> float:
    """Max of stationarity, primal infeasibility and complementarity violations."""
    stat = 2 * Q @ w - A.T @ lam - mu + nu
    slack = A @ w - b
    parts = [
        np.abs(stat).max(initial=0.0),
        abs(w.sum() - 1.0),
        np.maximum(-slack, 0).max(initial=0.0),
        np.maximum(-w, 0).max(initial=0.0),
        np.abs(lam * slack).max(initial=0.0),
        np.abs(mu * w).max(initial=0.0),
        np.maximum(-lam, 0).max(initial=0.0),
        np.maximum(-mu, 0).max(initial=0.0),
    ]
    return float(max(parts))


def implicit_structure(A, b, scale_cap: float = 1e4):
    """Find rows of ``A w >= b`` that hold with equality on the whole feasible
    set, and weights that are zero on the whole feasible set.

    Solves one LP over the homogenized cone {(z, tau): z >= 0, 1'z = tau}:
    maximize the number of constraints that can be made strictly slack. A
    constraint with no slack at the optimum has none anywhere.
    """
    k, T = A.shape
    # variables: z (T), tau, t_row (k), t_var (T)
    nv = T + 1 + k + T
    c = np.zeros(nv)
    c[T + 1:] = -1.0
    # t_row - (A z - b tau) <= 0 ; t_var - z <= 0
    A_ub = np.zeros((k + T, nv))
    A_ub[:k, :T] = -A
    A_ub[:k, T] = b
    A_ub[:k, T + 1:T + 1 + k] = np.eye(k)
    A_ub[k:, :T] = -np.eye(T)
    A_ub[k:, T + 1 + k:] = np.eye(T)
    A_eq = np.zeros((1, nv))
    A_eq[0, :T] = 1.0
    A_eq[0, T] = -1.0
    bounds = [(0, None)] * T + [(0, scale_cap)] + [(0, 1)] * (k + T)
    res = linprog(c, A_ub=A_ub, b_ub=np.zeros(k + T), A_eq=A_eq, b_eq=[0.0],
                  bounds=bounds, method="highs")
    if res.status != 0:
        return np.zeros(k, dtype=bool), np.zeros(T, dtype=bool)
    t = res.x[T + 1:]
    return t[:k] < 0.5, t[k:] < 0.5


def _independent_rows(M, tol=1e-10):
    if M.shape[0] == 0:
        return np.zeros(0, dtype=int)
    _, R, piv = scipy.linalg.qr(M.T, mode="economic", pivoting=True)
    d = np.abs(np.diag(R))
    r = int(np.sum(d > tol * max(d[0], 1.0)))
    return np.sort(piv[:r])


def _step_length(v, dv):
    neg = dv < 0
    if not neg.any():
        return 1.0
    return float(min(1.0, (-v[neg] / dv[neg]).min()))


def _ipm(Q, A, b, Aeq, beq, w0, max_iter):
    """Mehrotra predictor-corrector for min w'Qw s.t. A w >= b, Aeq w = beq, w >= 0."""
    T, k = Q.shape[0], A.shape[0]
    P = 2.0 * Q
    w = np.maximum(w0, 1e-2)
    w /= w.sum()
    s = np.maximum(A @ w - b, 1.0)
    lam = np.ones(k)
    mu = np.ones(T)
    nu = np.zeros(Aeq.shape[0])
    N = k + T

    def newton(rd, rp, re, rs, rw):
        d = lam / s
        M = P + (A.T * d) @ A + np.diag(mu / w)
        r1 = -rd + A.T @ ((-rs - lam * rp) / s) - rw / w
        rhs = np.column_stack([r1, Aeq.T])
        try:
            X = scipy.linalg.cho_solve(scipy.linalg.cho_factor(M, check_finite=False), rhs,
                                       check_finite=False)
        except np.linalg.LinAlgError:
            X = np.linalg.lstsq(M, rhs, rcond=None)[0]
        x1, X2 = X[:, 0], X[:, 1:]
        S = Aeq @ X2
        dnu = np.linalg.solve(S, Aeq @ x1 + re) if S.size else np.zeros(0)
        dw = x1 - X2 @ dnu
        ds = A @ dw + rp
        dlam = (-rs - lam * ds) / s
        dmu = (-rw - mu * dw) / w
        return dw, ds, dlam, dmu, dnu

    done = None  # (state, gap, iterations) once the convergence test has passed
    for it in range(1, max_iter + 1):
        rd = P @ w - A.T @ lam - mu + Aeq.T @ nu
        rp = A @ w - s - b
        re = Aeq @ w - beq
        gap = (s @ lam + w @ mu) / N
        infeas = max(np.abs(rd).max(initial=0.0), np.abs(rp).max(initial=0.0), np.abs(re).max(initial=0.0))
        good = np.isfinite(gap) and infeas <= CONV_TOL and gap <= CONV_TOL
        if done is not None:
            if not good or gap >= done[1]:
                return (OPTIMAL, *done[0], done[2])
            done = ((w, s, lam, mu, nu), gap, it - 1)
            if gap <= REFINE_TOL or it - 1 - iters_at_conv >= REFINE_ITER:
                return (OPTIMAL, *done[0], done[2])
        elif good:
            done = ((w, s, lam, mu, nu), gap, it - 1)
            iters_at_conv = it - 1

        # predictor
        dw, ds, dlam, dmu, dnu = newton(rd, rp, re, s * lam, w * mu)
        a = min(_step_length(w, dw), _step_length(s, ds), _step_length(lam, dlam), _step_length(mu, dmu))
        gap_aff = ((s + a * ds) @ (lam + a * dlam) + (w + a * dw) @ (mu + a * dmu)) / N
        sigma = (gap_aff / gap) ** 3 if gap > 0 else 0.0

        # corrector
        rs = s * lam + ds * dlam - sigma * gap
        rw = w * mu + dw * dmu - sigma * gap
        dw, ds, dlam, dmu, dnu = newton(rd, rp, re, rs, rw)
        a = 0.99 * min(_step_length(w, dw), _step_length(s, ds),
                       _step_length(lam, dlam), _step_length(mu, dmu))
        # stay in a wide neighbourhood of the central path; without this the
        # iterates can fall into a cycle where the gap never shrinks
        merit = gap + infeas
        prods = np.concatenate([s * lam, w * mu])
        floor = min(NBHD, 0.5 * prods.min() / prods.mean())
        for _ in range(40):
            w1, s1, l1, m1 = w + a * dw, s + a * ds, lam + a * dlam, mu + a * dmu
            prods = np.concatenate([s1 * l1, w1 * m1])
            g1 = prods.mean()
            if prods.min() >= floor * g1 and g1 + (1 - a) * infeas <= (1 - 0.01 * a) * merit:
                break
            a *= 0.7
        w = w + a * dw
        s = s + a * ds
        lam = lam + a * dlam
        mu = mu + a * dmu
        nu = nu + a * dnu
    if done is not None:
        return (OPTIMAL, *done[0], done[2])
    return ITERATION_LIMIT, w, s, lam, mu, nu, max_iter


def _polish(Q, A, b, Aeq, beq, w, s, lam, mu, rounds: int = 25):
    """Refine an interior solution to one with exact zeros.

    Guesses the active set from the primal-dual pair, solves the
    equality-constrained KKT system on it, and repairs sign violations for
    a few rounds. Returns None when no consistent active set is found.
    """
    T = len(w)
    P = 2.0 * Q
    zero = w < mu
    active = s < lam
    for _ in range(rounds):
        F = np.flatnonzero(~zero)
        Ac = np.flatnonzero(active)
        nF, nA, nE = len(F), len(Ac), Aeq.shape[0]
        K = np.zeros((nF + nA + nE, nF + nA + nE))
        K[:nF, :nF] = P[np.ix_(F, F)]
        K[:nF, nF:nF + nA] = -A[np.ix_(Ac, F)].T
        K[:nF, nF + nA:] = Aeq[:, F].T
        K[nF:nF + nA, :nF] = A[np.ix_(Ac, F)]
        K[nF + nA:, :nF] = Aeq[:, F]
        rhs = np.concatenate([np.zeros(nF), b[Ac], beq])
        x = np.linalg.lstsq(K, rhs, rcond=None)[0]
        wp = np.zeros(T)
        wp[F] = x[:nF]
        lp = np.zeros(A.shape[0])
        lp[Ac] = x[nF:nF + nA]
        nu = x[nF + nA:]
        mp = P @ wp - A.T @ lp + Aeq.T @ nu
        slack = A @ wp - b
        bad_w = F[wp[F] < -1e-12]
        bad_row = np.flatnonzero((slack < -1e-10) & ~active)
        bad_lam = Ac[lp[Ac] < -1e-10]
        bad_mu = np.flatnonzero(zero & (mp < -1e-10))
        if not (len(bad_w) or len(bad_row) or len(bad_lam) or len(bad_mu)):
            return np.maximum(wp, 0.0)
        zero[bad_w] = True
        zero[bad_mu] = False
        active[bad_row] = True
        active[bad_lam] = False
    return None


def recover_multipliers(Q, A, b, w, active_tol: float = 1e-7):
    """Nonnegative multipliers for the active constraints at ``w`` by NNLS."""
    from scipy.optimize import nnls

    T = len(w)
    g = 2 * Q @ w
    act_rows = np.flatnonzero(A @ w - b <= active_tol)
    act_vars = np.flatnonzero(w <= active_tol)
    # g = A_act' lam + mu_act - nu (nu split into positive and negative parts)
    B = np.hstack([A[act_rows].T, np.eye(T)[:, act_vars], -np.ones((T, 1)), np.ones((T, 1))])
    x, _ = nnls(B, g, maxiter=50 * B.shape[1])
    lam = np.zeros(A.shape[0])
    lam[act_rows] = x[:len(act_rows)]
    mu = np.zeros(T)
    mu[act_vars] = x[len(act_rows):len(act_rows) + len(act_vars)]
    nu = x[-2] - x[-1]
    return lam, mu, nu


def solve(problem: QpProblem, warm_start=None, max_iter: int = MAX_ITER) -> QpSolution:
    """Solve the simplex-constrained QP; failures are reported through ``status``.

    Pipeline: PSD check, merge duplicate rows, LP feasibility test,
    removal of implicit equalities and implicitly zero weights, then the
    interior-point iteration on what remains.
    """
    Q, A, b = problem.Q, problem.A_ineq, problem.b_ineq
    T = problem.T
    verdict, min_pivot = psd_check(Q)
    diag = {"min_pivot": min_pivot, "rows": int(A.shape[0])}
    if verdict == NOT_PSD:
        return QpSolution(NOT_PSD, None, diagnostics=diag)

    Au, bu, inverse = dedupe_rows(A, b)
    diag["unique_rows"] = int(Au.shape[0])
    violation, _ = phase_one(Au, bu)
    diag["phase1_violation"] = violation
    if violation > FEAS_TOL:
        return QpSolution(INFEASIBLE, None, diagnostics=diag)

    eq_rows, zero_vars = implicit_structure(Au, bu)
    free = np.flatnonzero(~zero_vars)
    diag["implicit_equalities"] = int(eq_rows.sum())
    diag["implicit_zeros"] = int(zero_vars.sum())

    Af = Au[:, free]
    A_in, b_in = Af[~eq_rows], bu[~eq_rows]
    Aeq = np.vstack([np.ones((1, len(free))), Af[eq_rows]])
    beq = np.concatenate([[1.0], bu[eq_rows]])
    keep = _independent_rows(np.column_stack([Aeq, beq]))
    Aeq, beq = Aeq[keep], beq[keep]

    w0 = np.full(T, 1.0 / T) if warm_start is None else np.asarray(warm_start, dtype=float)
    Qf = Q[np.ix_(free, free)]
    status, wf, sf, lam_in, mu_f, nu, iters = _ipm(Qf, A_in, b_in, Aeq, beq, w0[free], max_iter)
    w = np.zeros(T)
    w[free] = wf

    polished = _polish(Qf, A_in, b_in, Aeq, beq, wf, sf, lam_in, mu_f) if status == OPTIMAL else None
    if polished is not None:
        wp = np.zeros(T)
        wp[free] = polished
        lam_p, mu_p, nu_p = recover_multipliers(Q, A, b, wp)
        res_p = kkt_residual(Q, A, b, wp, lam_p, mu_p, nu_p)
        if res_p <= KKT_TOL and wp @ Q @ wp <= w @ Q @ w + 1e-9:
            diag["polished"] = True
            return QpSolution(status, wp, float(wp @ Q @ wp), float(res_p), iters,
                              lam_p, mu_p, float(nu_p), diag)
    diag["polished"] = False

    simple = not eq_rows.any() and not zero_vars.any()
    if simple:
        lam = np.zeros(A.shape[0])
        for g in range(Au.shape[0]):
            members = np.flatnonzero(inverse == g)
            lam[members[np.argmax(b[members])]] = lam_in[g]
        mu = np.zeros(T)
        mu[free] = mu_f
        nu_sum = float(nu[0])
        res = kkt_residual(Q, A, b, w, lam, mu, nu_sum)
    else:
        res = np.inf
    if not simple or res > KKT_TOL:
        lam2, mu2, nu2 = recover_multipliers(Q, A, b, w)
        res2 = kkt_residual(Q, A, b, w, lam2, mu2, nu2)
        if res2 < res:
            lam, mu, nu_sum, res = lam2, mu2, nu2, res2
    if status == OPTIMAL and res > KKT_TOL:
        diag["uncertified"] = True
    return QpSolution(status, w, float(w @ Q @ w), float(res), iters, lam, mu, float(nu_sum), diag)


def dump_problem(problem: QpProblem, path):
    """Write Q, A and b as plain-text blocks readable by ``numpy.loadtxt``-style tools."""
    with open(path, "w") as fh:
        for name, M in (("Q", problem.Q), ("A", problem.A_ineq), ("b", problem.b_ineq[:, None])):
            fh.write(f"# {name} {M.shape[0]} {M.shape[1]}\n")
            np.savetxt(fh, M, fmt="%.17g")


def load_problem(path) -> QpProblem:
    blocks, cur, shape = {}, [], None
    name = None
    with open(path) as fh:
        for line in fh:
            if line.startswith("#"):
                if name is not None:
                    blocks[name] = np.array(cur, dtype=float).reshape(shape)
                _, name, r, c = line.split()
                shape, cur = (int(r), int(c)), []
            elif line.strip():
                cur.extend(float(v) for v in line.split())
    blocks[name] = np.array(cur, dtype=float).reshape(shape)
    return QpProblem(blocks["Q"], blocks["A"], blocks["b"].ravel())
