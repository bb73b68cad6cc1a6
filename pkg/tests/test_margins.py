import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from marginprune.margins import (DomainError, NoFeasibleTheta, ShapeMismatch, cmd, cmd_at,
                                 emargin, emargin_bound_term, error_matrix, hypothesis_space_log,
                                 kl_divergence, kl_inverse, lower_margin_block, margin_system,
                                 sample_covariance, write_cmd_csv)


def brute_cov(E):
    n, T = E.shape
    S = np.zeros((T, T))
    for a in range(T):
        for b in range(T):
            ma = sum(E[i, a] for i in range(n)) / n
            mb = sum(E[i, b] for i in range(n)) / n
            S[a, b] = sum((E[i, a] - ma) * (E[i, b] - mb) for i in range(n)) / (n - 1)
    return S


def test_margins_all_right_all_wrong():
    H = np.array([[1, 1], [-1, -1]])
    y = np.array([1, 1])
    ms = margin_system(H, y, np.array([0.4, 0.6]))
    assert ms.m.tolist() == [1.0, -1.0]


def test_small_covariance_against_oracle():
    E = np.array([[1, 1], [1, -1], [-1, 1]], dtype=float)
    S = sample_covariance(E)
    assert np.allclose(S, brute_cov(E), atol=1e-14)
    assert np.allclose(S, [[4 / 3, -2 / 3], [-2 / 3, 4 / 3]])


@given(st.integers(0, 2**31), st.integers(2, 15), st.integers(1, 6))
def test_covariance_property(seed, n, T):
    E = np.random.default_rng(seed).choice((-1.0, 1.0), size=(n, T))
    S = sample_covariance(E)
    assert np.allclose(S, brute_cov(E), atol=1e-12)
    assert np.allclose(S, S.T)


@given(st.integers(0, 2**31))
def test_flipping_label_negates_margin(seed):
    r = np.random.default_rng(seed)
    H = r.choice((-1, 1), size=(8, 4))
    y = r.choice((-1, 1), size=8)
    a = r.dirichlet(np.ones(4))
    m = margin_system(H, y, a).m
    y2 = y.copy()
    y2[3] *= -1
    m2 = margin_system(H, y2, a).m
    assert m2[3] == -m[3]
    assert np.array_equal(np.delete(m, 3), np.delete(m2, 3))
    assert np.array_equal(error_matrix(H, y2)[3], -error_matrix(H, y)[3])


def test_lower_block(rng):
    H = rng.choice((-1, 1), size=(10, 4))
    y = rng.choice((-1, 1), size=10)
    a = rng.dirichlet(np.ones(4))
    ms = margin_system(H, y, a)
    blk = lower_margin_block(ms, 0.25)
    assert blk.Lambda.shape == (3, 4)
    assert np.allclose(blk.Lambda @ a, blk.phi)
    full = lower_margin_block(ms, 1.0)
    assert np.array_equal(full.phi, np.sort(ms.m))
    with pytest.raises(ValueError):
        lower_margin_block(ms, 0.0)


def test_shape_errors():
    with pytest.raises(ShapeMismatch):
        margin_system(np.ones((3, 2)), np.ones(3), np.ones(3) / 3)
    with pytest.raises(ShapeMismatch):
        margin_system(np.ones((1, 2)), np.ones(1), np.ones(2) / 2)


def test_cmd():
    assert cmd([1, 1, 1]) == [(1.0, 1.0)]
    pts = cmd([-1, 0, 1])
    assert [f for _, f in pts] == pytest.approx([1 / 3, 2 / 3, 1])
    assert cmd_at([-1, 0, 1], 0) == pytest.approx(2 / 3)


def test_cmd_csv(tmp_path):
    write_cmd_csv(tmp_path / "c.csv", [0.5, -0.5])
    assert (tmp_path / "c.csv").read_text().splitlines() == ["theta,fraction", "-0.5,0.5", "0.5,1.0"]


def test_kl_values():
    assert kl_divergence(0.3, 0.3) == 0.0
    expected = 0.1 * math.log(0.2) + 0.9 * math.log(1.8)
    assert abs(kl_divergence(0.1, 0.5) - expected) < 1e-15
    assert abs(expected - 0.36809) < 1e-4
    assert abs(kl_divergence(0.0, 0.5) - math.log(2)) < 1e-15
    assert kl_inverse(0.2, 0.0) == 0.2
    assert abs(kl_inverse(0.1, expected) - 0.5) < 1e-8
    with pytest.raises(DomainError):
        kl_divergence(0.5, 1.0)
    with pytest.raises(DomainError):
        kl_inverse(0.5, -1.0)


@given(st.floats(0.0, 0.95), st.floats(1e-4, 2.0))
def test_kl_inverse_round_trip(q, u):
    p = kl_inverse(q, u)
    assert q <= p < 1.0
    if p < 1 - 1e-9:
        assert abs(kl_divergence(q, p) - u) < 1e-8


def test_hypothesis_space_log():
    assert abs(hypothesis_space_log(60, 100, 2) - 3 * math.log(12000)) < 1e-12
    assert round(hypothesis_space_log(60, 100, 2), 2) == 28.18
    assert hypothesis_space_log(10, 100, 1) == pytest.approx(math.log(2000))
    with pytest.raises(ValueError):
        hypothesis_space_log(10, 100, 3)


def test_emargin_all_ones():
    res = emargin(np.ones(20), 3.0)
    assert all(theta == 1.0 for _, theta, _, _ in res.table)
    assert res.upsilon == 1.0


def test_emargin_hand_table():
    m = np.array([-0.2, 0.3, 0.3, 0.6, 0.9])
    delta, n = 0.05, 5
    thetas = {0.0: -0.2, 0.2: 0.3, 0.4: 0.3, 0.6: 0.6, 0.8: 0.9, 1.0: 1.0}
    # with ln|H| = 2 the lower limit sqrt(8/|H|) exceeds every candidate
    with pytest.raises(NoFeasibleTheta):
        emargin(m, 2.0, delta)

    ln_h = 6.0
    res = emargin(m, ln_h, delta)
    lower = math.sqrt(8 / math.exp(ln_h))
    rows = []
    # theta(q) is the first margin whose CDF exceeds q, or 1 at q = 1
    for q, t in thetas.items():
        if t <= lower:
            continue
        u = (8 * ln_h / t**2 * math.log(2 * n**2 / ln_h) + ln_h + math.log(1 / delta)) / n
        rows.append((q, t, u, 1.0 if q == 1.0 else kl_inverse(q, u)))
    assert [r[:2] for r in res.table] == [r[:2] for r in rows]
    assert np.allclose([r[2] for r in res.table], [r[2] for r in rows])
    assert np.allclose([r[3] for r in res.table], [r[3] for r in rows])
    best = min(rows, key=lambda r: (r[3], r[0]))
    assert res.q_star == best[0] and res.theta_star == best[1]
    assert res.upsilon == cmd_at(m, best[1])


def test_emargin_errors():
    with pytest.raises(NoFeasibleTheta):
        emargin(np.array([-1.0, -0.5]), 0.5)
    with pytest.raises(DomainError):
        emargin(np.ones(3), -1.0)
    assert emargin_bound_term(1.0, 10, 2.0, 0.05) > 0
