import numpy as np
import pytest
from hypothesis import given, strategies as st
from hypothesis.extra.numpy import arrays

from blockuav.netmodel import (SolutionState, constraint_violations, max_violation,
                               objective_Z, penalty, rate_grad_X, rates, sinr)


def test_sinr_hand_example():
    G = np.array([[2.0, 1.0]])
    P = np.array([[1.0], [3.0]])
    g = sinr(P, G, 0.5)
    assert g[0, 0, 0] == pytest.approx(2.0 / (3.0 + 0.5))
    assert g[0, 1, 0] == pytest.approx(3.0 / (2.0 + 0.5))


def test_rates_use_log2_and_pick_bottleneck():
    G = np.array([[1.0], [4.0]])
    P = np.array([[1.0, 1.0]])
    C = np.zeros((2, 1, 2))
    C[0, 0, 0] = C[1, 0, 1] = 1.0
    rb = rates(P, C, G, 1.0)
    assert rb.rate_user.tolist() == pytest.approx([1.0, np.log2(5.0)])
    assert rb.bottleneck_user == 0 and rb.min_rate == pytest.approx(1.0)


def test_objective_adds_penalty():
    G = np.array([[1.0]])
    P = np.array([[3.0]])
    C = np.array([[[0.5]]])
    Lam = np.array([[[2.0]]])
    z = objective_Z(P, C, Lam, G, 1.0)
    assert z.penalty == pytest.approx(-0.5)
    assert z.Z == pytest.approx(0.5 * 2.0 - 0.5)
    assert max_violation(C) == 0.25


@given(arrays(float, (3, 2, 2), elements=st.floats(0, 1)),
       arrays(float, (3, 2, 2), elements=st.floats(0, 1e3)))
def test_penalty_never_positive(C, Lam):
    assert penalty(C, Lam) <= 0.0


def test_constraint_groups_on_feasible_state():
    X = np.array([[0.0, 0.0, 100.0], [50.0, 0.0, 100.0]])
    P = np.array([[0.5, 0.5], [1.0, 0.0]])
    C = np.zeros((3, 2, 2))
    C[0, 0, 0] = C[1, 0, 1] = C[2, 1, 0] = 1.0
    st_ = SolutionState(X, P, C, np.zeros_like(C))
    v = constraint_violations(st_, 1.0, (100.0, 100.0), 100.0, 25.0, binary=True)
    assert all(val <= 1e-12 for val in v.values())
    v = constraint_violations(st_.with_(X=X * [1, 1, 0.5]), 1.0, (100, 100), 100.0, 60.0)
    assert v["region"] == pytest.approx(50.0) and v["separation"] == pytest.approx(10.0)


def test_rate_gradient_matches_differences(rng):
    K, M, N = 3, 2, 2
    users = np.column_stack([rng.uniform(0, 500, K), rng.uniform(0, 500, K), np.zeros(K)])
    X = np.column_stack([rng.uniform(0, 500, M), rng.uniform(0, 500, M), [120.0, 150.0]])
    P = rng.uniform(0.1, 0.5, (M, N))
    C = rng.dirichlet(np.ones(M * N), K).reshape(K, M, N)

    def gains(X):
        d = np.linalg.norm(X[None] - users[:, None], axis=2)
        return 1e-4 * d**-2.2

    def dgains(X):
        diff = X[None] - users[:, None]
        d = np.linalg.norm(diff, axis=2)
        return (-2.2e-4 * d**-4.2)[..., None] * diff

    noise = 1e-10
    for k in range(K):
        an = rate_grad_X(k, P, C, gains(X), dgains(X), noise)
        fd = np.zeros_like(X)
        for m in range(M):
            for i in range(3):
                e = np.zeros_like(X)
                e[m, i] = 1e-4
                fd[m, i] = (rates(P, C, gains(X + e), noise).rate_user[k]
                            - rates(P, C, gains(X - e), noise).rate_user[k]) / 2e-4
        np.testing.assert_allclose(an, fd, rtol=1e-5, atol=1e-9 * np.abs(fd).max())
