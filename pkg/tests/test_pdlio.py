import numpy as np
import pytest
from hypothesis import given, strategies as st
from hypothesis.extra.numpy import arrays

from blockuav.netmodel import SolutionState, objective_Z, rate_grad_X
from blockuav.pdlio import (AlgoParams, _backtrack, check_state, inner_loop,
                            position_gradient, ra_directional_derivative,
                            round_association, update_multipliers)
from blockuav.scenario import initial_state, synthetic_scene

from conftest import mixed_association


def test_algo_defaults_and_validation():
    a = AlgoParams()
    assert a.initial_lambda(8, 4, 4) == pytest.approx(0.1)
    assert AlgoParams(lambda0=0.3).initial_lambda(8, 4, 4) == 0.3
    for bad in ({"zeta": 1.0}, {"tau": 0.0}, {"eps_inner": 0.0}, {"mu0": -1.0},
                {"max_inner": 0}, {"lambda0": -0.1}):
        with pytest.raises(ValueError):
            AlgoParams(**bad)


def test_multiplier_update_rule():
    C = np.array([[[0.5, 0.5]], [[1.0, 0.0]]])
    Lam = np.full(C.shape, 0.1)
    v = C * (1 - C)
    new, mu, gamma, done = update_multipliers(Lam, C, 2.0, None)
    assert mu == 2.0 and not done
    assert gamma == pytest.approx(2.0 / np.sum(v**2))
    np.testing.assert_allclose(new, Lam + gamma * v)
    # no strict decrease of the max violation doubles mu first
    _, mu, _, _ = update_multipliers(Lam, C, 2.0, 0.25)
    assert mu == 4.0
    _, mu, _, _ = update_multipliers(Lam, C, 2.0, 0.3)
    assert mu == 2.0


def test_multiplier_update_stops_on_binary():
    C = np.zeros((2, 1, 2))
    C[0, 0, 0] = C[1, 0, 1] = 1.0
    new, _, gamma, done = update_multipliers(np.ones_like(C), C, 2.0, None)
    assert done and gamma == 0.0 and np.array_equal(new, np.ones_like(C))


def _feasible_binary(R):
    return (np.all(R.sum(axis=0) <= 1) and np.all(R.sum(axis=(1, 2)) == 1)
            and set(np.unique(R)) <= {0.0, 1.0})


@given(st.integers(0, 10_000), st.integers(1, 3), st.integers(1, 3))
def test_rounding_always_feasible(seed, M, N):
    rng = np.random.default_rng(seed)
    K = int(rng.integers(1, M * N + 1))
    R = round_association(mixed_association(rng, K, M, N))
    assert _feasible_binary(R)


def test_rounding_keeps_near_binary_and_breaks_halves():
    rng = np.random.default_rng(0)
    B = mixed_association(rng, 4, 2, 2, terms=1)
    assert np.array_equal(round_association(np.clip(B + 1e-6 - 2e-6 * B, 0, 1)), B)
    C = np.zeros((2, 1, 2))
    C[:, 0, :] = 0.5
    lr = np.array([[[1.0, 2.0]], [[3.0, 1.0]]])
    R = round_association(C, lr)
    assert _feasible_binary(R)
    assert R[1, 0, 0] == 1.0 and R[0, 0, 1] == 1.0


def test_backtracking_rule():
    algo = AlgoParams()
    assert _backtrack(lambda g: "ok", 0.0, algo) == (0.0, None)
    seen = []

    def trial(g):
        seen.append(g)
        return "ok" if g < 0.5 else None

    gamma, res = _backtrack(trial, 1.0, algo)
    assert res == "ok" and gamma == pytest.approx(0.9**7)
    assert seen[0] == 1.0
    gamma, res = _backtrack(lambda g: None, 1.0, algo)
    assert gamma == 0.0 and res is None


@pytest.fixture(scope="module")
def scene():
    sc = synthetic_scene(4, 2, 2, seed=3, n_buildings=12)
    return sc, sc.network()


def test_directional_derivatives_match_differences(scene):
    sc, net = scene
    st0 = initial_state(sc)
    rng = np.random.default_rng(1)
    C = mixed_association(rng, 4, 2, 2)
    P = rng.uniform(0.1, 0.4, (2, 2))
    Lam = np.full(C.shape, 0.3)
    links = net.links(st0.X)
    G = links.G
    z = objective_Z(P, C, Lam, G, net.noise)
    k = z.bottleneck_user
    # positioning: gradient of the bottleneck rate
    np.testing.assert_allclose(position_gradient(k, P, C, G, links.dG, net.noise),
                               rate_grad_X(k, P, C, G, links.dG, net.noise), rtol=1e-8)
    # resource step: directional derivative of Z along (dP, dC)
    dP = rng.normal(0, 0.01, P.shape)
    dC = mixed_association(rng, 4, 2, 2) - C
    dd = ra_directional_derivative(k, P, C, Lam, G, net.noise, dP, dC)
    # forward differences only: C - h*dC leaves the box wherever C is 0
    h = 1e-7
    f = [objective_Z(P + t * dP, C + t * dC, Lam, G, net.noise).Z for t in (0.0, h, 2 * h)]
    fd = (-3 * f[0] + 4 * f[1] - f[2]) / (2 * h)
    assert dd == pytest.approx(fd, rel=1e-4)


def test_inner_loop_is_monotone_and_feasible(scene):
    sc, net = scene
    res = inner_loop(net, initial_state(sc), sc.algo)
    Z = [res.Z_start] + [t.Z for t in res.traces]
    assert np.all(np.diff(Z) >= -1e-8)
    assert len(res.traces) <= sc.algo.max_inner
    viol = check_state(net, res.state)
    assert max(viol.values()) <= 1e-6
