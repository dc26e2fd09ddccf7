import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from crtbp_reach.dynamics import SystemParams
from crtbp_reach.integrator import propagate, step
from crtbp_reach.linearization import (
    EliminationError,
    control_jacobian,
    costate_step,
    costate_step_explicit,
    costate_step_generic,
    jacobian_components,
    second_partials_U,
    stm_chain,
    stm_history,
    step_jacobian,
)

P = SystemParams(mu=0.0125, h=1e-3)

states = st.tuples(
    st.floats(0.3, 0.95), st.floats(-0.4, 0.4), st.floats(-0.5, 0.5), st.floats(-0.5, 0.5)
).map(np.array)


def fd_jacobian(s, h, d=1e-6):
    cols = []
    for j in range(4):
        e = np.zeros(4)
        e[j] = d
        cols.append((step(s + e, (0, 0), P, h) - step(s - e, (0, 0), P, h)) / (2 * d))
    return np.column_stack(cols)


@settings(max_examples=60, deadline=None)
@given(states, st.sampled_from([1e-3, 1e-2, 0.1]))
def test_jacobian_matches_central_differences(s, h):
    J = step_jacobian(s, P, h)
    assert np.max(np.abs(J - fd_jacobian(s, h))) <= 1e-8 * max(1.0, np.abs(J).max())


def test_jacobian_near_the_small_primary():
    s = np.array([1 - P.mu + 0.03, 0.01, 0.2, -0.4])
    J = step_jacobian(s, P, 1e-3)
    assert np.max(np.abs(J - fd_jacobian(s, 1e-3, 1e-7))) <= 1e-6 * np.abs(J).max()


def test_second_partials_symmetric_and_batched():
    S = np.array([[0.5, 0.8], [0.2, -0.1], [0, 0], [0, 0]])
    Uxx, Uxy, Uyy = second_partials_U(S, P)
    assert Uxx.shape == (2,)
    single = second_partials_U(S[:, 0], P)
    assert np.isclose(single[1], Uxy[0])


def test_batched_jacobian_equals_single():
    S = np.array([[0.5, 0.8, 0.9], [0.2, -0.1, 0.05], [0.1, 0, -0.2], [0, 0.3, 0.1]])
    Jb = jacobian_components(*S, P.mu, 1e-2)
    assert Jb.shape == (4, 4, 3)
    for i in range(3):
        assert np.array_equal(Jb[..., i], step_jacobian(S[:, i], P, 1e-2))


def test_control_jacobian():
    B = control_jacobian(P, 0.01)
    s = np.array([0.8, 0.05, 0.1, 0.2])
    fd = (step(s, (1e-3, 0), P, 0.01) - step(s, (-1e-3, 0), P, 0.01)) / 2e-3
    assert np.allclose(B[:, 0], fd, atol=1e-12)


@settings(max_examples=200, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_explicit_elimination_agrees_with_lu(seed):
    rng = np.random.default_rng(seed)
    J = np.eye(4) + rng.uniform(-0.5, 0.5, (4, 4))
    lam = rng.normal(size=4)
    try:
        ex = costate_step_explicit(lam, J)
    except EliminationError:
        return
    lu = costate_step_generic(lam, J)
    assert np.allclose(ex, lu, rtol=1e-9, atol=1e-12 * max(1.0, np.abs(lu).max()))


def test_explicit_elimination_batched():
    rng = np.random.default_rng(3)
    J = np.eye(4)[..., None] + rng.uniform(-0.3, 0.3, (4, 4, 50))
    lam = rng.normal(size=(4, 50))
    out = costate_step_explicit(lam, J)
    for i in range(50):
        assert np.allclose(out[:, i], np.linalg.solve(J[..., i].T, lam[:, i]), atol=1e-12)


def test_vanishing_pivot_falls_back_to_lu():
    # first pivot zero: the explicit path refuses, the dispatcher still solves
    J = np.array([[0.0, 1.0, 0.0, 0.0], [1.0, 0.0, 0.0, 0.0], [0.0, 0.0, 1.0, 0.0], [0.0, 0.0, 0.0, 1.0]])
    lam = np.array([1.0, 2.0, 3.0, 4.0])
    with pytest.raises(EliminationError):
        costate_step_explicit(lam, J)
    assert np.allclose(J.T @ costate_step(lam, J), lam)


def test_costate_pairing_is_preserved():
    # lam_{k+1}^T dx_{k+1} = lam_k^T dx_k for the linearized flow
    s = np.array([0.82, 0.02, 0.05, 0.19])
    J = step_jacobian(s, P)
    lam = np.array([0.3, -1.0, 0.7, 0.2])
    dx = np.array([1e-3, 2e-3, -1e-3, 5e-4])
    assert np.dot(costate_step(lam, J), J @ dx) == pytest.approx(np.dot(lam, dx), rel=1e-12)


def test_stm_chain_matches_finite_differences_of_flow():
    s0 = np.array([0.8156, 0.0, 0.0, 0.1922])
    traj = propagate(s0, None, 300, P)
    phi = stm_chain(traj)
    d = 1e-7
    cols = []
    for j in range(4):
        e = np.zeros(4)
        e[j] = d
        cols.append((propagate(s0 + e, None, 300, P).final - propagate(s0 - e, None, 300, P).final) / (2 * d))
    assert np.allclose(phi, np.column_stack(cols), atol=1e-6)
    hist = stm_history(traj)
    assert hist.shape == (301, 4, 4)
    assert np.array_equal(hist[0], np.eye(4))
    assert np.allclose(hist[-1], phi, atol=1e-14)
    assert np.linalg.det(phi) == pytest.approx(1.0, abs=1e-10)
