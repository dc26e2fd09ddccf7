import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.integrate import solve_ivp

from crtbp_reach.dynamics import (
    CollisionError,
    SystemParams,
    continuous_dynamics,
    distances,
    effective_potential,
    grad_U,
    hessian_U,
    jacobi_integral,
    lagrange_points,
    mass_parameter,
    nondimensionalize,
    primary_positions,
)

coord = st.floats(-1.5, 1.5, allow_nan=False)


def away_from_primaries(x, y, mu=0.0125):
    return math.hypot(x + mu, y) > 0.05 and math.hypot(x - 1 + mu, y) > 0.05


def test_mass_parameter_earth_moon():
    # Earth/Moon mass ratio 81.3
    assert mass_parameter(81.3, 1.0) == pytest.approx(1.0 / 82.3, rel=1e-15)


@pytest.mark.parametrize("m1,m2", [(0.0, 0.0), (1.0, 2.0), (1.0, -0.1)])
def test_mass_parameter_rejects(m1, m2):
    with pytest.raises(ValueError):
        mass_parameter(m1, m2)


@pytest.mark.parametrize("kw", [{"mu": 0.6}, {"mu": -0.1}, {"h": 0.0}, {"u_max": -1.0}, {"mu": float("nan")}])
def test_params_validation(kw):
    with pytest.raises(ValueError):
        SystemParams(**kw)


def test_primaries(params):
    p1, p2 = primary_positions(params)
    assert p1.tolist() == [-0.0125, 0.0]
    assert p2.tolist() == [0.9875, 0.0]
    assert np.allclose(distances(np.array([0.4875, math.sqrt(3) / 2, 0, 0]), params), [1.0, 1.0], atol=1e-15)


def test_collision_raises(params):
    with pytest.raises(CollisionError):
        effective_potential(np.array([1 - params.mu, 0.0, 0, 0]), params)


@settings(max_examples=60, deadline=None)
@given(coord, coord)
def test_gradient_matches_difference_quotient(x, y):
    p = SystemParams()
    if not away_from_primaries(x, y):
        return
    d = 1e-6
    s = np.array([x, y, 0, 0])
    fd = [
        (effective_potential(s + [d, 0, 0, 0], p) - effective_potential(s - [d, 0, 0, 0], p)) / (2 * d),
        (effective_potential(s + [0, d, 0, 0], p) - effective_potential(s - [0, d, 0, 0], p)) / (2 * d),
    ]
    assert np.allclose(grad_U(s, p), fd, rtol=1e-7, atol=1e-7)


@settings(max_examples=60, deadline=None)
@given(coord, coord)
def test_hessian_matches_gradient_differences(x, y):
    p = SystemParams()
    if not away_from_primaries(x, y):
        return
    d = 1e-6
    s = np.array([x, y, 0, 0])
    H = hessian_U(s, p)
    col_x = (grad_U(s + [d, 0, 0, 0], p) - grad_U(s - [d, 0, 0, 0], p)) / (2 * d)
    col_y = (grad_U(s + [0, d, 0, 0], p) - grad_U(s - [0, d, 0, 0], p)) / (2 * d)
    scale = max(1.0, np.abs(H).max())
    assert np.allclose(H, np.column_stack([col_x, col_y]), atol=1e-5 * scale)


def test_lagrange_points(params, L):
    for p in L:
        assert np.hypot(*grad_U(np.array([p[0], p[1]]), params)) <= 1e-12
    assert L.L4 == pytest.approx([0.5 - 0.0125, math.sqrt(3) / 2], abs=1e-14)
    assert L.L5 == pytest.approx([0.5 - 0.0125, -math.sqrt(3) / 2], abs=1e-14)
    assert -0.0125 < L.L1[0] < 0.9875 < L.L2[0]
    assert L.L3[0] < -0.0125


def test_l1_small_mu_limit():
    # Hill approximation: distance from the small primary ~ (mu/3)^(1/3)
    mu = 1e-7
    L = lagrange_points(SystemParams(mu=mu))
    assert (1 - mu) - L.L1[0] == pytest.approx((mu / 3) ** (1 / 3), rel=1e-2)


def test_lagrange_needs_positive_mu():
    with pytest.raises(ValueError):
        lagrange_points(SystemParams(mu=0.0))


def test_jacobi_conserved_by_continuous_flow(params):
    s0 = np.array([0.75, 0.0, 0.0, 0.2883])
    sol = solve_ivp(lambda t, s: continuous_dynamics(s, (0, 0), params), (0, 5), s0, rtol=1e-12, atol=1e-12, dense_output=True)
    E = jacobi_integral(sol.y, params)
    assert np.max(np.abs(E - E[0])) < 1e-10


def test_thrust_changes_energy_at_rate_v_dot_u(params):
    s = np.array([0.8, 0.1, 0.05, 0.2])
    u = np.array([0.01, -0.02])
    ds = continuous_dynamics(s, u, params)
    # dE/dt = v . (vdot) - grad U . v = v . u
    g = grad_U(s, params)
    dE = s[2] * ds[2] + s[3] * ds[3] - g[0] * s[2] - g[1] * s[3]
    assert dE == pytest.approx(s[2] * u[0] + s[3] * u[1], abs=1e-15)


def test_batched_shapes(params):
    S = np.array([[0.5, 0.6], [0.1, -0.2], [0.0, 0.1], [0.2, 0.3]])
    assert effective_potential(S, params).shape == (2,)
    assert grad_U(S, params).shape == (2, 2)
    assert jacobi_integral(S, params).shape == (2,)


def test_nondimensionalize():
    length, t = nondimensionalize(384400.0, 1.0 / 2.6617e-6)
    assert length == 1.0
    assert t == pytest.approx(1.0)
