import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.integrate import solve_ivp
from scipy.optimize import brentq

from crtbp_reach.dynamics import SystemParams, continuous_dynamics, jacobi_integral
from crtbp_reach.integrator import DiscreteTrajectory, propagate
from crtbp_reach.structures import (
    CorrectorError,
    PoincareSection,
    continue_family,
    detect_crossings,
    find_periodic_orbit,
    globalize_manifold,
    linear_lyapunov_seed,
    lunar_section,
    manifold_seeds,
    monodromy,
    target_orbit_region,
)

P = SystemParams(mu=0.0125, h=1e-3)


def continuous_half_orbit(x0, params):
    """vy0 and half period of the continuous symmetric orbit through x0, by shooting."""

    def cross(t, s):
        return s[1]

    cross.terminal = True
    cross.direction = -1

    def vx_at_cross(vy0):
        sol = solve_ivp(
            lambda t, s: continuous_dynamics(s, (0, 0), params), (0, 5), [x0, 0, 0, vy0],
            events=cross, rtol=1e-12, atol=1e-12,
        )
        return sol.y_events[0][0][2], sol.t_events[0][0]

    vy0 = brentq(lambda v: vx_at_cross(v)[0], 0.15, 0.25, xtol=1e-14)
    return vy0, vx_at_cross(vy0)[1]


def test_line_section_geometry():
    sec = PoincareSection(anchor=(1.0, 2.0), alpha=math.pi / 4)
    on = np.array([1.0 + 0.3, 2.0 + 0.3, 0.0, 0.0])
    assert sec.offset(on) == pytest.approx(0.0, abs=1e-15)
    assert sec.along(on) == pytest.approx(0.3 * math.sqrt(2))
    assert PoincareSection(alpha=-math.pi / 2).alpha == pytest.approx(1.5 * math.pi)
    with pytest.raises(ValueError):
        PoincareSection(direction="sideways")
    with pytest.raises(ValueError):
        PoincareSection(bounds=(1.0, -1.0))


def test_no_crossings_when_trajectory_stays_on_one_side():
    S = np.column_stack([np.linspace(0, 1, 11), np.full(11, 0.5), np.ones(11), np.zeros(11)])
    traj = DiscreteTrajectory(S, np.zeros((10, 2)), 0.1, P)
    assert detect_crossings(traj, PoincareSection()) == []


@settings(max_examples=50, deadline=None)
@given(st.floats(0.01, 0.99), st.floats(-1.0, 1.0), st.floats(0.0, 2 * math.pi))
def test_straight_line_crossing_is_exact(s_cross, x_shift, alpha):
    # positions move linearly through the section line; the hit is at a known parameter
    sec = PoincareSection(anchor=(0.2, -0.1), alpha=alpha)
    n = 10
    normal = np.array([-math.sin(alpha), math.cos(alpha)])
    tangent = np.array([math.cos(alpha), math.sin(alpha)])
    t = np.arange(n + 1) * 0.1
    t_hit = (4 + s_cross) * 0.1
    pos = np.array(sec.anchor) + np.outer(t - t_hit, normal) + x_shift * tangent
    vel = np.tile(normal, (n + 1, 1))
    traj = DiscreteTrajectory(np.hstack([pos, vel]), np.zeros((n, 2)), 0.1, P)
    hits = detect_crossings(traj, sec)
    assert len(hits) == 1
    assert hits[0].time == pytest.approx(t_hit, abs=1e-12)
    assert abs(sec.offset(hits[0].state)) <= 1e-12
    assert hits[0].step_index == 4
    asc = PoincareSection(anchor=sec.anchor, alpha=alpha, direction="descending")
    assert detect_crossings(traj, asc) == []


def test_ray_and_bounds_filters():
    S = np.array([[-1.0, -0.1, 0, 1], [-1.0, 0.1, 0, 1], [1.0, 0.1, 0, -1], [1.0, -0.1, 0, -1]])
    traj = DiscreteTrajectory(S, np.zeros((3, 2)), 0.1, P)
    assert len(detect_crossings(traj, PoincareSection())) == 2
    assert [c.coords[0] for c in detect_crossings(traj, PoincareSection(ray=True))] == [1.0]
    assert [c.coords[0] for c in detect_crossings(traj, PoincareSection(bounds=(-2.0, 0.0)))] == [-1.0]
    assert [c.ascending for c in detect_crossings(traj, PoincareSection())] == [True, False]


def test_linear_seed_matches_center_frequency():
    s, half = linear_lyapunov_seed(P, 1e-4)
    orbit = find_periodic_orbit(P, amplitude=1e-4)
    assert orbit.iterations <= 10
    assert orbit.period / 2 == pytest.approx(half, rel=1e-3)
    assert orbit.state0[3] == pytest.approx(s[3], rel=1e-2)


def test_orbit_through_reference_abscissa(lyapunov):
    assert lyapunov.state0[3] == pytest.approx(0.1922, abs=0.02)
    traj = lyapunov.full_trajectory()
    assert np.max(np.abs(traj.final - traj.states[0])) <= 1e-9
    assert abs(traj.states[0, 2]) <= 1e-10
    assert abs(traj.states[lyapunov.n_half, 1]) <= 1e-10
    assert abs(traj.states[lyapunov.n_half, 2]) <= 1e-10


def test_orbit_energy_constant_along_orbit(lyapunov):
    E = jacobi_integral(lyapunov.full_trajectory().states.T, P)
    assert np.max(E) - np.min(E) <= 1e-9


def test_orbit_agrees_with_continuous_shooting(lyapunov):
    vy0, half = continuous_half_orbit(0.8156, P)
    # second-order map: O(h^2) agreement with the continuous orbit
    assert lyapunov.state0[3] == pytest.approx(vy0, abs=1e-5)
    assert lyapunov.period / 2 == pytest.approx(half, abs=1e-4)


def test_orbit_targets_energy_and_half_period(lyapunov):
    by_energy = find_periodic_orbit(P, energy=lyapunov.energy, x0_guess=0.82)
    assert by_energy.energy == pytest.approx(lyapunov.energy, abs=1e-10)
    assert by_energy.state0[0] == pytest.approx(0.8156, abs=1e-6)
    by_period = find_periodic_orbit(P, half_period=lyapunov.period / 2, x0_guess=0.82)
    assert by_period.state0[0] == pytest.approx(0.8156, abs=1e-6)


def test_orbit_argument_validation_and_divergence():
    with pytest.raises(ValueError):
        find_periodic_orbit(P)
    with pytest.raises(ValueError):
        find_periodic_orbit(P, 0.8156, energy=-1.6)
    with pytest.raises(CorrectorError) as err:
        find_periodic_orbit(P, 0.2, max_iter=5)
    assert err.value.residual >= 0


def test_family_energy_is_monotone():
    fam = continue_family(P, [0.83, 0.825, 0.82, 0.815, 0.81])
    E = [o.energy for o in fam]
    assert all(b > a for a, b in zip(E, E[1:])) or all(b < a for a, b in zip(E, E[1:]))


def test_monodromy_spectrum(lyapunov):
    m = monodromy(lyapunov)
    assert m.determinant == pytest.approx(1.0, abs=1e-6)
    assert m.unstable_value > 1
    assert m.unstable_value * m.stable_value == pytest.approx(1.0, abs=1e-6)
    rest = sorted(np.abs(m.eigenvalues))[1:3]
    assert np.prod(rest) == pytest.approx(1.0, abs=1e-6)
    assert all(abs(r - 1) < 1e-3 for r in rest)


def test_two_axis_crossings_per_period(lyapunov):
    # start a quarter period in so neither crossing sits on the window boundary
    traj = lyapunov.full_trajectory()
    s = traj.states[lyapunov.n_half // 2]
    lap = propagate(s, None, 2 * lyapunov.n_half, P, h=lyapunov.h)
    hits = detect_crossings(lap, PoincareSection())
    assert len(hits) == 2
    assert sorted(c.ascending for c in hits) == [False, True]
    for c in hits:
        assert abs(c.state[1]) <= 1e-10
        assert abs(c.time / lap.h - c.step_index) <= 1.0


def test_manifold_seeds_are_eps_perturbations(lyapunov):
    seeds = manifold_seeds(lyapunov, "unstable", 1, 1e-4, 8)
    traj = lyapunov.full_trajectory()
    assert len(seeds) == 8
    for k, s in seeds:
        assert np.linalg.norm(s - traj.states[k]) == pytest.approx(1e-4, rel=1e-12)
    with pytest.raises(ValueError):
        manifold_seeds(lyapunov, "unstable", 1, 0.0, 8)


@pytest.fixture(scope="module")
def branch(lyapunov):
    return globalize_manifold(lyapunov, section=lunar_section(P))


def test_manifold_reaches_lunar_section(branch):
    tof = branch.times_of_flight
    assert len(tof) == 20
    assert 2.5 <= tof.mean() <= 3.7
    for c in branch.crossings:
        assert abs(c.state[1]) <= 1e-10


def test_manifold_seed_energies(branch, lyapunov):
    for tr in branch.trajectories:
        assert abs(jacobi_integral(tr.seed, P) - lyapunov.energy) <= 5e-5


def test_manifold_energy_away_from_close_flybys(branch, lyapunov):
    # fixed-step error grows like h^2 / r2^3 on close lunar passes; check the others
    checked = 0
    for tr in branch.trajectories:
        S = tr.trajectory.states
        if np.min(np.hypot(S[:, 0] - (1 - P.mu), S[:, 1])) < 0.03:
            continue
        checked += 1
        assert np.max(np.abs(jacobi_integral(S.T, P) - lyapunov.energy)) <= 5e-5
    assert checked >= 8


def test_stable_branch_runs_backward(lyapunov):
    br = globalize_manifold(lyapunov, "stable", -1, n_traj=2, t_max=0.5)
    assert all(t.crossing is None for t in br.trajectories)
    assert len(br.trajectories[0].trajectory.states) == math.ceil(0.5 / lyapunov.h) + 1


@pytest.fixture(scope="module")
def target():
    return target_orbit_region(P, [1.05, 0, 0, 0.35], 20.0, lunar_section(P))


def test_target_region_stays_near_moon(target):
    S = target.trajectory.states
    assert not target.escaped
    assert np.max(np.hypot(S[:, 0] - (1 - P.mu), S[:, 1])) < 0.5


def test_target_region_two_disjoint_clusters(target):
    asc = np.array([c.coords for c in target.ascending])
    desc = np.array([c.coords for c in target.descending])
    assert len(asc) > 3 and len(desc) > 3
    assert asc[:, 0].min() > desc[:, 0].max()


def test_target_crossing_energies(target):
    for c in target.crossings:
        assert abs(jacobi_integral(c.state, P) - target.energy) <= 1e-8
