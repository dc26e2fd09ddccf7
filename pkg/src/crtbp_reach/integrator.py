"""Variational integrator for the PCRTBP and a fixed-step RK4 baseline.

The update map comes from the trapezoidal discrete Lagrangian

    Ld = h/2 [L(q0, (q1 - q0)/h) + L(q1, (q1 - q0)/h)]

together with the discrete fiber derivative ``px = vx - y``, ``py = vy + x``.
Thrust enters the velocity rows as ``+h*u`` with the control held over the step.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .dynamics import COLLISION_RADIUS, CollisionError, SystemParams, continuous_dynamics, jacobi_integral


def _grav_grad(x, y, mu):
    """Gradient of the negated gravitational potential, i.e. (1-mu)(x+mu)/r1^3 + ...

    Returns ``(gx, gy, r1, r2)``.  Note ``Ux = x - gx`` and ``Uy = y - gy``.
    The y-row uses r1^3 for the first primary (a printed variant uses r2^3,
    which breaks energy conservation).
    """
    r1 = np.sqrt((x + mu) ** 2 + y * y)
    r2 = np.sqrt((x - 1.0 + mu) ** 2 + y * y)
    if np.any(r1 < COLLISION_RADIUS) or np.any(r2 < COLLISION_RADIUS):
        raise CollisionError("trajectory collides with a primary")
    r13 = r1 * r1 * r1
    r23 = r2 * r2 * r2
    gx = (1.0 - mu) * (x + mu) / r13 + mu * (x - 1.0 + mu) / r23
    gy = (1.0 - mu) * y / r13 + mu * y / r23
    return gx, gy, r1, r2


def step_components(x, y, vx, vy, ux, uy, mu, h):
    """One step of the discrete map on scalars or equally shaped arrays."""
    gxk, gyk, _, _ = _grav_grad(x, y, mu)
    h2 = h * h
    x1 = (h * vx + h2 * vy + x * (1.0 + 1.5 * h2) + 0.5 * h2 * h * y - 0.5 * h2 * h * gyk - 0.5 * h2 * gxk) / (1.0 + h2)
    y1 = h * vy + h * x - h * x1 + y + 0.5 * h2 * y - 0.5 * h2 * gyk
    gx1, gy1, _, _ = _grav_grad(x1, y1, mu)
    vx1 = vx - 2.0 * y + 2.0 * y1 + 0.5 * h * (x1 + x) - 0.5 * h * gx1 - 0.5 * h * gxk + h * ux
    vy1 = vy + 2.0 * x - 2.0 * x1 + 0.5 * h * (y1 + y) - 0.5 * h * gy1 - 0.5 * h * gyk + h * uy
    return x1, y1, vx1, vy1


def step(state, control, params: SystemParams, h: float | None = None) -> np.ndarray:
    """Advance ``state`` by one step of the variational map.

    ``h`` defaults to ``params.h``.  Negative ``h`` is accepted and gives the
    map run with reversed time (useful for stable manifolds).
    """
    h = params.h if h is None else h
    s = np.asarray(state, dtype=float)
    u = np.asarray(control, dtype=float)
    return np.array(step_components(s[0], s[1], s[2], s[3], u[0], u[1], params.mu, h))


def discrete_lagrangian(q0, q1, h: float, params: SystemParams) -> float:
    """Trapezoidal approximation of the action between positions ``q0`` and ``q1``."""
    if not h > 0:
        raise ValueError("h must be positive")
    mu = params.mu
    q0 = np.asarray(q0, dtype=float)
    q1 = np.asarray(q1, dtype=float)
    v = (q1 - q0) / h

    def lagrangian(q):
        x, y = q
        r1 = math.hypot(x + mu, y)
        r2 = math.hypot(x - 1.0 + mu, y)
        if r1 < COLLISION_RADIUS or r2 < COLLISION_RADIUS:
            raise CollisionError(f"position {q} collides with a primary")
        return 0.5 * ((v[0] - y) ** 2 + (v[1] + x) ** 2) + (1.0 - mu) / r1 + mu / r2

    return 0.5 * h * (lagrangian(q0) + lagrangian(q1))


@dataclass(frozen=True)
class DiscreteTrajectory:
    """States ``0..N`` and the piecewise-constant controls ``0..N-1`` between them."""

    states: np.ndarray
    controls: np.ndarray
    h: float
    params: SystemParams = field(default_factory=SystemParams)

    def __post_init__(self):
        states = np.array(self.states, dtype=float)
        controls = np.array(self.controls, dtype=float).reshape(-1, 2)
        if states.ndim != 2 or states.shape[1] != 4:
            raise ValueError("states must have shape (N+1, 4)")
        if controls.shape[0] != states.shape[0] - 1:
            raise ValueError("need exactly one control per step")
        states.setflags(write=False)
        controls.setflags(write=False)
        object.__setattr__(self, "states", states)
        object.__setattr__(self, "controls", controls)

    @property
    def n_steps(self) -> int:
        return self.states.shape[0] - 1

    @property
    def times(self) -> np.ndarray:
        return self.h * np.arange(self.states.shape[0])

    @property
    def final(self) -> np.ndarray:
        return self.states[-1]

    def max_residual(self) -> float:
        """Largest mismatch between consecutive states and the update map."""
        if self.n_steps == 0:
            return 0.0
        s, u = self.states[:-1].T, self.controls.T
        mapped = np.array(step_components(s[0], s[1], s[2], s[3], u[0], u[1], self.params.mu, self.h))
        return float(np.max(np.abs(mapped.T - self.states[1:])))


def _control_array(control_schedule, n: int) -> np.ndarray:
    if control_schedule is None:
        return np.zeros((n, 2))
    u = np.asarray(control_schedule, dtype=float)
    if u.shape == (2,):
        return np.tile(u, (n, 1))
    if u.shape != (n, 2):
        raise ValueError(f"control schedule must have shape (2,) or ({n}, 2), got {u.shape}")
    return u


def propagate(state0, control_schedule, n_steps: int, params: SystemParams, h: float | None = None) -> DiscreteTrajectory:
    """Iterate the variational map ``n_steps`` times from ``state0``.

    ``control_schedule`` is ``None`` (no thrust), one ``(ux, uy)`` pair held
    for all steps, or an array of shape ``(n_steps, 2)``.
    """
    if n_steps < 1:
        raise ValueError("n_steps must be at least 1")
    h = params.h if h is None else h
    controls = _control_array(control_schedule, n_steps)
    states = np.empty((n_steps + 1, 4))
    states[0] = state0
    x, y, vx, vy = (float(c) for c in states[0])
    mu = params.mu
    for k in range(n_steps):
        try:
            x, y, vx, vy = step_components(x, y, vx, vy, controls[k, 0], controls[k, 1], mu, h)
        except CollisionError as exc:
            raise CollisionError(f"collision at step {k}: {exc}") from exc
        states[k + 1] = (x, y, vx, vy)
    return DiscreteTrajectory(states, controls, h, params)


def rk4_step(state, control, params: SystemParams, dt: float) -> np.ndarray:
    """Classical fourth-order Runge-Kutta step of the continuous equations."""
    if not dt > 0:
        raise ValueError("dt must be positive")
    s = np.asarray(state, dtype=float)
    k1 = continuous_dynamics(s, control, params)
    k2 = continuous_dynamics(s + 0.5 * dt * k1, control, params)
    k3 = continuous_dynamics(s + 0.5 * dt * k2, control, params)
    k4 = continuous_dynamics(s + dt * k3, control, params)
    return s + dt / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4)


def rk4_propagate(state0, control_schedule, n_steps: int, params: SystemParams, dt: float | None = None) -> DiscreteTrajectory:
    dt = params.h if dt is None else dt
    controls = _control_array(control_schedule, n_steps)
    states = np.empty((n_steps + 1, 4))
    states[0] = state0
    for k in range(n_steps):
        states[k + 1] = rk4_step(states[k], controls[k], params, dt)
    return DiscreteTrajectory(states, controls, dt, params)


def reference_solution(state0, t_final: float, params: SystemParams, control=(0.0, 0.0), tol: float = 1e-13) -> np.ndarray:
    """High-accuracy continuous-time solution used as an independent check."""
    from scipy.integrate import solve_ivp

    sol = solve_ivp(
        lambda t, s: continuous_dynamics(s, control, params),
        (0.0, t_final),
        np.asarray(state0, dtype=float),
        method="DOP853",
        rtol=tol,
        atol=tol,
    )
    if not sol.success:
        raise RuntimeError(sol.message)
    return sol.y[:, -1]


@dataclass(frozen=True)
class EnergyReport:
    energies: np.ndarray
    times: np.ndarray
    mean_deviation: float
    max_deviation: float
    drift_slope: float
    final_deviation: float

    def summary(self) -> dict[str, float]:
        return {
            "E0": float(self.energies[0]),
            "mean_deviation": self.mean_deviation,
            "max_deviation": self.max_deviation,
            "drift_slope": self.drift_slope,
            "final_deviation": self.final_deviation,
        }


def energy_report(trajectory: DiscreteTrajectory) -> EnergyReport:
    """Jacobi integral along ``trajectory`` with deviation and drift statistics.

    ``drift_slope`` is the least-squares slope of ``E(t) - E(0)`` against time.
    """
    states = trajectory.states
    if states.shape[0] == 0:
        raise ValueError("empty trajectory")
    energies = np.asarray(jacobi_integral(states.T, trajectory.params), dtype=float).reshape(-1)
    times = trajectory.times
    dev = energies - energies[0]
    if len(times) > 1:
        tc = times - times.mean()
        slope = float(np.dot(tc, dev - dev.mean()) / np.dot(tc, tc))
    else:
        slope = 0.0
    return EnergyReport(
        energies=energies,
        times=times,
        mean_deviation=float(np.mean(np.abs(dev))),
        max_deviation=float(np.max(np.abs(dev))),
        drift_slope=slope,
        final_deviation=float(abs(dev[-1])),
    )
