"""Planar circular restricted three-body problem in the rotating frame.

States are ``(x, y, vx, vy)`` in nondimensional units.  Most functions accept
either a single state of shape ``(4,)`` or a batch of shape ``(4, M)``; the
leading axis always indexes the state component.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np
from scipy.optimize import brentq

COLLISION_RADIUS = 1e-8


class CollisionError(ValueError):
    """Raised when a state lies on (or numerically at) one of the primaries."""


@dataclass(frozen=True)
class SystemParams:
    """Mass ratio, integrator step and thrust bound of a PCRTBP setup."""

    mu: float = 0.0125
    h: float = 1e-3
    u_max: float = 0.0

    def __post_init__(self):
        if not (0.0 <= self.mu <= 0.5) or not math.isfinite(self.mu):
            raise ValueError(f"mu must lie in [0, 1/2], got {self.mu!r}")
        if not (self.h > 0.0) or not math.isfinite(self.h):
            raise ValueError(f"h must be positive, got {self.h!r}")
        if not (self.u_max >= 0.0) or not math.isfinite(self.u_max):
            raise ValueError(f"u_max must be nonnegative, got {self.u_max!r}")


class LagrangePointSet(NamedTuple):
    L1: np.ndarray
    L2: np.ndarray
    L3: np.ndarray
    L4: np.ndarray
    L5: np.ndarray

    def as_dict(self) -> dict[str, list[float]]:
        return {name: [float(v) for v in p] for name, p in zip(self._fields, self)}


def mass_parameter(m1: float, m2: float) -> float:
    """Return ``m2 / (m1 + m2)`` for primary masses with ``m1 >= m2 >= 0``."""
    if not m1 > 0.0:
        raise ValueError(f"m1 must be positive, got {m1!r}")
    if m2 < 0.0 or m2 > m1:
        raise ValueError(f"m2 must satisfy 0 <= m2 <= m1, got {m2!r}")
    return m2 / (m1 + m2)


def primary_positions(params: SystemParams) -> tuple[np.ndarray, np.ndarray]:
    mu = params.mu
    return np.array([-mu, 0.0]), np.array([1.0 - mu, 0.0])


def _distances(x, y, mu):
    r1 = np.sqrt((x + mu) ** 2 + y**2)
    r2 = np.sqrt((x - 1.0 + mu) ** 2 + y**2)
    if np.any(r1 < COLLISION_RADIUS) or np.any(r2 < COLLISION_RADIUS):
        raise CollisionError(f"position ({x}, {y}) collides with a primary")
    return r1, r2


def distances(state, params: SystemParams):
    """Distances ``(r1, r2)`` from the position part of ``state`` to both primaries."""
    state = np.asarray(state, dtype=float)
    return _distances(state[0], state[1], params.mu)


def effective_potential(state, params: SystemParams):
    state = np.asarray(state, dtype=float)
    x, y = state[0], state[1]
    mu = params.mu
    r1, r2 = _distances(x, y, mu)
    return 0.5 * (x**2 + y**2) + (1.0 - mu) / r1 + mu / r2


def grad_U(state, params: SystemParams):
    """Gradient ``(Ux, Uy)`` of the effective potential."""
    state = np.asarray(state, dtype=float)
    x, y = state[0], state[1]
    mu = params.mu
    r1, r2 = _distances(x, y, mu)
    r13 = r1**3
    r23 = r2**3
    ux = x - (1.0 - mu) * (x + mu) / r13 - mu * (x - 1.0 + mu) / r23
    uy = y - (1.0 - mu) * y / r13 - mu * y / r23
    return np.array([ux, uy])


def hessian_U(state, params: SystemParams) -> np.ndarray:
    """Full 2x2 Hessian of the effective potential (centrifugal part included)."""
    state = np.asarray(state, dtype=float)
    x, y = state[0], state[1]
    mu = params.mu
    r1, r2 = _distances(x, y, mu)
    a, b = x + mu, x - 1.0 + mu
    r13, r15 = r1**3, r1**5
    r23, r25 = r2**3, r2**5
    uxx = 1.0 - (1.0 - mu) * (1.0 / r13 - 3.0 * a * a / r15) - mu * (1.0 / r23 - 3.0 * b * b / r25)
    uyy = 1.0 - (1.0 - mu) * (1.0 / r13 - 3.0 * y * y / r15) - mu * (1.0 / r23 - 3.0 * y * y / r25)
    uxy = 3.0 * (1.0 - mu) * a * y / r15 + 3.0 * mu * b * y / r25
    return np.array([[uxx, uxy], [uxy, uyy]])


def continuous_dynamics(state, control, params: SystemParams):
    """Time derivative of ``state`` under thrust acceleration ``control``.

    Uses ``xdd - 2 yd = Ux + ux`` and ``ydd + 2 xd = Uy + uy``, the sign
    convention under which the Jacobi integral is conserved without thrust.
    """
    state = np.asarray(state, dtype=float)
    control = np.asarray(control, dtype=float)
    ux, uy = grad_U(state, params)
    vx, vy = state[2], state[3]
    return np.array([vx, vy, 2.0 * vy + ux + control[0], -2.0 * vx + uy + control[1]])


def jacobi_integral(state, params: SystemParams):
    """Energy-like integral ``E = (vx^2 + vy^2)/2 - U``."""
    state = np.asarray(state, dtype=float)
    return 0.5 * (state[2] ** 2 + state[3] ** 2) - effective_potential(state, params)


def lagrange_points(params: SystemParams, xtol: float = 1e-14) -> LagrangePointSet:
    """Locate the five equilibria.

    The collinear points are roots of ``Ux(x, 0)`` bracketed between and beyond
    the primaries; the equilateral points are exact.
    """
    mu = params.mu
    if not 0.0 < mu < 0.5:
        raise ValueError(f"lagrange_points needs 0 < mu < 1/2, got {mu!r}")

    def ux(x):
        return grad_U(np.array([x, 0.0]), params)[0]

    p1, p2 = -mu, 1.0 - mu
    # Ux -> +inf just right of a primary and -inf just left of it.
    gap = 1e-6
    brackets = {
        "L1": (p1 + gap, p2 - gap),
        "L2": (p2 + gap, 2.0),
        "L3": (-2.0, p1 - gap),
    }
    roots = {}
    for name, (lo, hi) in brackets.items():
        try:
            roots[name] = brentq(ux, lo, hi, xtol=xtol, rtol=4 * np.finfo(float).eps, maxiter=500)
        except ValueError as exc:
            raise ArithmeticError(f"could not bracket {name}: {exc}") from exc

    s3 = math.sqrt(3.0) / 2.0
    return LagrangePointSet(
        L1=np.array([roots["L1"], 0.0]),
        L2=np.array([roots["L2"], 0.0]),
        L3=np.array([roots["L3"], 0.0]),
        L4=np.array([0.5 - mu, s3]),
        L5=np.array([0.5 - mu, -s3]),
    )


def nondimensionalize(
    length_km: float, time_s: float, *, char_length_km: float = 384400.0, mean_motion: float = 2.6617e-6
) -> tuple[float, float]:
    """Convert a length and time to Earth-Moon nondimensional units."""
    return length_km / char_length_km, time_s * mean_motion
