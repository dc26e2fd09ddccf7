"""Analytic Jacobian of the variational map and the explicit costate update.

All partials are obtained by the exact chain rule through the update map in
:mod:`crtbp_reach.integrator`.  Deviations from the printed cascade formulas
that this fixes:

* the mixed partial of the gravitational gradient divides by ``r1**5`` (not ``r1**3``);
* the ``k+1`` second partials carry ``(x_{k+1} + mu)`` and a single minus sign;
* the velocity rows see ``U_{k+1}`` through both ``x_{k+1}`` and ``y_{k+1}``, so
  the columns for ``vx`` and ``vy`` pick up the same chained terms as ``x`` and ``y``;
* ``d vy_{k+1} / d y_k`` has ``+ h/2 (f2_y + 1)``.
"""

from __future__ import annotations

import logging

import numpy as np

from .dynamics import COLLISION_RADIUS, CollisionError, SystemParams
from .integrator import DiscreteTrajectory, step_components

log = logging.getLogger(__name__)


class EliminationError(ArithmeticError):
    """A pivot of the explicit costate elimination vanished."""


def _second_partials(x, y, mu):
    a = x + mu
    b = x - 1.0 + mu
    r1sq = a * a + y * y
    r2sq = b * b + y * y
    if np.any(r1sq < COLLISION_RADIUS**2) or np.any(r2sq < COLLISION_RADIUS**2):
        raise CollisionError("position collides with a primary")
    r1 = np.sqrt(r1sq)
    r2 = np.sqrt(r2sq)
    r13, r15 = r1 * r1sq, r1 * r1sq * r1sq
    r23, r25 = r2 * r2sq, r2 * r2sq * r2sq
    gxx = (1.0 - mu) * (1.0 / r13 - 3.0 * a * a / r15) + mu * (1.0 / r23 - 3.0 * b * b / r25)
    gyy = (1.0 - mu) * (1.0 / r13 - 3.0 * y * y / r15) + mu * (1.0 / r23 - 3.0 * y * y / r25)
    gxy = -3.0 * (1.0 - mu) * a * y / r15 - 3.0 * mu * b * y / r25
    return gxx, gyy, gxy


def second_partials_U(state, params: SystemParams):
    """Second partials ``(Uxx, Uyy, Uxy)`` of the gravitational gradient used by the map.

    These are the derivatives of ``(1-mu)(x+mu)/r1^3 + mu(x-1+mu)/r2^3`` and its
    y counterpart, i.e. the Hessian of minus the gravitational potential.
    """
    s = np.asarray(state, dtype=float)
    return _second_partials(s[0], s[1], params.mu)


def jacobian_components(x, y, vx, vy, mu, h):
    """Jacobian of one map step, shaped (4, 4, ...) for scalar or batched inputs."""
    x1, y1, _, _ = step_components(x, y, vx, vy, 0.0, 0.0, mu, h)
    gxx, gyy, gxy = _second_partials(x, y, mu)
    gxx1, gyy1, gxy1 = _second_partials(x1, y1, mu)

    shape = np.shape(x)
    one = np.ones(shape)
    zero = np.zeros(shape)
    h2 = h * h
    d = 1.0 + h2
    # rows of the Jacobian as 4-lists over (x, y, vx, vy) columns
    f1 = [
        (1.0 + 1.5 * h2 - 0.5 * h2 * h * gxy - 0.5 * h2 * gxx) / d,
        (0.5 * h2 * h - 0.5 * h2 * h * gyy - 0.5 * h2 * gxy) / d,
        h / d * one,
        h2 / d * one,
    ]
    ex = [one, zero, zero, zero]
    ey = [zero, one, zero, zero]
    evx = [zero, zero, one, zero]
    evy = [zero, zero, zero, one]
    f2 = [
        h * evy[j] + h * ex[j] - h * f1[j] + (1.0 + 0.5 * h2) * ey[j] - 0.5 * h2 * (gxy * ex[j] + gyy * ey[j])
        for j in range(4)
    ]
    f3 = [
        evx[j]
        - 2.0 * ey[j]
        + 2.0 * f2[j]
        + 0.5 * h * (f1[j] + ex[j])
        - 0.5 * h * (gxx1 * f1[j] + gxy1 * f2[j])
        - 0.5 * h * (gxx * ex[j] + gxy * ey[j])
        for j in range(4)
    ]
    f4 = [
        evy[j]
        + 2.0 * ex[j]
        - 2.0 * f1[j]
        + 0.5 * h * (f2[j] + ey[j])
        - 0.5 * h * (gxy1 * f1[j] + gyy1 * f2[j])
        - 0.5 * h * (gxy * ex[j] + gyy * ey[j])
        for j in range(4)
    ]
    return np.array([f1, f2, f3, f4])


def step_jacobian(state, params: SystemParams, h: float | None = None) -> np.ndarray:
    """4x4 matrix of partials of :func:`~crtbp_reach.integrator.step` w.r.t. the state.

    The control only shifts the velocity rows by ``h*u`` and so does not
    enter the Jacobian.
    """
    h = params.h if h is None else h
    s = np.asarray(state, dtype=float)
    return jacobian_components(s[0], s[1], s[2], s[3], params.mu, h)


def control_jacobian(params: SystemParams, h: float | None = None) -> np.ndarray:
    """Partials of the mapped state w.r.t. ``(ux, uy)``: ``h`` on the velocity rows."""
    h = params.h if h is None else h
    B = np.zeros((4, 2))
    B[2, 0] = h
    B[3, 1] = h
    return B


def costate_step_explicit(lam, J, pivot_tol: float = 1e-14):
    """Solve ``J.T @ lam_next = lam`` by the fixed-order row elimination.

    ``J[i, j]`` is ``d f_{i+1} / d s_j``; the first row of ``J.T`` (the
    x-partials) is the first pivot row.  Works elementwise on batched inputs
    shaped ``(4, 4, ...)`` and ``(4, ...)``.
    """
    J = np.asarray(J, dtype=float)
    lam = np.asarray(lam, dtype=float)
    # f{i}{j}: partial of map row i w.r.t. state column j
    (f1x, f1y, f1vx, f1vy), (f2x, f2y, f2vx, f2vy), (f3x, f3y, f3vx, f3vy), (f4x, f4y, f4vx, f4vy) = J
    lx, ly, lvx, lvy = lam

    def check(p, name):
        if np.any(np.abs(p) < pivot_tol):
            raise EliminationError(f"pivot {name} vanished")

    check(f1x, "f1x")
    a = -f1y / f1x
    b = -f1vx / f1x
    c = -f1vy / f1x
    a22 = f2y + a * f2x
    a23 = f3y + a * f3x
    a24 = f4y + a * f4x
    check(a22, "alpha22")
    e = -(f2vx + b * f2x) / a22
    f = -(f2vy + c * f2x) / a22
    a33 = f3vx + b * f3x + e * a23
    a34 = f4vx + b * f4x + e * a24
    check(a33, "alpha33")
    g = -(f3vy + c * f3x + f * a23) / a33
    a44 = f4vy + c * f4x + f * a24 + g * a34
    check(a44, "alpha44")

    b1 = lx
    b2 = ly + a * lx
    b3 = lvx + b * lx + e * b2
    b4 = lvy + c * lx + f * b2 + g * b3

    nvy = b4 / a44
    nvx = (b3 - a34 * nvy) / a33
    ny = (b2 - a23 * nvx - a24 * nvy) / a22
    nx = (b1 - f2x * ny - f3x * nvx - f4x * nvy) / f1x
    return np.array([nx, ny, nvx, nvy])


def costate_step_generic(lam, J) -> np.ndarray:
    """Partial-pivot LU solve of ``J.T @ lam_next = lam`` (single 4x4 system)."""
    return np.linalg.solve(np.asarray(J, dtype=float).T, np.asarray(lam, dtype=float))


def costate_step(lam, J) -> np.ndarray:
    """Forward costate update ``lam_next.T = lam.T @ inv(J)``.

    Uses the explicit elimination and falls back to a pivoting solve when a
    pivot vanishes.
    """
    try:
        return costate_step_explicit(lam, J)
    except EliminationError as exc:
        log.warning("explicit costate elimination failed (%s); using LU solve", exc)
        return costate_step_generic(lam, J)


def stm_chain(trajectory: DiscreteTrajectory) -> np.ndarray:
    """Ordered product ``J_{N-1} ... J_0`` of step Jacobians along ``trajectory``."""
    s = trajectory.states[:-1].T
    Js = jacobian_components(s[0], s[1], s[2], s[3], trajectory.params.mu, trajectory.h)
    Js = np.moveaxis(Js, -1, 0)
    phi = np.eye(4)
    for J in Js:
        phi = J @ phi
    if not np.all(np.isfinite(phi)) or abs(np.linalg.det(phi)) < 1e-300:
        raise ArithmeticError("singular state transition matrix")
    return phi


def stm_history(trajectory: DiscreteTrajectory) -> np.ndarray:
    """Cumulative products ``Phi_k = J_{k-1} ... J_0`` for k = 0..N, shape (N+1, 4, 4)."""
    s = trajectory.states[:-1].T
    Js = np.moveaxis(jacobian_components(s[0], s[1], s[2], s[3], trajectory.params.mu, trajectory.h), -1, 0)
    out = np.empty((len(Js) + 1, 4, 4))
    out[0] = np.eye(4)
    for k, J in enumerate(Js):
        out[k + 1] = J @ out[k]
    return out
