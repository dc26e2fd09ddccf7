"""Periodic orbits, invariant manifolds and Poincare sections of the discrete flow."""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Literal

import numpy as np

from .dynamics import CollisionError, SystemParams, grad_U, hessian_U, jacobi_integral, lagrange_points
from .integrator import DiscreteTrajectory, propagate, step_components
from .linearization import stm_chain, stm_history

log = logging.getLogger(__name__)

Direction = Literal["both", "ascending", "descending"]


class CorrectorError(RuntimeError):
    def __init__(self, message: str, residual: float):
        super().__init__(f"{message} (last residual {residual:.3e})")
        self.residual = residual


# --------------------------------------------------------------------------
# Poincare sections


@dataclass(frozen=True)
class PoincareSection:
    """Line through ``anchor`` at angle ``alpha`` in the rotating-frame position plane.

    With ``ray=True`` only the half-line pointing along ``alpha`` counts;
    ``bounds`` restricts the section further to an interval of the signed
    coordinate along the line, measured from ``anchor``.
    ``direction`` filters on the sign of the velocity normal to the line
    (``ascending`` means positive, i.e. ``vy > 0`` for ``alpha = 0``).
    """

    anchor: tuple[float, float] = (0.0, 0.0)
    alpha: float = 0.0
    direction: Direction = "both"
    ray: bool = False
    bounds: tuple[float, float] | None = None

    def __post_init__(self):
        object.__setattr__(self, "anchor", (float(self.anchor[0]), float(self.anchor[1])))
        if self.bounds is not None:
            lo, hi = (float(b) for b in self.bounds)
            if not lo < hi:
                raise ValueError(f"section bounds must be increasing, got {self.bounds!r}")
            object.__setattr__(self, "bounds", (lo, hi))
        object.__setattr__(self, "alpha", float(self.alpha) % (2.0 * math.pi))
        if self.direction not in ("both", "ascending", "descending"):
            raise ValueError(f"unknown direction filter {self.direction!r}")

    def offset(self, states) -> np.ndarray:
        """Signed distance of the position part of ``states`` (shape (..., 4)) from the line."""
        s = np.asarray(states, dtype=float)
        ca, sa = math.cos(self.alpha), math.sin(self.alpha)
        return (s[..., 1] - self.anchor[1]) * ca - (s[..., 0] - self.anchor[0]) * sa

    def along(self, states) -> np.ndarray:
        s = np.asarray(states, dtype=float)
        ca, sa = math.cos(self.alpha), math.sin(self.alpha)
        return (s[..., 0] - self.anchor[0]) * ca + (s[..., 1] - self.anchor[1]) * sa

    def normal_velocity(self, states) -> np.ndarray:
        s = np.asarray(states, dtype=float)
        return s[..., 3] * math.cos(self.alpha) - s[..., 2] * math.sin(self.alpha)

    def contains(self, state) -> bool:
        """Whether a point on the line lies on the admitted part of it."""
        a = float(self.along(state))
        if self.ray and a < 0.0:
            return False
        return self.bounds is None or self.bounds[0] <= a <= self.bounds[1]


def lunar_section(params: SystemParams, fraction: float = 0.5) -> PoincareSection:
    """x-axis segment centred on the smaller primary.

    Its half-width is ``fraction`` of the primary's distance to L1, which
    keeps out crossings of L1 orbits while covering the region they transit to.
    """
    L1x = lagrange_points(params).L1[0]
    r = fraction * (1.0 - params.mu - L1x)
    return PoincareSection(anchor=(1.0 - params.mu, 0.0), alpha=0.0, bounds=(-r, r))


@dataclass(frozen=True)
class SectionCrossing:
    state: np.ndarray
    time: float
    trajectory_id: int = 0
    step_index: int = 0

    @property
    def coords(self) -> tuple[float, float]:
        """Section-plane coordinates ``(x, vx)``."""
        return float(self.state[0]), float(self.state[2])

    @property
    def ascending(self) -> bool:
        return bool(self.state[3] > 0.0)


def detect_crossings(
    trajectory: DiscreteTrajectory, section: PoincareSection, trajectory_id: int = 0, t0: float = 0.0
) -> list[SectionCrossing]:
    """Crossings of ``section`` located by sign change and linear interpolation between steps."""
    states = trajectory.states
    g = section.offset(states)
    idx = np.nonzero((g[:-1] * g[1:] < 0.0) | ((g[1:] == 0.0) & (g[:-1] != 0.0)))[0]
    out = []
    for k in idx:
        s = g[k] / (g[k] - g[k + 1])
        state = (1.0 - s) * states[k] + s * states[k + 1]
        vn = section.normal_velocity(state)
        if section.direction == "ascending" and vn <= 0.0:
            continue
        if section.direction == "descending" and vn >= 0.0:
            continue
        if not section.contains(state):
            continue
        out.append(SectionCrossing(state=state, time=t0 + (k + s) * trajectory.h, trajectory_id=trajectory_id, step_index=int(k)))
    return out


# --------------------------------------------------------------------------
# Periodic orbits


@dataclass(frozen=True)
class PeriodicOrbit:
    """Symmetric planar orbit starting on ``y = 0`` with ``vx = 0``.

    ``h`` is the step actually used: the period is ``2 * n_half * h``, which
    keeps the discrete half-orbit ending exactly on the axis.
    """

    state0: np.ndarray
    period: float
    h: float
    n_half: int
    energy: float
    params: SystemParams
    iterations: int = 0
    trajectory: DiscreteTrajectory | None = field(default=None, repr=False, compare=False)

    def full_trajectory(self) -> DiscreteTrajectory:
        if self.trajectory is not None:
            return self.trajectory
        traj = propagate(self.state0, None, 2 * self.n_half, self.params, h=self.h)
        object.__setattr__(self, "trajectory", traj)
        return traj


def _half_orbit_end(x0, vy0, n, h, mu):
    x, y, vx, vy = x0, 0.0, 0.0, vy0
    for _ in range(n):
        x, y, vx, vy = step_components(x, y, vx, vy, 0.0, 0.0, mu, h)
    return np.array([x, y, vx, vy])


def linear_lyapunov_seed(params: SystemParams, amplitude: float, point: str = "L1") -> tuple[np.ndarray, float]:
    """Initial state and half-period of the linearized planar orbit about a collinear point.

    Positive ``amplitude`` starts on the side of the point nearer the larger primary.
    """
    L = getattr(lagrange_points(params), point)
    H = hessian_U(np.array([L[0], L[1], 0.0, 0.0]), params)
    uxx, uyy = H[0, 0], H[1, 1]
    # lambda^4 + (4 - uxx - uyy) lambda^2 + uxx*uyy = 0; take the imaginary pair
    bq = 4.0 - uxx - uyy
    disc = math.sqrt(bq * bq - 4.0 * uxx * uyy)
    w2 = (bq + disc) / 2.0
    w = math.sqrt(w2)
    vy0 = amplitude * (w2 + uxx) / 2.0
    return np.array([L[0] - amplitude, 0.0, 0.0, vy0]), math.pi / w


def find_periodic_orbit(
    params: SystemParams,
    x0: float | None = None,
    *,
    amplitude: float | None = None,
    energy: float | None = None,
    half_period: float | None = None,
    vy0_guess: float | None = None,
    half_period_guess: float | None = None,
    x0_guess: float | None = None,
    tol: float = 1e-12,
    max_iter: int = 30,
) -> PeriodicOrbit:
    """Differential corrector for symmetric L1 Lyapunov orbits of the discrete map.

    Exactly one target must be given: the starting abscissa ``x0``, an
    ``amplitude`` measured from L1 (which fixes ``x0``), the Jacobi ``energy``,
    or the ``half_period``.  The unknowns are two of ``(x0, vy0, T/2)``; the
    conditions are ``y = vx = 0`` after half a period (plus the energy when
    targeted, with all three free).  The half period is split into a fixed
    number of steps whose length is adjusted continuously.
    When ``x0`` is free the iteration starts from ``x0_guess`` (default: 0.02
    on the Earth side of L1); a tiny seed would collapse onto L1 itself.
    """
    targets = [t is not None for t in (x0, amplitude, energy, half_period)]
    if sum(targets) != 1:
        raise ValueError("give exactly one of x0, amplitude, energy, half_period")
    mu = params.mu
    L1x = lagrange_points(params).L1[0]
    if amplitude is not None:
        x0 = L1x - amplitude
    start = x0 if x0 is not None else (x0_guess if x0_guess is not None else L1x - 0.02)
    seed, seed_tau = linear_lyapunov_seed(params, L1x - start)
    xs = float(start)
    vs = float(vy0_guess) if vy0_guess is not None else float(seed[3])
    tau = float(half_period if half_period is not None else (half_period_guess or seed_tau))
    n = max(2, int(round(tau / params.h)))

    def residual(xv, vv, tt):
        end = _half_orbit_end(xv, vv, n, tt / n, mu)
        r = [end[1], end[2]]
        if energy is not None:
            r.append(float(jacobi_integral(np.array([xv, 0.0, 0.0, vv]), params)) - energy)
        return np.array(r), end

    if x0 is not None:
        free = ["vy", "tau"]
    elif half_period is not None:
        free = ["x", "vy"]
    else:
        free = ["x", "vy", "tau"]

    res = np.inf
    for it in range(1, max_iter + 1):
        r, end = residual(xs, vs, tau)
        res = float(np.max(np.abs(r)))
        if not np.all(np.isfinite(r)):
            raise CorrectorError("corrector diverged", res)
        if res <= tol:
            break
        hh = tau / n
        traj = propagate(np.array([xs, 0.0, 0.0, vs]), None, n, params, h=hh)
        phi = stm_chain(traj)
        cols = []
        for name in free:
            if name == "x":
                col = phi[[1, 2], 0]
                if energy is not None:
                    col = np.r_[col, -_ux_axis(xs, params)]
            elif name == "vy":
                col = phi[[1, 2], 3]
                if energy is not None:
                    col = np.r_[col, vs]
            else:
                dt = 1e-7 * tau
                plus = _half_orbit_end(xs, vs, n, (tau + dt) / n, mu)
                minus = _half_orbit_end(xs, vs, n, (tau - dt) / n, mu)
                col = (plus - minus)[[1, 2]] / (2 * dt)
                if energy is not None:
                    col = np.r_[col, 0.0]
            cols.append(col)
        A = np.column_stack(cols)
        delta = np.linalg.lstsq(A, -r, rcond=None)[0]
        # limit the update to keep the fixed step count sensible
        scale = 1.0
        for name, d in zip(free, delta):
            if name == "tau" and abs(d) > 0.2 * tau:
                scale = min(scale, 0.2 * tau / abs(d))
            if name == "x" and abs(d) > 0.02:
                scale = min(scale, 0.02 / abs(d))
        for name, d in zip(free, scale * delta):
            if name == "x":
                xs += d
            elif name == "vy":
                vs += d
            else:
                tau += d
    else:
        raise CorrectorError("periodic orbit corrector did not converge", res)

    state0 = np.array([xs, 0.0, 0.0, vs])
    orbit = PeriodicOrbit(
        state0=state0,
        period=2.0 * tau,
        h=tau / n,
        n_half=n,
        energy=float(jacobi_integral(state0, params)),
        params=params,
        iterations=it,
    )
    log.debug("periodic orbit x0=%.12f vy0=%.12f T=%.12f after %d iterations", xs, vs, 2 * tau, it)
    return orbit


def _ux_axis(x: float, params: SystemParams) -> float:
    return float(grad_U(np.array([x, 0.0]), params)[0])


def continue_family(params: SystemParams, x_values, **kwargs) -> list[PeriodicOrbit]:
    """Natural-parameter continuation in ``x0``, warm-starting each member."""
    orbits: list[PeriodicOrbit] = []
    for x0 in x_values:
        guess = {}
        if orbits:
            guess = {"vy0_guess": orbits[-1].state0[3], "half_period_guess": orbits[-1].period / 2}
        orbits.append(find_periodic_orbit(params, x0=x0, **guess, **kwargs))
    return orbits


# --------------------------------------------------------------------------
# Monodromy and manifolds


@dataclass(frozen=True)
class Monodromy:
    matrix: np.ndarray
    eigenvalues: np.ndarray
    eigenvectors: np.ndarray
    unstable_value: float
    unstable_vector: np.ndarray
    stable_value: float
    stable_vector: np.ndarray

    @property
    def determinant(self) -> float:
        return float(np.linalg.det(self.matrix))


def monodromy(orbit: PeriodicOrbit) -> Monodromy:
    """State transition matrix over one period and its dominant real eigenpairs."""
    M = stm_chain(orbit.full_trajectory())
    w, V = np.linalg.eig(M)
    real = np.abs(w.imag) < 1e-8 * np.maximum(1.0, np.abs(w.real))
    if not np.any(real & (np.abs(w) > 1.0 + 1e-6)):
        raise ArithmeticError("monodromy matrix has no real unstable eigenvalue")
    iu = int(np.argmax(np.where(real, np.abs(w.real), -np.inf)))
    is_ = int(np.argmin(np.where(real, np.abs(w.real), np.inf)))
    vu = np.real(V[:, iu])
    vs = np.real(V[:, is_])
    return Monodromy(
        matrix=M,
        eigenvalues=w,
        eigenvectors=V,
        unstable_value=float(w[iu].real),
        unstable_vector=vu / np.linalg.norm(vu),
        stable_value=float(w[is_].real),
        stable_vector=vs / np.linalg.norm(vs),
    )


@dataclass(frozen=True)
class ManifoldTrajectory:
    seed: np.ndarray
    phase_index: int
    trajectory: DiscreteTrajectory
    crossing: SectionCrossing | None

    @property
    def time_of_flight(self) -> float | None:
        return None if self.crossing is None else self.crossing.time


@dataclass(frozen=True)
class ManifoldBranch:
    orbit: PeriodicOrbit
    stability: Literal["stable", "unstable"]
    side: int
    epsilon: float
    trajectories: list[ManifoldTrajectory]

    @property
    def crossings(self) -> list[SectionCrossing]:
        return [t.crossing for t in self.trajectories if t.crossing is not None]

    @property
    def times_of_flight(self) -> np.ndarray:
        return np.array([t.time_of_flight for t in self.trajectories if t.crossing is not None])


def manifold_seeds(orbit: PeriodicOrbit, stability: str, side: int, epsilon: float, n_traj: int):
    """Perturbed states at ``n_traj`` equally spaced orbit points.

    The eigenvector at each point is the monodromy eigenvector carried along
    by the accumulated step Jacobians, normalized in the 4-norm.
    """
    if not epsilon > 0:
        raise ValueError("epsilon must be positive; a zero perturbation stays on the orbit")
    if n_traj < 1:
        raise ValueError("n_traj must be at least 1")
    if side not in (1, -1):
        raise ValueError("side must be +1 or -1")
    mono = monodromy(orbit)
    v0 = mono.unstable_vector if stability == "unstable" else mono.stable_vector
    traj = orbit.full_trajectory()
    phis = stm_history(traj)
    n_per = 2 * orbit.n_half
    idx = (np.arange(n_traj) * n_per) // n_traj
    seeds = []
    for k in idx:
        v = phis[k] @ v0
        v /= np.linalg.norm(v)
        # orient consistently: side=+1 pushes toward larger x
        if v[0] < 0:
            v = -v
        seeds.append((int(k), traj.states[k] + side * epsilon * v))
    return seeds


def globalize_manifold(
    orbit: PeriodicOrbit,
    stability: Literal["stable", "unstable"] = "unstable",
    side: int = 1,
    epsilon: float = 1e-4,
    n_traj: int = 20,
    section: PoincareSection | None = None,
    t_max: float = 10.0,
    min_time: float = 0.0,
) -> ManifoldBranch:
    """Propagate manifold seeds (forward if unstable, backward if stable) to ``section``.

    A trajectory records the first crossing after ``min_time``; one that never
    crosses before ``t_max`` (or collides) keeps ``crossing=None``.
    """
    params = orbit.params
    h = orbit.h if stability == "unstable" else -orbit.h
    n_steps = int(math.ceil(t_max / abs(h)))
    out = []
    for i, (k, seed) in enumerate(manifold_seeds(orbit, stability, side, epsilon, n_traj)):
        states = [seed]
        x, y, vx, vy = seed
        crossing = None
        g_prev = section.offset(seed) if section is not None else None
        try:
            for j in range(n_steps):
                x, y, vx, vy = step_components(x, y, vx, vy, 0.0, 0.0, params.mu, h)
                states.append((x, y, vx, vy))
                if section is None:
                    continue
                g = section.offset(np.array([x, y, vx, vy]))
                if g_prev * g < 0.0 and (j + 1) * abs(h) >= min_time:
                    seg = DiscreteTrajectory(np.array(states[-2:]), np.zeros((1, 2)), abs(h), params)
                    hits = detect_crossings(seg, section, trajectory_id=i, t0=j * abs(h))
                    if hits:
                        crossing = hits[0]
                        break
                g_prev = g
        except CollisionError:
            log.info("manifold trajectory %d collided", i)
        traj = DiscreteTrajectory(np.array(states), np.zeros((len(states) - 1, 2)), abs(h), params)
        out.append(ManifoldTrajectory(seed=seed, phase_index=k, trajectory=traj, crossing=crossing))
    return ManifoldBranch(orbit=orbit, stability=stability, side=side, epsilon=epsilon, trajectories=out)


# --------------------------------------------------------------------------
# Target region


@dataclass(frozen=True)
class TargetRegion:
    trajectory: DiscreteTrajectory
    crossings: list[SectionCrossing]
    energy: float
    escaped: bool

    @property
    def ascending(self) -> list[SectionCrossing]:
        return [c for c in self.crossings if c.ascending]

    @property
    def descending(self) -> list[SectionCrossing]:
        return [c for c in self.crossings if not c.ascending]


def target_orbit_region(params: SystemParams, state0, t_span: float, section: PoincareSection, escape_radius: float = 0.5) -> TargetRegion:
    """Propagate a thrust-free orbit and collect its section crossings.

    Crossings split into ascending and descending clusters by the sign of ``vy``.
    ``escaped`` is set when the orbit strays more than ``escape_radius`` from
    the smaller primary.
    """
    n = int(round(t_span / params.h))
    traj = propagate(state0, None, n, params)
    r2 = np.hypot(traj.states[:, 0] - (1.0 - params.mu), traj.states[:, 1])
    escaped = bool(np.max(r2) >= escape_radius)
    if escaped:
        log.warning("target orbit leaves the lunar region (max r2 = %.3f)", np.max(r2))
    return TargetRegion(
        trajectory=traj,
        crossings=detect_crossings(traj, section),
        energy=float(jacobi_integral(np.asarray(state0, dtype=float), params)),
        escaped=escaped,
    )
