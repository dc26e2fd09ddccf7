"""Reachable sets on a Poincare section by indirect discrete optimal control.

For a sweep direction ``theta`` the terminal displacement from the thrust-free
end point is maximized in the section plane ``(x, vx)``, subject to ending on
the section and along the ray at ``theta``.  The discrete necessary conditions

    lam_{k+1} = inv(J_k).T @ lam_k
    u_k       = argmin_{|u| <= u_max} lam_{k+1} . f(x_k, u)
    lam_N     = dphi/dx + dm/dx.T @ beta

form a two-point boundary value problem solved by multiple shooting on the
initial costate, interior nodes and ``beta``.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Callable, Literal

import numpy as np
from scipy.optimize import brentq
from shapely.geometry import LinearRing, Point, Polygon

from .dynamics import SystemParams, effective_potential, lagrange_points
from .integrator import DiscreteTrajectory, propagate, step, step_components
from .linearization import EliminationError, costate_step_explicit, costate_step_generic, jacobian_components
from .structures import PoincareSection, SectionCrossing, TargetRegion

log = logging.getLogger(__name__)

SELECT = np.diag([1.0, 0.0, 1.0, 0.0])


class ShootingError(RuntimeError):
    """Newton iteration failed; carries the best iterate for restarts."""

    def __init__(self, message: str, residual: float, iterate: np.ndarray | None = None):
        super().__init__(f"{message} (best residual {residual:.3e})")
        self.residual = residual
        self.iterate = iterate


class TransferError(RuntimeError):
    pass


# --------------------------------------------------------------------------
# Problem pieces


def cost_J(x_N, xn_N) -> float:
    """Negative half squared displacement in the ``(x, vx)`` section plane."""
    d = np.asarray(x_N, dtype=float) - np.asarray(xn_N, dtype=float)
    return -0.5 * float(d @ SELECT @ d)


def cost_gradient(x_N, xn_N) -> np.ndarray:
    d = np.asarray(x_N, dtype=float) - np.asarray(xn_N, dtype=float)
    return -(SELECT @ d)


def terminal_constraints(x_N, xn_N, section: PoincareSection, theta: float) -> np.ndarray:
    """Cleared-denominator terminal conditions ``(m1, m2)``.

    ``m1`` puts the end point on the section line; ``m2`` puts the section
    displacement ``(dx, dvx)`` on the line at angle ``theta``.
    """
    x_N = np.asarray(x_N, dtype=float)
    xn_N = np.asarray(xn_N, dtype=float)
    m1 = section.offset(x_N)
    m2 = (x_N[2] - xn_N[2]) * math.cos(theta) - (x_N[0] - xn_N[0]) * math.sin(theta)
    return np.array([float(m1), float(m2)])


def constraint_jacobian(section: PoincareSection, theta: float) -> np.ndarray:
    """Rows ``d m1/dx`` and ``d m2/dx`` (constant because both are affine)."""
    ca, sa = math.cos(section.alpha), math.sin(section.alpha)
    return np.array([[-sa, ca, 0.0, 0.0], [-math.sin(theta), 0.0, math.cos(theta), 0.0]])


def hamiltonian(costate_next, state, control, params: SystemParams, h: float | None = None) -> float:
    """``lam_{k+1} . f(x_k, u_k)`` with ``f`` the variational map."""
    return float(np.dot(costate_next, step(state, control, params, h)))


def optimal_control_from_costate(costate_next, u_max: float) -> np.ndarray:
    """Thrust minimizing the Hamiltonian over the disk ``|u| <= u_max``.

    The Hamiltonian is linear in ``u`` through the velocity costates, so the
    minimizer is on the boundary, opposite ``(lam_vx, lam_vy)``.
    """
    lam = np.asarray(costate_next, dtype=float)
    return np.array(_max_thrust_law(lam[2], lam[3], u_max))


def _max_thrust_law(lvx, lvy, u_max):
    n = np.sqrt(lvx * lvx + lvy * lvy)
    safe = np.where(n > 0.0, n, 1.0)
    scale = np.where(n > 0.0, -u_max / safe, 0.0)
    return scale * lvx, scale * lvy


def _smoothed_max_thrust_law(eps: float) -> Callable:
    """``-u_max lam_v / sqrt(|lam_v|^2 + eps^2)``: the max-thrust law with its switch rounded off.

    Where ``lam_v`` passes through zero between two steps the exact law jumps,
    and the discrete optimum needs a partial thrust at that one step.  The
    rounded law supplies it; away from the switch it differs from the exact
    law by ``O(eps^2 / |lam_v|^2)``.
    """

    def law(lvx, lvy, u_max):
        n = np.sqrt(lvx * lvx + lvy * lvy + eps * eps)
        return -u_max * lvx / n, -u_max * lvy / n

    return law


def hamiltonian_gap(sol) -> float:
    """Largest excess of ``H_k(u_k)`` over its minimum on the thrust disk."""
    lv = sol.costates[1:, 2:]
    excess = sol.params.u_max * np.linalg.norm(lv, axis=1) + np.einsum("ij,ij->i", lv, sol.controls)
    return float(sol.h * np.max(excess)) if len(excess) else 0.0


def _min_energy_law(lvx, lvy, u_max):
    # minimizer of h|u|^2/2 + h lam_v . u over the disk
    n = np.sqrt(lvx * lvx + lvy * lvy)
    scale = np.where(n > u_max, u_max / np.where(n > 0, n, 1.0), 1.0)
    return -scale * lvx, -scale * lvy


# --------------------------------------------------------------------------
# Problem definition


@dataclass(frozen=True)
class ReachProblem:
    params: SystemParams
    state0: np.ndarray
    n_steps: int
    h: float
    section: PoincareSection
    reference: DiscreteTrajectory = field(repr=False)

    @property
    def tf(self) -> float:
        return self.n_steps * self.h

    @property
    def u_max(self) -> float:
        return self.params.u_max

    @property
    def reference_final(self) -> np.ndarray:
        return self.reference.final

    @classmethod
    def build(
        cls,
        params: SystemParams,
        state0,
        tf: float,
        section: PoincareSection | None = None,
        snap_to_section: bool = True,
    ) -> ReachProblem:
        """Set up a fixed-horizon problem.

        The default section is the line through L1 at angle 0.  With
        ``snap_to_section`` the horizon is moved to the thrust-free crossing
        nearest ``tf`` and the step length is adjusted so that the thrust-free
        end point lies exactly on the section.
        """
        state0 = np.asarray(state0, dtype=float)
        if section is None:
            section = PoincareSection(anchor=tuple(lagrange_points(params).L1), alpha=0.0)
        if snap_to_section:
            tf = _snap_horizon(params, state0, tf, section)
        n = max(2, int(round(tf / params.h)))
        h = tf / n
        ref = propagate(state0, None, n, params, h=h)
        return cls(params=params, state0=state0, n_steps=n, h=h, section=section, reference=ref)

    def with_u_max(self, u_max: float) -> ReachProblem:
        p = SystemParams(mu=self.params.mu, h=self.params.h, u_max=u_max)
        return ReachProblem(p, self.state0, self.n_steps, self.h, self.section, DiscreteTrajectory(self.reference.states, self.reference.controls, self.h, p))


def _snap_horizon(params: SystemParams, state0, tf: float, section: PoincareSection) -> float:
    from .structures import detect_crossings

    n = int(round(1.5 * tf / params.h)) + 2
    traj = propagate(state0, None, n, params)
    hits = [c for c in detect_crossings(traj, section) if c.time > 0.25 * tf]
    if not hits:
        raise ValueError("thrust-free trajectory never reaches the section near the horizon")
    t_cross = min(hits, key=lambda c: abs(c.time - tf)).time
    n_steps = max(2, int(round(t_cross / params.h)))

    def g(hh):
        x, y, vx, vy = state0
        for _ in range(n_steps):
            x, y, vx, vy = step_components(x, y, vx, vy, 0.0, 0.0, params.mu, hh)
        return float(section.offset(np.array([x, y, vx, vy])))

    h0 = t_cross / n_steps
    h_star = brentq(g, 0.98 * h0, 1.02 * h0, xtol=1e-16, rtol=1e-15, maxiter=200)
    return h_star * n_steps


# --------------------------------------------------------------------------
# Shooting machinery


def _costate_batch(L, J):
    try:
        return costate_step_explicit(L, J)
    except EliminationError:
        if J.ndim == 3:
            A = np.transpose(J, (2, 1, 0))
            return np.linalg.solve(A, L.T[..., None])[..., 0].T
        return costate_step_generic(L, J)


def _run_arc(X, L, n, mu, h, u_max, law, record=False):
    """Propagate states ``X`` and costates ``L`` (shape (4, M)).

    ``n`` is a step count shared by all lanes or an integer array with one
    count per lane; finished lanes are held fixed.
    """
    X = np.array(X, dtype=float)
    L = np.array(L, dtype=float)
    counts = np.broadcast_to(np.asarray(n, dtype=int), X.shape[1:])
    n_max = int(counts.max()) if counts.size else 0
    ragged = bool(np.any(counts != n_max))
    if record:
        xs, ls, us = [X.copy()], [L.copy()], []
    for k in range(n_max):
        J = jacobian_components(X[0], X[1], X[2], X[3], mu, h)
        Ln = _costate_batch(L, J)
        ux, uy = law(Ln[2], Ln[3], u_max)
        Xn = np.array(step_components(X[0], X[1], X[2], X[3], ux, uy, mu, h))
        if ragged:
            active = k < counts
            Xn = np.where(active, Xn, X)
            Ln = np.where(active, Ln, L)
        X, L = Xn, Ln
        if record:
            xs.append(X)
            ls.append(L)
            us.append(np.array([ux, uy]))
    if record:
        return X, L, np.array(xs), np.array(ls), np.array(us)
    return X, L


@dataclass
class _Layout:
    """Unknown vector: lam0 (4) | nodes (8 each) | extra (n_extra)."""

    n_arcs: int
    n_extra: int
    bounds: list[int]

    @property
    def size(self) -> int:
        return 4 + 8 * (self.n_arcs - 1) + self.n_extra


def _arc_bounds(n_steps: int, n_arcs: int) -> list[int]:
    n_arcs = max(1, min(n_arcs, n_steps))
    return [round(i * n_steps / n_arcs) for i in range(n_arcs + 1)]


class _Shooter:
    """Multiple-shooting residual and its block Jacobian.

    Arc sensitivities are central differences of the arc end point with
    respect to the arc start; all perturbed lanes of all arcs run in one
    vectorized sweep.
    """

    def __init__(self, problem: ReachProblem, n_arcs: int, law: Callable, terminal: Callable, n_extra: int):
        self.problem = problem
        n_arcs = max(1, min(n_arcs, problem.n_steps))
        self.layout = _Layout(n_arcs=n_arcs, n_extra=n_extra, bounds=_arc_bounds(problem.n_steps, n_arcs))
        self.lengths = np.diff(self.layout.bounds)
        self.law = law
        self.terminal = terminal

    def _starts(self, z):
        """Arc start points as an (8, n_arcs) array."""
        p = self.problem
        S = np.empty((8, self.layout.n_arcs))
        S[:4, 0] = p.state0
        S[4:, 0] = z[0:4]
        for i in range(1, self.layout.n_arcs):
            base = 4 + 8 * (i - 1)
            S[:, i] = z[base : base + 8]
        return S

    def _run(self, S, counts):
        p = self.problem
        return _run_arc(S[:4], S[4:], counts, p.params.mu, p.h, p.u_max, self.law)

    def _assemble_residual(self, S, E, extra):
        parts = [E[:, i - 1] - S[:, i] for i in range(1, self.layout.n_arcs)]
        Xe, Le = E[:4, -1:], E[4:, -1:]
        parts.append(self.terminal(Xe, Le, np.reshape(extra, (-1, 1)))[:, 0])
        return np.concatenate(parts)

    def residual_many(self, Z: np.ndarray) -> np.ndarray:
        """Residuals for the columns of ``Z`` (n_unknowns, M)."""
        n_arcs = self.layout.n_arcs
        M = Z.shape[1]
        S = np.concatenate([self._starts(Z[:, m]) for m in range(M)], axis=1)
        counts = np.tile(self.lengths, M)
        Xe, Le = self._run(S, counts)
        E = np.vstack([Xe, Le])
        out = []
        for m in range(M):
            sl = slice(m * n_arcs, (m + 1) * n_arcs)
            out.append(self._assemble_residual(S[:, sl], E[:, sl], Z[self.layout.size - self.layout.n_extra :, m]))
        return np.array(out).T

    def evaluate(self, z):
        S = self._starts(z)
        Xe, Le = self._run(S, self.lengths)
        E = np.vstack([Xe, Le])
        return S, E

    def residual(self, z):
        S, E = self.evaluate(z)
        return self._assemble_residual(S, E, z[self.layout.size - self.layout.n_extra :])

    def jacobian(self, z: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        lay = self.layout
        n_arcs = lay.n_arcs
        S = self._starts(z)
        # perturbation lanes: arc 0 varies only its costate
        cols, counts, meta = [], [], []
        for i in range(n_arcs):
            for j in range(4 if i == 0 else 0, 8):
                d = 1e-7 * max(1.0, abs(S[j, i]))
                for sgn in (1.0, -1.0):
                    c = S[:, i].copy()
                    c[j] += sgn * d
                    cols.append(c)
                    counts.append(self.lengths[i])
                meta.append((i, j, d))
        cols.extend(S.T)
        counts.extend(self.lengths)
        Xe, Le = self._run(np.array(cols).T, np.array(counts))
        E_all = np.vstack([Xe, Le])
        E = E_all[:, -n_arcs:]
        sens = [np.zeros((8, 8)) for _ in range(n_arcs)]
        for q, (i, j, d) in enumerate(meta):
            sens[i][:, j] = (E_all[:, 2 * q] - E_all[:, 2 * q + 1]) / (2.0 * d)

        extra = z[lay.size - lay.n_extra :]
        f = self._assemble_residual(S, E, extra)
        A = np.zeros((f.size, lay.size))

        def col_of(i):
            # columns of the unknowns that set the start of arc i (8 entries; None for fixed state0)
            if i == 0:
                return [None] * 4 + list(range(4))
            base = 4 + 8 * (i - 1)
            return list(range(base, base + 8))

        row = 0
        for i in range(1, n_arcs):
            for jj, c in enumerate(col_of(i - 1)):
                if c is not None:
                    A[row : row + 8, c] += sens[i - 1][:, jj]
            for jj, c in enumerate(col_of(i)):
                A[row + jj, c] -= 1.0
            row += 8
        # terminal block: algebraic, differentiate numerically in (end point, extra)
        e_last = E[:, -1]
        g0 = self.terminal(e_last[:4, None], e_last[4:, None], extra[:, None])[:, 0]
        G = np.zeros((g0.size, 8))
        for jj in range(8):
            d = 1e-7 * max(1.0, abs(e_last[jj]))
            ep, em = e_last.copy(), e_last.copy()
            ep[jj] += d
            em[jj] -= d
            G[:, jj] = (self.terminal(ep[:4, None], ep[4:, None], extra[:, None])[:, 0] - self.terminal(em[:4, None], em[4:, None], extra[:, None])[:, 0]) / (2 * d)
        GS = G @ sens[-1]
        for jj, c in enumerate(col_of(n_arcs - 1)):
            if c is not None:
                A[row:, c] += GS[:, jj]
        for jj in range(lay.n_extra):
            d = 1e-7 * max(1.0, abs(extra[jj]))
            ep, em = extra.copy(), extra.copy()
            ep[jj] += d
            em[jj] -= d
            A[row:, lay.size - lay.n_extra + jj] = (
                self.terminal(e_last[:4, None], e_last[4:, None], ep[:, None])[:, 0] - self.terminal(e_last[:4, None], e_last[4:, None], em[:, None])[:, 0]
            ) / (2 * d)
        return A, f

    def solve(self, z0: np.ndarray, tol: float, max_iter: int) -> tuple[np.ndarray, float, int]:
        z = np.array(z0, dtype=float)
        with np.errstate(all="ignore"):
            f = self.residual(z)
        norm = float(np.max(np.abs(f)))
        best = (norm if np.isfinite(norm) else np.inf, z.copy())
        ts = 0.5 ** np.arange(10)
        for it in range(1, max_iter + 1):
            if not np.isfinite(norm):
                break
            if norm <= tol:
                return z, norm, it - 1
            A, f = self.jacobian(z)
            dz = np.linalg.lstsq(A, -f, rcond=None)[0]
            trial = z[:, None] + dz[:, None] * ts[None, :]
            with np.errstate(all="ignore"):
                Ft = self.residual_many(trial)
            norms = np.max(np.abs(Ft), axis=0)
            norms[~np.isfinite(norms)] = np.inf
            ok = np.nonzero(norms < (1.0 - 1e-4 * ts) * norm)[0]
            j = int(ok[0]) if ok.size else int(np.argmin(norms))
            if not np.isfinite(norms[j]):
                break
            z = trial[:, j]
            norm = float(norms[j])
            if norm < best[0]:
                best = (norm, z.copy())
        if best[0] <= tol:
            return best[1], best[0], max_iter
        raise ShootingError("shooting did not converge", best[0], best[1])


# --------------------------------------------------------------------------
# Solutions


@dataclass(frozen=True)
class ShootingSolution:
    states: np.ndarray
    costates: np.ndarray
    controls: np.ndarray
    beta: np.ndarray
    h: float
    params: SystemParams
    theta: float | None
    iterations: int
    residual: float
    unknowns: np.ndarray = field(repr=False)
    n_arcs: int = 4
    crossing: SectionCrossing | None = None
    diagnostics: dict = field(default_factory=dict)

    @property
    def final(self) -> np.ndarray:
        return self.states[-1]

    @property
    def section_point(self) -> tuple[float, float]:
        return float(self.states[-1, 0]), float(self.states[-1, 2])

    @property
    def tof(self) -> float:
        return self.h * (len(self.states) - 1)

    def trajectory(self) -> DiscreteTrajectory:
        return DiscreteTrajectory(self.states, self.controls, self.h, self.params)


def _assemble(shooter: _Shooter, z: np.ndarray):
    lay = shooter.layout
    p = shooter.problem
    xs_all, ls_all, us_all = [], [], []
    for i in range(lay.n_arcs):
        if i == 0:
            X0, L0 = p.state0, z[0:4]
        else:
            base = 4 + 8 * (i - 1)
            X0, L0 = z[base : base + 4], z[base + 4 : base + 8]
        n = lay.bounds[i + 1] - lay.bounds[i]
        _, _, xs, ls, us = _run_arc(X0[:, None], L0[:, None], n, p.params.mu, p.h, p.u_max, shooter.law, record=True)
        xs, ls, us = xs[..., 0], ls[..., 0], us[..., 0]
        if i:
            xs, ls = xs[1:], ls[1:]
        xs_all.append(xs)
        ls_all.append(ls)
        us_all.append(us)
    return np.concatenate(xs_all), np.concatenate(ls_all), np.concatenate(us_all)


def solution_checks(sol: ShootingSolution) -> dict[str, float]:
    """Residuals of the necessary conditions recomputed independently of the solver."""
    p = sol.params
    traj = DiscreteTrajectory(sol.states, sol.controls, sol.h, p)
    costate_res = 0.0
    for k in range(len(sol.controls)):
        J = jacobian_components(*sol.states[k], p.mu, sol.h)
        lam_next = costate_step_generic(sol.costates[k], J)
        costate_res = max(costate_res, float(np.max(np.abs(lam_next - sol.costates[k + 1]))))
    bound = float(np.max(np.linalg.norm(sol.controls, axis=1))) if len(sol.controls) else 0.0
    return {
        "dynamics_residual": traj.max_residual(),
        "costate_residual": costate_res,
        "control_bound_violation": max(0.0, bound - p.u_max * (1 + 1e-12)),
    }


def shooting_solve(
    problem: ReachProblem,
    theta: float,
    initial_guess: np.ndarray | None = None,
    n_arcs: int = 4,
    tol: float = 1e-10,
    max_iter: int = 30,
    smoothing: float = 0.0,
) -> ShootingSolution:
    """Solve the maximum-displacement problem along section direction ``theta``.

    ``initial_guess`` is either a full unknown vector from a previous solve
    (warm start) or ``None``, in which case a guess is built from the
    thrust-free transition matrix (see :func:`linear_guess`).
    ``smoothing > 0`` swaps in :func:`_smoothed_max_thrust_law`.
    """
    section = problem.section
    ref_final = problem.reference_final
    dm = constraint_jacobian(section, theta)

    def terminal(Xe, Le, extra):
        d = Xe - ref_final[:, None]
        m1 = section.offset(Xe.T)
        m2 = d[2] * math.cos(theta) - d[0] * math.sin(theta)
        trans = Le - (-(SELECT @ d) + dm.T @ extra)
        return np.concatenate([m1[None], m2[None], trans], axis=0)

    law = _smoothed_max_thrust_law(smoothing) if smoothing > 0 else _max_thrust_law
    shooter = _Shooter(problem, n_arcs, law, terminal, n_extra=2)
    if initial_guess is None or len(initial_guess) != shooter.layout.size:
        initial_guess = linear_guess(problem, theta, shooter.layout.n_arcs)
    z, res, its = shooter.solve(initial_guess, tol, max_iter)
    states, costates, controls = _assemble(shooter, z)
    beta = z[-2:]
    final = states[-1]
    trans = costates[-1] - (cost_gradient(final, ref_final) + dm.T @ beta)
    sol = ShootingSolution(
        states=states,
        costates=costates,
        controls=controls,
        beta=beta,
        h=problem.h,
        params=problem.params,
        theta=theta,
        iterations=its,
        residual=res,
        unknowns=z,
        n_arcs=shooter.layout.n_arcs,
        crossing=SectionCrossing(state=final, time=problem.tf),
    )
    diag = solution_checks(sol)
    m = terminal_constraints(final, ref_final, section, theta)
    diag.update(
        {
            "m1": float(abs(m[0])),
            "m2": float(abs(m[1])),
            "transversality": float(np.max(np.abs(trans))),
            "hamiltonian_gap": hamiltonian_gap(sol),
            "smoothing": float(smoothing),
        }
    )
    object.__setattr__(sol, "diagnostics", diag)
    return sol


def linear_guess(problem: ReachProblem, theta: float, n_arcs: int, scale: float = 1e-2) -> np.ndarray:
    """Unknowns from the thrust-free trajectory with ``lam_N`` pointing against ``theta``.

    Costates are pulled back with the transposed transition matrices so the
    induced thrust pushes the terminal ``(x, vx)`` along ``theta``.
    """
    ref = problem.reference
    lam_N = -scale * np.array([math.cos(theta), 0.0, math.sin(theta), 0.0])
    s = ref.states[:-1].T
    Js = np.moveaxis(jacobian_components(s[0], s[1], s[2], s[3], problem.params.mu, problem.h), -1, 0)
    lams = np.empty((problem.n_steps + 1, 4))
    lams[-1] = lam_N
    for k in range(problem.n_steps - 1, -1, -1):
        lams[k] = Js[k].T @ lams[k + 1]
    bounds = _arc_bounds(problem.n_steps, n_arcs)
    z = [lams[0]]
    for i in range(1, len(bounds) - 1):
        k = bounds[i]
        z.append(ref.states[k])
        z.append(lams[k])
    z.append(np.zeros(2))
    return np.concatenate(z)


def solve_fixed_endpoint(
    problem: ReachProblem,
    target_state,
    initial_guess: np.ndarray | None = None,
    n_arcs: int = 4,
    tol: float = 1e-10,
    max_iter: int = 40,
) -> ShootingSolution:
    """Minimum control-effort transfer reaching ``target_state`` exactly at the horizon.

    The running cost ``h |u|^2 / 2`` makes the control ``-lam_v`` saturated at
    ``u_max``; the terminal costate is free, so the boundary conditions are
    just ``x_N = target``.
    """
    target = np.asarray(target_state, dtype=float)

    def terminal(Xe, Le, extra):
        return Xe - target[:, None]

    shooter = _Shooter(problem, n_arcs, _min_energy_law, terminal, n_extra=0)
    if initial_guess is None or len(initial_guess) != shooter.layout.size:
        initial_guess = _fixed_endpoint_guess(problem, target, shooter.layout.n_arcs)
    z, res, its = shooter.solve(initial_guess, tol, max_iter)
    states, costates, controls = _assemble(shooter, z)
    sol = ShootingSolution(
        states=states,
        costates=costates,
        controls=controls,
        beta=np.zeros(0),
        h=problem.h,
        params=problem.params,
        theta=None,
        iterations=its,
        residual=res,
        unknowns=z,
        n_arcs=shooter.layout.n_arcs,
        crossing=SectionCrossing(state=states[-1], time=problem.tf),
    )
    diag = solution_checks(sol)
    diag["terminal_error"] = float(np.max(np.abs(states[-1] - target)))
    object.__setattr__(sol, "diagnostics", diag)
    return sol


@dataclass(frozen=True)
class _LinearModel:
    """Thrust-free transition matrices and the control Gramian over the horizon."""

    phis: np.ndarray  # phis[k] = Phi_{N,k}
    gram: np.ndarray
    h: float

    @classmethod
    def of(cls, problem: ReachProblem) -> _LinearModel:
        ref = problem.reference
        h = problem.h
        s = ref.states[:-1].T
        Js = np.moveaxis(jacobian_components(s[0], s[1], s[2], s[3], problem.params.mu, h), -1, 0)
        N = problem.n_steps
        phis = np.empty((N + 1, 4, 4))
        phis[N] = np.eye(4)
        for k in range(N - 1, -1, -1):
            phis[k] = phis[k + 1] @ Js[k]
        # dx_N = sum_k Phi_{N,k+1} B u_k with u_k = -B^T Phi_{N,k+1}^T lam_N / h and B = h [0; I]
        PB = h * phis[1:, :, 2:]
        gram = np.einsum("kij,klj->il", PB, PB) / h
        return cls(phis, gram, h)

    def terminal_costate(self, delta) -> np.ndarray:
        return -np.linalg.solve(self.gram, np.asarray(delta, dtype=float))

    def peak_thrust(self, delta) -> float:
        lam_N = self.terminal_costate(delta)
        lv = np.einsum("kij,i->kj", self.phis[1:, :, 2:], lam_N)
        return float(np.max(np.linalg.norm(lv, axis=1)))


def _fixed_endpoint_guess(problem: ReachProblem, target: np.ndarray, n_arcs: int, model: _LinearModel | None = None) -> np.ndarray:
    """Costates of the linearized minimum-energy problem about the thrust-free path."""
    model = model or _LinearModel.of(problem)
    ref = problem.reference
    lam_N = model.terminal_costate(target - ref.final)
    lams = np.einsum("kji,j->ki", model.phis, lam_N)
    bounds = _arc_bounds(problem.n_steps, n_arcs)
    z = [lams[0]]
    for i in range(1, len(bounds) - 1):
        z.append(ref.states[bounds[i]])
        z.append(lams[bounds[i]])
    return np.concatenate(z)


def solve_fixed_endpoint_bounded(
    problem: ReachProblem,
    target_state,
    n_arcs: int = 4,
    tol: float = 1e-10,
    max_solves: int = 40,
) -> ShootingSolution:
    """:func:`solve_fixed_endpoint` with a homotopy on the thrust bound.

    Starts from a bound loose enough that the linearized guess is accurate
    and tightens it geometrically to ``u_max``, shrinking the step whenever a
    solve fails.
    """
    u_target = problem.u_max
    sol = solve_fixed_endpoint(problem.with_u_max(1e6), target_state, n_arcs=n_arcs, tol=tol)
    peak = float(np.max(np.linalg.norm(sol.controls, axis=1)))
    if peak <= u_target:
        return solve_fixed_endpoint(problem, target_state, sol.unknowns, n_arcs=n_arcs, tol=tol)
    bound, ratio, guess = peak, 0.8, sol.unknowns
    for _ in range(max_solves):
        nxt = max(u_target, bound * ratio)
        try:
            sol = solve_fixed_endpoint(problem.with_u_max(nxt), target_state, guess, n_arcs=n_arcs, tol=tol)
        except ShootingError as exc:
            ratio = math.sqrt(ratio)
            if ratio > 0.985:
                raise ShootingError(f"thrust homotopy stalled at bound {bound:.4g}", exc.residual, exc.iterate) from exc
            continue
        bound, guess = nxt, sol.unknowns
        if bound <= u_target:
            return solve_fixed_endpoint(problem, target_state, guess, n_arcs=n_arcs, tol=tol)
    raise ShootingError(f"thrust homotopy did not reach the bound {u_target:.4g}", float("nan"))


# --------------------------------------------------------------------------
# Reachable sets


@dataclass
class ReachPoint:
    theta: float
    point: tuple[float, float] | None
    converged: bool
    solution: ShootingSolution | None = None
    error: str | None = None


@dataclass
class ReachableSet:
    problem: ReachProblem
    points: list[ReachPoint]

    @property
    def reference_point(self) -> tuple[float, float]:
        f = self.problem.reference_final
        return float(f[0]), float(f[2])

    @property
    def converged_fraction(self) -> float:
        return sum(p.converged for p in self.points) / len(self.points)

    def polygon(self) -> np.ndarray:
        """Converged section points ordered by sweep angle, shape (K, 2)."""
        pts = sorted((p for p in self.points if p.converged), key=lambda p: p.theta % (2 * math.pi))
        return np.array([p.point for p in pts]).reshape(-1, 2)

    def diagnostics(self) -> dict:
        poly = self.polygon()
        ref = np.array(self.reference_point)
        out = {
            "converged_fraction": self.converged_fraction,
            "n_points": int(len(poly)),
            "area": polygon_area(poly) if len(poly) >= 3 else 0.0,
            "simple": is_simple_polygon(poly) if len(poly) >= 3 else False,
            "encloses_reference": bool(len(poly) >= 3 and point_in_polygon(ref, poly)),
            "major_axis_deg": major_axis_angle(poly) if len(poly) >= 3 else None,
        }
        if len(poly) >= 3:
            gaps = np.linalg.norm(np.diff(np.vstack([poly, poly[:1]]), axis=0), axis=1)
            out["max_over_median_gap"] = float(gaps.max() / max(np.median(gaps), 1e-300))
        return out


def _on_ray(problem, sol, theta) -> float:
    d = np.array(sol.section_point) - np.array([problem.reference_final[0], problem.reference_final[2]])
    return d[0] * math.cos(theta) + d[1] * math.sin(theta)


SMOOTHING_LADDER = (1e-3, 1e-4, 1e-5, 1e-6, 1e-7, 1e-8, 1e-9)
MAX_HAMILTONIAN_GAP = 1e-10


def _solve_direction(problem, theta, guesses, n_arcs, tol, max_iter, ramp=(0.25, 0.5, 0.75)) -> ReachPoint:
    """Solve one sweep direction with increasingly patient fallbacks.

    The necessary conditions are also met on the opposite ray, so a
    solution there counts as a failure.  After the given guesses comes a
    homotopy in ``u_max`` (a fraction of the bound, where the linearized
    guess is good, walking up), then a homotopy that rounds off the thrust
    switch and shrinks the rounding until the exact law converges or the
    rounded solution is minimal to within ``MAX_HAMILTONIAN_GAP``.
    """
    err = None

    def attempt(prob, g, smoothing=0.0):
        sol = shooting_solve(prob, theta, g, n_arcs=n_arcs, tol=tol, max_iter=max_iter, smoothing=smoothing)
        if prob.u_max > 0 and _on_ray(prob, sol, theta) < -1e-9:
            raise ShootingError("solution on opposite ray", sol.residual, sol.unknowns)
        return sol

    failures = (ShootingError, ArithmeticError, ValueError)
    for g in guesses:
        try:
            return ReachPoint(theta, *_point(attempt(problem, g)))
        except failures as exc:
            err = str(exc)
    if problem.u_max <= 0:
        return ReachPoint(theta, None, False, None, err)
    if ramp:
        g = None
        try:
            for frac in (*ramp, 1.0):
                sol = attempt(problem.with_u_max(frac * problem.u_max), g)
                g = sol.unknowns
            return ReachPoint(theta, *_point(sol))
        except failures as exc:
            err = f"{err}; thrust homotopy: {exc}"
    g, best = None, None
    for eps in SMOOTHING_LADDER:
        try:
            sol = attempt(problem, g, eps)
        except failures as exc:
            err = f"{err}; switch smoothing at {eps:g}: {exc}"
            break
        g, best = sol.unknowns, sol
    if best is None:
        log.info("theta=%.3f failed: %s", theta, err)
        return ReachPoint(theta, None, False, None, err)
    try:
        return ReachPoint(theta, *_point(attempt(problem, g)))
    except failures as exc:
        err = f"{err}; exact law from smoothed start: {exc}"
    if best.diagnostics["hamiltonian_gap"] <= MAX_HAMILTONIAN_GAP:
        return ReachPoint(theta, *_point(best))
    log.info("theta=%.3f failed: %s", theta, err)
    return ReachPoint(theta, None, False, None, err)


def _point(sol):
    return sol.section_point, True, sol


def reachable_set(
    problem: ReachProblem,
    thetas,
    continuation: bool = True,
    n_arcs: int = 4,
    tol: float = 1e-10,
    max_iter: int = 30,
    min_converged: float = 0.5,
    workers: int = 1,
) -> ReachableSet:
    """Sweep ``theta`` and collect terminal section points.

    With ``continuation`` each solve starts from the previous converged
    solution and falls back to the linearized guess if that fails; the sweep
    is then sequential.  Without it the directions are independent and run
    on ``workers`` threads.
    """
    thetas = list(thetas)
    if not thetas:
        raise ValueError("need at least one sweep angle")
    if continuation:
        points: list[ReachPoint] = []
        warm = None
        for theta in thetas:
            pt = _solve_direction(problem, theta, [warm, None] if warm is not None else [None], n_arcs, tol, max_iter)
            if pt.converged:
                warm = pt.solution.unknowns
            points.append(pt)
    else:
        from concurrent.futures import ThreadPoolExecutor

        with ThreadPoolExecutor(max_workers=max(1, workers)) as pool:
            points = list(pool.map(lambda th: _solve_direction(problem, th, [None], n_arcs, tol, max_iter), thetas))
    rs = ReachableSet(problem, points)
    if rs.converged_fraction < min_converged:
        raise ShootingError(f"only {rs.converged_fraction:.0%} of sweep angles converged", float("nan"))
    return rs


# --------------------------------------------------------------------------
# Planar geometry helpers


def polygon_area(poly) -> float:
    return float(Polygon(np.asarray(poly, dtype=float)).area)


def is_simple_polygon(poly) -> bool:
    """No edge crosses a non-adjacent edge."""
    return bool(LinearRing(np.asarray(poly, dtype=float)).is_simple)


def point_in_polygon(pt, poly) -> bool:
    """Strict interior test (boundary points are outside)."""
    return bool(Polygon(np.asarray(poly, dtype=float)).contains(Point(pt)))


def major_axis_angle(points) -> float:
    """Orientation in degrees, in [0, 180), of the principal axis of a point cloud."""
    p = np.asarray(points, dtype=float)
    c = np.cov((p - p.mean(axis=0)).T)
    w, V = np.linalg.eigh(c)
    v = V[:, np.argmax(w)]
    return float(math.degrees(math.atan2(v[1], v[0])) % 180.0)


def polygon_intersections(poly_a, poly_b) -> list[np.ndarray]:
    """Points where the boundaries of two closed polygons cross.

    Edges are straight segments between section points, so each point is
    the linear interpolation along both edges.
    """
    ra = LinearRing(np.asarray(poly_a, dtype=float))
    rb = LinearRing(np.asarray(poly_b, dtype=float))
    hit = ra.intersection(rb)
    pts = []
    for g in getattr(hit, "geoms", [hit]):
        if g.is_empty:
            continue
        if g.geom_type == "Point":
            pts.append(np.array([g.x, g.y]))
        else:
            pts.extend(np.array(c) for c in g.coords)
    pts.sort(key=lambda q: (q[0], q[1]))
    return pts


def order_cluster(points) -> np.ndarray:
    """Order section points of one crossing cluster into a closed loop around their centroid."""
    p = np.asarray(points, dtype=float)
    c = p.mean(axis=0)
    ang = np.arctan2(p[:, 1] - c[1], p[:, 0] - c[0])
    return p[np.argsort(ang)]


# --------------------------------------------------------------------------
# Transfer design


@dataclass
class TransferDesign:
    target_state: np.ndarray
    section_point: tuple[float, float]
    cluster: str
    kind: Literal["boundary", "interior"]
    candidates: list[tuple[str, np.ndarray]]
    attempts: list[dict]
    solution: ShootingSolution


def complete_state(section_point, section: PoincareSection, energy: float, params: SystemParams, vy_sign: float) -> np.ndarray:
    """Full state from section coordinates ``(x, vx)`` at the given Jacobi energy."""
    x, vx = section_point
    ca, sa = math.cos(section.alpha), math.sin(section.alpha)
    if abs(ca) < 1e-12:
        raise TransferError("section parallel to the y axis cannot be parameterized by x")
    y = section.anchor[1] + (x - section.anchor[0]) * sa / ca
    U = float(effective_potential(np.array([x, y]), params))
    disc = 2.0 * (energy + U) - vx * vx
    if disc < 0.0:
        raise TransferError(f"energy-infeasible section point: vy^2 = {disc:.3e} < 0")
    return np.array([x, y, vx, math.copysign(math.sqrt(disc), vy_sign)])


def boundary_vy(reach_set: ReachableSet, pt) -> float:
    """Terminal ``vy`` along the reach polygon edge through ``pt``, interpolated between its extremals."""
    pts = sorted((p for p in reach_set.points if p.converged), key=lambda p: p.theta % (2 * math.pi))
    P = np.array([p.point for p in pts])
    q = np.asarray(pt, dtype=float)
    best = (np.inf, 0, 0.0)
    for i in range(len(P)):
        a, b = P[i], P[(i + 1) % len(P)]
        ab = b - a
        t = float(np.clip(np.dot(q - a, ab) / max(np.dot(ab, ab), 1e-300), 0.0, 1.0))
        d = float(np.linalg.norm(a + t * ab - q))
        if d < best[0]:
            best = (d, i, t)
    _, i, t = best
    va = pts[i].solution.final[3]
    vb = pts[(i + 1) % len(pts)].solution.final[3]
    return float((1.0 - t) * va + t * vb)


def design_transfer(
    reach_set: ReachableSet,
    target: TargetRegion,
    cluster: Literal["ascending", "descending", "auto"] = "auto",
    n_arcs: int = 4,
    tol: float = 1e-10,
    max_attempts: int = 4,
) -> TransferDesign:
    """Pick a target state on the section inside the reachable set and solve for the transfer.

    Candidates are, in order: points where the reach polygon boundary crosses
    the target cluster loop (linear interpolation along both edges), then
    cluster crossings lying inside the polygon, ranked by the peak thrust of
    the linearized minimum-energy transfer.  Each is completed to a full
    state at the target orbit's Jacobi energy.  The first candidate for which
    the bounded fixed-endpoint solve converges is returned.

    A boundary point is reached by a single extremal, whose ``vy`` generally
    differs from the energy-completed one; those attempts usually fail, and
    the interior candidates are what make the design feasible.
    """
    problem = reach_set.problem
    poly = reach_set.polygon()
    if len(poly) < 3:
        raise TransferError("reachable set has fewer than three points")
    region = Polygon(poly)
    names = ["descending", "ascending"] if cluster == "auto" else [cluster]
    model = None
    attempts: list[dict] = []
    overlap = False
    for name in names:
        crossings = target.descending if name == "descending" else target.ascending
        if len(crossings) < 3:
            continue
        loop = order_cluster([c.coords for c in crossings])
        if not region.intersects(Polygon(loop)):
            continue
        overlap = True
        sign = lambda pt: min(crossings, key=lambda c: (c.coords[0] - pt[0]) ** 2 + (c.coords[1] - pt[1]) ** 2).state[3]

        candidates: list[tuple[str, np.ndarray, float]] = []
        for pt in polygon_intersections(poly, loop):
            candidates.append(("boundary", pt, sign(pt)))
        inside = [c for c in crossings if region.contains(Point(c.coords))]
        if inside:
            model = model or _LinearModel.of(problem)
            ranked = []
            for c in inside:
                try:
                    xt = complete_state(c.coords, problem.section, target.energy, problem.params, c.state[3])
                except TransferError:
                    continue
                ranked.append((model.peak_thrust(xt - problem.reference_final), c))
            ranked.sort(key=lambda r: r[0])
            candidates += [("interior", np.array(c.coords), c.state[3]) for _, c in ranked]

        solved = 0
        for kind, pt, vy_sign in candidates:
            if solved >= max(1, max_attempts):
                break
            rec = {"cluster": name, "kind": kind, "point": (float(pt[0]), float(pt[1]))}
            attempts.append(rec)
            try:
                xt = complete_state(pt, problem.section, target.energy, problem.params, vy_sign)
                if kind == "boundary":
                    vy_edge = boundary_vy(reach_set, pt)
                    if abs(vy_edge - xt[3]) > 1e-6:
                        raise TransferError(f"boundary point is reached only with vy={vy_edge:.6g}, completed target needs vy={xt[3]:.6g}")
                solved += 1
                sol = solve_fixed_endpoint_bounded(problem, xt, n_arcs=n_arcs, tol=tol)
            except (TransferError, ShootingError) as exc:
                rec["error"] = str(exc)
                continue
            rec["error"] = None
            return TransferDesign(
                target_state=xt,
                section_point=rec["point"],
                cluster=name,
                kind=kind,
                candidates=[(k, p) for k, p, _ in candidates],
                attempts=attempts,
                solution=sol,
            )
    if not overlap:
        raise TransferError("no transfer at this horizon: reachable set misses the target region")
    raise TransferError("no candidate target state could be reached: " + "; ".join(f"{a['kind']} {a['point']}: {a['error']}" for a in attempts))
