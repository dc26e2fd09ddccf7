"""Command-line entry point and scenario runner.

    crtbp-reach <scenario> --config <path> [--out <dir>] [--threads <n>] [--verbose]

Exit codes: 0 success, 2 configuration error, 3 solver failure.
"""

from __future__ import annotations

import argparse
import logging
import math
import os
import sys
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import export, plots
from .config import SCENARIOS, ConfigError, RunConfig, SectionBlock, validate_config
from .dynamics import CollisionError, SystemParams, grad_U, jacobi_integral, lagrange_points
from .integrator import energy_report, propagate, reference_solution, rk4_propagate
from .reachability import ReachProblem, ShootingError, TransferError, design_transfer, reachable_set
from .structures import (
    CorrectorError,
    PoincareSection,
    find_periodic_orbit,
    globalize_manifold,
    lunar_section,
    monodromy,
    target_orbit_region,
)

log = logging.getLogger("crtbp_reach")

EXIT_OK, EXIT_CONFIG, EXIT_SOLVER = 0, 2, 3


class SolverFailure(RuntimeError):
    """A numerical stage failed; the message names the scenario and stage."""


@dataclass
class RunManifest:
    config: dict
    input_hash: str
    files: list[dict]
    output_hash: str
    wall_time: float
    iterations: dict = field(default_factory=dict)
    summary: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {
            "config": self.config,
            "input_hash": self.input_hash,
            "files": self.files,
            "output_hash": self.output_hash,
            "wall_time": self.wall_time,
            "iterations": self.iterations,
            "summary": self.summary,
        }


class _Outputs:
    def __init__(self, root: Path):
        self.root = root
        self.names: list[str] = []

    def path(self, name: str) -> Path:
        self.names.append(name)
        return self.root / name


def _params(cfg: RunConfig) -> SystemParams:
    s = cfg.system
    return SystemParams(mu=s.mu, h=s.h, u_max=s.u_max)


def _section(block: SectionBlock, params: SystemParams) -> PoincareSection:
    alpha = math.radians(block.alpha_deg)
    if block.anchor == "L1":
        anchor = tuple(lagrange_points(params).L1)
    elif block.anchor == "moon":
        if block.half_width is None and block.alpha_deg == 0.0:
            return lunar_section(params)
        anchor = (1.0 - params.mu, 0.0)
    else:
        anchor = tuple(block.anchor)
    bounds = None if block.half_width is None else (-block.half_width, block.half_width)
    return PoincareSection(anchor=anchor, alpha=alpha, bounds=bounds)


def _add_primaries(fig: plots.Figure, params: SystemParams, lagrange: bool = False):
    fig.add("Moon", [1.0 - params.mu], [0.0], kind="points", color="#555555", size=4)
    if lagrange:
        L = lagrange_points(params)
        fig.add("L1", [L.L1[0]], [0.0], kind="marker", color="#000000", size=2)


# --------------------------------------------------------------------------
# Scenarios


def _run_simulate(cfg: RunConfig, out: _Outputs, iters: dict, threads: int) -> dict:
    params = _params(cfg)
    b = cfg.simulate
    n = max(1, int(round(b.tf / params.h)))
    traj = propagate(b.state0, None, n, params)
    rep = energy_report(traj)
    export.write_trajectory_csv(out.path("trajectory.csv"), traj)
    export.save_trajectory_json(out.path("trajectory.json"), traj)
    stats = {"variational": rep.summary(), "n_steps": n, "h": params.h}
    e_rk = None
    if b.compare_rk4:
        rk = rk4_propagate(b.state0, None, n, params)
        rep_rk = energy_report(rk)
        e_rk = rep_rk.energies
        stats["rk4"] = rep_rk.summary()
        stats["rk4_over_variational"] = rep_rk.final_deviation / max(rep.max_deviation, 1e-300)
        ref = reference_solution(b.state0, traj.times[-1], params, tol=b.reference_tol)
        stats["final_state_error"] = {"variational": float(np.max(np.abs(traj.final - ref))), "rk4": float(np.max(np.abs(rk.final - ref)))}
    rows = zip(traj.times, rep.energies, e_rk if e_rk is not None else [math.nan] * len(traj.times))
    export.write_csv(out.path("energy.csv"), ("t", "E_variational", "E_rk4"), rows)
    export.write_json(out.path("energy_stats.json"), stats)

    fig = plots.Figure("Trajectory (rotating frame)", "x", "y", equal_aspect=True)
    fig.add("variational", traj.states[:, 0], traj.states[:, 1])
    _add_primaries(fig, params)
    plots.save(fig, out.path("trajectory.svg"))
    fig = plots.Figure("Jacobi integral deviation", "t", "E - E0")
    stride = max(1, len(traj.times) // 4000)
    fig.add("variational", traj.times[::stride], (rep.energies - rep.energies[0])[::stride])
    if e_rk is not None:
        fig.add("RK4", traj.times[::stride], (e_rk - e_rk[0])[::stride])
    plots.save(fig, out.path("energy.svg"))
    return stats


def _run_lagrange(cfg: RunConfig, out: _Outputs, iters: dict, threads: int) -> dict:
    params = _params(cfg)
    pts = lagrange_points(params)
    data = {
        name: {"position": p, "grad_norm": float(np.hypot(*grad_U(np.array([p[0], p[1]]), params)))}
        for name, p in zip(pts._fields, pts)
    }
    export.write_json(out.path("lagrange.json"), {"mu": params.mu, "points": data})
    fig = plots.Figure("Lagrange points", "x", "y", equal_aspect=True)
    fig.add("Earth", [-params.mu], [0.0], kind="points", size=5)
    fig.add("Moon", [1.0 - params.mu], [0.0], kind="points", size=3)
    fig.add("L1..L5", [p[0] for p in pts], [p[1] for p in pts], kind="marker", size=2)
    plots.save(fig, out.path("lagrange.svg"))
    return {"max_grad_norm": max(d["grad_norm"] for d in data.values())}


def _orbit(cfg: RunConfig, block, iters: dict):
    params = _params(cfg)
    try:
        orbit = find_periodic_orbit(params, **block.target(), tol=block.tol, max_iter=block.max_iter)
    except CorrectorError as exc:
        raise SolverFailure(f"periodic orbit corrector: {exc}") from exc
    iters["orbit_corrector"] = orbit.iterations
    return orbit


def _orbit_summary(orbit) -> dict:
    mono = monodromy(orbit)
    return {
        "state0": orbit.state0,
        "period": orbit.period,
        "step": orbit.h,
        "n_half": orbit.n_half,
        "energy": orbit.energy,
        "iterations": orbit.iterations,
        "half_period_residual": float(np.max(np.abs(orbit.full_trajectory().states[orbit.n_half][[1, 2]]))),
        "monodromy": {
            "determinant": mono.determinant,
            "eigenvalues_real": np.real(mono.eigenvalues),
            "eigenvalues_imag": np.imag(mono.eigenvalues),
        },
    }


def _run_orbit(cfg: RunConfig, out: _Outputs, iters: dict, threads: int) -> dict:
    params = _params(cfg)
    orbit = _orbit(cfg, cfg.orbit, iters)
    full = orbit.full_trajectory()
    summary = _orbit_summary(orbit)
    export.write_json(out.path("orbit.json"), summary)
    export.write_trajectory_csv(out.path("orbit.csv"), full)
    fig = plots.Figure("L1 Lyapunov orbit", "x", "y", equal_aspect=True)
    fig.add("orbit", full.states[:, 0], full.states[:, 1])
    _add_primaries(fig, params, lagrange=True)
    plots.save(fig, out.path("orbit.svg"))
    return summary


def _manifold(cfg: RunConfig, iters: dict):
    params = _params(cfg)
    b = cfg.manifold
    orbit = _orbit(cfg, b.orbit, iters)
    section = _section(b.section, params)
    branch = globalize_manifold(orbit, b.stability, b.side, b.epsilon, b.n_traj, section=section, t_max=b.t_max)
    return orbit, branch


def _manifold_summary(branch) -> dict:
    tofs = branch.times_of_flight
    energies = [float(np.max(np.abs(jacobi_integral(t.trajectory.states.T, branch.orbit.params) - branch.orbit.energy))) for t in branch.trajectories]
    return {
        "epsilon": branch.epsilon,
        "n_traj": len(branch.trajectories),
        "n_crossed": int(len(tofs)),
        "times_of_flight": tofs,
        "mean_tof": float(np.mean(tofs)) if len(tofs) else None,
        "max_energy_deviation": max(energies) if energies else None,
    }


def _run_manifold(cfg: RunConfig, out: _Outputs, iters: dict, threads: int) -> dict:
    params = _params(cfg)
    orbit, branch = _manifold(cfg, iters)
    summary = {"orbit": _orbit_summary(orbit), "manifold": _manifold_summary(branch)}
    export.write_json(out.path("manifold.json"), summary)
    export.write_crossings_csv(out.path("crossings.csv"), branch.crossings)
    fig = plots.Figure("Unstable manifold" if branch.stability == "unstable" else "Stable manifold", "x", "y", equal_aspect=True)
    full = orbit.full_trajectory()
    fig.add("orbit", full.states[:, 0], full.states[:, 1], color="#000000")
    for i, t in enumerate(branch.trajectories):
        s = t.trajectory.states[:: max(1, len(t.trajectory.states) // 1500)]
        fig.add(f"traj {i}" if i < 1 else "", s[:, 0], s[:, 1], color="#2ca02c")
    _add_primaries(fig, params)
    plots.save(fig, out.path("manifold.svg"))
    if branch.crossings:
        fig = plots.Figure("Manifold section crossings", "x", "vx")
        fig.add("crossings", [c.coords[0] for c in branch.crossings], [c.coords[1] for c in branch.crossings], kind="points", color="#2ca02c")
        plots.save(fig, out.path("section.svg"))
    return summary


def _reach(cfg: RunConfig, iters: dict, threads: int):
    params = _params(cfg)
    b = cfg.reach
    section = _section(b.section, params)
    try:
        problem = ReachProblem.build(params, b.state0, b.tf, section=section, snap_to_section=b.snap_to_section)
        rs = reachable_set(
            problem, b.thetas(), continuation=b.continuation, n_arcs=b.n_arcs, tol=b.tol, max_iter=b.max_iter, workers=threads
        )
    except (ShootingError, ValueError, ArithmeticError) as exc:
        raise SolverFailure(f"reachable set: {exc}") from exc
    iters["shooting"] = [p.solution.iterations if p.converged else None for p in rs.points]
    return problem, rs


def _reach_summary(problem, rs) -> dict:
    return {
        "tf": problem.tf,
        "n_steps": problem.n_steps,
        "step": problem.h,
        "u_max": problem.u_max,
        "reference_point": rs.reference_point,
        "diagnostics": rs.diagnostics(),
        "points": [
            {
                "theta": p.theta,
                "converged": p.converged,
                "point": p.point,
                "iterations": p.solution.iterations if p.converged else None,
                "residual": p.solution.residual if p.converged else None,
                "checks": p.solution.diagnostics if p.converged else None,
                "error": p.error,
            }
            for p in rs.points
        ],
    }


def _reach_figure(problem, rs, title) -> plots.Figure:
    fig = plots.Figure(title, "x", "vx")
    poly = rs.polygon()
    if len(poly):
        fig.add("reachable set", poly[:, 0], poly[:, 1], kind="polygon", color="#d62728")
    ref = rs.reference_point
    fig.add("thrust-free", [ref[0]], [ref[1]], kind="marker", color="#000000")
    return fig


def _run_reach(cfg: RunConfig, out: _Outputs, iters: dict, threads: int) -> dict:
    params = _params(cfg)
    problem, rs = _reach(cfg, iters, threads)
    summary = _reach_summary(problem, rs)
    export.write_reach_csv(out.path("reach.csv"), rs)
    export.write_json(out.path("reach.json"), summary)
    plots.save(_reach_figure(problem, rs, "Reachable set on the section"), out.path("reach_section.svg"))
    fig = plots.Figure("Extremal trajectories", "x", "y", equal_aspect=True)
    fig.add("thrust-free", problem.reference.states[:, 0], problem.reference.states[:, 1], color="#000000")
    for i, p in enumerate(rs.points):
        if p.converged:
            fig.add("extremals" if i == 0 else "", p.solution.states[:, 0], p.solution.states[:, 1], color="#d62728")
    _add_primaries(fig, params, lagrange=True)
    plots.save(fig, out.path("reach_trajectories.svg"))
    return summary


def _run_transfer(cfg: RunConfig, out: _Outputs, iters: dict, threads: int) -> dict:
    params = _params(cfg)
    problem, rs = _reach(cfg, iters, threads)
    t = cfg.target
    target = target_orbit_region(params, t.state0, t.t_span, problem.section)
    try:
        design = design_transfer(rs, target, cluster=t.cluster, n_arcs=cfg.reach.n_arcs, tol=cfg.reach.tol)
    except (TransferError, ShootingError) as exc:
        raise SolverFailure(f"transfer design: {exc}") from exc
    sol = design.solution
    iters["transfer"] = sol.iterations
    orbit, branch = _manifold(cfg, iters)
    man = _manifold_summary(branch)
    thrust = np.linalg.norm(sol.controls, axis=1)
    summary = {
        "tof": sol.tof,
        "terminal_error": sol.diagnostics["terminal_error"],
        "target_state": design.target_state,
        "section_point": design.section_point,
        "cluster": design.cluster,
        "kind": design.kind,
        "candidates": [{"kind": k, "point": (float(pt[0]), float(pt[1]))} for k, pt in design.candidates],
        "attempts": design.attempts,
        "checks": sol.diagnostics,
        "thrust": {"max": float(thrust.max()), "mean": float(thrust.mean()), "delta_v": float(thrust.sum() * sol.h)},
        "target_energy": target.energy,
        "target_escaped": target.escaped,
        "manifold_mean_tof": man["mean_tof"],
        "reach": _reach_summary(problem, rs)["diagnostics"],
    }
    export.write_json(out.path("transfer.json"), summary)
    export.write_trajectory_csv(out.path("transfer.csv"), sol.trajectory())
    export.write_reach_csv(out.path("reach.csv"), rs)
    export.write_crossings_csv(out.path("target_crossings.csv"), target.crossings)
    export.write_crossings_csv(out.path("manifold_crossings.csv"), branch.crossings)

    fig = _reach_figure(problem, rs, "Section: reachable set, target region, manifold")
    asc, desc = target.ascending, target.descending
    if asc:
        fig.add("target ascending", [c.coords[0] for c in asc], [c.coords[1] for c in asc], kind="points", color="#1f77b4")
    if desc:
        fig.add("target descending", [c.coords[0] for c in desc], [c.coords[1] for c in desc], kind="points", color="#9467bd")
    if branch.crossings:
        fig.add("manifold", [c.coords[0] for c in branch.crossings], [c.coords[1] for c in branch.crossings], kind="points", color="#2ca02c")
    fig.add("intersection", [design.section_point[0]], [design.section_point[1]], kind="marker", color="#ff7f0e")
    plots.save(fig, out.path("section.svg"))

    fig = plots.Figure("Transfer (rotating frame)", "x", "y", equal_aspect=True)
    tr = target.trajectory.states[:: max(1, len(target.trajectory.states) // 3000)]
    fig.add("target orbit", tr[:, 0], tr[:, 1], color="#1f77b4")
    fig.add("transfer", sol.states[:, 0], sol.states[:, 1], color="#d62728")
    _add_primaries(fig, params, lagrange=True)
    plots.save(fig, out.path("transfer.svg"))
    fig = plots.Figure("Thrust magnitude", "t", "|u|")
    fig.add("|u|", np.arange(len(thrust)) * sol.h, thrust)
    plots.save(fig, out.path("thrust.svg"))
    return summary


RUNNERS = {
    "simulate": _run_simulate,
    "lagrange": _run_lagrange,
    "orbit": _run_orbit,
    "manifold": _run_manifold,
    "reach": _run_reach,
    "transfer": _run_transfer,
}


def run(config: RunConfig, out_dir: str | Path | None = None, threads: int = 1) -> RunManifest:
    """Execute the configured scenario and write its outputs plus ``manifest.json``."""
    root = Path(out_dir if out_dir is not None else config.output_dir)
    root.mkdir(parents=True, exist_ok=True)
    out = _Outputs(root)
    iters: dict = {}
    np.random.seed(config.seed)
    t0 = time.perf_counter()
    try:
        summary = RUNNERS[config.scenario](config, out, iters, threads)
    except CollisionError as exc:
        raise SolverFailure(f"{config.scenario}: {exc}") from exc
    except SolverFailure as exc:
        raise SolverFailure(f"{config.scenario}: {exc}") from exc
    wall = time.perf_counter() - t0

    contents = {}
    files = []
    for name in sorted(set(out.names)):
        data = (root / name).read_bytes()
        if not data:
            raise SolverFailure(f"{config.scenario}: produced empty file {name}")
        contents[name] = data
        files.append({"name": name, "bytes": len(data), "sha1": export.git_blob_hash(data)})
    canon = config.canonical_json().encode("utf-8")
    manifest = RunManifest(
        config=config.model_dump(mode="json"),
        input_hash=export.git_blob_hash(canon),
        files=files,
        output_hash=export.tree_hash(contents),
        wall_time=wall,
        iterations=export.to_jsonable(iters),
        summary=export.to_jsonable(_headline(config.scenario, summary)),
    )
    export.write_json(root / "manifest.json", manifest.to_dict())
    return manifest


def _headline(scenario: str, summary: dict) -> dict:
    keys = {
        "simulate": ("variational", "rk4", "rk4_over_variational"),
        "lagrange": ("max_grad_norm",),
        "orbit": ("period", "energy", "half_period_residual"),
        "manifold": ("manifold",),
        "reach": ("diagnostics",),
        "transfer": ("tof", "terminal_error", "cluster", "kind", "manifold_mean_tof"),
    }[scenario]
    return {k: summary[k] for k in keys if k in summary}


def _thread_count(arg: int | None) -> int:
    env = os.environ.get("CRTBP_THREADS")
    if env:
        try:
            n = int(env)
        except ValueError:
            raise ConfigError([("CRTBP_THREADS", f"not an integer: {env!r}")])
        if n < 1:
            raise ConfigError([("CRTBP_THREADS", "must be at least 1")])
        return n
    return arg or 1


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="crtbp-reach", description="Low-thrust reachability and transfer design in the planar CRTBP.")
    ap.add_argument("scenario", choices=SCENARIOS)
    ap.add_argument("--config", required=True, type=Path, help="JSON run configuration")
    ap.add_argument("--out", type=Path, default=None, help="output directory (overrides output_dir)")
    ap.add_argument("--threads", type=int, default=None, help="worker threads for independent solves")
    ap.add_argument("--verbose", "-v", action="store_true")
    return ap


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    try:
        try:
            raw = args.config.read_text(encoding="utf-8")
        except OSError as exc:
            raise ConfigError([("--config", str(exc))]) from exc
        cfg = validate_config(raw, scenario=args.scenario)
        threads = _thread_count(args.threads)
        if threads < 1:
            raise ConfigError([("--threads", "must be at least 1")])
    except ConfigError as exc:
        for path, msg in exc.errors:
            print(f"config error: {path}: {msg}" if path else f"config error: {msg}", file=sys.stderr)
        return EXIT_CONFIG
    try:
        manifest = run(cfg, args.out, threads)
    except SolverFailure as exc:
        print(f"solver failure: {exc}", file=sys.stderr)
        return EXIT_SOLVER
    print(f"{cfg.scenario}: {len(manifest.files)} files written to {args.out or cfg.output_dir} in {manifest.wall_time:.1f} s")
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
