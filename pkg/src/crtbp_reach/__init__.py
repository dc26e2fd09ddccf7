"""Low-thrust transfer design in the planar circular restricted three-body problem.

Built on a variational integrator, so long propagations keep the Jacobi
integral bounded.  The pieces are periodic orbits with their invariant
manifolds, Poincare sections, and reachable sets computed by indirect
optimal control.
"""

from .dynamics import (
    CollisionError,
    SystemParams,
    continuous_dynamics,
    effective_potential,
    grad_U,
    jacobi_integral,
    lagrange_points,
    mass_parameter,
)
from .integrator import DiscreteTrajectory, energy_report, propagate, rk4_propagate, step
from .linearization import costate_step, step_jacobian
from .reachability import (
    ReachableSet,
    ReachProblem,
    ShootingError,
    ShootingSolution,
    TransferError,
    design_transfer,
    reachable_set,
    shooting_solve,
)
from .structures import (
    PeriodicOrbit,
    PoincareSection,
    SectionCrossing,
    detect_crossings,
    find_periodic_orbit,
    globalize_manifold,
    lunar_section,
    monodromy,
    target_orbit_region,
)

__version__ = "0.1.0"

__all__ = [
    "CollisionError",
    "DiscreteTrajectory",
    "PeriodicOrbit",
    "PoincareSection",
    "ReachProblem",
    "ReachableSet",
    "SectionCrossing",
    "ShootingError",
    "ShootingSolution",
    "SystemParams",
    "TransferError",
    "continuous_dynamics",
    "costate_step",
    "design_transfer",
    "detect_crossings",
    "effective_potential",
    "energy_report",
    "find_periodic_orbit",
    "globalize_manifold",
    "grad_U",
    "jacobi_integral",
    "lagrange_points",
    "lunar_section",
    "mass_parameter",
    "monodromy",
    "propagate",
    "reachable_set",
    "rk4_propagate",
    "shooting_solve",
    "step",
    "step_jacobian",
    "target_orbit_region",
]
