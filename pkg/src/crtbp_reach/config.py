"""Run configuration: JSON in, validated and defaulted models out.

Defaults are listed in docs/config.md; keep the two in sync.
"""

from __future__ import annotations

import json
import math
from typing import Annotated, Literal

from pydantic import BaseModel, ConfigDict, Field, ValidationError, field_validator, model_validator

Scenario = Literal["simulate", "lagrange", "orbit", "manifold", "reach", "transfer"]
SCENARIOS: tuple[str, ...] = ("simulate", "lagrange", "orbit", "manifold", "reach", "transfer")

Finite = Annotated[float, Field(allow_inf_nan=False)]
State = Annotated[list[Finite], Field(min_length=4, max_length=4)]


class ConfigError(ValueError):
    """Invalid configuration; ``errors`` holds ``(field path, message)`` pairs."""

    def __init__(self, errors: list[tuple[str, str]]):
        self.errors = errors
        super().__init__("; ".join(f"{path}: {msg}" if path else msg for path, msg in errors))


class _Block(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True)


class SystemBlock(_Block):
    mu: Finite = Field(ge=0.0, le=0.5)
    h: Finite = Field(default=1e-3, gt=0.0, le=0.1)
    u_max: Finite = Field(default=0.0, ge=0.0)


class SectionBlock(_Block):
    # "L1" anchors at the first Lagrange point; otherwise an explicit (x, y)
    anchor: Literal["L1", "moon"] | Annotated[list[Finite], Field(min_length=2, max_length=2)] = "L1"
    alpha_deg: Finite = 0.0
    half_width: Finite | None = Field(default=None, gt=0.0)


class SimulateBlock(_Block):
    state0: State = [0.75, 0.0, 0.0, 0.2883]
    tf: Finite = Field(default=50.0, gt=0.0)
    compare_rk4: bool = True
    reference_tol: Finite = Field(default=1e-13, gt=0.0)


class OrbitBlock(_Block):
    x0: Finite | None = None
    energy: Finite | None = None
    half_period: Finite | None = Field(default=None, gt=0.0)
    tol: Finite = Field(default=1e-12, gt=0.0)
    max_iter: int = Field(default=30, ge=1, le=1000)

    @model_validator(mode="after")
    def _one_target(self):
        given = [v is not None for v in (self.x0, self.energy, self.half_period)]
        if sum(given) > 1:
            raise ValueError("give at most one of x0, energy, half_period")
        return self

    def target(self) -> dict:
        if self.energy is not None:
            return {"energy": self.energy}
        if self.half_period is not None:
            return {"half_period": self.half_period}
        return {"x0": 0.8156 if self.x0 is None else self.x0}


class ManifoldBlock(_Block):
    orbit: OrbitBlock = OrbitBlock()
    stability: Literal["stable", "unstable"] = "unstable"
    side: Literal[1, -1] = 1
    epsilon: Finite = Field(default=1e-4, gt=0.0, lt=0.1)
    n_traj: int = Field(default=20, ge=1, le=10000)
    t_max: Finite = Field(default=10.0, gt=0.0)
    section: SectionBlock = SectionBlock(anchor="moon", half_width=None)


class TargetBlock(_Block):
    state0: State = [1.05, 0.0, 0.0, 0.35]
    t_span: Finite = Field(default=20.0, gt=0.0)
    cluster: Literal["ascending", "descending", "auto"] = "descending"


class ReachBlock(_Block):
    state0: State = [0.8156, 0.0, 0.0, 0.1922]
    tf: Finite = Field(default=1.4, gt=0.0)
    section: SectionBlock = SectionBlock()
    n_theta: int = Field(default=24, ge=1, le=3600)
    thetas_deg: list[Finite] | None = None
    n_arcs: int = Field(default=4, ge=1, le=64)
    tol: Finite = Field(default=1e-10, gt=0.0)
    max_iter: int = Field(default=30, ge=1, le=1000)
    continuation: bool = True
    snap_to_section: bool = True

    @field_validator("thetas_deg")
    @classmethod
    def _nonempty(cls, v):
        if v is not None and len(v) == 0:
            raise ValueError("theta list must not be empty")
        return v

    def thetas(self) -> list[float]:
        if self.thetas_deg is not None:
            return [math.radians(t) for t in self.thetas_deg]
        return [2.0 * math.pi * i / self.n_theta for i in range(self.n_theta)]


class RunConfig(_Block):
    scenario: Scenario | None = None
    system: SystemBlock
    simulate: SimulateBlock = SimulateBlock()
    orbit: OrbitBlock = OrbitBlock()
    manifold: ManifoldBlock = ManifoldBlock()
    reach: ReachBlock = ReachBlock()
    target: TargetBlock = TargetBlock()
    output_dir: str = "out"
    seed: int = 0

    def canonical_json(self) -> str:
        return json.dumps(self.model_dump(mode="json"), sort_keys=True, separators=(",", ":"))


REQUIRED_FIELDS = ("system.mu",)


def _path(loc) -> str:
    out = ""
    for part in loc:
        if isinstance(part, int):
            out += f"[{part}]"
        else:
            out += ("." if out else "") + str(part)
    return out


def validate_config(raw: str | bytes | dict, scenario: str | None = None) -> RunConfig:
    """Parse, default and range-check a run configuration.

    ``scenario`` (e.g. from the command line) fills in or must agree with the
    config's own selector.
    """
    if isinstance(raw, dict):
        data = raw
    else:
        text = raw.decode("utf-8") if isinstance(raw, bytes) else raw
        if not text.strip():
            raise ConfigError([("", "empty config; required fields: " + ", ".join(REQUIRED_FIELDS))])
        try:
            data = json.loads(text)
        except json.JSONDecodeError as exc:
            raise ConfigError([("", f"JSON parse error at line {exc.lineno}, column {exc.colno}: {exc.msg}")]) from exc
    if not isinstance(data, dict):
        raise ConfigError([("", "config must be a JSON object")])
    try:
        cfg = RunConfig.model_validate(data)
    except ValidationError as exc:
        raise ConfigError([(_path(e["loc"]), e["msg"]) for e in exc.errors()]) from exc
    if scenario is not None:
        if scenario not in SCENARIOS:
            raise ConfigError([("scenario", f"unknown scenario {scenario!r}")])
        if cfg.scenario is not None and cfg.scenario != scenario:
            raise ConfigError([("scenario", f"config says {cfg.scenario!r} but {scenario!r} was requested")])
        cfg = cfg.model_copy(update={"scenario": scenario})
    if cfg.scenario is None:
        raise ConfigError([("scenario", "no scenario selected")])
    if cfg.scenario in ("lagrange", "orbit", "manifold", "reach", "transfer") and not 0.0 < cfg.system.mu < 0.5:
        raise ConfigError([("system.mu", f"scenario {cfg.scenario} needs 0 < mu < 1/2")])
    return cfg
