"""Experiment configuration: one TOML or JSON file per run."""
from __future__ import annotations

import hashlib
import json
import sys
from pathlib import Path
from typing import Literal

from pydantic import BaseModel, ConfigDict, Field, field_validator, model_validator

from .. import geometry as geo
from .. import potentials
from ..errors import PerfolabError

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib


class _Strict(BaseModel):
    model_config = ConfigDict(extra="forbid")


class DomainSpec(_Strict):
    kind: Literal["torus", "polygon"] = "torus"
    side: float = 1.0
    vertices: list[tuple[float, float]] | None = None   # polygon; unit square if omitted
    dirichlet_edges: list[int] = Field(default_factory=list)
    robin_weight: dict[int, float] = Field(default_factory=dict)

    def build(self):
        if self.kind == "torus":
            return geo.Torus(self.side)
        verts = self.vertices or [(0.0, 0.0), (1.0, 0.0), (1.0, 1.0), (0.0, 1.0)]
        return geo.Polygon(verts, frozenset(self.dirichlet_edges), dict(self.robin_weight))

    @property
    def extent(self) -> float:
        if self.kind == "torus":
            return self.side
        v = self.vertices or [(0.0, 0.0), (1.0, 1.0)]
        return max(max(abs(a), abs(b)) for a, b in v)


class PotentialSpec(_Strict):
    name: str = "constant"
    params: dict = Field(default_factory=dict)

    def build(self):
        return potentials.make(self.name, **self.params)


class ScheduleSpec(_Strict):
    kind: Literal["constant", "flex"] = "constant"
    alpha: float = 1.0
    p0: float = 1.5

    def build(self):
        return geo.ConstantAlpha(self.alpha) if self.kind == "constant" else geo.FlexPower(self.p0)


class MeshSpec(_Strict):
    h_max: float = 0.05
    h_per_eps: float | None = None     # h = min(h_max, h_per_eps * eps) when set
    hole_factor: float = 3.0           # h_hole = r / hole_factor
    grading: float = 1.3
    reference_h: float | None = None   # full-domain reference mesh; h_max / 2 if omitted

    def h_at(self, eps: float) -> float:
        return self.h_max if self.h_per_eps is None else min(self.h_max, self.h_per_eps * eps)

    def size_field(self, eps: float, hole_factor: float | None = None):
        from ..mesher import SizeField
        return SizeField(self.h_at(eps), hole_factor or self.hole_factor, self.grading)

    @property
    def h_reference(self) -> float:
        return self.reference_h or 0.5 * self.h_max


class ExperimentConfig(_Strict):
    name: str = "experiment"
    domain: DomainSpec = Field(default_factory=DomainSpec)
    potential: PotentialSpec = Field(default_factory=PotentialSpec)
    schedule: ScheduleSpec = Field(default_factory=ScheduleSpec)
    eps: list[float] = Field(default_factory=lambda: [0.2, 0.15, 0.1, 0.07])
    k: int = 1
    mesh: MeshSpec = Field(default_factory=MeshSpec)
    seed: int = 0
    seeds: list[int] | None = None     # replicate seeds for the measure sweep
    output: str = "out"
    workers: int = 1
    p_values: list[float] = Field(default_factory=lambda: [1.5, 1.8])
    samples_per_cell: int = 16
    n_quad: int = 64
    control_run: bool = True           # refinement-halved Robin solve at the smallest eps
    eigenfunctions: bool = True

    @field_validator("eps")
    @classmethod
    def _descending(cls, v):
        if not v or any(e <= 0 for e in v) or any(b >= a for a, b in zip(v, v[1:])):
            raise ValueError("eps must be a non-empty, positive, strictly descending list")
        return v

    @field_validator("k", "workers")
    @classmethod
    def _positive(cls, v):
        if v < 1:
            raise ValueError("must be at least 1")
        return v

    @model_validator(mode="after")
    def _schedule_ok(self):
        probe = [p for p in self.p_values if p < 2.0] or [1.5]
        try:
            sched = self.schedule.build()
            if len(self.eps) < 2:
                return self
            report = geo.validate_schedule(sched, self.eps, probe)
        except PerfolabError as exc:
            raise ValueError(str(exc)) from exc
        if self.schedule.kind == "constant" and not report.admissible:
            raise ValueError(f"schedule not admissible: {report.tends_to_zero}")
        return self

    @property
    def replicate_seeds(self) -> list[int]:
        return list(self.seeds) if self.seeds else [self.seed]

    def canonical_json(self) -> str:
        """Scientific content only: where results go and how many workers run them is excluded."""
        d = self.model_dump(mode="json", exclude={"output", "workers"})
        return json.dumps(d, sort_keys=True, separators=(",", ":"))

    def digest(self) -> str:
        return hashlib.sha256(self.canonical_json().encode()).hexdigest()


def load_config(path) -> ExperimentConfig:
    path = Path(path)
    text = path.read_text()
    if path.suffix.lower() == ".toml":
        data = tomllib.loads(text)
    else:
        data = json.loads(text)
    return ExperimentConfig.model_validate(data)
