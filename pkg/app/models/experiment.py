"""Experiment configuration loaded from JSON."""

from __future__ import annotations

from enum import Enum
from typing import Any, Dict, List, Literal, Optional

from pydantic import ConfigDict, Field

from app.models.specs import (
    DensitySpec,
    FamilySpec,
    GridSpec,
    GroupSpec,
    MapSpec,
    RegionSpec,
    SamplerSpec,
    StrictModel,
    Vector,
)

SCHEMA_VERSION = "1"


class CommandName(str, Enum):
    DISTANCE = "distance"
    ORBIT = "orbit"
    DIRICHLET = "dirichlet"
    MEASURE = "measure"
    MODULUS = "modulus"
    DILATATION = "dilatation"
    VERIFY_POLETSKY = "verify-poletsky"
    VERIFY_INVERSE = "verify-inverse"
    FMO = "fmo"
    EQUICONTINUITY = "equicontinuity"


STOCHASTIC_COMMANDS = {
    CommandName.MEASURE,
    CommandName.MODULUS,
    CommandName.VERIFY_POLETSKY,
    CommandName.VERIFY_INVERSE,
    CommandName.FMO,
    CommandName.EQUICONTINUITY,
}


class Budgets(StrictModel):
    max_word_len: int = Field(8, gt=0)
    max_elements: int = Field(1_000_000, gt=0)
    mc_samples: int = Field(200_000, gt=0)
    grid_resolution: int = Field(64, gt=0)
    max_iterations: int = Field(10_000, gt=0)
    paths: int = Field(256, gt=0)


class Seeds(StrictModel):
    root: int = Field(..., ge=0)


class Tolerances(StrictModel):
    inequality: float = Field(0.05, ge=0)
    distance: float = Field(1e-9, gt=0)


class ExperimentConfig(StrictModel):
    """
    One experiment per file; the command decides which sections are read.

    Sections a command does not use must be omitted.
    """

    schema_version: Literal["1"] = Field(..., alias="schema")
    command: CommandName
    group: GroupSpec = Field(default_factory=lambda: GroupSpec(kind="identity"))
    map: Optional[MapSpec] = None
    family: Optional[FamilySpec] = None
    density: Optional[DensitySpec] = None
    region: Optional[RegionSpec] = None
    sampler: Optional[SamplerSpec] = None
    grid: Optional[GridSpec] = None
    points: Optional[List[Vector]] = None
    center: Optional[Vector] = None
    radius: Optional[float] = Field(None, gt=0)
    eps_max: Optional[float] = Field(None, gt=0)
    levels: Optional[int] = Field(None, gt=1)
    radii: Optional[List[float]] = None
    m_tilde: int = Field(1, ge=1)
    element: Literal["euclidean", "hyperbolic"] = "hyperbolic"
    budgets: Budgets = Field(default_factory=Budgets)
    seeds: Optional[Seeds] = None
    tolerances: Tolerances = Field(default_factory=Tolerances)
    output: Optional[str] = None

    model_config = ConfigDict(extra="forbid", populate_by_name=True)

    def canonical(self) -> Dict[str, Any]:
        """The config as plain JSON data, used for the fingerprint."""
        return self.model_dump(mode="json", by_alias=True, exclude={"output"})

    @property
    def seed(self) -> int:
        return self.seeds.root if self.seeds is not None else 0
