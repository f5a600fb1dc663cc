"""Run configuration: one YAML file, validated with unknown keys rejected."""
from __future__ import annotations

import math
from pathlib import Path
from typing import Literal, Optional

import yaml
from pydantic import BaseModel, ConfigDict, Field, PositiveInt, ValidationInfo, field_validator

from .weights import WeightModel, law_from_config

EXPERIMENTS = ("generate-graph", "simulate", "solve-lotka", "branching", "coupling", "tv-rates", "all")


class Strict(BaseModel):
    model_config = ConfigDict(extra="forbid")


class ModelSection(Strict):
    A: dict
    B: dict
    I: dict = Field(default_factory=lambda: {"kind": "infinite"})
    T: dict

    @field_validator("A", "B", "I", "T")
    @classmethod
    def _law(cls, v: dict, info: ValidationInfo) -> dict:
        base = (info.context or {}).get("base_dir")
        law_from_config(v, base)  # raises ValueError with the offending parameter
        return v

    def build(self, base_dir: Path | None = None) -> WeightModel:
        return WeightModel(law_from_config(self.A, base_dir), law_from_config(self.B, base_dir),
                           law_from_config(self.I, base_dir), law_from_config(self.T, base_dir))


class Seeds(Strict):
    base: int = Field(0, ge=0, lt=2**64)
    replicas: PositiveInt = 1


class Tolerances(Strict):
    lotka: float = Field(1e-8, gt=0)
    kernel_samples: PositiveInt = 100_000
    tail: float = Field(1e-8, gt=0)


class Window(Strict):
    lo: float = Field(50, gt=0)
    hi: Optional[float] = Field(None, gt=0)
    hi_exponent: float = Field(0.4, gt=0, le=1)


class GraphSection(Strict):
    export: bool = True


class SimulateSection(Strict):
    t_max: float = Field(math.inf, gt=0)
    stop_after: Optional[PositiveInt] = None
    count_kind: Literal["cumulative", "infectious"] = "cumulative"
    window: Window = Field(default_factory=Window)
    export_trace: bool = True


class LotkaSection(Strict):
    """Optional direct declaration of the clique law, bypassing A and B."""

    mu_A_bar: Optional[float] = Field(None, gt=0)
    secondary_pmf: Optional[list[float]] = None
    K: Optional[PositiveInt] = None

    @field_validator("secondary_pmf")
    @classmethod
    def _pmf(cls, v):
        if v is not None:
            if len(v) < 2 or any(p < 0 for p in v) or abs(sum(v) - 1.0) > 1e-9:
                raise ValueError("secondary_pmf must list P(k secondaries) for k = 0, 1, ... "
                                 "and sum to 1")
        return v


class BranchingSection(Strict):
    t_max: float = Field(20.0, gt=0)
    cap: PositiveInt = 200_000
    root: Literal["general", "theta"] = "general"
    window: Window = Field(default_factory=lambda: Window(lo=1000, hi=50_000))
    martingale_generations: int = Field(3, ge=0)
    martingale_reps: int = Field(0, ge=0)
    export_run: bool = True


class CouplingSection(Strict):
    n_values: list[PositiveInt] = Field(default_factory=lambda: [10_000, 40_000, 160_000])
    max_infections: Optional[PositiveInt] = None
    stop_at_divergence: bool = True
    q: float = Field(math.inf, ge=2)
    eps: Optional[float] = None


class TVSection(Strict):
    n_grid: list[PositiveInt] = Field(default_factory=lambda: [100, 1000, 10_000, 100_000])
    reps: PositiveInt = 20
    q: float = Field(math.inf, ge=2)


class RunConfig(Strict):
    model: ModelSection
    n: PositiveInt = 10_000
    experiment: Optional[Literal[EXPERIMENTS]] = None  # type: ignore[valid-type]
    seeds: Seeds = Field(default_factory=Seeds)
    tolerances: Tolerances = Field(default_factory=Tolerances)
    out: Optional[str] = None
    graph: GraphSection = Field(default_factory=GraphSection)
    simulate: SimulateSection = Field(default_factory=SimulateSection)
    lotka: LotkaSection = Field(default_factory=LotkaSection)
    branching: BranchingSection = Field(default_factory=BranchingSection)
    coupling: CouplingSection = Field(default_factory=CouplingSection)
    tv_rates: TVSection = Field(default_factory=TVSection)


def load_config(path: str | Path, overrides: dict | None = None) -> RunConfig:
    path = Path(path)
    with open(path) as fh:
        data = yaml.safe_load(fh) or {}
    if not isinstance(data, dict):
        raise ValueError("config file must hold a mapping")
    data.update(overrides or {})
    return RunConfig.model_validate(data, context={"base_dir": path.parent})


def resolved_yaml(cfg: RunConfig) -> str:
    data = cfg.model_dump()
    return yaml.safe_dump(data, sort_keys=True)
