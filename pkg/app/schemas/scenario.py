"""
Pydantic schemas for scenario configuration files
"""

import hashlib
import json
from typing import Any, List, Literal, Optional

from pydantic import BaseModel, ConfigDict, Field, model_validator

from app.core.config import settings
from app.schemas.analysis import SampleSpec


class StrictModel(BaseModel):
    model_config = ConfigDict(extra="forbid")


class ModelSpec(StrictModel):
    """Builtin model or expression tree"""
    kind: Literal["mechanical", "quartic", "norm", "expression"] = "mechanical"
    potential: Literal["none", "cos2"] = "none"
    epsilon: float = 0.1
    forcing: float = 0.0
    scale: float = Field(1.0, gt=0)
    expression: Optional[Any] = None


class EndpointFactorSpec(StrictModel):
    kind: Literal["point", "whole", "level"]
    chart: Optional[str] = None
    point: Optional[List[float]] = None
    level: Optional[Any] = Field(None, description="expression tree in q0.. whose zero set is the factor")


class BoundarySpec(StrictModel):
    kind: Literal["periodic", "endpoints", "neumann", "product"] = "periodic"
    start: Optional[List[float]] = None
    end: Optional[List[float]] = None
    start_chart: Optional[str] = None
    end_chart: Optional[str] = None
    first: Optional[EndpointFactorSpec] = None
    second: Optional[EndpointFactorSpec] = None

    @model_validator(mode="after")
    def _check_fields(self):
        if self.kind == "endpoints" and (self.start is None or self.end is None):
            raise ValueError("endpoints boundary needs start and end")
        if self.kind == "product" and (self.first is None or self.second is None):
            raise ValueError("product boundary needs first and second factors")
        return self


class FamilySpec(StrictModel):
    """Builtin sweep family generator and its parameters"""
    name: str
    generator: Literal["torus_translation", "path_seed", "sphere_detour"]
    degree: int = Field(..., ge=0, le=3)
    axes: List[int] = Field(default_factory=list)
    offset: float = 0.25
    points: int = Field(16, ge=1)
    point: Optional[List[float]] = None
    bump: float = 0.0
    amplitude: float = 0.6


class ToleranceSpec(StrictModel):
    descent_tol: float = 1e-3
    refine_tol: float = 1e-10
    max_iterations: int = 50000
    newton_max_iter: int = 50
    minimax_stall: float = 1e-8
    minimax_window: int = 50
    minimax_max_rounds: int = 5000
    dedupe_distance: float = 1e-4
    dedupe_action: float = 1e-6
    flow_tol: float = 1e-9
    index_check: bool = True


class ExpectationSpec(StrictModel):
    """Scenario acceptance table"""
    provenance: str = "derived"
    min_certified: int = 0
    actions: Optional[List[float]] = None
    action_rel_tol: float = 1e-6
    action_abs_tol: float = 1e-6
    indices: Optional[List[int]] = None
    strictly_increasing: bool = False
    max_conormal: Optional[float] = None


class ScenarioConfig(StrictModel):
    """One reproducible run"""
    name: str
    description: str = ""
    manifold: str = "torus2"
    model: ModelSpec = Field(default_factory=ModelSpec)
    boundary: BoundarySpec = Field(default_factory=BoundarySpec)
    families: List[FamilySpec] = Field(default_factory=list)
    tolerances: ToleranceSpec = Field(default_factory=ToleranceSpec)
    expectations: ExpectationSpec = Field(default_factory=ExpectationSpec)
    sample: SampleSpec = Field(default_factory=SampleSpec)
    mesh: int = Field(default_factory=lambda: settings.DEFAULT_MESH, ge=4)
    grid_density: int = Field(default_factory=lambda: settings.DEFAULT_GRID_DENSITY, ge=1)
    seed: int = Field(default_factory=lambda: settings.DEFAULT_SEED)
    cuplength: Optional[int] = None
    output: Optional[str] = None

    def config_hash(self) -> str:
        """SHA-256 of the canonical JSON dump, output directory excluded"""
        payload = self.model_dump(mode="json", exclude={"output"})
        canonical = json.dumps(payload, sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(canonical.encode()).hexdigest()
