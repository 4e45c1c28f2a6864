"""
Pydantic schemas for persisted solution records and run manifests
"""

from enum import Enum
from typing import Dict, List, Optional

from pydantic import BaseModel, Field

from app.schemas.analysis import (
    Certificate, ModificationReport, PropertyVerdict, ReachableSetEstimate, TonelliReport
)


class PathRecord(BaseModel):
    """Serialized discrete path"""
    manifold: str
    N: int
    charts: List[str]
    nodes: List[List[float]]


class IndexStatus(str, Enum):
    STABLE = "stable"
    UNSTABLE = "unstable"
    NOT_COMPUTED = "not_computed"


class CriticalPointRecord(BaseModel):
    """A refined critical point of the discrete action"""
    family: str
    degree: int
    provenance: str = Field(..., description="minimum, minimax level or refinement seed")
    action: float
    action_modified: Optional[float] = None
    gradient_norm: float
    conormal_residual: float
    max_speed: float
    morse_index: Optional[int] = None
    large_morse_index: Optional[int] = None
    index_status: IndexStatus = IndexStatus.NOT_COMPUTED
    degree_within_indices: Optional[bool] = None
    certificate: Optional[Certificate] = None
    path: PathRecord

    @property
    def certified(self) -> bool:
        return self.certificate is not None and self.certificate.status.value == "pass"


class MinimaxResult(BaseModel):
    """Outcome of the deformation of one sweep family"""
    family: str
    degree: int
    level: float
    family_max_log: List[float]
    rounds: int
    argmax_member: int
    continuity_max: float
    converged: bool
    record: Optional[CriticalPointRecord] = None


class RunManifest(BaseModel):
    """Everything a run produced, except wall-clock timings"""
    scenario: str
    config_hash: str
    seed: int
    mesh: int
    grid_density: int
    tonelli: TonelliReport
    A: float
    R_A: float
    R: float
    reachable: ReachableSetEstimate
    modification: ModificationReport
    minimax: List[MinimaxResult] = Field(default_factory=list)
    records: List[CriticalPointRecord] = Field(default_factory=list)
    certified_count: int = 0
    multiplicity_bound: Optional[int] = None
    levels_nondecreasing: Optional[bool] = None
    expectations: List[PropertyVerdict] = Field(default_factory=list)
    passed: bool = True
    versions: Dict[str, str] = Field(default_factory=dict)
