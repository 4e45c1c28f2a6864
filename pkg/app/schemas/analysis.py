"""
Pydantic schemas for model checks, modification reports and certificates
"""

from enum import Enum
from typing import Dict, List, Optional

from pydantic import BaseModel, Field


class Verdict(str, Enum):
    """Outcome of a sampled check"""
    PASS = "pass"
    FAIL = "fail"
    FAIL_AT_ZERO = "fail_at_zero"
    UNKNOWN = "unknown"


class SampleSpec(BaseModel):
    """Deterministic tangent or cotangent sample description"""
    v_max: float = Field(10.0, ge=10.0, description="largest sampled fiber norm")
    n_radii: int = Field(101, ge=3)
    n_directions: int = Field(8, ge=2)
    q_per_axis: int = Field(6, ge=1)
    t_values: List[float] = Field(default_factory=lambda: [0.0, 0.25, 0.5, 0.75])
    k_values: List[float] = Field(default_factory=lambda: [1.0, 2.0, 4.0, 8.0])
    symmetry_tol: float = 1e-8
    eigen_tol: float = 1e-7
    seed: int = 0

    def scaled(self, v_max: float) -> "SampleSpec":
        return self.model_copy(update={"v_max": max(10.0, float(v_max))})


class TonelliReport(BaseModel):
    """Sampled necessary-condition check of (L1)(L2)"""
    ell0_estimate: float
    ell0_witness_speed: float
    growth_constants: Dict[str, float] = Field(..., description="C(K) keyed by K")
    growth_argmax_speeds: Dict[str, float]
    l1_verdict: Verdict
    l2_verdict: Verdict
    completeness_verdict: Verdict = Verdict.UNKNOWN
    completeness_constant: Optional[float] = None
    sample: str
    note: str = "sampled checks are necessary, not sufficient"

    def C(self, k: float = 1.0) -> float:
        return self.growth_constants[f"{float(k):g}"]


class CompletenessVerdict(BaseModel):
    """Sampled check of dH/dt <= c (1 + H)"""
    verdict: Verdict
    c: Optional[float]
    autonomous: bool
    shift: float = 0.0
    inner_ratio: float = 0.0
    outer_ratio: float = 0.0


class GrowthVerdict(BaseModel):
    """Sampled check of (H1) coercivity and (H2) superlinearity"""
    h1_verdict: Verdict
    h2_verdict: Verdict
    c0: float
    c1: float
    h1_margin: float
    h2_margin: float
    h1_witness: Optional[List[float]] = None
    h2_witness: Optional[List[float]] = None


class ClauseResult(BaseModel):
    """One clause of a modification definition"""
    clause: str
    verdict: Verdict
    margin: float
    witness: Optional[Dict[str, float]] = None
    detail: str = ""


class ModificationReport(BaseModel):
    """Construction constants and per-clause verification"""
    kind: str
    R: float
    safety_factor: float
    constants: Dict[str, float]
    clauses: List[ClauseResult]

    @property
    def passed(self) -> bool:
        return all(c.verdict == Verdict.PASS for c in self.clauses)

    def clause(self, name: str) -> ClauseResult:
        for c in self.clauses:
            if c.clause == name:
                return c
        raise KeyError(name)


class ReachableSetEstimate(BaseModel):
    """Grid estimate of the speed (momentum) bound R(A)"""
    A: float
    C1: float
    seed_radius: float
    grid_density: int
    time_grid: int
    seeds: int
    max_norm: float
    margin: float
    R_A: float
    side: str = "lagrangian"


class CertificateStatus(str, Enum):
    PASS = "pass"
    UNCERTIFIED = "uncertified"


class Certificate(BaseModel):
    """Speed-bound certificate of a modified-system orbit"""
    status: CertificateStatus
    max_speed: float
    R: float
    R_A: float
    within_reachable_bound: bool
    within_action_bound: bool = True
    A: Optional[float] = None
    action_L: float
    action_L0: float
    action_gap: float
    witness_segment: Optional[int] = None


class PropertyVerdict(BaseModel):
    """One row of the property suite"""
    name: str
    verdict: Verdict
    value: Optional[float] = None
    detail: str = ""
