"""
Exception hierarchy
"""

from typing import Optional


class TonelliError(Exception):
    """Base class for all library errors"""


class ChartError(TonelliError):
    """Chart mismatch, point outside the atlas or overlong segment"""


class ModelConfigError(TonelliError):
    """Unknown builtin model or malformed expression tree"""


class TonelliConditionError(TonelliError):
    """Sampled fiber Hessian is asymmetric or indefinite"""


class LegendreError(TonelliError):
    """Legendre Newton iteration did not converge"""


class ModificationError(TonelliError):
    """Modification precondition or verification failure"""


class FlowBlowupError(TonelliError):
    """Step size underflow while integrating a flow"""

    def __init__(self, message: str, assumption: str = "(L3)", t: Optional[float] = None):
        super().__init__(f"{message}; possible completeness {assumption} violation")
        self.assumption = assumption
        self.t = t


class SingularFiberHessianError(TonelliError):
    """Fiber Hessian not invertible along a trajectory"""


class ConvergenceError(TonelliError):
    """Iteration cap reached without convergence"""


class UnstableIndexError(TonelliError):
    """Morse index changed under mesh doubling"""


class SpeedCapBreach(TonelliError):
    """Raw descent exceeded its speed cap"""

    def __init__(self, speed: float, cap: float):
        super().__init__(f"speed {speed:.6g} exceeds cap {cap:.6g}")
        self.speed = speed
        self.cap = cap


class StageError(TonelliError):
    """Pipeline stage failure, tagged with the stage name"""

    def __init__(self, stage: str, cause: Exception):
        super().__init__(f"stage '{stage}' failed: {cause}")
        self.stage = stage
        self.cause = cause
