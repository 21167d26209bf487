"""Exception types shared across the package."""

from __future__ import annotations


class TrajectoryDiverged(RuntimeError):
    """A rollout produced a non-finite state.

    ``stage`` is the first 0-based step index whose output was not finite.
    """

    def __init__(self, stage: int, message: str | None = None):
        self.stage = stage
        super().__init__(message or f"trajectory diverged at stage {stage}")


class RiskConditionError(RuntimeError):
    """The risk weight is too large for the current linearization.

    Raised when the precision matrix of the adversarial-noise Gaussian,
    sigma^-2 I - theta X H X^T, fails to be positive definite, so neither
    the surrogate objective nor the closed-form step is defined.
    """


class IllConditionedModel(RuntimeError):
    """A stage-wise linear solve in the backward recursion broke down."""

    def __init__(self, stage: int, what: str):
        self.stage = stage
        super().__init__(f"ill-conditioned {what} at stage {stage}")


class AllSamplesDiverged(RuntimeError):
    """Every Monte-Carlo sample produced a non-finite trajectory."""


class SubproblemInfeasible(RuntimeError):
    """The min-max subproblem lost adversary concavity at some stage."""

    def __init__(self, stage: int | None):
        self.stage = stage
        super().__init__(f"subproblem infeasible at stage {stage}")


class StepSizeStall(RuntimeError):
    """Backtracking hit its smallest step size without acceptance."""

    def __init__(self, gamma: float, trials: int, diagnostics: dict):
        self.gamma = gamma
        self.trials = trials
        self.diagnostics = diagnostics
        super().__init__(
            f"no acceptable step size found after {trials} trials "
            f"(last gamma {gamma:g})"
        )
