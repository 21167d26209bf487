"""Risk-sensitive nonlinear trajectory optimization.

Builds commands minimizing exponential-utility ("risk-sensitive") costs of
noisy trajectories by iteratively solving exact linear-exponential-quadratic-
Gaussian subproblems, optionally with proximal regularization and a
sufficient-decrease step rule.  Ships the pendulum swing-up and two-link-arm
benchmarks, Monte-Carlo estimators of the exact risk cost, and a CLI harness
for the convergence / approximation / robustness experiments.
"""

from ._backend import backend_name, use_backend
from .errors import (
    AllSamplesDiverged,
    IllConditionedModel,
    RiskConditionError,
    StepSizeStall,
    SubproblemInfeasible,
    TrajectoryDiverged,
)
from .leqg import (
    BackwardPassResult,
    CostToGo,
    LeqgSolution,
    PolicyGains,
    backward_pass,
    feasibility_margin,
    forward_rollout,
    solve_leqg,
)
from .dualcg import (
    ConjGradResult,
    DualStepResult,
    JacobianOracle,
    conjgrad,
    dual_solve_final_state,
)
from .montecarlo import McEstimate, TestCostResult, mc_risk_gradient, mc_risk_value, test_cost
from .solver import (
    BacktrackingStep,
    ConstantStep,
    GridBurnIn,
    IterateTrace,
    SolverConfig,
    burnin_tune,
    run_ileqg,
    run_regileqg,
    sufficient_decrease_step,
)
from .surrogate import (
    GaussianApprox,
    SurrogateEval,
    gaussian_approx,
    reg_step_closed_form,
    surrogate_value,
    truncated_gradient,
)
from .systems import (
    ArmParameters,
    DynamicalSystem,
    LinearizedModel,
    StageCosts,
    euler_discretize,
    flat,
    linear_system,
    linearize,
    noise_jacobian,
    pendulum_costs,
    pendulum_system,
    pullback,
    pushforward,
    rollout,
    rollout_batch,
    stage_view,
    trajectory_jacobian,
    two_link_arm_costs,
    two_link_arm_system,
)

__version__ = "0.1.0"

__all__ = [name for name in dir() if not name.startswith("_")]
