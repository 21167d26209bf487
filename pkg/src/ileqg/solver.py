"""Outer iterative loops for risk-sensitive trajectory optimization.

``run_regileqg`` repeats: linearize the dynamics and quadratize the costs
around the current command, solve the proximally regularized min-max
subproblem by dynamic programming, and take the full subproblem step.  The
step size (proximal weight) is either held constant, tuned once on a grid
during a burn-in phase, or adapted per iteration by backtracking on the
sufficient-decrease condition

    f(u+) <= m(u+; u) + |u+ - u|^2 / (2 gamma),

where m is the quadratic-Gaussian model of the surrogate objective around u.
Accepted steps then decrease the surrogate by at least |u+ - u|^2/(2 gamma).

``run_ileqg`` is the classical unregularized variant: the subproblem is
solved without a proximal term and the step ``u + alpha v*`` is chosen by
backtracking on a seeded Monte-Carlo estimate of the true risk cost, with
common random numbers across the trials of one iteration.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field, replace
from typing import Optional, Sequence, Union

import numpy as np

from .errors import (
    RiskConditionError,
    StepSizeStall,
    SubproblemInfeasible,
    TrajectoryDiverged,
)
from .leqg import solve_leqg
from .surrogate import GaussianApprox, SurrogateEval, gaussian_approx, surrogate_value
from .systems import Array, DynamicalSystem, StageCosts, linearize, stage_view

# Acceptance slack absorbing round-off in the closed-form value and the DP
# saddle value; on linear systems the condition holds with exact equality.
_DECREASE_RTOL = 1e-11


@dataclass(frozen=True)
class ConstantStep:
    """Fixed step size for every iteration."""

    gamma: float

    def __post_init__(self):
        if self.gamma <= 0:
            raise ValueError("step size must be positive")


@dataclass(frozen=True)
class BacktrackingStep:
    """Shrink the step until sufficient decrease holds, grow it on success."""

    gamma0: float = 1.0
    shrink: float = 0.5
    grow: float = 2.0
    gamma_min: float = 2.0**-20
    gamma_max: float = 2.0**20
    max_trials: int = 40

    def __post_init__(self):
        if not (self.gamma_min <= self.gamma0 <= self.gamma_max):
            raise ValueError("need gamma_min <= gamma0 <= gamma_max")
        if not (self.shrink < 1.0 < self.grow):
            raise ValueError("need shrink < 1 < grow")


@dataclass(frozen=True)
class GridBurnIn:
    """Tune a constant step on a 2^i grid with a few burn-in iterations."""

    exponents: Sequence[int] = tuple(range(-5, 11))
    iterations: int = 5

    def __post_init__(self):
        if len(tuple(self.exponents)) == 0:
            raise ValueError("grid must be nonempty")


StepPolicy = Union[ConstantStep, BacktrackingStep, GridBurnIn]


@dataclass(frozen=True)
class SolverConfig:
    theta: float
    sigma: float
    step: StepPolicy
    max_iterations: int = 100
    tolerance: float = 1e-6  # stationarity tolerance on the truncated gradient
    seed: int = 0
    mc_samples: int = 100  # Monte-Carlo samples per line-search evaluation
    ls_slack: float = 0.0  # allowed increase in the Monte-Carlo line search
    ls_max_trials: int = 30
    initial_controls: Optional[Array] = None
    retry_half_risk: bool = False  # halve theta*sigma^2 once on infeasibility


@dataclass
class IterateRecord:
    index: int
    controls: Array  # command at the start of this iteration, (tau, p)
    surrogate: float
    grad_norm: float
    feasible: bool = True
    gamma: float = np.nan  # step size accepted when leaving this iterate
    backtracks: int = 0
    mc_value: float = np.nan  # filled by the Monte-Carlo line search only
    wall_ms: float = 0.0


@dataclass
class IterateTrace:
    records: list[IterateRecord] = field(default_factory=list)
    termination: str = "max_iterations"
    theta: float = 0.0
    sigma: float = 0.0
    algorithm: str = ""
    tuned_gamma: Optional[float] = None

    @property
    def controls(self) -> Array:
        return self.records[-1].controls

    def surrogate_series(self) -> Array:
        return np.array([r.surrogate for r in self.records])

    def best_so_far(self) -> Array:
        return np.minimum.accumulate(self.surrogate_series())

    def grad_norms(self) -> Array:
        return np.array([r.grad_norm for r in self.records])


@dataclass(frozen=True)
class StepResult:
    controls: Array
    gamma_accepted: float
    trials: int
    gamma_next: float
    evaluation: SurrogateEval
    approx: GaussianApprox


def _zero_controls(system: DynamicalSystem) -> Array:
    return np.zeros((system.horizon, system.control_dim))


def sufficient_decrease_step(
    system: DynamicalSystem,
    costs: StageCosts,
    controls: Array,
    theta: float,
    sigma: float,
    gamma_trial: float,
    policy: BacktrackingStep,
    *,
    approx: GaussianApprox | None = None,
    evaluation: SurrogateEval | None = None,
) -> StepResult:
    """One backtracked step of the regularized iteration.

    The model value needed by the acceptance test is reconstructed from the
    subproblem's saddle value c0(0): the dynamic program drops the constants
    h(x) + g(u) and the log-det term, and already contains the proximal
    quadratic, so

        m(u+; u) + |u+ - u|^2/(2 gamma) = c0(0) + h(x) + g(u) + logdet-term,

    where the right-hand constants come from the surrogate components at u.
    Raises :class:`StepSizeStall` when gamma_min is reached without
    acceptance and :class:`SubproblemInfeasible` when the subproblem loses
    concavity.
    """
    if approx is None:
        approx = gaussian_approx(system, costs, controls, theta, sigma)
    if evaluation is None:
        evaluation = surrogate_value(
            system, costs, controls, theta, sigma, approx=approx
        )
    model = approx.model
    U = stage_view(controls, system.control_dim)
    constant = evaluation.model_constant()
    gamma = float(np.clip(gamma_trial, policy.gamma_min, policy.gamma_max))
    last_gap = np.nan
    for trial in range(1, policy.max_trials + 1):
        sol = solve_leqg(model, theta, sigma, 1.0 / gamma)
        if not sol.feasible:
            raise SubproblemInfeasible(sol.failed_stage)
        u_plus = U + sol.v_opt
        slack = _DECREASE_RTOL * (1.0 + abs(evaluation.value) + abs(sol.value + constant))
        try:
            eval_plus = surrogate_value(system, costs, u_plus, theta, sigma)
        except (RiskConditionError, TrajectoryDiverged):
            eval_plus = None
        if eval_plus is not None:
            last_gap = eval_plus.value - (sol.value + constant)
            if last_gap <= slack:
                return StepResult(
                    controls=u_plus,
                    gamma_accepted=gamma,
                    trials=trial,
                    gamma_next=min(gamma * policy.grow, policy.gamma_max),
                    evaluation=eval_plus,
                    approx=approx,
                )
        if gamma <= policy.gamma_min:
            raise StepSizeStall(
                gamma,
                trial,
                {
                    "surrogate": evaluation.value,
                    "model_gap": last_gap,
                    "grad_norm": float(np.linalg.norm(evaluation.gradient))
                    if evaluation.gradient is not None
                    else np.nan,
                },
            )
        gamma = max(gamma * policy.shrink, policy.gamma_min)
    raise StepSizeStall(gamma, policy.max_trials, {"surrogate": evaluation.value})


def _evaluate_point(system, costs, U, theta, sigma):
    ga = gaussian_approx(system, costs, U, theta, sigma)
    ev = surrogate_value(system, costs, U, theta, sigma, with_gradient=True, approx=ga)
    return ga, ev


def run_regileqg(
    system: DynamicalSystem, costs: StageCosts, config: SolverConfig
) -> IterateTrace:
    """Regularized iteration with DP subproblem steps; returns the full trace.

    Terminates after ``max_iterations``, when the truncated-gradient norm
    falls below the tolerance, or when the subproblem becomes infeasible /
    the step search stalls (recorded in ``termination``, not raised).
    """
    if isinstance(config.step, GridBurnIn):
        best = burnin_tune(system, costs, config, config.step.exponents)
        inner = replace(config, step=ConstantStep(best))
        trace = run_regileqg(system, costs, inner)
        trace.tuned_gamma = best
        return trace

    trace = IterateTrace(
        theta=config.theta, sigma=config.sigma, algorithm="regileqg"
    )
    U = (
        _zero_controls(system)
        if config.initial_controls is None
        else stage_view(config.initial_controls, system.control_dim).copy()
    )
    theta, sigma = config.theta, config.sigma
    gamma_next = (
        config.step.gamma
        if isinstance(config.step, ConstantStep)
        else config.step.gamma0
    )
    halved = False

    for k in range(config.max_iterations + 1):
        tic = time.perf_counter()
        try:
            ga, ev = _evaluate_point(system, costs, U, theta, sigma)
        except RiskConditionError:
            if config.retry_half_risk and not halved:
                halved = True
                theta = 0.5 * theta
                try:
                    ga, ev = _evaluate_point(system, costs, U, theta, sigma)
                except (RiskConditionError, TrajectoryDiverged):
                    trace.records.append(
                        IterateRecord(k, U.copy(), np.nan, np.nan, feasible=False)
                    )
                    trace.termination = "infeasible"
                    return trace
            else:
                trace.records.append(
                    IterateRecord(k, U.copy(), np.nan, np.nan, feasible=False)
                )
                trace.termination = "infeasible"
                return trace
        except TrajectoryDiverged:
            trace.records.append(
                IterateRecord(k, U.copy(), np.nan, np.nan, feasible=False)
            )
            trace.termination = "diverged"
            return trace
        gnorm = float(np.linalg.norm(ev.gradient))
        rec = IterateRecord(k, U.copy(), ev.value, gnorm)
        trace.records.append(rec)
        if gnorm <= config.tolerance:
            trace.termination = "tolerance"
            return trace
        if k == config.max_iterations:
            trace.termination = "max_iterations"
            return trace

        try:
            if isinstance(config.step, ConstantStep):
                sol = solve_leqg(ga.model, theta, sigma, 1.0 / config.step.gamma)
                if not sol.feasible:
                    raise SubproblemInfeasible(sol.failed_stage)
                U = U + sol.v_opt
                rec.gamma = config.step.gamma
            else:
                result = sufficient_decrease_step(
                    system,
                    costs,
                    U,
                    theta,
                    sigma,
                    gamma_next,
                    config.step,
                    approx=ga,
                    evaluation=ev,
                )
                U = result.controls
                rec.gamma = result.gamma_accepted
                rec.backtracks = result.trials - 1
                gamma_next = result.gamma_next
        except SubproblemInfeasible:
            if config.retry_half_risk and not halved:
                halved = True
                theta = 0.5 * theta
                rec.wall_ms = (time.perf_counter() - tic) * 1e3
                continue
            rec.feasible = False
            trace.termination = "infeasible"
            return trace
        except StepSizeStall:
            trace.termination = "stall"
            return trace
        rec.wall_ms = (time.perf_counter() - tic) * 1e3
    return trace


def run_ileqg(
    system: DynamicalSystem, costs: StageCosts, config: SolverConfig
) -> IterateTrace:
    """Classical iteration: unregularized subproblem plus a step u + alpha v*.

    With a :class:`BacktrackingStep` policy, alpha is found by backtracking
    on the Monte-Carlo estimate of the risk cost; each iteration draws one
    fixed noise panel (seed derived from config.seed and the iteration), so
    all alpha trials share the same random numbers.  With a
    :class:`ConstantStep` policy the step is deterministic and no sampling
    happens.
    """
    from .montecarlo import mc_risk_value

    if isinstance(config.step, GridBurnIn):
        best = burnin_tune(
            system, costs, config, config.step.exponents, algorithm="ileqg"
        )
        inner = replace(config, step=ConstantStep(best))
        trace = run_ileqg(system, costs, inner)
        trace.tuned_gamma = best
        return trace

    trace = IterateTrace(theta=config.theta, sigma=config.sigma, algorithm="ileqg")
    U = (
        _zero_controls(system)
        if config.initial_controls is None
        else stage_view(config.initial_controls, system.control_dim).copy()
    )
    theta, sigma = config.theta, config.sigma

    for k in range(config.max_iterations + 1):
        tic = time.perf_counter()
        try:
            ga, ev = _evaluate_point(system, costs, U, theta, sigma)
        except (RiskConditionError, TrajectoryDiverged) as exc:
            trace.records.append(
                IterateRecord(k, U.copy(), np.nan, np.nan, feasible=False)
            )
            trace.termination = (
                "diverged" if isinstance(exc, TrajectoryDiverged) else "infeasible"
            )
            return trace
        gnorm = float(np.linalg.norm(ev.gradient))
        rec = IterateRecord(k, U.copy(), ev.value, gnorm)
        trace.records.append(rec)
        if gnorm <= config.tolerance:
            trace.termination = "tolerance"
            return trace
        if k == config.max_iterations:
            trace.termination = "max_iterations"
            return trace

        sol = solve_leqg(ga.model, theta, sigma, 0.0)
        if not sol.feasible:
            rec.feasible = False
            trace.termination = "infeasible"
            return trace

        if isinstance(config.step, ConstantStep):
            U = U + config.step.gamma * sol.v_opt
            rec.gamma = config.step.gamma
        else:
            seed_k = (config.seed * 1_000_003 + k) % 2**63
            base = mc_risk_value(
                system, costs, U, theta, sigma, config.mc_samples, seed_k
            )
            rec.mc_value = base.value
            alpha = config.step.gamma0
            accepted = False
            for trial in range(1, config.ls_max_trials + 1):
                cand = U + alpha * sol.v_opt
                try:
                    est = mc_risk_value(
                        system, costs, cand, theta, sigma, config.mc_samples, seed_k
                    )
                    ok = est.value <= base.value + config.ls_slack
                except TrajectoryDiverged:
                    ok = False
                if ok:
                    U = cand
                    rec.gamma = alpha
                    rec.backtracks = trial - 1
                    accepted = True
                    break
                alpha *= config.step.shrink
            if not accepted:
                rec.gamma = alpha / config.step.shrink
                trace.termination = "stall"
                return trace
        rec.wall_ms = (time.perf_counter() - tic) * 1e3
    return trace


def burnin_tune(
    system: DynamicalSystem,
    costs: StageCosts,
    config: SolverConfig,
    exponents: Sequence[int],
    *,
    algorithm: str = "regileqg",
) -> float:
    """Pick the constant step 2^i minimizing the surrogate over a short run.

    Every grid point runs ``GridBurnIn.iterations`` iterations (or the
    policy default) from the same start; the score of a grid point is the
    best surrogate value seen along its trace.  Grid points whose run never
    produced a finite value are skipped; if that happens for all of them a
    ``ValueError`` is raised.
    """
    grid = [2.0**i for i in exponents]
    if not grid:
        raise ValueError("grid must be nonempty")
    iters = (
        config.step.iterations
        if isinstance(config.step, GridBurnIn)
        else GridBurnIn().iterations
    )
    runner = run_ileqg if algorithm == "ileqg" else run_regileqg
    best_gamma, best_score = None, np.inf
    for gamma in grid:
        sub = replace(
            config, step=ConstantStep(gamma), max_iterations=iters, tolerance=0.0
        )
        trace = runner(system, costs, sub)
        values = trace.surrogate_series()
        finite = values[np.isfinite(values)]
        if finite.size == 0:
            continue
        score = float(finite.min())
        if score < best_score:
            best_score, best_gamma = score, gamma
    if best_gamma is None:
        raise ValueError("all grid step sizes were infeasible")
    return best_gamma
