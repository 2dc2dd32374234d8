"""Levenberg-Marquardt training of the weighted residual."""

import csv
import logging
import time
from collections.abc import Callable
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path

import numpy as np
from scipy.linalg import cho_factor, cho_solve

from . import autodiff, loss, network
from .network import SolutionModel
from .problems import ProblemSpec
from .sampling import CollocationSet

logger = logging.getLogger(__name__)


class FactorizationError(np.linalg.LinAlgError):
    """The damped normal matrix could not be factorised even with jitter."""


class TrainingAbortedError(RuntimeError):
    """The residual became non-finite at an accepted point.

    Attributes
    ----------
    snapshot
        Diagnostic values at the point of failure.
    """

    def __init__(self, message: str, snapshot: dict) -> None:
        super().__init__(message)
        self.snapshot = snapshot


class StopReason(Enum):
    """Why training stopped."""

    LOSS_TOL = "loss_tol"
    MAX_ITERS = "max_iters"
    STALLED = "stalled"


@dataclass(frozen=True)
class LmConfig:
    """Settings of the Levenberg-Marquardt iteration.

    The damping is multiplied by `lambda_down` after an accepted step and by
    `lambda_up` after a rejected one, and is kept within [min_lambda, max_lambda].

    `penalty` weighs the squared norm of the penalised parameters (for `train`, the
    hidden weights and biases of the singular blocks) and is multiplied by
    `penalty_decay` after every accepted step.
    """

    max_iters: int = 2000
    loss_tol: float = 1e-15
    lambda_init: float = 1e-3
    lambda_up: float = 3.0
    lambda_down: float = 1.0 / 3.0
    min_lambda: float = 1e-14
    max_lambda: float = 1e14
    step_tol: float = 1e-15
    max_rejections: int = 50
    penalty: float = 1e-5
    penalty_decay: float = 0.95

    def __post_init__(self) -> None:
        if not self.lambda_up > 1.0 > self.lambda_down > 0.0:
            raise ValueError(
                f"Need lambda_up > 1 > lambda_down > 0, got {self.lambda_up} and "
                f"{self.lambda_down}."
            )
        if min(self.loss_tol, self.step_tol, self.min_lambda) <= 0:
            raise ValueError("Tolerances and min_lambda must be positive.")
        if not self.min_lambda <= self.lambda_init <= self.max_lambda:
            raise ValueError(
                f"lambda_init {self.lambda_init} outside [{self.min_lambda}, "
                f"{self.max_lambda}]."
            )
        if self.max_iters < 0 or self.max_rejections < 0:
            raise ValueError("max_iters and max_rejections must be non-negative.")
        if self.penalty < 0 or not 0.0 < self.penalty_decay <= 1.0:
            raise ValueError(
                f"Need penalty >= 0 and 0 < penalty_decay <= 1, got {self.penalty} and "
                f"{self.penalty_decay}."
            )


@dataclass(frozen=True)
class LmStep:
    """A proposed step.

    Attributes
    ----------
    candidate
        theta + delta.
    delta
        The step.
    predicted_reduction
        Decrease of the loss predicted by the linearised residual.
    """

    candidate: np.ndarray
    delta: np.ndarray
    predicted_reduction: float


@dataclass(frozen=True)
class StepRecord:
    iteration: int
    loss: float
    lam: float
    accepted: bool


@dataclass
class TrainReport:
    """Outcome of one training run.

    Attributes
    ----------
    final_loss
        Loss at the returned parameters.
    iterations
        Number of iterations (accepted steps, or the failing attempt when stalled).
    stop_reason
        Why the iteration ended.
    loss_history
        Initial loss followed by the loss after every accepted step.
    seed
        Seed of the collocation set, if known.
    wall_time
        Seconds spent.
    steps
        Every proposal, accepted or not.
    """

    final_loss: float
    iterations: int
    stop_reason: StopReason
    loss_history: list[float]
    seed: int | None = None
    wall_time: float = 0.0
    steps: list[StepRecord] = field(default_factory=list)


def _jittered_cholesky(matrix: np.ndarray, max_tries: int = 6) -> tuple:
    """Cholesky factor, adding growing diagonal jitter if needed."""
    try:
        return cho_factor(matrix, lower=True)
    except (np.linalg.LinAlgError, ValueError) as e:
        error = e

    diag_mean = float(np.mean(np.diag(matrix))) if matrix.size else 0.0
    if not (np.isfinite(diag_mean) and diag_mean > 0):
        raise FactorizationError(
            f"Cannot factorise matrix with mean diagonal {diag_mean}."
        ) from error

    jitter = diag_mean * 1e-10
    for _ in range(max_tries):
        try:
            factor = cho_factor(
                matrix + jitter * np.eye(matrix.shape[0]), lower=True
            )
        except np.linalg.LinAlgError:
            jitter *= 10
            continue
        logger.warning(f"Added jitter of {jitter:.3e} to the normal matrix.")
        return factor

    raise FactorizationError(
        f"Normal matrix not positive definite even with jitter {jitter:.3e}."
    ) from error


def lm_step(
    theta: np.ndarray,
    residual: np.ndarray,
    jacobian: np.ndarray,
    lam: float,
    penalty: np.ndarray | None = None,
) -> LmStep:
    """Solve (J^T J + P + lam I) delta = -(J^T r + P theta) and propose theta + delta.

    P = diag(penalty) adds the term sum(penalty * theta**2) to the loss; without it
    this is the plain step (J^T J + lam I) delta = -J^T r.

    Raises
    ------
    FactorizationError
        If the damped normal matrix cannot be factorised.
    """
    theta = np.asarray(theta, dtype=np.float64)
    if jacobian.shape != (residual.size, theta.size):
        raise ValueError(
            f"Jacobian of shape {jacobian.shape} does not match {residual.size} "
            f"residuals and {theta.size} parameters."
        )
    penalty = np.zeros_like(theta) if penalty is None else penalty

    gradient = jacobian.T @ residual + penalty * theta
    normal = jacobian.T @ jacobian
    normal[np.diag_indices_from(normal)] += penalty + lam

    delta = -cho_solve(_jittered_cholesky(normal), gradient)

    linear = residual + jacobian @ delta
    candidate = theta + delta
    predicted = float(
        residual @ residual
        + penalty @ (theta * theta)
        - linear @ linear
        - penalty @ (candidate * candidate)
    )

    return LmStep(candidate, delta, predicted)


def _evaluate(
    residual_and_jacobian: Callable[[np.ndarray], tuple[np.ndarray, np.ndarray]],
    theta: np.ndarray,
    snapshot: dict,
) -> tuple[np.ndarray, np.ndarray]:
    """Residual and Jacobian at theta, any failure turned into an abort."""
    try:
        r, jac = residual_and_jacobian(theta)
    except autodiff.EvaluationError as e:
        raise TrainingAbortedError(
            f"Residual not finite at iteration {snapshot['iteration']}: {e}",
            snapshot | {"point_index": e.index},
        ) from e

    if not (np.all(np.isfinite(r)) and np.all(np.isfinite(jac))):
        raise TrainingAbortedError(
            f"Residual not finite at iteration {snapshot['iteration']}.", snapshot
        )
    return r, jac


def levenberg_marquardt(  # noqa: PLR0913
    residual_and_jacobian: Callable[[np.ndarray], tuple[np.ndarray, np.ndarray]],
    residual: Callable[[np.ndarray], np.ndarray],
    theta0: np.ndarray,
    config: LmConfig,
    seed: int | None = None,
    penalty_mask: np.ndarray | None = None,
) -> tuple[np.ndarray, TrainReport]:
    """Minimise ||r(theta)||^2.

    With a `penalty_mask` the objective of iteration k is ||r||^2 + mu_k
    sum(theta[mask]**2), with mu_0 = `config.penalty` shrinking by
    `config.penalty_decay` after every accepted step. Acceptance compares the
    objective, while the stopping test, the report and the history use ||r||^2.

    Parameters
    ----------
    residual_and_jacobian
        Returns the residual and its Jacobian at theta.
    residual
        Returns just the residual at theta (used for trial steps).
    theta0
        Starting parameters.
    config
        Iteration settings.
    seed
        Recorded in the report.
    penalty_mask
        Boolean mask of the penalised parameters, none if not given.

    Returns
    -------
    theta
        The final parameters.
    report
        The training report.

    Raises
    ------
    TrainingAbortedError
        If the residual at an accepted point (or the start) is not finite.
    """
    start = time.perf_counter()
    theta = np.array(theta0, dtype=np.float64)

    mask = (
        np.zeros(theta.size)
        if penalty_mask is None
        else np.asarray(penalty_mask, dtype=np.float64)
    )
    mu = config.penalty if mask.any() else 0.0

    def _snapshot(iteration: int, value: float, lam: float) -> dict:
        return {
            "iteration": iteration,
            "loss": value,
            "lambda": lam,
            "penalty": mu,
            "theta_norm": float(np.linalg.norm(theta)),
        }

    lam = config.lambda_init
    r, jac = _evaluate(residual_and_jacobian, theta, _snapshot(0, np.nan, lam))
    current = float(r @ r)
    objective = current + mu * float(mask @ (theta * theta))

    history = [current]
    steps = []
    iteration = 0

    while True:
        if current < config.loss_tol:
            reason = StopReason.LOSS_TOL
            break
        if iteration >= config.max_iters:
            reason = StopReason.MAX_ITERS
            break
        iteration += 1

        accepted = None
        for _ in range(config.max_rejections + 1):
            trial_loss = trial_objective = np.inf
            try:
                step = lm_step(theta, r, jac, lam, mu * mask)
            except FactorizationError:
                step = None
            if step is not None and np.all(np.isfinite(step.candidate)):
                try:
                    trial = residual(step.candidate)
                except autodiff.EvaluationError as e:
                    logger.debug(f"Rejected a step with a non-finite residual: {e}")
                else:
                    trial_loss = float(trial @ trial)
                    trial_objective = trial_loss + mu * float(
                        mask @ (step.candidate * step.candidate)
                    )

            ok = bool(np.isfinite(trial_objective) and trial_objective < objective)
            steps.append(StepRecord(iteration, trial_loss, lam, ok))
            if ok:
                accepted = step
                break
            if lam * config.lambda_up > config.max_lambda:
                break
            lam *= config.lambda_up

        if accepted is None:
            reason = StopReason.STALLED
            break

        theta = accepted.candidate
        current = trial_loss
        history.append(current)
        lam = max(lam * config.lambda_down, config.min_lambda)
        mu *= config.penalty_decay
        logger.debug(
            f"Iteration {iteration}: loss={current:.6e} lambda={lam:.3e} penalty={mu:.3e}"
        )

        r, jac = _evaluate(
            residual_and_jacobian, theta, _snapshot(iteration, current, lam)
        )
        objective = current + mu * float(mask @ (theta * theta))

        step_norm = np.linalg.norm(accepted.delta)
        if step_norm <= config.step_tol * (1.0 + np.linalg.norm(theta)):
            reason = StopReason.STALLED
            break

    report = TrainReport(
        final_loss=current,
        iterations=iteration,
        stop_reason=reason,
        loss_history=history,
        seed=seed,
        wall_time=time.perf_counter() - start,
        steps=steps,
    )
    return theta, report


def train(
    problem: ProblemSpec,
    model: SolutionModel,
    colloc: CollocationSet,
    config: LmConfig | None = None,
    epsilon: float | None = None,
) -> TrainReport:
    """Fit the model to the problem on fixed collocation points.

    The model parameters are updated in place. The hidden weights and biases of the
    singular blocks are penalised as set by `config`, which keeps the switching
    points of the singular neurons within a few epsilon of their boundary piece.

    Parameters
    ----------
    problem
        The problem to solve.
    model
        The model to train.
    colloc
        The collocation points, held fixed.
    config
        Iteration settings, defaults if not given.
    epsilon
        Perturbation parameter, the model's own if not given.

    Returns
    -------
    report
        The training report.
    """
    config = config or LmConfig()
    eps = model.epsilon if epsilon is None else epsilon

    def _residual_and_jacobian(theta: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        model.set_theta(theta)
        rj = autodiff.assemble_residual_jacobian(problem, model, colloc, eps)
        return rj.residual, rj.jacobian

    def _residual(theta: np.ndarray) -> np.ndarray:
        model.set_theta(theta)
        return loss.build_residual(problem, model, colloc, eps).entries

    theta, report = levenberg_marquardt(
        _residual_and_jacobian,
        _residual,
        model.get_theta(),
        config,
        seed=colloc.seed,
        penalty_mask=network.singular_hidden_mask(model),
    )
    model.set_theta(theta)

    logger.info(
        f"Trained {problem.id} at eps={eps:g}: loss={report.final_loss:.3e} after "
        f"{report.iterations} iterations ({report.stop_reason.value}, "
        f"{report.wall_time:.1f}s)."
    )
    return report


def write_history_csv(filename: str | Path, report: TrainReport, header: str) -> None:
    """Write every proposal: iteration, loss, lambda, accepted flag."""
    with Path(filename).open("w", newline="") as fh:
        fh.write(header + "\n")
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["iteration", "loss", "lambda", "accepted"])
        for s in report.steps:
            writer.writerow([s.iteration, s.loss, s.lam, int(s.accepted)])
