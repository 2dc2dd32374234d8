"""Test the Levenberg-Marquardt solver."""

import logging

import numpy as np
import pytest

from wlpinn import autodiff, loss, network, optimizer, problems, sampling, util
from wlpinn.network import InitConfig
from wlpinn.optimizer import (
    FactorizationError,
    LmConfig,
    StopReason,
    TrainingAbortedError,
)
from wlpinn.sampling import SamplingCounts

# A well conditioned integer system with an exactly representable solution
A = np.array(
    [
        [2, 0, 0, 0],
        [0, 2, 0, 0],
        [0, 0, 2, 0],
        [0, 0, 0, 2],
        [1, 1, 0, 0],
        [0, 1, 1, 0],
        [0, 0, 1, 1],
        [1, 0, 0, 1],
    ],
    dtype=np.float64,
)
THETA_STAR = np.array([1.0, -2.0, 3.0, 0.5])
B = A @ THETA_STAR


def _affine(theta):
    return A @ theta - B


def _affine_with_jacobian(theta):
    return _affine(theta), A.copy()


def _rosenbrock(theta):
    return np.array([10.0 * (theta[1] - theta[0] ** 2), 1.0 - theta[0]])


def _rosenbrock_with_jacobian(theta):
    jac = np.array([[-20.0 * theta[0], 10.0], [-1.0, 0.0]])
    return _rosenbrock(theta), jac


def test_identity_step():
    """J = I, r = e1 and lambda = 1 give delta = -e1 / 2."""
    step = optimizer.lm_step(np.zeros(3), np.eye(3)[0], np.eye(3), 1.0)

    np.testing.assert_allclose(step.delta, [-0.5, 0.0, 0.0])
    np.testing.assert_allclose(step.candidate, [-0.5, 0.0, 0.0])
    # |r|^2 - |r + J delta|^2 = 1 - 1/4
    assert step.predicted_reduction == pytest.approx(0.75)


def test_undamped_step_is_least_squares():
    """Without damping one step lands on the least-squares solution."""
    rng = np.random.default_rng(0)
    jac = rng.normal(size=(20, 5))
    target = rng.normal(size=20)
    theta0 = rng.normal(size=5)

    step = optimizer.lm_step(theta0, jac @ theta0 - target, jac, 0.0)

    expected, *_ = np.linalg.lstsq(jac, target, rcond=None)
    np.testing.assert_allclose(step.candidate, expected, rtol=1e-10)


def test_heavy_damping_bound():
    """A large lambda gives a short gradient step."""
    rng = np.random.default_rng(1)
    jac = rng.normal(size=(10, 4))
    r = rng.normal(size=10)
    lam = 1e8

    step = optimizer.lm_step(np.zeros(4), r, jac, lam)

    assert np.linalg.norm(step.delta) <= np.linalg.norm(jac.T @ r) / lam
    np.testing.assert_allclose(step.delta, -jac.T @ r / lam, rtol=1e-6)


def test_penalised_step_is_augmented_least_squares():
    """The penalised step solves the stacked least-squares problem."""
    rng = np.random.default_rng(4)
    theta = rng.normal(size=4)
    penalty = np.array([0.0, 0.5, 0.0, 2.0])
    lam = 0.1

    step = optimizer.lm_step(theta, _affine(theta), A, lam, penalty)

    stacked = np.vstack([A, np.diag(np.sqrt(penalty)), np.sqrt(lam) * np.eye(4)])
    rhs = np.concatenate([-_affine(theta), -np.sqrt(penalty) * theta, np.zeros(4)])
    expected = np.linalg.lstsq(stacked, rhs, rcond=None)[0]
    np.testing.assert_allclose(step.delta, expected, rtol=1e-10, atol=1e-12)

    # For an affine residual the prediction is exact
    def objective(t):
        return float(_affine(t) @ _affine(t) + penalty @ (t * t))

    assert step.predicted_reduction == pytest.approx(
        objective(theta) - objective(step.candidate), rel=1e-10
    )


def test_step_shape_mismatch():
    """A Jacobian of the wrong shape is rejected."""
    with pytest.raises(ValueError, match="does not match"):
        optimizer.lm_step(np.zeros(3), np.zeros(4), np.zeros((4, 2)), 1.0)


def test_singular_normal_matrix_gets_jitter(caplog):
    """A singular undamped system is regularised with a warning."""
    with caplog.at_level(logging.WARNING, logger="wlpinn.optimizer"):
        step = optimizer.lm_step(np.zeros(2), np.array([1.0]), np.array([[1.0, 1.0]]), 0.0)

    assert np.all(np.isfinite(step.candidate))
    assert "jitter" in caplog.text


def test_unfactorisable_matrix():
    """Non-finite or zero normal matrices cannot be factorised."""
    jac = np.array([[np.nan, 1.0], [0.0, 1.0]])
    with pytest.raises(FactorizationError):
        optimizer.lm_step(np.zeros(2), np.ones(2), jac, 1.0)

    with pytest.raises(FactorizationError):
        optimizer.lm_step(np.zeros(2), np.ones(2), np.zeros((2, 2)), 0.0)

    assert issubclass(FactorizationError, np.linalg.LinAlgError)


def test_affine_residual_converges():
    """An affine residual is solved to rounding within five iterations."""
    config = LmConfig(loss_tol=1e-28, max_iters=20)

    theta, report = optimizer.levenberg_marquardt(
        _affine_with_jacobian, _affine, np.zeros(4), config
    )

    assert report.final_loss <= 1e-28
    assert min(report.loss_history[:6]) <= 1e-28
    np.testing.assert_allclose(theta, THETA_STAR, rtol=1e-10)


def test_nonlinear_residual_converges():
    """The Rosenbrock residual is driven to its zero at (1, 1)."""
    theta, report = optimizer.levenberg_marquardt(
        _rosenbrock_with_jacobian, _rosenbrock, np.array([-1.2, 1.0]), LmConfig(), seed=7
    )

    assert report.stop_reason is StopReason.LOSS_TOL
    assert report.final_loss < 1e-15
    assert report.seed == 7
    np.testing.assert_allclose(theta, [1.0, 1.0], atol=1e-7)


def test_history_and_damping_invariants():
    """Accepted losses decrease and the damping moves as prescribed."""
    config = LmConfig()
    _, report = optimizer.levenberg_marquardt(
        _rosenbrock_with_jacobian, _rosenbrock, np.array([-1.2, 1.0]), config
    )

    history = np.array(report.loss_history)
    assert np.all(np.diff(history) < 0)
    assert len(history) == report.iterations + 1

    for prev, step in zip(report.steps, report.steps[1:], strict=False):
        assert config.min_lambda <= step.lam <= config.max_lambda
        if not prev.accepted and step.iteration == prev.iteration:
            assert step.lam > prev.lam


def test_zero_iterations():
    """max_iters = 0 returns the initial state."""
    theta, report = optimizer.levenberg_marquardt(
        _affine_with_jacobian, _affine, np.zeros(4), LmConfig(max_iters=0)
    )

    assert report.iterations == 0
    assert report.stop_reason is StopReason.MAX_ITERS
    assert report.loss_history == [float(B @ B)]
    assert np.all(theta == 0)


def test_stalls_without_descent():
    """A problem at its minimum with positive loss stalls."""

    def residual(theta):
        return np.array([theta[0], 1.0])

    def residual_and_jacobian(theta):
        return residual(theta), np.array([[1.0], [0.0]])

    _, report = optimizer.levenberg_marquardt(
        residual_and_jacobian, residual, np.zeros(1), LmConfig(max_rejections=5)
    )

    assert report.stop_reason is StopReason.STALLED
    assert report.final_loss == 1.0
    assert sum(not s.accepted for s in report.steps) == 6


def test_non_finite_initial_loss():
    """A non-finite starting loss aborts with a snapshot."""

    def residual(theta):
        return np.array([np.inf])

    with pytest.raises(TrainingAbortedError) as excinfo:
        optimizer.levenberg_marquardt(
            lambda t: (residual(t), np.ones((1, 1))), residual, np.zeros(1), LmConfig()
        )
    assert excinfo.value.snapshot["iteration"] == 0


@pytest.mark.parametrize(
    "kwargs",
    [
        {"lambda_up": 0.5},
        {"lambda_down": 1.5},
        {"loss_tol": 0.0},
        {"lambda_init": 1e20},
        {"max_iters": -1},
        {"penalty": -1.0},
        {"penalty_decay": 0.0},
        {"penalty_decay": 1.5},
    ],
)
def test_invalid_config(kwargs):
    """Inconsistent settings are rejected."""
    with pytest.raises(ValueError):
        LmConfig(**kwargs)


def _small_setup(problem_id="ex2", eps=0.1, hidden=5):
    problem = problems.get_problem(problem_id)
    model = network.build_model(
        problem.geometry,
        problem.n_components,
        hidden,
        problem.domain.level_sets(),
        eps,
        InitConfig(1),
    )
    colloc = sampling.sample_collocation(problem, eps, SamplingCounts(20, 10, 8), 1)
    return problem, model, colloc


def test_gradient_consistency():
    """2 J^T r matches a finite-difference gradient of the loss."""
    problem, model, colloc = _small_setup("ex1")
    theta = model.get_theta()

    rj = autodiff.assemble_residual_jacobian(problem, model, colloc, 0.1)
    gradient = 2.0 * rj.jacobian.T @ rj.residual

    for j in range(0, model.n_params, 3):
        h = 1e-6 * max(1.0, abs(theta[j]))
        step = np.zeros_like(theta)
        step[j] = h
        model.set_theta(theta + step)
        plus = loss.loss_value(loss.build_residual(problem, model, colloc, 0.1))
        model.set_theta(theta - step)
        minus = loss.loss_value(loss.build_residual(problem, model, colloc, 0.1))
        assert gradient[j] == pytest.approx((plus - minus) / (2 * h), rel=1e-4, abs=1e-9)


def test_train_updates_model():
    """Training lowers the loss and writes the parameters back."""
    problem, model, colloc = _small_setup()
    before = model.get_theta()
    initial = loss.loss_value(loss.build_residual(problem, model, colloc, 0.1))

    report = optimizer.train(problem, model, colloc, LmConfig(max_iters=30))

    assert report.final_loss < initial
    assert report.loss_history[0] == pytest.approx(initial, rel=1e-12)
    assert report.seed == 1
    assert not np.array_equal(model.theta, before)
    assert loss.loss_value(
        loss.build_residual(problem, model, colloc, 0.1)
    ) == pytest.approx(report.final_loss, rel=1e-10)


def test_train_is_reproducible():
    """Identical inputs give identical loss histories."""
    histories = []
    for _ in range(2):
        problem, model, colloc = _small_setup("ex4", hidden=3)
        report = optimizer.train(problem, model, colloc, LmConfig(max_iters=10))
        histories.append(report.loss_history)

    assert histories[0] == histories[1]


def test_write_history_csv(tmp_path):
    """Every proposal becomes one row."""
    _, report = optimizer.levenberg_marquardt(
        _rosenbrock_with_jacobian, _rosenbrock, np.array([-1.2, 1.0]), LmConfig()
    )
    filename = tmp_path / "history.csv"

    optimizer.write_history_csv(filename, report, util.header_line("0" * 12, 3))

    lines = filename.read_text().splitlines()
    assert lines[0] == f"# wlpinn {util.__version__} config_hash={'0' * 12} seed=3"
    assert lines[1] == "iteration,loss,lambda,accepted"
    assert len(lines) == 2 + len(report.steps)


def _underdetermined(theta):
    return np.array([theta[0] + theta[1] - 1.0])


def test_penalty_selects_among_minimisers():
    """A penalised parameter is driven to zero, an unpenalised one is left alone."""

    def residual_and_jacobian(theta):
        return _underdetermined(theta), np.ones((1, 2))

    theta0 = np.array([0.0, 0.5])

    theta, report = optimizer.levenberg_marquardt(
        residual_and_jacobian, _underdetermined, theta0, LmConfig()
    )
    assert report.final_loss < 1e-15
    assert theta[1] > 0.1

    config = LmConfig(penalty=1e-2, penalty_decay=1.0, loss_tol=1e-30, max_iters=50)
    theta, report = optimizer.levenberg_marquardt(
        residual_and_jacobian,
        _underdetermined,
        theta0,
        config,
        penalty_mask=np.array([False, True]),
    )
    np.testing.assert_allclose(theta, [1.0, 0.0], atol=1e-8)
    # The history tracks the data term only
    assert report.final_loss == pytest.approx(_underdetermined(theta)[0] ** 2)


def test_evaluation_failure_aborts_with_snapshot():
    """An unevaluable residual at the start aborts, keeping the cause."""

    def residual_and_jacobian(theta):
        raise autodiff.EvaluationError("Non-finite PDE residual at point 3.", 3)

    with pytest.raises(TrainingAbortedError) as excinfo:
        optimizer.levenberg_marquardt(
            residual_and_jacobian, _affine, np.zeros(4), LmConfig()
        )

    assert isinstance(excinfo.value.__cause__, autodiff.EvaluationError)
    assert excinfo.value.snapshot["iteration"] == 0
    assert excinfo.value.snapshot["point_index"] == 3


def test_unevaluable_trial_step_is_rejected():
    """A trial point whose residual cannot be evaluated counts as a rejection."""
    calls = []

    def residual(theta):
        calls.append(theta)
        if len(calls) == 1:
            raise autodiff.EvaluationError("Non-finite PDE residual at point 0.", 0)
        return _affine(theta)

    theta, report = optimizer.levenberg_marquardt(
        _affine_with_jacobian, residual, np.zeros(4), LmConfig()
    )

    assert not report.steps[0].accepted
    assert report.steps[0].loss == np.inf
    assert report.steps[1].accepted
    np.testing.assert_allclose(theta, THETA_STAR, atol=1e-6)


def test_train_aborts_on_overflowing_model():
    """Training a model whose layer block overflows raises TrainingAbortedError."""
    problem, model, colloc = _small_setup("ex1", eps=1e-6, hidden=3)
    model.blocks["L"].output_weights[:] = 1e300

    with pytest.raises(TrainingAbortedError) as excinfo:
        optimizer.train(problem, model, colloc, LmConfig(max_iters=5))

    assert isinstance(excinfo.value.__cause__, autodiff.EvaluationError)
    assert excinfo.value.snapshot["iteration"] == 0
