"""Test the weighted residual and the loss."""

import dataclasses
import math

import numpy as np
import pytest

from wlpinn import autodiff, loss, network, problems, sampling
from wlpinn.network import InitConfig
from wlpinn.sampling import CollocationSet, SamplingCounts


def _model(problem, eps=0.1, hidden=4, seed=0):
    return network.build_model(
        problem.geometry,
        problem.n_components,
        hidden,
        problem.domain.level_sets(),
        eps,
        InitConfig(seed),
    )


def test_zero_model_example2():
    """With u = 0 only the boundary value g(1) = 1 contributes."""
    problem = problems.get_problem("ex2")
    model = _model(problem)
    model.set_theta(np.zeros(model.n_params))
    colloc = sampling.sample_collocation(problem, 0.1, SamplingCounts(10, 10, 2), 0)

    res = loss.build_residual(problem, model, colloc, 0.1)

    assert res.n_interior == 30
    assert res.n_boundary == 2
    assert np.all(res.interior == 0)
    assert loss.loss_value(res) == pytest.approx(0.5)


def test_midline_weight():
    """Interior rows of Example 1 at x = 0.5 carry sqrt(0.25 / m)."""
    problem = problems.get_problem("ex1")
    interior = np.array([[0.5], [0.3]])
    colloc = CollocationSet(
        interior=interior,
        layer=np.zeros((0, 1)),
        boundary=np.array([[0.0], [1.0]]),
        weights=problems.weight(problem, interior),
        sigma_std=0.1,
        seed=0,
    )
    model = _model(problem)

    res = loss.build_residual(problem, model, colloc, 0.1)

    jet = autodiff.eval_solution_jet(model, interior, 0.1)
    raw = problems.residual(problem, jet, interior, 0.1)[:, 0]
    np.testing.assert_allclose(
        colloc.interior_scale, [np.sqrt(0.25 / 2), np.sqrt(0.09 / 2)]
    )
    np.testing.assert_allclose(res.interior, raw * colloc.interior_scale, rtol=1e-14)


def test_row_layout():
    """Interior rows are point-major, then the boundary rows."""
    problem = problems.get_problem("ex6")
    model = _model(problem, seed=3)
    colloc = sampling.sample_collocation(problem, 0.1, SamplingCounts(3, 2, 5), 1)

    res = loss.build_residual(problem, model, colloc, 0.1)

    assert res.entries.shape == (2 * colloc.m + 2 * colloc.m_b,)
    u_b = network.forward(model, colloc.boundary, 0.1)
    expected = (u_b - problem.boundary_value(colloc.boundary, 0.1)) * np.sqrt(1 / 5)
    np.testing.assert_allclose(res.boundary, expected.ravel())


def test_loss_value():
    """The loss is the squared norm of the residual entries."""
    assert loss.loss_value(np.zeros(5)) == 0.0
    assert loss.loss_value(np.eye(4)[1]) == 1.0

    entries = np.random.default_rng(0).normal(size=10_000) * np.logspace(-8, 2, 10_000)
    expected = math.fsum(float(e) ** 2 for e in entries)
    assert loss.loss_value(entries) == pytest.approx(expected, rel=1e-13)

    shuffled = np.random.default_rng(1).permutation(entries)
    assert loss.loss_value(shuffled) == pytest.approx(loss.loss_value(entries), rel=1e-13)


def test_weight_scaling():
    """Scaling the weights by c**2 scales only the interior rows by c."""
    problem = problems.get_problem("ex4")
    model = _model(problem, seed=2)
    colloc = sampling.sample_collocation(problem, 0.1, SamplingCounts(6, 3, 6), 2)
    scaled = dataclasses.replace(colloc, weights=9.0 * colloc.weights)

    base = loss.build_residual(problem, model, colloc, 0.1)
    heavy = loss.build_residual(problem, model, scaled, 0.1)

    np.testing.assert_allclose(heavy.interior, 3.0 * base.interior, rtol=1e-14)
    np.testing.assert_array_equal(heavy.boundary, base.boundary)


@pytest.mark.parametrize("problem_id", ["ex1", "ex2", "ex3", "ex4", "ex5", "ex6"])
def test_exact_solution_has_tiny_loss(problem_id):
    """The closed form gives a loss below 1e-14 at eps = 0.1."""
    problem = problems.get_problem(problem_id)
    eps = 0.1
    colloc = sampling.sample_collocation(problem, eps, rng_seed=0)

    points = colloc.residual_points
    jet = problems.exact_solution_jet(problem, points, eps)
    interior = problems.residual(problem, jet, points, eps) * colloc.interior_scale[:, None]
    boundary = (
        problems.exact_solution(problem, colloc.boundary, eps)
        - problem.boundary_value(colloc.boundary, eps)
    ) * colloc.boundary_scale

    assert loss.loss_value(np.concatenate([interior.ravel(), boundary.ravel()])) <= 1e-14


def test_hidden_right_step_is_seen_by_transition_points():
    """A step just beyond the right layer window is only seen by transition points."""
    problem = problems.get_problem("ex1")
    eps = 1e-6
    model = _model(problem, eps=eps, hidden=1)
    model.set_theta(np.zeros(model.n_params))
    # u = 1 - sigmoid((1 - x) / eps - 15), a jump from 0 to 1 about 15 eps from x = 1
    model.blocks["r"].output_weights[:] = 2.0
    model.blocks["R"].hidden_weights[:] = -1.0
    model.blocks["R"].hidden_biases[:] = -15.0
    model.blocks["R"].output_weights[:] = -1.0

    plain = sampling.sample_collocation(problem, eps, SamplingCounts(20, 20, 2), 5)
    bridged = sampling.sample_collocation(
        problem, eps, SamplingCounts(20, 20, 2, transition_per_side=40), 5
    )

    assert loss.loss_value(loss.build_residual(problem, model, plain, eps)) < 1e-11
    assert loss.loss_value(loss.build_residual(problem, model, bridged, eps)) > 1e-6
