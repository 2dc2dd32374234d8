"""The weighted least-squares residual whose squared norm is the training loss."""

import logging
from dataclasses import dataclass

import numpy as np

from . import autodiff, network
from .network import SolutionModel
from .problems import ProblemSpec
from .sampling import CollocationSet

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class WeightedResidual:
    """Residual entries, interior rows (point-major) then boundary rows.

    Attributes
    ----------
    entries
        The residual vector, length n m + n m_b.
    n_interior
        Number of PDE residual rows.
    n_boundary
        Number of boundary rows.
    """

    entries: np.ndarray
    n_interior: int
    n_boundary: int

    @property
    def interior(self) -> np.ndarray:
        return self.entries[: self.n_interior]

    @property
    def boundary(self) -> np.ndarray:
        return self.entries[self.n_interior :]


def build_residual(
    problem: ProblemSpec,
    model: SolutionModel,
    colloc: CollocationSet,
    epsilon: float,
) -> WeightedResidual:
    """Evaluate the weighted residual of a model.

    Interior rows are sqrt(w(x_i) / m) (L_eps u - f)(x_i) for every component, boundary
    rows sqrt(1 / m_b) (u - g)(x_b). Layer points count as interior points.

    Parameters
    ----------
    problem
        The problem being solved.
    model
        The current model.
    colloc
        The collocation points.
    epsilon
        Perturbation parameter.

    Returns
    -------
    residual
        The weighted residual vector.
    """
    points = colloc.residual_points
    jet = autodiff.eval_solution_jet(model, points, epsilon)
    interior = problem.operator.residual(jet, points, epsilon)
    interior = interior * colloc.interior_scale[:, None]

    boundary = network.forward(model, colloc.boundary, epsilon)
    boundary = (
        boundary - problem.boundary_value(colloc.boundary, epsilon)
    ) * colloc.boundary_scale

    return WeightedResidual(
        np.concatenate([interior.ravel(), boundary.ravel()]),
        interior.size,
        boundary.size,
    )


def loss_value(residual: WeightedResidual | np.ndarray) -> float:
    """The loss, the squared Euclidean norm of the residual."""
    entries = residual.entries if isinstance(residual, WeightedResidual) else residual
    entries = np.asarray(entries, dtype=np.float64)
    return float(np.dot(entries, entries))
