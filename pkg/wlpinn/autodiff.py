"""Forward-mode second-order derivatives of the decomposed solution networks.

A `Jet2` carries a value together with its first and second derivative along one
fixed direction. Pushing coordinate jets seeded along each axis through a model
gives u, its gradient and its Laplacian exactly (no cross derivatives are ever
needed). Differentiating the jets once more with respect to the trainable
parameters gives the exact Jacobian of the weighted residual vector used by the
Levenberg-Marquardt solver.

All fields are numpy arrays so a whole batch of points is carried at once; a
trailing parameter axis is appended for parameter tangents.
"""

from __future__ import annotations

import logging
from collections.abc import Callable, Sequence
from dataclasses import dataclass
from typing import TYPE_CHECKING

import numpy as np
from scipy.special import expit

if TYPE_CHECKING:
    from .network import MlpBlock, SolutionModel
    from .problems import ProblemSpec
    from .sampling import CollocationSet

logger = logging.getLogger(__name__)


class DimensionError(ValueError):
    """Inputs do not match the dimension a block or model expects."""


class EvaluationError(ValueError):
    """A model or operator could not be evaluated at the requested points."""

    def __init__(self, message: str, index: int | None = None) -> None:
        super().__init__(message)
        self.index = index


@dataclass(frozen=True)
class Jet2:
    """Value with first and second directional derivatives.

    Attributes
    ----------
    value
        The function value.
    d1
        First derivative along the seeded direction.
    d2
        Second derivative along the same direction.
    """

    value: np.ndarray
    d1: np.ndarray
    d2: np.ndarray

    # numpy scalars and arrays defer to the reflected operators below
    __array_ufunc__ = None

    @classmethod
    def constant(cls, value: np.ndarray | float) -> Jet2:
        """Lift a constant, both derivatives vanish."""
        value = np.asarray(value, dtype=np.float64)
        zero = np.zeros_like(value)
        return cls(value, zero, zero)

    @classmethod
    def seed(cls, value: np.ndarray | float, direction: float = 1.0) -> Jet2:
        """Lift a coordinate whose derivative along the direction is `direction`."""
        value = np.asarray(value, dtype=np.float64)
        return cls(value, np.full_like(value, direction), np.zeros_like(value))

    @staticmethod
    def stack(jets: Sequence[Jet2], axis: int = -1) -> Jet2:
        """Stack jets into one jet with a new axis."""
        return Jet2(
            np.stack([j.value for j in jets], axis=axis),
            np.stack([j.d1 for j in jets], axis=axis),
            np.stack([j.d2 for j in jets], axis=axis),
        )

    @staticmethod
    def concatenate(jets: Sequence[Jet2], axis: int = -1) -> Jet2:
        """Join jets along an existing axis."""
        return Jet2(
            np.concatenate([j.value for j in jets], axis=axis),
            np.concatenate([j.d1 for j in jets], axis=axis),
            np.concatenate([j.d2 for j in jets], axis=axis),
        )

    @staticmethod
    def where(condition: np.ndarray, a: Jet2, b: Jet2) -> Jet2:
        """Select entries of `a` where `condition` holds and of `b` elsewhere."""
        return Jet2(
            np.where(condition, a.value, b.value),
            np.where(condition, a.d1, b.d1),
            np.where(condition, a.d2, b.d2),
        )

    def expand(self, axis: int = -1) -> Jet2:
        """Insert a unit axis for broadcasting against parameter tangents."""
        return Jet2(
            np.expand_dims(self.value, axis),
            np.expand_dims(self.d1, axis),
            np.expand_dims(self.d2, axis),
        )

    def __getitem__(self, index: object) -> Jet2:
        return Jet2(self.value[index], self.d1[index], self.d2[index])

    def __add__(self, other: Jet2 | float | np.ndarray) -> Jet2:
        if isinstance(other, Jet2):
            return Jet2(self.value + other.value, self.d1 + other.d1, self.d2 + other.d2)
        return Jet2(self.value + other, self.d1, self.d2)

    __radd__ = __add__

    def __neg__(self) -> Jet2:
        return Jet2(-self.value, -self.d1, -self.d2)

    def __sub__(self, other: Jet2 | float | np.ndarray) -> Jet2:
        return self + (-other)

    def __rsub__(self, other: float | np.ndarray) -> Jet2:
        return (-self) + other

    def __mul__(self, other: Jet2 | float | np.ndarray) -> Jet2:
        if isinstance(other, Jet2):
            return Jet2(
                self.value * other.value,
                self.d1 * other.value + self.value * other.d1,
                self.d2 * other.value
                + 2.0 * self.d1 * other.d1
                + self.value * other.d2,
            )
        return Jet2(self.value * other, self.d1 * other, self.d2 * other)

    __rmul__ = __mul__

    def __truediv__(self, other: Jet2 | float | np.ndarray) -> Jet2:
        if isinstance(other, Jet2):
            return self * other.reciprocal()
        return self * (1.0 / np.asarray(other, dtype=np.float64))

    def __rtruediv__(self, other: float | np.ndarray) -> Jet2:
        return self.reciprocal() * other

    def __pow__(self, power: float) -> Jet2:
        v = self.value
        return self.compose(
            v**power, power * v ** (power - 1), power * (power - 1) * v ** (power - 2)
        )

    def __abs__(self) -> Jet2:
        sign = np.sign(self.value)
        return Jet2(np.abs(self.value), sign * self.d1, sign * self.d2)

    def compose(self, f0: np.ndarray, f1: np.ndarray, f2: np.ndarray) -> Jet2:
        """Apply a scalar map given its value and derivatives at `self.value`."""
        return Jet2(f0, f1 * self.d1, f2 * self.d1**2 + f1 * self.d2)

    def compose_tangent(
        self, tangent: Jet2, f1: np.ndarray, f2: np.ndarray, f3: np.ndarray
    ) -> Jet2:
        """Linearise `self.compose(h(v), h'(v), h''(v))` in the direction `tangent`.

        Parameters
        ----------
        tangent
            Perturbation of this jet (value, d1 and d2 perturbed together).
        f1, f2, f3
            First three derivatives of the scalar map at `self.value`.
        """
        return Jet2(
            f1 * tangent.value,
            f2 * tangent.value * self.d1 + f1 * tangent.d1,
            f3 * tangent.value * self.d1**2
            + 2.0 * f2 * self.d1 * tangent.d1
            + f2 * tangent.value * self.d2
            + f1 * tangent.d2,
        )

    def reciprocal(self) -> Jet2:
        inv = 1.0 / self.value
        return self.compose(inv, -(inv**2), 2.0 * inv**3)

    def exp(self) -> Jet2:
        e = np.exp(self.value)
        return self.compose(e, e, e)

    def log(self) -> Jet2:
        inv = 1.0 / self.value
        return self.compose(np.log(self.value), inv, -(inv**2))

    def sqrt(self) -> Jet2:
        s = np.sqrt(self.value)
        # The derivatives blow up at zero; only the value is meaningful there
        with np.errstate(divide="ignore", invalid="ignore"):
            return self.compose(s, 0.5 / s, -0.25 / s**3)

    def sigmoid(self) -> Jet2:
        s0, s1, s2, _ = sigmoid_derivatives(self.value)
        return self.compose(s0, s1, s2)


@dataclass(frozen=True)
class SolutionJet:
    """Values and spatial derivatives of an n-component field at a batch of points.

    Attributes
    ----------
    u
        Values, shape (N, n).
    grad_u
        First derivatives, shape (N, n, d).
    lap_u
        Laplacian per component, shape (N, n). In 1D this is u''.

    When used as a parameter tangent every field gains a trailing axis of length p.
    """

    u: np.ndarray
    grad_u: np.ndarray
    lap_u: np.ndarray

    def squeeze(self) -> SolutionJet:
        """Drop the leading point axis of a single-point jet."""
        return SolutionJet(self.u[0], self.grad_u[0], self.lap_u[0])


@dataclass(frozen=True)
class ResidualJacobian:
    """The weighted residual vector and its exact parameter Jacobian.

    Row layout: interior rows first (point-major, component-minor), then the
    boundary rows in the same order. Columns follow the flat parameter vector.
    """

    residual: np.ndarray
    jacobian: np.ndarray

    @property
    def shape(self) -> tuple[int, int]:
        return self.jacobian.shape


def sigmoid_derivatives(
    x: np.ndarray,
) -> tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
    """The logistic sigmoid and its first three derivatives."""
    s0 = expit(x)
    s1 = s0 * (1.0 - s0)
    s2 = s1 * (1.0 - 2.0 * s0)
    s3 = s1 * (1.0 - 6.0 * s0 + 6.0 * s0**2)
    return s0, s1, s2, s3


def as_points(point: np.ndarray | Sequence[float] | float, dim: int) -> tuple[np.ndarray, bool]:
    """Normalise a point or batch of points to shape (N, dim).

    Returns
    -------
    points
        The points as a float64 array of shape (N, dim).
    single
        Whether a single point was passed (so results should be squeezed).
    """
    arr = np.asarray(point, dtype=np.float64)
    single = arr.ndim <= 1 and (arr.size == dim)
    if arr.ndim == 0 or (arr.ndim == 1 and dim == 1 and not single):
        arr = arr.reshape(-1, 1)
    elif single:
        arr = arr.reshape(1, dim)

    if arr.ndim != 2 or arr.shape[1] != dim:
        raise DimensionError(
            f"Expected points of dimension {dim}, got array of shape {arr.shape}."
        )

    bad = np.flatnonzero(~np.isfinite(arr).all(axis=1))
    if bad.size:
        raise EvaluationError(f"Non-finite coordinates at point {bad[0]}.", int(bad[0]))

    return arr, single


def check_epsilon(epsilon: float) -> None:
    """Raise unless the perturbation parameter is positive and finite."""
    if not (np.isfinite(epsilon) and epsilon > 0):
        raise EvaluationError(f"epsilon must be positive, got {epsilon}.")


def seed_coordinates(points: np.ndarray, axis: int | None) -> list[Jet2]:
    """Coordinate jets for a pass along `axis` (None gives constant jets)."""
    return [
        Jet2.seed(points[:, k], 1.0 if k == axis else 0.0)
        for k in range(points.shape[1])
    ]


def _block_input(block: MlpBlock, inputs: Jet2 | Sequence[Jet2]) -> Jet2:
    z = inputs if isinstance(inputs, Jet2) else Jet2.stack(list(inputs), axis=-1)

    actual = z.value.shape[-1] if z.value.ndim else 1
    if actual != block.input_dim:
        raise DimensionError(
            f"Block {block.name!r} expects {block.input_dim} inputs, got {actual}."
        )
    return z


def _hidden_jet(block: MlpBlock, z: Jet2) -> tuple[Jet2, tuple[np.ndarray, ...]]:
    w = block.hidden_weights
    a = Jet2(z.value @ w.T + block.hidden_biases, z.d1 @ w.T, z.d2 @ w.T)
    return a, sigmoid_derivatives(a.value)


def _output_jet(block: MlpBlock, s: Jet2) -> Jet2:
    v = block.output_weights
    return Jet2(s.value @ v.T, s.d1 @ v.T, s.d2 @ v.T)


def jet2_block_forward(block: MlpBlock, inputs: Jet2 | Sequence[Jet2]) -> Jet2:
    """Push jets through one sigmoid block.

    Parameters
    ----------
    block
        The block to evaluate.
    inputs
        Either a jet whose trailing axis has length `block.input_dim`, or a
        sequence of that many jets sharing one direction.

    Returns
    -------
    out
        Jet with trailing axis of length `block.output_dim`.
    """
    z = _block_input(block, inputs)
    a, sig = _hidden_jet(block, z)
    return _output_jet(block, a.compose(*sig[:3]))


def jet2_block_tangents(
    block: MlpBlock, inputs: Jet2 | Sequence[Jet2]
) -> tuple[Jet2, Jet2]:
    """Block output jets and their derivatives with respect to the block parameters.

    The block inputs never depend on the parameters, so the tangent of the hidden
    pre-activation is the input jet for a hidden weight, a unit constant for a bias,
    and zero for an output weight.

    Returns
    -------
    out
        Output jet, trailing axis `output_dim`.
    tangents
        Parameter tangents with trailing axes (`output_dim`, `n_params`), columns in
        the block's flat parameter order.
    """
    z = _block_input(block, inputs)
    a, (s0, s1, s2, s3) = _hidden_jet(block, z)
    s = a.compose(s0, s1, s2)
    out = _output_jet(block, s)
    v = block.output_weights
    lead = a.value.shape[:-1]
    h, n_in, n_out = block.hidden, block.input_dim, block.output_dim

    # Hidden weights W[h, i]: d a_h = z_i
    ts_w = a.expand(-1).compose_tangent(
        z.expand(-2), s1[..., None], s2[..., None], s3[..., None]
    )
    # Hidden biases b[h]: d a_h = 1
    ts_b = a.compose_tangent(Jet2.constant(np.ones_like(a.value)), s1, s2, s3)
    eye = np.eye(n_out)

    def _tangent(field: str) -> np.ndarray:
        tw = np.einsum("kh,...hi->...khi", v, getattr(ts_w, field))
        tb = np.einsum("kh,...h->...kh", v, getattr(ts_b, field))
        tv = np.einsum("kl,...h->...klh", eye, getattr(s, field))
        return np.concatenate(
            [
                tw.reshape(*lead, n_out, h * n_in),
                tb,
                tv.reshape(*lead, n_out, n_out * h),
            ],
            axis=-1,
        )

    return out, Jet2(_tangent("value"), _tangent("d1"), _tangent("d2"))


def model_jet(model: SolutionModel, coords: Sequence[Jet2], epsilon: float) -> Jet2:
    """The decomposed solution as a jet, given coordinate jets."""
    inputs = model.block_inputs(coords, epsilon)
    outputs = {
        name: jet2_block_forward(block, inputs[name])
        for name, block in model.blocks.items()
    }
    return model.combine(outputs)


def model_tangents(
    model: SolutionModel, coords: Sequence[Jet2], epsilon: float
) -> tuple[Jet2, Jet2]:
    """The solution jet and its tangents with respect to the full parameter vector."""
    inputs = model.block_inputs(coords, epsilon)
    outputs, tangents = {}, {}
    for name, block in model.blocks.items():
        outputs[name], tangents[name] = jet2_block_tangents(block, inputs[name])
    return model.combine(outputs), model.combine_tangents(outputs, tangents)


def directional_passes(
    fn: Callable[[list[Jet2]], tuple[Jet2, ...]], points: np.ndarray
) -> tuple[SolutionJet, ...]:
    """Run one jet pass per coordinate axis and assemble gradients and Laplacians.

    Parameters
    ----------
    fn
        Maps coordinate jets to a tuple of result jets. Every result must have the
        component axis second (after the point axis).
    points
        Points of shape (N, d).
    """
    passes = [fn(seed_coordinates(points, axis)) for axis in range(points.shape[1])]
    return tuple(
        SolutionJet(
            u=jets[0].value,
            grad_u=np.stack([j.d1 for j in jets], axis=2),
            lap_u=sum(j.d2 for j in jets[1:]) + jets[0].d2,
        )
        for jets in zip(*passes)
    )


def eval_solution_jet(
    model: SolutionModel, point: np.ndarray, epsilon: float
) -> SolutionJet:
    """Evaluate u, grad u and the Laplacian of the model.

    The 1/epsilon and 1/epsilon**2 factors of the scaled level-set inputs enter
    through the chain rule inside the jets.

    Parameters
    ----------
    model
        The solution model.
    point
        A single point (shape (d,)) or a batch (shape (N, d)).
    epsilon
        The perturbation parameter.
    """
    check_epsilon(epsilon)
    points, single = as_points(point, model.dim)

    (jet,) = directional_passes(
        lambda coords: (model_jet(model, coords, epsilon),), points
    )
    return jet.squeeze() if single else jet


def _first_nonfinite(values: np.ndarray) -> int | None:
    bad = np.flatnonzero(~np.isfinite(values.reshape(values.shape[0], -1)).all(axis=1))
    return int(bad[0]) if bad.size else None


def assemble_residual_jacobian(
    problem: ProblemSpec,
    model: SolutionModel,
    colloc: CollocationSet,
    epsilon: float,
) -> ResidualJacobian:
    """Assemble the weighted residual vector and its exact parameter Jacobian.

    Interior rows are sqrt(w / m) (L u - f), boundary rows sqrt(1 / m_b) (u - g),
    matching `loss.build_residual` row for row.
    """
    check_epsilon(epsilon)
    if colloc.m + colloc.m_b == 0:
        raise ValueError("Cannot assemble a residual on an empty collocation set.")
    if model.dim != problem.dim or model.n_components != problem.n_components:
        raise DimensionError(
            f"Model (dim={model.dim}, n={model.n_components}) does not match problem "
            f"{problem.id} (dim={problem.dim}, n={problem.n_components})."
        )

    n_params = model.n_params
    points = colloc.residual_points

    jet, tangent = directional_passes(
        lambda coords: model_tangents(model, coords, epsilon), points
    )
    interior = problem.operator.residual(jet, points, epsilon)
    d_interior = problem.operator.linearize(jet, tangent, points, epsilon)

    bad = _first_nonfinite(interior)
    if bad is not None:
        raise EvaluationError(f"Non-finite PDE residual at collocation point {bad}.", bad)

    scale = colloc.interior_scale[:, None]
    u_b, t_b = model_tangents(model, seed_coordinates(colloc.boundary, None), epsilon)
    boundary = (
        u_b.value - problem.boundary_value(colloc.boundary, epsilon)
    ) * colloc.boundary_scale

    bad = _first_nonfinite(boundary)
    if bad is not None:
        raise EvaluationError(f"Non-finite boundary residual at point {bad}.", bad)

    residual = np.concatenate([(interior * scale).ravel(), boundary.ravel()])
    jacobian = np.concatenate(
        [
            (d_interior * scale[..., None]).reshape(-1, n_params),
            (t_b.value * colloc.boundary_scale).reshape(-1, n_params),
        ]
    )
    logger.debug(f"Assembled Jacobian of shape {jacobian.shape}.")

    return ResidualJacobian(residual, jacobian)
