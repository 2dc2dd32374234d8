"""Benchmark boundary-layer problems.

Each `ProblemSpec` bundles the residual operator L_eps(u) - f, the Dirichlet data,
the domain (with its level sets), the weight function and, where one is known, the
closed-form solution. Exact solutions are written in `Jet2` arithmetic so the same
expression gives exact values and exact derivatives.

The registry holds the seven benchmarks "ex1" ... "ex7".
"""

from __future__ import annotations

import logging
from abc import ABC, abstractmethod
from collections.abc import Callable, Sequence
from dataclasses import dataclass, field
from enum import Enum
from typing import Protocol

import numpy as np

from .autodiff import Jet2, SolutionJet, as_points, directional_passes, seed_coordinates
from .network import AxisLevelSet, Geometry, LevelSet

logger = logging.getLogger(__name__)

# Points closer than this to the boundary are not considered interior
INTERIOR_TOL = 1e-14

SQRT3 = np.sqrt(3.0)

Coefficient = np.ndarray | Callable[[np.ndarray, float], np.ndarray]
ExactSolution = Callable[[Sequence[Jet2], float], list[Jet2]]


class UnknownProblemError(KeyError):
    """No problem is registered under the requested id."""


class NoExactSolutionError(RuntimeError):
    """The problem has no closed-form solution."""


class WeightKind(Enum):
    """Interior residual weighting."""

    DISTANCE = "distance"
    UNIT = "unit"


@dataclass(frozen=True)
class AxisSide:
    """One flat side of an interval or rectangle.

    Attributes
    ----------
    name
        Side label, e.g. "left".
    axis
        The coordinate normal to the side.
    origin
        Position of the side along `axis`.
    inward
        +1 if the domain lies at larger coordinates, -1 otherwise.
    """

    name: str
    axis: int
    origin: float
    inward: int


@dataclass(frozen=True)
class Interval:
    """The interval [a, b]."""

    a: float = 0.0
    b: float = 1.0

    dim = 1

    @property
    def sides(self) -> list[AxisSide]:
        return [AxisSide("left", 0, self.a, 1), AxisSide("right", 0, self.b, -1)]

    @property
    def bbox(self) -> tuple[np.ndarray, np.ndarray]:
        return np.array([self.a]), np.array([self.b])

    def level_sets(self) -> list[LevelSet]:
        return [AxisLevelSet(s.axis, s.origin) for s in self.sides]

    def distance(self, points: np.ndarray) -> np.ndarray:
        x = points[:, 0]
        return np.minimum(x - self.a, self.b - x)

    def phi_values(self, points: np.ndarray) -> np.ndarray:
        return -self.distance(points)

    def contains(self, points: np.ndarray) -> np.ndarray:
        return self.distance(points) > INTERIOR_TOL

    def boundary_points(self, t: np.ndarray) -> np.ndarray:  # noqa: ARG002
        return np.array([[self.a], [self.b]])


@dataclass(frozen=True)
class Rectangle:
    """The rectangle [a, b] x [c, d]."""

    a: float = 0.0
    b: float = 1.0
    c: float = 0.0
    d: float = 1.0

    dim = 2

    @property
    def sides(self) -> list[AxisSide]:
        return [
            AxisSide("left", 0, self.a, 1),
            AxisSide("right", 0, self.b, -1),
            AxisSide("bottom", 1, self.c, 1),
            AxisSide("top", 1, self.d, -1),
        ]

    @property
    def bbox(self) -> tuple[np.ndarray, np.ndarray]:
        return np.array([self.a, self.c]), np.array([self.b, self.d])

    @property
    def perimeter(self) -> float:
        return 2.0 * ((self.b - self.a) + (self.d - self.c))

    def level_sets(self) -> list[LevelSet]:
        return [AxisLevelSet(s.axis, s.origin) for s in self.sides]

    def distance(self, points: np.ndarray) -> np.ndarray:
        x, y = points[:, 0], points[:, 1]
        return np.minimum.reduce([x - self.a, self.b - x, y - self.c, self.d - y])

    def phi_values(self, points: np.ndarray) -> np.ndarray:
        return -self.distance(points)

    def contains(self, points: np.ndarray) -> np.ndarray:
        return self.distance(points) > INTERIOR_TOL

    def boundary_points(self, t: np.ndarray) -> np.ndarray:
        """Map t in [0, 1) to the perimeter by arc length (counter-clockwise)."""
        w, h = self.b - self.a, self.d - self.c
        s = np.asarray(t) * self.perimeter
        points = np.empty((s.size, 2))

        bottom = s < w
        right = (s >= w) & (s < w + h)
        top = (s >= w + h) & (s < 2 * w + h)
        left = s >= 2 * w + h

        points[bottom] = np.c_[self.a + s[bottom], np.full(bottom.sum(), self.c)]
        points[right] = np.c_[np.full(right.sum(), self.b), self.c + s[right] - w]
        points[top] = np.c_[self.b - (s[top] - w - h), np.full(top.sum(), self.d)]
        points[left] = np.c_[
            np.full(left.sum(), self.a), self.d - (s[left] - 2 * w - h)
        ]
        return points


class LevelSetDomain(ABC):
    """A domain given as {phi < 0} with an arc-length boundary parametrisation."""

    dim = 2

    @abstractmethod
    def phi(self, coords: Sequence[Jet2]) -> Jet2:
        """The level set, negative inside."""

    @property
    @abstractmethod
    def bbox(self) -> tuple[np.ndarray, np.ndarray]:
        """Lower and upper corners of a box containing the domain."""

    @property
    @abstractmethod
    def depth(self) -> float:
        """The largest distance from the boundary to an interior point."""

    @abstractmethod
    def boundary_points(self, t: np.ndarray) -> np.ndarray:
        """Map t in [0, 1) to boundary points, shape (N, 2)."""

    def level_sets(self) -> list[LevelSet]:
        return [self.phi]

    def phi_values(self, points: np.ndarray) -> np.ndarray:
        return self.phi(seed_coordinates(points, None)).value

    def phi_gradient(self, points: np.ndarray) -> np.ndarray:
        """The gradient of phi, shape (N, 2)."""
        (jet,) = directional_passes(
            lambda coords: (self.phi(coords)[:, None],), points
        )
        return jet.grad_u[:, 0, :]

    def distance(self, points: np.ndarray) -> np.ndarray:
        return -self.phi_values(points)

    def contains(self, points: np.ndarray) -> np.ndarray:
        return self.phi_values(points) < -INTERIOR_TOL


@dataclass(frozen=True)
class ArcDomain(LevelSetDomain):
    """A thick circular arc with rounded ends, symmetric about the y axis.

    The centre line is the circle of radius `radius` between the angles -`opening`
    and `opening` measured from the +y axis, the thickness is 2 `half_width` and the
    ends are closed by semicircular caps.
    """

    radius: float = 0.8
    half_width: float = 0.2
    opening: float = np.pi / 3

    def phi(self, coords: Sequence[Jet2]) -> Jet2:
        x, y = coords[0], coords[1]
        s, c = np.sin(self.opening), np.cos(self.opening)

        cap = (
            (abs(x) - self.radius * s) ** 2 + (y - self.radius * c) ** 2
        ).sqrt() - self.half_width
        ring = abs((x * x + y * y).sqrt() - self.radius) - self.half_width

        return Jet2.where(c * np.abs(x.value) > s * y.value, cap, ring)

    @property
    def bbox(self) -> tuple[np.ndarray, np.ndarray]:
        s, c = np.sin(self.opening), np.cos(self.opening)
        r, w = self.radius, self.half_width
        xmax = max(r * s + w, (r + w) * s)
        ymin = min(r * c - w, (r - w) * c)
        return np.array([-xmax, ymin]), np.array([xmax, r + w])

    @property
    def depth(self) -> float:
        return self.half_width

    @property
    def segment_lengths(self) -> np.ndarray:
        r, w, t = self.radius, self.half_width, self.opening
        return np.array([2 * t * (r + w), 2 * t * (r - w), np.pi * w, np.pi * w])

    @property
    def boundary_length(self) -> float:
        return float(self.segment_lengths.sum())

    def boundary_points(self, t: np.ndarray) -> np.ndarray:
        """Map t in [0, 1) to the boundary by arc length.

        The order is outer arc, inner arc, right cap, left cap.
        """
        r, w, theta = self.radius, self.half_width, self.opening
        lengths = self.segment_lengths
        edges = np.concatenate([[0.0], np.cumsum(lengths)])
        s = np.asarray(t, dtype=np.float64) * edges[-1]
        segment = np.clip(np.searchsorted(edges, s, side="right") - 1, 0, 3)
        u = (s - edges[segment]) / lengths[segment]

        points = np.empty((s.size, 2))
        for k, radius in ((0, r + w), (1, r - w)):
            sel = segment == k
            psi = -theta + 2 * theta * u[sel]
            points[sel] = np.c_[radius * np.sin(psi), radius * np.cos(psi)]

        # The caps: centre c, radial unit vector rhat and tangent that
        for k, sign in ((2, 1.0), (3, -1.0)):
            sel = segment == k
            beta = -np.pi / 2 + np.pi * u[sel]
            rhat = np.array([np.sin(theta), np.cos(theta)])
            that = np.array([np.cos(theta), -np.sin(theta)])
            local = r * rhat + w * (
                np.sin(beta)[:, None] * rhat + np.cos(beta)[:, None] * that
            )
            points[sel] = local * np.array([sign, 1.0])

        return points


Domain = Interval | Rectangle | LevelSetDomain


class Operator(Protocol):
    """A residual operator and its linearisation."""

    def residual(
        self, jet: SolutionJet, points: np.ndarray, epsilon: float
    ) -> np.ndarray: ...

    def linearize(
        self,
        jet: SolutionJet,
        tangent: SolutionJet,
        points: np.ndarray,
        epsilon: float,
    ) -> np.ndarray: ...


def _coefficient(coeff: Coefficient, points: np.ndarray, epsilon: float) -> np.ndarray:
    if callable(coeff):
        return coeff(points, epsilon)
    coeff = np.asarray(coeff, dtype=np.float64)
    return np.broadcast_to(coeff, (points.shape[0], *coeff.shape))


def _matvec(matrix: np.ndarray, v: np.ndarray) -> np.ndarray:
    return np.einsum("pij,pj...->pi...", matrix, v)


@dataclass(frozen=True)
class LinearOperator:
    """L(u) = diffusion(eps) lap(u) + sum_k A_k du/dx_k + C u, minus the source.

    Attributes
    ----------
    diffusion
        Map from epsilon to the coefficient of the Laplacian, e.g. -eps.
    convection
        One (n, n) matrix or callable per axis (None for no convection along it).
    reaction
        The (n, n) reaction matrix (or callable), None for no reaction.
    source
        Map (points, eps) -> f of shape (N, n), None for f = 0.
    """

    diffusion: Callable[[float], float]
    convection: tuple[Coefficient | None, ...] = ()
    reaction: Coefficient | None = None
    source: Callable[[np.ndarray, float], np.ndarray] | None = None

    def apply(self, jet: SolutionJet, points: np.ndarray, epsilon: float) -> np.ndarray:
        """L(u) without the source; also maps parameter tangents (trailing axis)."""
        out = self.diffusion(epsilon) * jet.lap_u
        for axis, coeff in enumerate(self.convection):
            if coeff is not None:
                matrix = _coefficient(coeff, points, epsilon)
                out = out + _matvec(matrix, jet.grad_u[:, :, axis])
        if self.reaction is not None:
            out = out + _matvec(_coefficient(self.reaction, points, epsilon), jet.u)
        return out

    def residual(
        self, jet: SolutionJet, points: np.ndarray, epsilon: float
    ) -> np.ndarray:
        out = self.apply(jet, points, epsilon)
        if self.source is not None:
            out = out - self.source(points, epsilon)
        return out

    def linearize(
        self,
        jet: SolutionJet,  # noqa: ARG002
        tangent: SolutionJet,
        points: np.ndarray,
        epsilon: float,
    ) -> np.ndarray:
        return self.apply(tangent, points, epsilon)


@dataclass(frozen=True)
class PoissonBoltzmannOperator:
    """-eps^2 lap(u) + e^u - e^-u."""

    def residual(
        self, jet: SolutionJet, points: np.ndarray, epsilon: float  # noqa: ARG002
    ) -> np.ndarray:
        return -(epsilon**2) * jet.lap_u + 2.0 * np.sinh(jet.u)

    def linearize(
        self,
        jet: SolutionJet,
        tangent: SolutionJet,
        points: np.ndarray,  # noqa: ARG002
        epsilon: float,
    ) -> np.ndarray:
        return -(epsilon**2) * tangent.lap_u + 2.0 * np.cosh(jet.u)[..., None] * tangent.u


@dataclass(frozen=True)
class ProblemSpec:
    """A boundary-layer benchmark.

    Attributes
    ----------
    id
        Registry id, e.g. "ex1".
    title
        One line description.
    n_components
        Number of solution components.
    domain
        The domain, which also provides the level sets for the model.
    operator
        The residual operator.
    boundary_value
        Map (points (N, d), eps) -> g of shape (N, n).
    weight_kind
        Squared boundary distance or unit weight for the interior residual.
    geometry
        The decomposition used for the model.
    hidden
        Default hidden neurons per block.
    counts
        Default (interior, layer points per side, boundary points).
    exact
        Closed-form solution in jet arithmetic, None if unknown.
    coefficients
        Problem constants, for reporting.
    """

    id: str  # noqa: A003
    title: str
    n_components: int
    domain: Domain
    operator: Operator
    boundary_value: Callable[[np.ndarray, float], np.ndarray]
    weight_kind: WeightKind
    geometry: Geometry
    hidden: int
    counts: tuple[int, int, int]
    exact: ExactSolution | None = None
    coefficients: dict[str, object] = field(default_factory=dict)

    @property
    def dim(self) -> int:
        return self.domain.dim

    @property
    def has_exact(self) -> bool:
        return self.exact is not None


def residual(
    problem: ProblemSpec, jet: SolutionJet, point: np.ndarray, epsilon: float
) -> np.ndarray:
    """L_eps(u) - f at a point or batch, given the solution jet there."""
    points, single = as_points(point, problem.dim)
    if single and jet.u.ndim == 1:
        jet = SolutionJet(jet.u[None], jet.grad_u[None], jet.lap_u[None])
    out = problem.operator.residual(jet, points, epsilon)
    return out[0] if single else out


def exact_solution_jet(
    problem: ProblemSpec, point: np.ndarray, epsilon: float
) -> SolutionJet:
    """Exact u, gradient and Laplacian, from the closed form."""
    if problem.exact is None:
        raise NoExactSolutionError(f"Problem {problem.id} has no exact solution.")
    points, single = as_points(point, problem.dim)

    def _passes(coords: list[Jet2]) -> tuple[Jet2]:
        return (Jet2.stack(problem.exact(coords, epsilon), axis=-1),)

    (jet,) = directional_passes(_passes, points)
    return jet.squeeze() if single else jet


def exact_solution(problem: ProblemSpec, point: np.ndarray, epsilon: float) -> np.ndarray:
    """Exact solution values, shape (n,) or (N, n).

    Raises
    ------
    NoExactSolutionError
        If the problem has no closed form.
    """
    if problem.exact is None:
        raise NoExactSolutionError(f"Problem {problem.id} has no exact solution.")
    points, single = as_points(point, problem.dim)
    jets = problem.exact(seed_coordinates(points, None), epsilon)
    values = np.stack([j.value for j in jets], axis=-1)
    return values[0] if single else values


def weight(problem: ProblemSpec, point: np.ndarray) -> np.ndarray | float:
    """Interior residual weight: squared distance to the boundary, or 1."""
    points, single = as_points(point, problem.dim)

    match problem.weight_kind:
        case WeightKind.DISTANCE:
            w = np.maximum(problem.domain.distance(points), 0.0) ** 2
        case WeightKind.UNIT:
            w = np.ones(points.shape[0])

    return float(w[0]) if single else w


def levelset_phi(problem: ProblemSpec, point: np.ndarray) -> np.ndarray | float:
    """The domain's level set, negative inside.

    For intervals and rectangles this is minus the distance to the boundary.
    """
    points, single = as_points(point, problem.dim)
    phi = problem.domain.phi_values(points)
    return float(phi[0]) if single else phi


# Boundary data


def _endpoint_data(
    domain: Interval, left: float, right: float
) -> Callable[[np.ndarray, float], np.ndarray]:
    midpoint = 0.5 * (domain.a + domain.b)

    def _g(points: np.ndarray, epsilon: float) -> np.ndarray:  # noqa: ARG001
        return np.where(points[:, 0] < midpoint, left, right)[:, None]

    return _g


def _constant_data(value: float, n: int) -> Callable[[np.ndarray, float], np.ndarray]:
    def _g(points: np.ndarray, epsilon: float) -> np.ndarray:  # noqa: ARG001
        return np.full((points.shape[0], n), value)

    return _g


def _exact_data(
    exact: ExactSolution,
) -> Callable[[np.ndarray, float], np.ndarray]:
    def _g(points: np.ndarray, epsilon: float) -> np.ndarray:
        jets = exact(seed_coordinates(points, None), epsilon)
        return np.stack([j.value for j in jets], axis=-1)

    return _g


# Closed-form solutions


def _example1_exact(coords: Sequence[Jet2], epsilon: float) -> list[Jet2]:
    x = coords[0]
    den = np.exp(-1.0) - np.exp(-1.0 / epsilon)
    return [((-x).exp() - (-x / epsilon).exp()) / den]


def _example2_exact(coords: Sequence[Jet2], epsilon: float) -> list[Jet2]:
    x = coords[0]
    num = (-(1.0 + x) / epsilon).exp() - (-(1.0 - x) / epsilon).exp()
    return [num / (np.exp(-2.0 / epsilon) - 1.0)]


def _example3_exact(coords: Sequence[Jet2], epsilon: float) -> list[Jet2]:
    x, eps = coords[0], epsilon
    e1 = np.exp(-1.0 / eps)
    ex = (-x / eps).exp()
    ex1 = (-(x + 1.0) / eps).exp()

    w1 = (
        e1 * (eps * (-2.0 * x * x + 2.0 * x + 2.0) + eps**2 * (8.0 * x - 4.0) - 1.0)
        + ex * (-2.0 * eps * x + x - 4.0 * eps**2)
        + ex1 * ((2.0 * eps - 1.0) * x + 4.0 * eps**2 - 2.0 * eps + 1.0)
        + np.exp(-2.0 / eps) * eps * x * (x - 4.0 * eps - 1.0)
        - eps * (x - 1.0) * (4.0 * eps - x)
    ) / (eps * (1.0 - e1) ** 2)
    w2 = (
        x * (x - 2.0 * eps) * e1
        + (x - 1.0) * (-x + 2.0 * eps - 1.0)
        + (2.0 * eps - 1.0) * ex
    ) / (1.0 - e1)

    return [2.0 * w1 + w2, 4.0 * w1]


def _cdr_factor(s: Jet2, a: float, epsilon: float) -> Jet2:
    """Solution of -eps X'' + a X' = s on [0, 1] with X(0) = X(1) = 0."""
    ea = np.exp(-a / epsilon)
    ratio = (ea - (-(a * (1.0 - s)) / epsilon).exp()) / (1.0 - ea)
    return (
        s * s / (2.0 * a)
        + epsilon * s / a**2
        + (1.0 / (2.0 * a) + epsilon / a**2) * ratio
    )


EXAMPLE4_VELOCITY = (0.5, SQRT3 / 2.0)


def _example4_exact(coords: Sequence[Jet2], epsilon: float) -> list[Jet2]:
    a1, a2 = EXAMPLE4_VELOCITY
    return [_cdr_factor(coords[0], a1, epsilon) * _cdr_factor(coords[1], a2, epsilon)]


def _example4_source(points: np.ndarray, epsilon: float) -> np.ndarray:
    a1, a2 = EXAMPLE4_VELOCITY
    x, y = points[:, 0], points[:, 1]
    fx = _cdr_factor(Jet2.constant(x), a1, epsilon).value
    fy = _cdr_factor(Jet2.constant(y), a2, epsilon).value
    return (x * fy + y * fx + fx * fy)[:, None]


def _example5_exact(coords: Sequence[Jet2], epsilon: float) -> list[Jet2]:
    x, y = coords[0], coords[1]
    return [(y - x).exp() + (1.0 + y) * (((1.0 + y) / 2.0).log() / epsilon).exp()]


def _example5_convection(points: np.ndarray, epsilon: float) -> np.ndarray:  # noqa: ARG001
    return (1.0 / (1.0 + points[:, 1]))[:, None, None]


def _example5_source(points: np.ndarray, epsilon: float) -> np.ndarray:
    x, y = points[:, 0], points[:, 1]
    return ((1.0 / (1.0 + y) - 2.0 * epsilon) * np.exp(y - x))[:, None]


def _ex6_p(x: Jet2, eps: float) -> Jet2:
    e1 = np.exp(-1.0 / (2.0 * eps))
    ex = (-x / (2.0 * eps)).exp()
    return (
        x * x * e1 - (x * x - 1.0) - ex + 4.0 * eps * (x - 1.0 - x * e1 + ex)
    ) / (1.0 - e1)


def _ex6_q(y: Jet2, eps: float) -> Jet2:
    e2 = np.exp(-SQRT3 / (2.0 * eps))
    ey = (-SQRT3 * y / (2.0 * eps)).exp()
    return (
        SQRT3 * (y * y * e2 - (y * y - 1.0) - ey)
        + 4.0 * eps * (y - 1.0 - y * e2 + ey)
    ) / (3.0 * (1.0 - e2))


def _ex6_r(x: Jet2, eps: float) -> Jet2:
    e1 = np.exp(-1.0 / (2.0 * eps))
    ex = (-x / (2.0 * eps)).exp()
    x2, x3 = x * x, x * x * x
    return (
        2.0 * (-x3 * e1 + x3 - 1.0 + ex)
        - 12.0 * eps * (-x2 * e1 + x2 - 1.0 + ex)
        + 48.0 * eps**2 * (x - 1.0 - x * e1 + ex)
    ) / (3.0 * (1.0 - e1))


def _ex6_s(y: Jet2, eps: float) -> Jet2:
    e2 = np.exp(-SQRT3 / (2.0 * eps))
    ey = (-SQRT3 * y / (2.0 * eps)).exp()
    y2, y3 = y * y, y * y * y
    return (
        2.0 * (-y3 * e2 + y3 - 1.0 + ey)
        - 4.0 * SQRT3 * eps * (-y2 * e2 + y2 - 1.0 + ey)
        + 16.0 * eps**2 * (y - 1.0 - y * e2 + ey)
    ) / (3.0 * SQRT3 * (1.0 - e2))


def _example6_exact(coords: Sequence[Jet2], epsilon: float) -> list[Jet2]:
    x, y = coords[0], coords[1]
    return [
        _ex6_p(x, epsilon) * _ex6_q(y, epsilon),
        -(_ex6_r(x, epsilon) * _ex6_s(y, epsilon)),
    ]


def _example6_source(points: np.ndarray, epsilon: float) -> np.ndarray:
    eps = epsilon
    x, y = points[:, 0], points[:, 1]
    p = _ex6_p(Jet2.constant(x), eps).value
    q = _ex6_q(Jet2.constant(y), eps).value
    r = _ex6_r(Jet2.constant(x), eps).value
    s = _ex6_s(Jet2.constant(y), eps).value

    k1 = 1.0 - np.exp(-1.0 / (2.0 * eps))
    k2 = 1.0 - np.exp(-SQRT3 / (2.0 * eps))
    ex = np.exp(-x / (2.0 * eps))
    ey = np.exp(-SQRT3 * y / (2.0 * eps))
    dr = (
        6.0 * x**2 * k1
        - ex / eps
        - 24.0 * eps * x * k1
        + 6.0 * ex
        + 48.0 * eps**2 * k1
        - 24.0 * eps * ex
    ) / (3.0 * k1)
    ds = (
        6.0 * y**2 * k2
        - SQRT3 * ey / eps
        - 8.0 * SQRT3 * eps * y * k2
        + 6.0 * ey
        + 16.0 * eps**2 * k2
        - 8.0 * SQRT3 * eps * ey
    ) / (3.0 * SQRT3 * k2)

    f1 = x * q + y * p + dr * s + r * ds
    f2 = x**2 * s + y**2 * r
    return np.stack([f1, f2], axis=-1)


# Registry

COUNTS_1D = (500, 500, 2)
COUNTS_RECTANGLE = (500, 500, 880)
COUNTS_IRREGULAR = (500, 2000, 220)


def _build_registry() -> dict[str, ProblemSpec]:
    unit, rect, arc = Interval(), Rectangle(), ArcDomain()
    half, c = 0.5, SQRT3 / 2.0

    problems = [
        ProblemSpec(
            id="ex1",
            title="1D convection-diffusion-reaction, layer at x = 0",
            n_components=1,
            domain=unit,
            operator=LinearOperator(
                diffusion=lambda eps: -eps,
                convection=(lambda pts, eps: np.full((pts.shape[0], 1, 1), -(1.0 + eps)),),
                reaction=np.array([[-1.0]]),
            ),
            boundary_value=_endpoint_data(unit, 0.0, 1.0),
            weight_kind=WeightKind.DISTANCE,
            geometry=Geometry.ONE_D,
            hidden=50,
            counts=COUNTS_1D,
            exact=_example1_exact,
        ),
        ProblemSpec(
            id="ex2",
            title="1D reaction-diffusion, layer at x = 1",
            n_components=1,
            domain=unit,
            operator=LinearOperator(
                diffusion=lambda eps: -(eps**2), reaction=np.array([[1.0]])
            ),
            boundary_value=_endpoint_data(unit, 0.0, 1.0),
            weight_kind=WeightKind.UNIT,
            geometry=Geometry.ONE_D,
            hidden=50,
            counts=COUNTS_1D,
            exact=_example2_exact,
            coefficients={"gamma": 1.0},
        ),
        ProblemSpec(
            id="ex3",
            title="1D coupled convection-diffusion system, layers at x = 0",
            n_components=2,
            domain=unit,
            operator=LinearOperator(
                diffusion=lambda eps: -eps,
                convection=(-np.array([[3.0, -1.0], [4.0, -1.0]]),),
                source=lambda pts, eps: np.stack(  # noqa: ARG005
                    [2.0 * pts[:, 0] + 2.0, np.full(pts.shape[0], 4.0)], axis=-1
                ),
            ),
            boundary_value=_constant_data(0.0, 2),
            weight_kind=WeightKind.DISTANCE,
            geometry=Geometry.ONE_D,
            hidden=50,
            counts=COUNTS_1D,
            exact=_example3_exact,
            coefficients={"M": [[3.0, -1.0], [4.0, -1.0]]},
        ),
        ProblemSpec(
            id="ex4",
            title="2D convection-diffusion-reaction, layers at x = 1 and y = 1",
            n_components=1,
            domain=rect,
            operator=LinearOperator(
                diffusion=lambda eps: -eps,
                convection=(np.array([[half]]), np.array([[c]])),
                reaction=np.array([[1.0]]),
                source=_example4_source,
            ),
            boundary_value=_constant_data(0.0, 1),
            weight_kind=WeightKind.DISTANCE,
            geometry=Geometry.TWO_D_REGULAR,
            hidden=50,
            counts=COUNTS_RECTANGLE,
            exact=_example4_exact,
            coefficients={"a": EXAMPLE4_VELOCITY},
        ),
        ProblemSpec(
            id="ex5",
            title="2D variable-coefficient convection-diffusion, layer at y = 1",
            n_components=1,
            domain=rect,
            operator=LinearOperator(
                diffusion=lambda eps: -eps,
                convection=(None, _example5_convection),
                source=_example5_source,
            ),
            boundary_value=_exact_data(_example5_exact),
            weight_kind=WeightKind.DISTANCE,
            geometry=Geometry.TWO_D_REGULAR,
            hidden=50,
            counts=COUNTS_RECTANGLE,
            exact=_example5_exact,
        ),
        ProblemSpec(
            id="ex6",
            title="2D coupled convection-diffusion system",
            n_components=2,
            domain=rect,
            operator=LinearOperator(
                diffusion=lambda eps: -eps,
                convection=(
                    -np.array([[half, 1.0], [0.0, half]]),
                    -np.array([[c, 1.0], [0.0, c]]),
                ),
                source=_example6_source,
            ),
            boundary_value=_constant_data(0.0, 2),
            weight_kind=WeightKind.DISTANCE,
            geometry=Geometry.TWO_D_REGULAR,
            hidden=35,
            counts=COUNTS_RECTANGLE,
            exact=_example6_exact,
            coefficients={
                "A": [[half, 1.0], [0.0, half]],
                "B": [[c, 1.0], [0.0, c]],
            },
        ),
        ProblemSpec(
            id="ex7",
            title="2D Poisson-Boltzmann on a thick arc, u = 1 on the boundary",
            n_components=1,
            domain=arc,
            operator=PoissonBoltzmannOperator(),
            boundary_value=_constant_data(1.0, 1),
            weight_kind=WeightKind.UNIT,
            geometry=Geometry.TWO_D_IRREGULAR,
            hidden=35,
            counts=COUNTS_IRREGULAR,
        ),
    ]
    return {p.id: p for p in problems}


PROBLEMS = _build_registry()


def get_problem(problem_id: str) -> ProblemSpec:
    """Look up a registered problem."""
    try:
        return PROBLEMS[problem_id]
    except KeyError as e:
        raise UnknownProblemError(
            f"Unknown problem {problem_id!r}, expected one of {sorted(PROBLEMS)}."
        ) from e


def list_problems() -> list[ProblemSpec]:
    """All registered problems in id order."""
    return [PROBLEMS[k] for k in sorted(PROBLEMS)]
