"""Collocation, boundary and test point sets.

Interior points are uniform over the domain. Layer points are drawn from normal
distributions centred on each boundary piece with standard deviation
`sigma_scale * epsilon`; draws outside the open domain are discarded and redrawn
until every requested count is met.

Transition points bridge the layer and the interior: their distances to each boundary
piece are spread log-uniformly from a few layer widths out to the middle of the
domain, so the singular blocks are constrained at every scale between the two.
"""

from __future__ import annotations

import csv
import functools
import logging
from collections.abc import Callable
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import problems, util
from .problems import Domain, Interval, LevelSetDomain, ProblemSpec, Rectangle

logger = logging.getLogger(__name__)

# Budget of candidate draws for any one rejection-sampled set
MAX_DRAWS = 10**6

# Default transition points per boundary piece
TRANSITION_PER_SIDE = 100

# Transition distances start this many layer widths from the boundary
TRANSITION_START = 3.0


class SamplingError(RuntimeError):
    """Rejection sampling could not fill a point set."""


@dataclass(frozen=True)
class SamplingCounts:
    """Requested sizes of a collocation set."""

    interior: int
    layer_per_side: int
    boundary: int
    transition_per_side: int = 0

    def __post_init__(self) -> None:
        if min(self.interior, self.layer_per_side, self.boundary) < 1:
            raise ValueError(f"Sampling counts must be positive, got {self}.")
        if self.transition_per_side < 0:
            raise ValueError(
                f"transition_per_side must be non-negative, got {self.transition_per_side}."
            )

    @classmethod
    def for_problem(cls, problem: ProblemSpec) -> SamplingCounts:
        return cls(*problem.counts, transition_per_side=TRANSITION_PER_SIDE)

    def doubled(self) -> SamplingCounts:
        return SamplingCounts(
            2 * self.interior,
            2 * self.layer_per_side,
            2 * self.boundary,
            2 * self.transition_per_side,
        )


@dataclass(frozen=True)
class CollocationSet:
    """Training or test points of one problem.

    Attributes
    ----------
    interior
        Uniform interior points, shape (m_i, d).
    layer
        Layer points, shape (m_l, d), grouped by side in `layer_sides` order.
    boundary
        Boundary points, shape (m_b, d).
    weights
        Residual weights of the rows of `residual_points`.
    sigma_std
        Standard deviation used for the layer points.
    seed
        The seed the set was drawn with.
    layer_sides
        Names of the boundary pieces the layer points were drawn around.
    transition
        Transition points, shape (m_t, d), grouped by side like `layer`. None if
        none were requested.
    """

    interior: np.ndarray
    layer: np.ndarray
    boundary: np.ndarray
    weights: np.ndarray
    sigma_std: float
    seed: int
    layer_sides: tuple[str, ...] = ()
    transition: np.ndarray | None = None

    @functools.cached_property
    def residual_points(self) -> np.ndarray:
        """Interior, layer then transition points, the rows of the PDE residual."""
        parts = [self.interior, self.layer]
        if self.transition is not None:
            parts.append(self.transition)
        return np.concatenate(parts)

    @property
    def m(self) -> int:
        """Interior and layer points, the count the residual is normalised by."""
        return self.interior.shape[0] + self.layer.shape[0]

    @property
    def m_t(self) -> int:
        return 0 if self.transition is None else self.transition.shape[0]

    @property
    def m_b(self) -> int:
        return self.boundary.shape[0]

    @functools.cached_property
    def interior_scale(self) -> np.ndarray:
        """Row scaling sqrt(w / m) of the PDE residual, transition rows included."""
        return np.sqrt(self.weights / self.m)

    @property
    def boundary_scale(self) -> float:
        """Row scaling sqrt(1 / m_b) of the boundary residual."""
        return float(np.sqrt(1.0 / self.m_b)) if self.m_b else 0.0

    def layer_points(self, side: str) -> np.ndarray:
        """The layer points drawn around one named side."""
        per_side = self.layer.shape[0] // max(len(self.layer_sides), 1)
        k = self.layer_sides.index(side)
        return self.layer[k * per_side : (k + 1) * per_side]


def _rejection_fill(
    draw: Callable[[int], np.ndarray],
    accept: Callable[[np.ndarray], np.ndarray],
    count: int,
    label: str,
) -> np.ndarray:
    """Draw batches until `count` accepted points are found."""
    accepted = []
    filled = drawn = 0

    while filled < count:
        batch = max(2 * (count - filled), 16)
        if drawn + batch > MAX_DRAWS:
            raise SamplingError(
                f"Rejection sampling for the {label} points exhausted {MAX_DRAWS} "
                f"draws ({filled}/{count} accepted)."
            )
        candidates = draw(batch)
        drawn += batch
        keep = candidates[accept(candidates)][: count - filled]
        accepted.append(keep)
        filled += keep.shape[0]

    logger.debug(f"Accepted {count} {label} points from {drawn} draws.")
    return np.concatenate(accepted)


def _sample_interior(domain: Domain, count: int, rng: np.random.Generator) -> np.ndarray:
    low, high = domain.bbox
    return _rejection_fill(
        lambda k: rng.uniform(low, high, size=(k, domain.dim)),
        domain.contains,
        count,
        "interior",
    )


def _sample_layer(
    domain: Domain, count: int, sigma: float, rng: np.random.Generator
) -> tuple[np.ndarray, tuple[str, ...]]:
    if isinstance(domain, LevelSetDomain):

        def _draw_tube(k: int) -> np.ndarray:
            base = domain.boundary_points(rng.uniform(0.0, 1.0, k))
            grad = domain.phi_gradient(base)
            normal = grad / np.linalg.norm(grad, axis=1, keepdims=True)
            offset = np.abs(rng.normal(0.0, sigma, k))
            return base - offset[:, None] * normal

        points = _rejection_fill(_draw_tube, domain.contains, count, "boundary layer")
        return points, ("boundary",)

    low, high = domain.bbox
    sets = []
    for side in domain.sides:

        def _draw(k: int, side: problems.AxisSide = side) -> np.ndarray:
            pts = rng.uniform(low, high, size=(k, domain.dim))
            pts[:, side.axis] = rng.normal(side.origin, sigma, k)
            return pts

        sets.append(_rejection_fill(_draw, domain.contains, count, f"{side.name} layer"))

    return np.concatenate(sets), tuple(s.name for s in domain.sides)


def _log_distances(
    low: float, high: float, count: int, rng: np.random.Generator
) -> np.ndarray:
    """Increasing distances, one log-uniform draw in each of `count` equal strata."""
    edges = np.linspace(np.log(low), np.log(high), count + 1)
    return np.exp(edges[:-1] + rng.uniform(0.0, 1.0, count) * np.diff(edges))


def _sample_transition(
    domain: Domain, count: int, sigma: float, rng: np.random.Generator
) -> np.ndarray:
    if isinstance(domain, LevelSetDomain):
        high = 0.5 * domain.depth
        low = min(TRANSITION_START * sigma, 0.1 * high)

        def _draw_tube(k: int) -> np.ndarray:
            base = domain.boundary_points(rng.uniform(0.0, 1.0, k))
            grad = domain.phi_gradient(base)
            normal = grad / np.linalg.norm(grad, axis=1, keepdims=True)
            return base - _log_distances(low, high, k, rng)[:, None] * normal

        return _rejection_fill(_draw_tube, domain.contains, count, "transition")

    box_low, box_high = domain.bbox
    sets = []
    for side in domain.sides:
        high = 0.5 * (box_high[side.axis] - box_low[side.axis])
        pts = rng.uniform(box_low, box_high, size=(count, domain.dim))
        pts[:, side.axis] = side.origin + side.inward * _log_distances(
            min(TRANSITION_START * sigma, 0.1 * high), high, count, rng
        )
        sets.append(pts)

    return np.concatenate(sets)


def _boundary_points(domain: Domain, count: int, rng: np.random.Generator) -> np.ndarray:
    if isinstance(domain, Interval):
        return domain.boundary_points(np.zeros(0))
    return domain.boundary_points(rng.uniform(0.0, 1.0, count))


def sample_collocation(  # noqa: PLR0913
    problem: ProblemSpec,
    epsilon: float,
    counts: SamplingCounts | None = None,
    rng_seed: int = 0,
    sigma_scale: float = 1.0,
    stream: int = util.TRAIN_STREAM,
) -> CollocationSet:
    """Draw a collocation set.

    Parameters
    ----------
    problem
        The problem to sample for.
    epsilon
        Perturbation parameter, sets the layer width.
    counts
        Requested sizes; the problem's defaults if not given.
    rng_seed
        Seed of the generator.
    sigma_scale
        Layer standard deviation in units of epsilon.
    stream
        Generator stream, `util.TEST_STREAM` gives an independent test set.

    Returns
    -------
    colloc
        The point set, with the residual weights evaluated.
    """
    if not (np.isfinite(epsilon) and epsilon > 0):
        raise ValueError(f"epsilon must be positive, got {epsilon}.")
    if sigma_scale <= 0:
        raise ValueError(f"sigma_scale must be positive, got {sigma_scale}.")

    counts = counts or SamplingCounts.for_problem(problem)
    rng = util.make_rng(rng_seed, stream)
    sigma = sigma_scale * epsilon

    interior = _sample_interior(problem.domain, counts.interior, rng)
    layer, sides = _sample_layer(problem.domain, counts.layer_per_side, sigma, rng)
    boundary = _boundary_points(problem.domain, counts.boundary, rng)
    transition = (
        _sample_transition(problem.domain, counts.transition_per_side, sigma, rng)
        if counts.transition_per_side
        else None
    )

    rows = [interior, layer] if transition is None else [interior, layer, transition]
    weights = problems.weight(problem, np.concatenate(rows))

    return CollocationSet(
        interior=interior,
        layer=layer,
        boundary=boundary,
        weights=np.asarray(weights, dtype=np.float64),
        sigma_std=sigma,
        seed=rng_seed,
        layer_sides=sides,
        transition=transition,
    )


def sample_boundary(problem: ProblemSpec, count: int, rng_seed: int = 0) -> np.ndarray:
    """Boundary points: the endpoints in 1D, else uniform by arc length."""
    if count < 1:
        raise ValueError(f"count must be positive, got {count}.")
    rng = util.make_rng(rng_seed, util.BOUNDARY_STREAM)
    return _boundary_points(problem.domain, count, rng)


def sample_test_set(
    problem: ProblemSpec,
    epsilon: float,
    train_counts: SamplingCounts | None = None,
    rng_seed: int = 0,
    sigma_scale: float = 1.0,
) -> CollocationSet:
    """A test set with twice the training counts from an independent stream."""
    counts = (train_counts or SamplingCounts.for_problem(problem)).doubled()
    return sample_collocation(
        problem, epsilon, counts, rng_seed, sigma_scale, stream=util.TEST_STREAM
    )


def _geometric_offsets(width: float, count: int) -> np.ndarray:
    # Zero plus count - 1 offsets from 1e-4 width up to width
    return np.concatenate([[0.0], width * np.geomspace(1e-4, 1.0, count - 1)])


def evaluation_grids(
    problem: ProblemSpec,
    epsilon: float,
    grid_points: int | None = None,
    layer_points: int | None = None,
) -> dict[str, np.ndarray]:
    """Uniform and layer-refined grids for field dumps.

    The layer grid places geometric offsets within 10 epsilon of every boundary
    piece, so layers are resolved at any epsilon.

    Returns
    -------
    grids
        "uniform" and "layer" point arrays of shape (N, d).
    """
    domain = problem.domain
    width = 10.0 * epsilon

    if isinstance(domain, Interval):
        n_uniform, n_layer = grid_points or 1001, layer_points or 1001
        offsets = _geometric_offsets(min(width, 0.5 * (domain.b - domain.a)), n_layer)
        uniform = np.linspace(domain.a, domain.b, n_uniform)
        layer = np.concatenate([domain.a + offsets, domain.b - offsets])
        return {"uniform": uniform[:, None], "layer": layer[:, None]}

    n_uniform, n_layer = grid_points or 201, layer_points or 101
    low, high = domain.bbox
    gx, gy = np.meshgrid(
        np.linspace(low[0], high[0], n_uniform),
        np.linspace(low[1], high[1], n_uniform),
        indexing="ij",
    )
    uniform = np.c_[gx.ravel(), gy.ravel()]

    if isinstance(domain, Rectangle):
        offsets = _geometric_offsets(
            min(width, 0.5 * (domain.b - domain.a), 0.5 * (domain.d - domain.c)),
            n_layer,
        )
        pieces = []
        for side in domain.sides:
            tangential = 1 - side.axis
            t = np.linspace(low[tangential], high[tangential], n_uniform)
            tt, oo = np.meshgrid(t, offsets, indexing="ij")
            pts = np.empty((tt.size, 2))
            pts[:, tangential] = tt.ravel()
            pts[:, side.axis] = side.origin + side.inward * oo.ravel()
            pieces.append(pts)
        return {"uniform": uniform, "layer": np.concatenate(pieces)}

    # Level-set domains: mask the box and walk inwards along the normal
    uniform = uniform[domain.phi_values(uniform) <= 0.0]
    base = domain.boundary_points(np.linspace(0.0, 1.0, n_uniform, endpoint=False))
    grad = domain.phi_gradient(base)
    normal = grad / np.linalg.norm(grad, axis=1, keepdims=True)
    offsets = _geometric_offsets(width, n_layer)
    layer = (base[:, None, :] - offsets[None, :, None] * normal[:, None, :]).reshape(-1, 2)
    layer = layer[domain.phi_values(layer) <= 0.0]
    return {"uniform": uniform, "layer": layer}


def write_points_csv(filename: str | Path, colloc: CollocationSet, header: str) -> None:
    """Write one point per row: the coordinates and the name of its point set."""
    dim = colloc.interior.shape[1]
    names = ["x", "y"][:dim]

    with Path(filename).open("w", newline="") as fh:
        fh.write(header + "\n")
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow([*names, "tag"])
        for tag, pts in (
            ("interior", colloc.interior),
            ("layer", colloc.layer),
            ("transition", colloc.transition if colloc.transition is not None else ()),
            ("boundary", colloc.boundary),
        ):
            for p in pts:
                writer.writerow([*(float(v) for v in p), tag])
