"""Error measurement, trial aggregation and diagnostics of trained models."""

import csv
import logging
from collections import defaultdict
from collections.abc import Sequence
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import network, problems, sampling
from .network import Geometry, SolutionModel
from .problems import Interval, ProblemSpec
from .sampling import CollocationSet

logger = logging.getLogger(__name__)

# The table layout averages at most this many independent trials
MAX_TRIALS = 5

ERROR_TABLE_COLUMNS = [
    "problem",
    "component",
    "epsilon",
    "rel_l2_mean",
    "rel_linf_mean",
    "trials",
    "n_test",
]


class UndefinedErrorMetricError(ValueError):
    """The exact solution vanishes so relative errors are undefined."""


@dataclass(frozen=True)
class ErrorReport:
    """Relative errors per component.

    Attributes
    ----------
    rel_l2, rel_linf
        Mean over the trials, shape (n,).
    n_test
        Number of test points.
    trials
        Number of trials averaged.
    per_trial_l2, per_trial_linf
        Values of the individual trials, shape (trials, n).
    """

    rel_l2: np.ndarray
    rel_linf: np.ndarray
    n_test: int
    trials: int
    per_trial_l2: np.ndarray
    per_trial_linf: np.ndarray

    @classmethod
    def single(cls, rel_l2: np.ndarray, rel_linf: np.ndarray, n_test: int) -> "ErrorReport":
        rel_l2, rel_linf = np.atleast_1d(rel_l2), np.atleast_1d(rel_linf)
        return cls(rel_l2, rel_linf, n_test, 1, rel_l2[None], rel_linf[None])


@dataclass(frozen=True)
class EquilibriumReport:
    """Boundary and interior checks for problems without a closed form.

    Attributes
    ----------
    boundary_max_dev
        max |u - g| over boundary test points.
    interior_max_abs
        max |u| over interior test points at least 10 epsilon inside.
    n_boundary, n_interior
        Number of points behind each value.
    """

    boundary_max_dev: float
    interior_max_abs: float
    n_boundary: int
    n_interior: int


def relative_errors(exact: np.ndarray, predicted: np.ndarray) -> ErrorReport:
    """Discrete relative L2 and max errors per component.

    Parameters
    ----------
    exact, predicted
        Values of shape (N,) or (N, n).

    Raises
    ------
    UndefinedErrorMetricError
        If a component of the exact values is identically zero.
    """
    exact = np.asarray(exact, dtype=np.float64)
    predicted = np.asarray(predicted, dtype=np.float64)
    if exact.shape != predicted.shape:
        raise ValueError(
            f"Shapes differ: exact {exact.shape}, predicted {predicted.shape}."
        )
    if exact.ndim == 1:
        exact, predicted = exact[:, None], predicted[:, None]

    scale = np.max(np.abs(exact), axis=0)
    if np.any(scale == 0):
        raise UndefinedErrorMetricError(
            "Relative errors are undefined for an identically zero exact solution."
        )

    diff = exact - predicted
    rel_l2 = np.linalg.norm(diff, axis=0) / np.linalg.norm(exact, axis=0)
    rel_linf = np.max(np.abs(diff), axis=0) / scale

    return ErrorReport.single(rel_l2, rel_linf, exact.shape[0])


def evaluate_model(
    problem: ProblemSpec, model: SolutionModel, test_set: CollocationSet, epsilon: float
) -> ErrorReport:
    """Relative errors of the model over the residual points of a test set."""
    points = test_set.residual_points
    exact = problems.exact_solution(problem, points, epsilon)
    predicted = network.forward(model, points, epsilon)
    return relative_errors(exact, predicted)


def layer_detection_ratio(
    model: SolutionModel, problem: ProblemSpec, epsilon: float, n_grid: int = 10_000
) -> float:
    """Range of the right singular block over the range of the left one.

    Small values mean the right block has flattened to a constant, i.e. the model
    has found that the layer sits at the left end. Infinite if the left block is
    constant.
    """
    if model.geometry is not Geometry.ONE_D or not isinstance(problem.domain, Interval):
        raise ValueError("The layer detection ratio is defined for 1D models only.")

    grid = np.linspace(problem.domain.a, problem.domain.b, n_grid)
    outputs = network.component_outputs(model, grid[:, None], epsilon)

    right = float(np.max(np.ptp(outputs["R"], axis=0))) if "R" in outputs else 0.0
    left = float(np.max(np.ptp(outputs["L"], axis=0))) if "L" in outputs else 0.0

    if left == 0.0:
        return np.inf
    return right / left


def aggregate_trials(reports: Sequence[ErrorReport]) -> ErrorReport:
    """Average the errors of up to five trials."""
    if not reports:
        raise ValueError("Cannot aggregate an empty list of reports.")
    if len(reports) > MAX_TRIALS:
        raise ValueError(f"At most {MAX_TRIALS} trials can be aggregated.")

    per_l2 = np.concatenate([r.per_trial_l2 for r in reports])
    per_linf = np.concatenate([r.per_trial_linf for r in reports])

    return ErrorReport(
        rel_l2=per_l2.mean(axis=0),
        rel_linf=per_linf.mean(axis=0),
        n_test=reports[0].n_test,
        trials=per_l2.shape[0],
        per_trial_l2=per_l2,
        per_trial_linf=per_linf,
    )


def equilibrium_diagnostics(
    model: SolutionModel,
    problem: ProblemSpec,
    epsilon: float,
    seed: int = 0,
    n_boundary: int = 500,
) -> EquilibriumReport:
    """Check a solution against its boundary data and the interior level u = 0."""
    boundary = sampling.sample_boundary(problem, n_boundary, seed)
    dev = network.forward(model, boundary, epsilon) - problem.boundary_value(
        boundary, epsilon
    )

    test_set = sampling.sample_test_set(problem, epsilon, rng_seed=seed)
    points = test_set.residual_points
    inner = points[problem.domain.phi_values(points) < -10.0 * epsilon]
    u = network.forward(model, inner, epsilon) if inner.size else np.zeros((0, 1))

    return EquilibriumReport(
        boundary_max_dev=float(np.max(np.abs(dev))),
        interior_max_abs=float(np.max(np.abs(u))) if u.size else 0.0,
        n_boundary=boundary.shape[0],
        n_interior=inner.shape[0],
    )


def write_error_table(
    filename: str | Path,
    results: Sequence[tuple[str, float, ErrorReport]],
    header: str,
) -> None:
    """Write (problem, epsilon, report) results, one row per component.

    Components are numbered from 1.
    """
    with Path(filename).open("w", newline="") as fh:
        fh.write(header + "\n")
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(ERROR_TABLE_COLUMNS)
        for problem_id, epsilon, report in results:
            for k in range(report.rel_l2.size):
                writer.writerow(
                    [
                        problem_id,
                        k + 1,
                        float(epsilon),
                        float(report.rel_l2[k]),
                        float(report.rel_linf[k]),
                        report.trials,
                        report.n_test,
                    ]
                )


def read_error_table(filename: str | Path) -> list[tuple[str, float, ErrorReport]]:
    """Parse a table written by `write_error_table`.

    The per-trial values are not stored, so each report carries its mean as the
    only per-trial entry.
    """
    rows = defaultdict(list)

    with Path(filename).open("r", newline="") as fh:
        lines = (line for line in fh if not line.startswith("#"))
        for row in csv.DictReader(lines):
            key = (row["problem"], float(row["epsilon"]))
            rows[key].append(row)

    results = []
    for (problem_id, epsilon), entries in rows.items():
        entries = sorted(entries, key=lambda r: int(r["component"]))
        l2 = np.array([float(r["rel_l2_mean"]) for r in entries])
        linf = np.array([float(r["rel_linf_mean"]) for r in entries])
        report = ErrorReport(
            rel_l2=l2,
            rel_linf=linf,
            n_test=int(entries[0]["n_test"]),
            trials=int(entries[0]["trials"]),
            per_trial_l2=l2[None],
            per_trial_linf=linf[None],
        )
        results.append((problem_id, epsilon, report))

    return results


def write_table_layout(
    filename: str | Path,
    problem_id: str,
    results: Sequence[tuple[float, ErrorReport]],
    header: str,
) -> None:
    """Write the errors as a table with one column per epsilon.

    Rows are the relative L2 and max errors of each component.
    """
    n = results[0][1].rel_l2.size if results else 0

    with Path(filename).open("w", newline="") as fh:
        fh.write(header + "\n")
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow([problem_id, *(float(eps) for eps, _ in results)])
        for k in range(n):
            suffix = f"u{k + 1}" if n > 1 else "u"
            writer.writerow(
                [f"rel_l2({suffix})", *(float(r.rel_l2[k]) for _, r in results)]
            )
            writer.writerow(
                [f"rel_linf({suffix})", *(float(r.rel_linf[k]) for _, r in results)]
            )
