"""Sigmoid MLP blocks and the decomposed solution ansätze built from them.

Every block has a single sigmoid hidden layer and a linear output layer without bias.
A model owns one flat parameter vector; each block's parameters are a view into it,
laid out as hidden weights (row-major), hidden biases, then output weights
(row-major), blocks in layout order.
"""

from __future__ import annotations

import functools
import logging
import operator
from collections.abc import Callable, Sequence
from dataclasses import dataclass
from enum import Enum
from pathlib import Path

import h5py
import numpy as np
from scipy.special import expit

from . import __version__, util
from .autodiff import Jet2, as_points, check_epsilon, seed_coordinates

logger = logging.getLogger(__name__)

LevelSet = Callable[[Sequence[Jet2]], Jet2]


class ModelConfigError(ValueError):
    """The requested model cannot be built or restored."""


class Geometry(Enum):
    """The three decompositions of the solution."""

    ONE_D = "1d"
    TWO_D_REGULAR = "2d-regular"
    TWO_D_IRREGULAR = "2d-irregular"

    @property
    def dim(self) -> int:
        return 1 if self is Geometry.ONE_D else 2


class Role(Enum):
    """How a block enters the assembled solution."""

    ADDITIVE = "additive"
    X_FACTOR = "x-factor"
    Y_FACTOR = "y-factor"


@dataclass(frozen=True)
class BlockLayout:
    name: str
    features: tuple[str, ...]
    role: Role
    singular: bool


# Names of the level sets each geometry expects, in order
LEVEL_SET_NAMES = {
    Geometry.ONE_D: ("L", "R"),
    Geometry.TWO_D_REGULAR: ("L", "R", "B", "T"),
    Geometry.TWO_D_IRREGULAR: ("s",),
}


def _layout(geometry: Geometry, full_inputs: bool) -> list[BlockLayout]:
    add, xf, yf = Role.ADDITIVE, Role.X_FACTOR, Role.Y_FACTOR

    match geometry:
        case Geometry.ONE_D:
            return [
                BlockLayout("r", ("x",), add, False),
                BlockLayout("L", ("phi_L",), add, True),
                BlockLayout("R", ("phi_R",), add, True),
            ]
        case Geometry.TWO_D_REGULAR:
            return [
                BlockLayout("r", ("x", "y"), add, False),
                BlockLayout("rx", ("x", "y"), xf, False),
                BlockLayout("L", ("phi_L",), xf, True),
                BlockLayout("R", ("phi_R",), xf, True),
                BlockLayout("ry", ("x", "y"), yf, False),
                BlockLayout("B", ("phi_B",), yf, True),
                BlockLayout("T", ("phi_T",), yf, True),
            ]
        case Geometry.TWO_D_IRREGULAR:
            regular = ("x", "y", "phi_s") if full_inputs else ("x", "y")
            return [
                BlockLayout("r", regular, add, False),
                BlockLayout("s", ("x", "y", "phi_s"), add, True),
            ]

    raise ModelConfigError(f"Unknown geometry {geometry!r}.")


def singular_block_names(geometry: Geometry, full_inputs: bool = False) -> list[str]:
    """Names of the singular blocks of a geometry, in layout order."""
    return [b.name for b in _layout(geometry, full_inputs) if b.singular]


@dataclass
class MlpBlock:
    """A single-hidden-layer sigmoid block without output bias.

    Attributes
    ----------
    name
        Name of the block within its model.
    input_dim, hidden, output_dim
        Layer sizes.
    params
        Flat parameter view of length `count(input_dim, hidden, output_dim)`.
    """

    name: str
    input_dim: int
    hidden: int
    output_dim: int
    params: np.ndarray

    @staticmethod
    def count(input_dim: int, hidden: int, output_dim: int) -> int:
        return hidden * input_dim + hidden + output_dim * hidden

    @property
    def n_params(self) -> int:
        return self.params.size

    @property
    def hidden_weights(self) -> np.ndarray:
        return self.params[: self.hidden * self.input_dim].reshape(
            self.hidden, self.input_dim
        )

    @property
    def hidden_biases(self) -> np.ndarray:
        start = self.hidden * self.input_dim
        return self.params[start : start + self.hidden]

    @property
    def output_weights(self) -> np.ndarray:
        start = self.hidden * (self.input_dim + 1)
        return self.params[start:].reshape(self.output_dim, self.hidden)

    def evaluate(self, z: np.ndarray) -> np.ndarray:
        """Plain forward pass on inputs with trailing axis `input_dim`."""
        return expit(z @ self.hidden_weights.T + self.hidden_biases) @ self.output_weights.T


@dataclass(frozen=True)
class AxisLevelSet:
    """Signed distance to an axis-aligned boundary, coord[axis] - origin."""

    axis: int
    origin: float

    def __call__(self, coords: Sequence[Jet2]) -> Jet2:
        return coords[self.axis] - self.origin


@dataclass(frozen=True)
class InitConfig:
    """Seeded initialisation.

    Hidden weights and biases are uniform in [-s, s] with s = sqrt(6 / (fan_in + h));
    output weights are uniform in [-1/sqrt(h), 1/sqrt(h)].
    """

    seed: int = 0


class SolutionModel:
    """A decomposed solution ansatz over a set of sigmoid blocks.

    Parameters
    ----------
    geometry
        Which decomposition to use.
    n_components
        Components of the solution (every block outputs this many).
    hidden
        Hidden neurons per block.
    level_sets
        One callable per name in `LEVEL_SET_NAMES[geometry]`, mapping coordinate jets
        to the level-set jet.
    epsilon
        The perturbation parameter the model is built for.
    full_inputs
        For irregular domains, also feed the scaled level set to the regular block.
    drop_blocks
        Names of singular blocks to omit (for layers known to be absent).
    """

    def __init__(  # noqa: PLR0913
        self,
        geometry: Geometry,
        n_components: int,
        hidden: int,
        level_sets: Sequence[LevelSet],
        epsilon: float,
        full_inputs: bool = False,
        drop_blocks: Sequence[str] = (),
    ) -> None:
        if not isinstance(geometry, Geometry):
            raise ModelConfigError(f"Unknown geometry {geometry!r}.")
        if hidden < 1 or n_components < 1:
            raise ModelConfigError(
                f"Need hidden >= 1 and n_components >= 1, got {hidden} and "
                f"{n_components}."
            )
        if not (np.isfinite(epsilon) and epsilon > 0):
            raise ModelConfigError(f"epsilon must be positive, got {epsilon}.")

        names = LEVEL_SET_NAMES[geometry]
        if len(level_sets) != len(names):
            raise ModelConfigError(
                f"Geometry {geometry.value} needs {len(names)} level sets, got "
                f"{len(level_sets)}."
            )

        layout = _layout(geometry, full_inputs)
        singular = {b.name for b in layout if b.singular}
        unknown = set(drop_blocks) - singular
        if unknown:
            raise ModelConfigError(
                f"Only singular blocks {sorted(singular)} can be dropped, got "
                f"{sorted(unknown)}."
            )
        layout = [b for b in layout if b.name not in drop_blocks]

        self.geometry = geometry
        self.n_components = n_components
        self.hidden = hidden
        self.epsilon = float(epsilon)
        self.full_inputs = full_inputs
        self.level_sets = dict(zip(names, level_sets))
        self.layout = {b.name: b for b in layout}

        sizes = [MlpBlock.count(len(b.features), hidden, n_components) for b in layout]
        self.block_offsets = np.concatenate([[0], np.cumsum(sizes)]).astype(np.int64)
        self.theta = np.zeros(int(self.block_offsets[-1]), dtype=np.float64)

        self.blocks = {
            b.name: MlpBlock(
                b.name,
                len(b.features),
                hidden,
                n_components,
                self.theta[self.block_offsets[i] : self.block_offsets[i + 1]],
            )
            for i, b in enumerate(layout)
        }

    @property
    def dim(self) -> int:
        return self.geometry.dim

    @property
    def n_params(self) -> int:
        return self.theta.size

    def get_theta(self) -> np.ndarray:
        """A copy of the flat parameter vector."""
        return self.theta.copy()

    def set_theta(self, theta: np.ndarray) -> None:
        """Overwrite the parameters in place (the block views stay valid)."""
        theta = np.asarray(theta, dtype=np.float64)
        if theta.shape != self.theta.shape:
            raise ValueError(
                f"Expected {self.theta.size} parameters, got shape {theta.shape}."
            )
        if not np.all(np.isfinite(theta)):
            raise ValueError("Parameters must be finite.")
        self.theta[:] = theta

    def block_inputs(self, coords: Sequence[Jet2], epsilon: float) -> dict[str, Jet2]:
        """Input jets of every block, with level sets scaled by 1/epsilon."""
        features = {"x": coords[0]}
        if self.dim == 2:
            features["y"] = coords[1]

        needed = {f for b in self.layout.values() for f in b.features}
        for name, phi in self.level_sets.items():
            if f"phi_{name}" in needed:
                features[f"phi_{name}"] = phi(coords) / epsilon

        return {
            name: Jet2.stack([features[f] for f in b.features], axis=-1)
            for name, b in self.layout.items()
        }

    def factor_group(self, outputs: dict, role: Role) -> list:
        """Outputs of the blocks with the given role, in layout order."""
        return [outputs[n] for n, b in self.layout.items() if b.role is role]

    def combine(self, outputs: dict[str, Jet2 | np.ndarray]) -> Jet2 | np.ndarray:
        """Assemble u from block outputs (works on arrays or jets).

        Additive blocks are summed; for the regular 2D geometry the x-factor and
        y-factor groups are summed separately and multiplied componentwise.
        """
        total = functools.reduce(operator.add, self.factor_group(outputs, Role.ADDITIVE))
        if self.geometry is Geometry.TWO_D_REGULAR:
            x_factor = functools.reduce(operator.add, self.factor_group(outputs, Role.X_FACTOR))
            y_factor = functools.reduce(operator.add, self.factor_group(outputs, Role.Y_FACTOR))
            total = total + x_factor * y_factor
        return total

    def combine_tangents(
        self, outputs: dict[str, Jet2], tangents: dict[str, Jet2]
    ) -> Jet2:
        """Parameter tangents of the assembled solution, columns in `theta` order."""
        if self.geometry is Geometry.TWO_D_REGULAR:
            x_factor = functools.reduce(
                operator.add, self.factor_group(outputs, Role.X_FACTOR)
            ).expand(-1)
            y_factor = functools.reduce(
                operator.add, self.factor_group(outputs, Role.Y_FACTOR)
            ).expand(-1)

        parts = []
        for name, b in self.layout.items():
            match b.role:
                case Role.ADDITIVE:
                    parts.append(tangents[name])
                case Role.X_FACTOR:
                    parts.append(tangents[name] * y_factor)
                case Role.Y_FACTOR:
                    parts.append(x_factor * tangents[name])

        return Jet2.concatenate(parts, axis=-1)

    def block_values(self, points: np.ndarray, epsilon: float) -> dict[str, np.ndarray]:
        """Raw output of every block at a batch of points."""
        inputs = self.block_inputs(seed_coordinates(points, None), epsilon)
        return {
            name: block.evaluate(inputs[name].value)
            for name, block in self.blocks.items()
        }


def initialize(model: SolutionModel, init: InitConfig) -> None:
    """Draw fresh parameters for every block, in block order."""
    rng = util.make_rng(init.seed, util.INIT_STREAM)

    for block in model.blocks.values():
        s = np.sqrt(6.0 / (block.input_dim + block.hidden))
        block.hidden_weights[:] = rng.uniform(-s, s, block.hidden_weights.shape)
        block.hidden_biases[:] = rng.uniform(-s, s, block.hidden_biases.shape)
        t = 1.0 / np.sqrt(block.hidden)
        block.output_weights[:] = rng.uniform(-t, t, block.output_weights.shape)


def build_model(  # noqa: PLR0913
    geometry: Geometry,
    n_components: int,
    hidden: int,
    level_sets: Sequence[LevelSet],
    epsilon: float,
    init: InitConfig | None = None,
    full_inputs: bool = False,
    drop_blocks: Sequence[str] = (),
) -> SolutionModel:
    """Build and initialise a solution model.

    Parameters
    ----------
    geometry, n_components, hidden, level_sets, epsilon, full_inputs, drop_blocks
        See `SolutionModel`.
    init
        Initialisation settings, seed 0 if not given.

    Returns
    -------
    model
        The initialised model.
    """
    model = SolutionModel(
        geometry,
        n_components,
        hidden,
        level_sets,
        epsilon,
        full_inputs=full_inputs,
        drop_blocks=drop_blocks,
    )
    initialize(model, init or InitConfig())
    logger.debug(
        f"Built {geometry.value} model with blocks {list(model.blocks)} and "
        f"{model.n_params} parameters."
    )
    return model


def singular_hidden_mask(model: SolutionModel) -> np.ndarray:
    """Boolean mask over `theta` of the hidden weights and biases of singular blocks.

    These set where each singular neuron switches, -b / W in units of epsilon.
    """
    mask = np.zeros(model.n_params, dtype=bool)
    for i, (name, b) in enumerate(model.layout.items()):
        if b.singular:
            block = model.blocks[name]
            start = int(model.block_offsets[i])
            mask[start : start + block.hidden * (block.input_dim + 1)] = True
    return mask


def forward(model: SolutionModel, point: np.ndarray, epsilon: float) -> np.ndarray:
    """Evaluate u at a point (shape (d,)) or batch of points (shape (N, d)).

    Returns
    -------
    u
        Shape (n,) for a single point, else (N, n).
    """
    check_epsilon(epsilon)
    points, single = as_points(point, model.dim)
    u = model.combine(model.block_values(points, epsilon))
    return u[0] if single else u


def component_outputs(
    model: SolutionModel, point: np.ndarray, epsilon: float
) -> dict[str, np.ndarray]:
    """Every block's output plus the assembled split of the solution.

    The keys are the block names, "regular", "singular" and "u" (and "x_factor",
    "y_factor" for the regular 2D geometry). u = regular + singular.
    """
    check_epsilon(epsilon)
    points, single = as_points(point, model.dim)
    outputs = model.block_values(points, epsilon)
    u = model.combine(outputs)

    regular = outputs["r"]
    if model.geometry is Geometry.TWO_D_REGULAR:
        x_factor = sum(model.factor_group(outputs, Role.X_FACTOR))
        y_factor = sum(model.factor_group(outputs, Role.Y_FACTOR))
        # The product of the two regular factor blocks is smooth
        regular = regular + outputs["rx"] * outputs["ry"]
        outputs |= {"x_factor": x_factor, "y_factor": y_factor}

    outputs |= {"regular": regular, "singular": u - regular, "u": u}

    if single:
        return {k: v[0] for k, v in outputs.items()}
    return outputs


def save_model(  # noqa: PLR0913
    model: SolutionModel,
    filename: str | Path,
    problem: str = "",
    config_hash: str = "",
    seed: int | None = None,
) -> None:
    """Write a model checkpoint to an HDF5 file.

    The attributes carry the same provenance as the header line of the CSV reports.

    Parameters
    ----------
    model
        The model to save.
    filename
        Path of the file to create (overwritten if it exists).
    problem
        Id of the problem the model was trained on.
    config_hash
        Hash of the configuration that produced the model.
    seed
        Seed of the trial, not written if None.
    """
    with h5py.File(filename, mode="w") as fh:
        fh.create_dataset("theta", data=model.theta)
        fh.create_dataset("block_offsets", data=model.block_offsets)
        fh.attrs["geometry"] = model.geometry.value
        fh.attrs["n_components"] = model.n_components
        fh.attrs["hidden"] = model.hidden
        fh.attrs["epsilon"] = model.epsilon
        fh.attrs["problem"] = problem
        fh.attrs["full_inputs"] = model.full_inputs
        fh.attrs["block_names"] = list(model.blocks)
        fh.attrs["version"] = __version__
        fh.attrs["config_hash"] = config_hash
        if seed is not None:
            fh.attrs["seed"] = seed


def load_model(
    filename: str | Path, level_sets: Sequence[LevelSet]
) -> tuple[SolutionModel, dict]:
    """Restore a model written by `save_model`.

    Parameters
    ----------
    filename
        The checkpoint to read.
    level_sets
        The level sets of the problem's domain (they are code, not data).

    Returns
    -------
    model
        The restored model, parameters bitwise identical to the saved ones.
    attrs
        The checkpoint attributes.
    """
    with h5py.File(filename, mode="r") as fh:
        try:
            attrs = {k: fh.attrs[k] for k in fh.attrs}
            theta = fh["theta"][:]
            geometry = Geometry(str(attrs["geometry"]))
            block_names = [str(n) for n in attrs["block_names"]]
            model = SolutionModel(
                geometry,
                int(attrs["n_components"]),
                int(attrs["hidden"]),
                level_sets,
                float(attrs["epsilon"]),
                full_inputs=bool(attrs["full_inputs"]),
                drop_blocks=[
                    b.name
                    for b in _layout(geometry, bool(attrs["full_inputs"]))
                    if b.name not in block_names
                ],
            )
        except (KeyError, ValueError) as e:
            raise ModelConfigError(f"Invalid checkpoint {filename}: {e}") from e

    if list(model.blocks) != block_names or theta.shape != model.theta.shape:
        raise ModelConfigError(
            f"Checkpoint {filename} does not match its declared layout."
        )
    model.set_theta(theta)
    for key in ("problem", "version", "config_hash"):
        attrs[key] = str(attrs.get(key, ""))
    return model, attrs
