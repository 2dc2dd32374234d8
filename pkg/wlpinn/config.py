"""Tools for loading the configuration from files or CLI args."""
import argparse
import logging
from collections.abc import Callable, Iterator, Sequence
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Generic, TypeVar

import yaml

logger = logging.getLogger(__name__)

T = TypeVar("T")


@dataclass(frozen=True)
class Param(Generic[T]):
    """A configurable value with its type, default and help text.

    Attributes
    ----------
    ptype
        Type the raw value is converted to.
    default
        Used when neither a file nor the command line sets the value.
    description
        Help text, also shown by `--help`.
    conv
        Converter used instead of `ptype`, e.g. for lists given on the command line.
    """

    ptype: type[T]
    default: T | None
    description: str
    conv: Callable[[Any], T] | None = None

    def get_value(self, value: Any) -> T | None:
        """Get the value with any conversions applied."""
        if value is None:
            return None
        return (self.conv or self.ptype)(value)


def to_bool(value: str | bool | int) -> bool:
    """Interpret yes/no style strings from the command line."""
    if isinstance(value, bool):
        return value
    text = str(value).strip().lower()
    if text in ("1", "true", "yes", "on"):
        return True
    if text in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"Cannot interpret {value!r} as a boolean.")


def to_float_list(value: str | float | Sequence[float]) -> list[float]:
    """Comma separated floats on the command line, a list or scalar in YAML."""
    if isinstance(value, str):
        return [float(v) for v in value.split(",") if v.strip()]
    if isinstance(value, int | float):
        return [float(value)]
    return [float(v) for v in value]


def to_str_list(value: str | Sequence[str] | None) -> list[str]:
    """Comma separated names on the command line, a list or scalar in YAML."""
    if value is None:
        return []
    if isinstance(value, str):
        return [v.strip() for v in value.split(",") if v.strip()]
    return [str(v) for v in value]


schema = {
    "experiment": {
        "problem": Param(str, "ex1", "The problem id to solve (ex1 ... ex7)."),
        "eps": Param(
            list[float],
            [1e-2, 1e-4, 1e-6, 1e-8, 1e-10],
            (
                "The perturbation parameters to solve for. On the command line use a "
                "comma separated list."
            ),
            to_float_list,
        ),
        "trials": Param(int, 5, "Independent trials per epsilon (at most 5)."),
        "seed": Param(int, 0, "Base seed, trial k uses seed + k."),
        "out": Param(str, "results", "Directory to write the reports into."),
        "emit_fields": Param(
            bool, False, "Write solution field dumps for plotting.", to_bool
        ),
        "grid_points": Param(
            int, None, "Uniform field grid points per axis (1001 in 1D, 201 in 2D)."
        ),
        "layer_points": Param(
            int, None, "Geometric layer-grid offsets per side (1001 in 1D, 101 in 2D)."
        ),
    },
    "model": {
        "hidden": Param(
            int, None, "Hidden neurons per block. Defaults to the problem's value."
        ),
        "irregular_full_inputs": Param(
            bool,
            False,
            "Feed the scaled level set to the regular block too (irregular domains).",
            to_bool,
        ),
        "drop_blocks": Param(
            list[str],
            [],
            (
                "Singular blocks to leave out, e.g. R for a layer known to be absent. "
                "On the command line use a comma separated list."
            ),
            to_str_list,
        ),
    },
    "sampling": {
        "interior": Param(int, None, "Uniform interior collocation points."),
        "layer_per_side": Param(int, None, "Layer collocation points per side."),
        "boundary": Param(int, None, "Boundary collocation points."),
        "sigma_scale": Param(
            float, 1.0, "Layer sampling standard deviation as a multiple of epsilon."
        ),
        "transition_per_side": Param(
            int,
            None,
            "Log-spaced points between the layer and the interior, per boundary piece.",
        ),
    },
    "lm": {
        "max_iters": Param(int, 2000, "Maximum Levenberg-Marquardt iterations."),
        "loss_tol": Param(float, 1e-15, "Stop once the loss falls below this."),
        "lambda_init": Param(float, 1e-3, "Initial damping."),
        "lambda_up": Param(float, 3.0, "Damping factor applied on a rejected step."),
        "lambda_down": Param(float, 1 / 3, "Damping factor applied on an accepted step."),
        "min_lambda": Param(float, 1e-14, "Lower bound of the damping."),
        "max_lambda": Param(float, 1e14, "Damping above which training is stalled."),
        "step_tol": Param(float, 1e-15, "Relative step size regarded as stalled."),
        "max_rejections": Param(int, 50, "Rejected proposals allowed per iteration."),
        "penalty": Param(
            float, 1e-5, "Initial weight of the singular hidden parameter penalty."
        ),
        "penalty_decay": Param(
            float, 0.95, "Factor applied to the penalty after every accepted step."
        ),
    },
}

sections = list(schema)


def _common_parser(params: dict[str, Param]) -> argparse.ArgumentParser:
    """Options shared by every subcommand, one flag per parameter."""
    parser = argparse.ArgumentParser(add_help=False)
    parser.add_argument(
        "--config-file",
        type=str,
        help="A configuration file to use which overrides any other locations.",
    )
    parser.add_argument("--verbose", action="store_true", help="Log at DEBUG level.")

    # Values stay strings here, the Param converts them once resolved
    for name, param in params.items():
        flag = "--" + name.replace(".", "-").replace("_", "-")
        parser.add_argument(flag, dest=name, type=str, help=param.description)

    return parser


def process_args_and_config(  # noqa: PLR0913
    prog: str,
    description: str,
    schema: dict,
    configbase: str | None = None,
    sections: list[str] | None = None,
    commands: dict[str, tuple[str, list[tuple[str, dict]]]] | None = None,
    argv: Sequence[str] | None = None,
) -> dict:
    """Load config and process any command line arguments and return the final config.

    Parameters
    ----------
    prog
        Name of the program for the help message.
    description
        A short description of the program.
    schema
        The configuration schema. A series of nested dictionaries with terminal `Param`
        entries.
    configbase
        Name to use when resolving the config files.
    sections
        Schema sections to map to the root level.
    commands
        Subcommands to offer. Maps the command name to its help string and a list of
        extra arguments (name and kwargs for `ArgumentParser.add_argument`). The chosen
        command is returned under the key "command". If not set no subcommands are
        used.
    argv
        Arguments to parse instead of `sys.argv`.

    Returns
    -------
    conf
        The final config.
    """
    params = _flatten_dict(_get_sections(schema, sections))
    common = _common_parser(params)

    if commands is None:
        parser = argparse.ArgumentParser(
            prog=prog, description=description, parents=[common]
        )
    else:
        parser = argparse.ArgumentParser(prog=prog, description=description)
        subparsers = parser.add_subparsers(dest="command", required=True)
        for name, (help_text, extra_args) in commands.items():
            sub = subparsers.add_parser(name, help=help_text, parents=[common])
            for argname, kwargs in extra_args:
                sub.add_argument(argname, **kwargs)

    args = parser.parse_args(argv)
    files = load_standard_config_files(
        configbase or prog, args.config_file, sections=sections
    )

    return resolve_config(params, vars(args), files)


def _config_paths(name: str, extra_file: str | None) -> Iterator[Path]:
    """Candidate config files, highest precedence first."""
    if extra_file:
        path = Path(extra_file).expanduser()
        if not path.exists():
            raise FileNotFoundError(f"Config file {extra_file} does not exist.")
        yield path.absolute()

    for base in ("~/.config", "/etc/xdg", "/etc"):
        yield Path(base, name, f"{name}.conf").expanduser().absolute()


def load_standard_config_files(
    name: str, extra_file: str | None = None, sections: list[str] | None = None
) -> list[dict]:
    """Load config files from the standard locations.

    This will read any files located at the extra_file path, and then
    ~/.config/<NAME>/<NAME>.conf, /etc/xdg/<NAME>/<NAME>.conf, /etc/<NAME>/<NAME>.conf.

    Parameters
    ----------
    name
        The basename to use for the file.
    extra_file
        An arbitrary path that is read and returned first. It must exist.
    sections
        Sections to extract from the config file. These are extracted and merged into
        the top level.

    Returns
    -------
    list
        A list of the config entries as dictionaries. Missing files are omitted.
    """
    configs = []

    for path in _config_paths(name, extra_file):
        if not path.exists():
            continue

        logger.debug(f"Loading config file {path}")
        with path.open("r") as fh:
            conf = yaml.safe_load(fh) or {}

        if not isinstance(conf, dict):
            raise ValueError(f"Config file {path} does not contain a mapping.")
        configs.append(_get_sections(conf, sections))

    return configs


def resolve_config(
    params: dict[str, Param],
    cli_args: dict,
    file_config: list[dict],
) -> dict:
    """Resolve all sources to a final config.

    Precedence is defaults, then the files (the first file in the list wins), then the
    command line. Keys not in `params` are only taken from the command line.
    """
    layers = [{name: p.default for name, p in params.items()}]

    # Lowest precedence file first, unknown keys and nulls dropped
    for conf in reversed(file_config):
        flat = _flatten_dict(conf)
        layers.append({k: v for k, v in flat.items() if k in params and v is not None})

    # Unset flags must not mask an earlier level, extra arguments always pass
    layers.append({k: v for k, v in cli_args.items() if v is not None or k not in params})

    resolved = {}
    for layer in layers:
        resolved |= layer

    return {
        k: (params[k].get_value(v) if k in params else v) for k, v in resolved.items()
    }


def _flatten_dict(d: dict[str, Any], sep: str = ".", prefix: str = "") -> dict[str, Any]:
    """Flatten nested dictionaries into a single layer.

    The final keys are separated by `sep`, and the order of the leaves is kept.
    """
    flat = {}

    for key, value in d.items():
        if not isinstance(key, str):
            raise TypeError(f"Only string keys are supported, got {key!r}.")
        if sep in key:
            raise ValueError(f"Key {key!r} contains the separator {sep!r}.")

        name = f"{prefix}{sep}{key}" if prefix else key
        if isinstance(value, dict):
            flat |= _flatten_dict(value, sep, name)
        else:
            flat[name] = value

    return flat


def _get_sections(d: dict, sections: list[str] | None) -> dict:
    """Extract the named section keys from d and return the merged result."""
    if sections is None:
        return d

    merged = {}
    for section in sections:
        merged |= d.get(section) or {}
    return merged
