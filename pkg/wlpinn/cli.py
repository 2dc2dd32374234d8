"""Command line experiment runner.

Subcommands:

- ``run``: train one problem at a single epsilon.
- ``sweep``: train one problem over a grid of epsilons and write the error tables.
- ``list``: show the registered problems.
- ``dump-fields``: write field dumps from a saved checkpoint.
"""

import csv
import logging
import sys
from dataclasses import dataclass
from pathlib import Path
from typing import TextIO

import h5py
import yaml

from . import config, db, metrics, network, optimizer, problems, sampling, util
from .network import InitConfig, ModelConfigError, SolutionModel
from .optimizer import LmConfig, TrainingAbortedError
from .problems import ProblemSpec, UnknownProblemError
from .sampling import SamplingCounts, SamplingError

logging.basicConfig(
    level=logging.INFO,
    format="%(asctime)s %(name)s %(levelname)s:%(message)s",
)
logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_TRAINING = 3
EXIT_IO = 4

# Keys of the resolved config that do not affect results
_UNHASHED = ("command", "config_file", "verbose", "checkpoint", "out_file")

COMMANDS = {
    "run": ("Train one problem at a single epsilon.", []),
    "sweep": ("Train one problem over a grid of epsilons.", []),
    "list": ("List the registered problems.", []),
    "dump-fields": (
        "Write field dumps from a saved checkpoint.",
        [
            ("--checkpoint", {"type": str, "required": True, "help": "HDF5 checkpoint."}),
            ("--out-file", {"type": str, "default": None, "help": "CSV file to write."}),
        ],
    ),
}


class ConfigError(ValueError):
    """The resolved configuration is invalid."""


@dataclass(frozen=True)
class ExperimentConfig:
    """A fully resolved experiment.

    Attributes
    ----------
    problem_id
        The registered problem to solve.
    epsilon_grid
        Perturbation parameters, each in (0, 1).
    trials
        Trials per epsilon, 1 to 5.
    hidden
        Hidden neurons per block.
    counts
        Training point counts.
    lm
        Optimiser settings.
    seed_base
        Trial k uses seed `seed_base + k`.
    output_dir
        Where the reports go.
    emit_fields
        Whether to write field dumps.
    irregular_full_inputs
        Feed the scaled level set to the regular block on irregular domains.
    drop_blocks
        Singular blocks left out of the model.
    sigma_scale
        Layer sampling width in units of epsilon.
    grid_points, layer_points
        Field dump grid sizes, problem defaults if None.
    """

    problem_id: str
    epsilon_grid: tuple[float, ...]
    trials: int
    hidden: int
    counts: SamplingCounts
    lm: LmConfig
    seed_base: int
    output_dir: Path
    emit_fields: bool = False
    irregular_full_inputs: bool = False
    drop_blocks: tuple[str, ...] = ()
    sigma_scale: float = 1.0
    grid_points: int | None = None
    layer_points: int | None = None

    @property
    def problem(self) -> ProblemSpec:
        return problems.get_problem(self.problem_id)

    @classmethod
    def from_conf(cls, conf: dict) -> "ExperimentConfig":
        """Validate a resolved config and fill in the problem defaults.

        Raises
        ------
        ConfigError
            For invalid values.
        UnknownProblemError
            If the problem is not registered.
        """
        problem = problems.get_problem(conf["problem"])

        eps = tuple(float(e) for e in conf["eps"])
        if not eps or any(not 0.0 < e < 1.0 for e in eps):
            raise ConfigError(f"Every epsilon must lie in (0, 1), got {list(eps)}.")

        trials = int(conf["trials"])
        if not 1 <= trials <= metrics.MAX_TRIALS:
            raise ConfigError(f"trials must be between 1 and 5, got {trials}.")
        if conf["seed"] < 0:
            raise ConfigError(f"seed must be non-negative, got {conf['seed']}.")

        hidden = conf["hidden"] if conf["hidden"] is not None else problem.hidden
        if hidden < 1:
            raise ConfigError(f"hidden must be positive, got {hidden}.")

        defaults = SamplingCounts.for_problem(problem)
        transition = conf["transition_per_side"]
        try:
            counts = SamplingCounts(
                conf["interior"] or defaults.interior,
                conf["layer_per_side"] or defaults.layer_per_side,
                conf["boundary"] or defaults.boundary,
                defaults.transition_per_side if transition is None else transition,
            )
            lm = LmConfig(
                max_iters=conf["max_iters"],
                loss_tol=conf["loss_tol"],
                lambda_init=conf["lambda_init"],
                lambda_up=conf["lambda_up"],
                lambda_down=conf["lambda_down"],
                min_lambda=conf["min_lambda"],
                max_lambda=conf["max_lambda"],
                step_tol=conf["step_tol"],
                max_rejections=conf["max_rejections"],
                penalty=conf["penalty"],
                penalty_decay=conf["penalty_decay"],
            )
        except ValueError as e:
            raise ConfigError(str(e)) from e

        if conf["sigma_scale"] <= 0:
            raise ConfigError(f"sigma_scale must be positive, got {conf['sigma_scale']}.")

        drop_blocks = tuple(conf["drop_blocks"])
        singular = network.singular_block_names(
            problem.geometry, conf["irregular_full_inputs"]
        )
        unknown = sorted(set(drop_blocks) - set(singular))
        if unknown:
            raise ConfigError(
                f"drop_blocks must name singular blocks of {problem.id} {singular}, "
                f"got {unknown}."
            )

        return cls(
            problem_id=problem.id,
            epsilon_grid=eps,
            trials=trials,
            hidden=hidden,
            counts=counts,
            lm=lm,
            seed_base=conf["seed"],
            output_dir=Path(conf["out"]),
            emit_fields=conf["emit_fields"],
            irregular_full_inputs=conf["irregular_full_inputs"],
            drop_blocks=drop_blocks,
            sigma_scale=conf["sigma_scale"],
            grid_points=conf["grid_points"],
            layer_points=conf["layer_points"],
        )


def list_problems(stream: TextIO | None = None) -> list[str]:
    """Print one line per registered problem and return the lines."""
    lines = [
        f"{p.id}  dim={p.dim}  n={p.n_components}  "
        f"exact={'yes' if p.has_exact else 'no'}  {p.title}"
        for p in problems.list_problems()
    ]
    for line in lines:
        print(line, file=stream or sys.stdout)
    return lines


def write_field_dump(  # noqa: PLR0913
    filename: str | Path,
    problem: ProblemSpec,
    model: SolutionModel,
    epsilon: float,
    header: str,
    grid_points: int | None = None,
    layer_points: int | None = None,
) -> None:
    """Write the solution on the uniform and layer-refined grids.

    Columns are the coordinates, the grid name, the component (from 1), the
    predicted u with its regular and singular parts, and the exact value and
    absolute error where the problem has a closed form.
    """
    grids = sampling.evaluation_grids(problem, epsilon, grid_points, layer_points)
    names = ["x", "y"][: problem.dim]
    columns = [*names, "grid", "component", "u_pred", "u_regular", "u_singular"]
    if problem.has_exact:
        columns += ["u_exact", "abs_err"]

    with Path(filename).open("w", newline="") as fh:
        fh.write(header + "\n")
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(columns)

        for grid_name, points in grids.items():
            out = network.component_outputs(model, points, epsilon)
            exact = (
                problems.exact_solution(problem, points, epsilon)
                if problem.has_exact
                else None
            )
            for i, p in enumerate(points):
                for k in range(model.n_components):
                    row = [
                        *(float(v) for v in p),
                        grid_name,
                        k + 1,
                        float(out["u"][i, k]),
                        float(out["regular"][i, k]),
                        float(out["singular"][i, k]),
                    ]
                    if exact is not None:
                        row += [
                            float(exact[i, k]),
                            float(abs(exact[i, k] - out["u"][i, k])),
                        ]
                    writer.writerow(row)


def _trial_columns(problem: ProblemSpec) -> list[str]:
    columns = ["epsilon", "trial", "seed", "final_loss", "iterations", "stop_reason"]
    if not problem.has_exact:
        return [*columns, "boundary_max_dev", "interior_max_abs"]
    for k in range(1, problem.n_components + 1):
        columns += [f"rel_l2_u{k}", f"rel_linf_u{k}"]
    return columns


def _train_trial(
    cfg: ExperimentConfig, problem: ProblemSpec, epsilon: float, trial: int, conf_hash: str
) -> dict:
    seed = cfg.seed_base + trial
    tag = f"{problem.id}_eps{util.format_epsilon(epsilon)}_trial{trial}"
    header = util.header_line(conf_hash, seed)

    colloc = sampling.sample_collocation(
        problem, epsilon, cfg.counts, seed, cfg.sigma_scale
    )
    model = network.build_model(
        problem.geometry,
        problem.n_components,
        cfg.hidden,
        problem.domain.level_sets(),
        epsilon,
        InitConfig(seed),
        full_inputs=cfg.irregular_full_inputs,
        drop_blocks=cfg.drop_blocks,
    )
    report = optimizer.train(problem, model, colloc, cfg.lm, epsilon=epsilon)

    optimizer.write_history_csv(cfg.output_dir / "history" / f"{tag}.csv", report, header)
    network.save_model(
        model,
        cfg.output_dir / "checkpoints" / f"{tag}.h5",
        problem.id,
        config_hash=conf_hash,
        seed=seed,
    )

    row = {
        "epsilon": float(epsilon),
        "trial": trial,
        "seed": seed,
        "final_loss": report.final_loss,
        "iterations": report.iterations,
        "stop_reason": report.stop_reason.value,
    }

    errors = None
    if problem.has_exact:
        test_set = sampling.sample_test_set(
            problem, epsilon, cfg.counts, seed, cfg.sigma_scale
        )
        errors = metrics.evaluate_model(problem, model, test_set, epsilon)
        for k in range(problem.n_components):
            row[f"rel_l2_u{k + 1}"] = float(errors.rel_l2[k])
            row[f"rel_linf_u{k + 1}"] = float(errors.rel_linf[k])
        logger.info(
            f"{problem.id} eps={epsilon:g} trial {trial}: loss={report.final_loss:.3e} "
            f"rel_l2={errors.rel_l2} rel_linf={errors.rel_linf}"
        )
        db.record_trial(
            problem.id, epsilon, trial, report, conf_hash, errors.rel_l2, errors.rel_linf
        )
    else:
        diag = metrics.equilibrium_diagnostics(model, problem, epsilon, seed)
        row["boundary_max_dev"] = diag.boundary_max_dev
        row["interior_max_abs"] = diag.interior_max_abs
        logger.info(
            f"{problem.id} eps={epsilon:g} trial {trial}: loss={report.final_loss:.3e} "
            f"max|u-g|={diag.boundary_max_dev:.3e} max|u| inside={diag.interior_max_abs:.3e}"
        )
        db.record_trial(problem.id, epsilon, trial, report, conf_hash)

    if cfg.emit_fields and trial == 0:
        write_field_dump(
            cfg.output_dir / "fields" / f"{problem.id}_eps{util.format_epsilon(epsilon)}.csv",
            problem,
            model,
            epsilon,
            header,
            cfg.grid_points,
            cfg.layer_points,
        )

    return {"row": row, "errors": errors}


def _write_error_tables(
    cfg: ExperimentConfig, problem: ProblemSpec, results: list, header: str
) -> None:
    metrics.write_error_table(
        cfg.output_dir / f"errors_{problem.id}.csv",
        [(problem.id, eps, r) for eps, r in results],
        header,
    )
    metrics.write_table_layout(
        cfg.output_dir / f"table_{problem.id}.csv", problem.id, results, header
    )


def _run(cfg: ExperimentConfig, conf_hash: str) -> None:
    problem = cfg.problem
    for sub in ("history", "checkpoints", "fields"):
        (cfg.output_dir / sub).mkdir(parents=True, exist_ok=True)

    header = util.header_line(conf_hash, cfg.seed_base)
    db.connect(str(cfg.output_dir / "runs.sqlite"), readonly=False)

    # Rows are flushed as trials finish, the error tables after every epsilon
    results = []
    try:
        with (cfg.output_dir / f"trials_{problem.id}.csv").open("w", newline="") as fh:
            fh.write(header + "\n")
            writer = csv.DictWriter(
                fh, fieldnames=_trial_columns(problem), lineterminator="\n"
            )
            writer.writeheader()

            for epsilon in cfg.epsilon_grid:
                errors = []
                for trial in range(cfg.trials):
                    outcome = _train_trial(cfg, problem, epsilon, trial, conf_hash)
                    writer.writerow(outcome["row"])
                    fh.flush()
                    errors.append(outcome["errors"])

                if problem.has_exact:
                    results.append((epsilon, metrics.aggregate_trials(errors)))
                    _write_error_tables(cfg, problem, results, header)
    finally:
        db.close()


def run_experiment(cfg: ExperimentConfig, conf_hash: str = "") -> int:
    """Sample, build, train and evaluate every (epsilon, trial) and write the reports.

    Returns
    -------
    status
        `EXIT_OK`, `EXIT_TRAINING` if training or sampling failed, or `EXIT_IO` if the
        output could not be written.
    """
    try:
        _run(cfg, conf_hash)
    except (TrainingAbortedError, SamplingError) as e:
        logger.error(f"Training aborted: {e}")
        return EXIT_TRAINING
    except OSError as e:
        logger.error(f"Could not write output: {e}")
        return EXIT_IO

    logger.info(f"Wrote reports to {cfg.output_dir}")
    return EXIT_OK


def dump_fields(checkpoint: str, out_file: str | None, conf: dict, conf_hash: str) -> int:
    """Reload a checkpoint and write its field dump."""
    with h5py.File(checkpoint, mode="r") as fh:
        problem_id = str(fh.attrs.get("problem", ""))
    problem = problems.get_problem(problem_id)

    model, attrs = network.load_model(checkpoint, problem.domain.level_sets())
    epsilon = float(attrs["epsilon"])
    out_file = out_file or str(Path(checkpoint).with_suffix(".fields.csv"))

    write_field_dump(
        out_file,
        problem,
        model,
        epsilon,
        util.header_line(conf_hash, conf["seed"]),
        conf["grid_points"],
        conf["layer_points"],
    )
    logger.info(f"Wrote field dump of {problem_id} at eps={epsilon:g} to {out_file}")
    return EXIT_OK


def main(argv: list[str] | None = None) -> int:
    """Main entry point of the wlpinn command."""
    try:
        conf = config.process_args_and_config(
            prog="wlpinn",
            description="Weighted-loss PINN solver for boundary-layer problems.",
            schema=config.schema,
            sections=config.sections,
            commands=COMMANDS,
            argv=argv,
        )
    except OSError as e:
        logger.error(f"Could not read configuration: {e}")
        return EXIT_IO
    except (ValueError, yaml.YAMLError) as e:
        logger.error(f"Invalid configuration: {e}")
        return EXIT_CONFIG

    if conf.get("verbose"):
        logging.getLogger().setLevel(logging.DEBUG)

    conf_hash = util.config_hash({k: v for k, v in conf.items() if k not in _UNHASHED})

    try:
        match conf["command"]:
            case "list":
                list_problems()
                return EXIT_OK
            case "dump-fields":
                return dump_fields(conf["checkpoint"], conf["out_file"], conf, conf_hash)
            case "run" | "sweep":
                cfg = ExperimentConfig.from_conf(conf)
                if conf["command"] == "run" and len(cfg.epsilon_grid) != 1:
                    raise ConfigError(
                        f"run takes exactly one epsilon, got {list(cfg.epsilon_grid)}. "
                        "Use sweep for several."
                    )
                return run_experiment(cfg, conf_hash)
    except (ConfigError, UnknownProblemError, ModelConfigError) as e:
        logger.error(f"Invalid configuration: {e}")
        return EXIT_CONFIG
    except OSError as e:
        logger.error(f"I/O error: {e}")
        return EXIT_IO

    return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
