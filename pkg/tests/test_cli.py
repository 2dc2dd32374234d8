"""Test the wlpinn command."""

import csv
from pathlib import Path

import pytest

from wlpinn import cli, config, db, metrics, network, optimizer, problems
from wlpinn.cli import ConfigError, ExperimentConfig

TINY = [
    "--trials", "1",
    "--hidden", "3",
    "--interior", "10",
    "--layer-per-side", "5",
    "--boundary", "4",
    "--transition-per-side", "5",
    "--max-iters", "2",
]  # fmt: skip


def _csv_files(root):
    return {p.relative_to(root): p.read_bytes() for p in sorted(root.rglob("*.csv"))}


def _default_conf(**overrides):
    params = config._flatten_dict(config._get_sections(config.schema, config.sections))
    return config.resolve_config(params, {}, []) | overrides


def test_list(capsys):
    """Every problem gets one line."""
    assert cli.main(["list"]) == cli.EXIT_OK

    lines = capsys.readouterr().out.splitlines()
    assert [line.split()[0] for line in lines] == [f"ex{k}" for k in range(1, 8)]
    assert "exact=no" in lines[-1]


def test_config_defaults():
    """Problem defaults fill in unset sizes."""
    cfg = ExperimentConfig.from_conf(_default_conf(problem="ex6"))

    assert cfg.hidden == 35
    assert (cfg.counts.interior, cfg.counts.layer_per_side, cfg.counts.boundary) == (
        500,
        500,
        880,
    )
    assert cfg.epsilon_grid == (1e-2, 1e-4, 1e-6, 1e-8, 1e-10)
    assert cfg.output_dir == Path("results")
    assert cfg.counts.transition_per_side == 100
    assert cfg.lm.max_iters == 2000
    assert cfg.lm.penalty == 1e-5
    assert cfg.drop_blocks == ()


@pytest.mark.parametrize(
    "overrides",
    [
        {"eps": [0.0]},
        {"eps": [1.5]},
        {"eps": []},
        {"trials": 6},
        {"trials": 0},
        {"seed": -1},
        {"hidden": 0},
        {"sigma_scale": 0.0},
        {"lambda_up": 0.5},
        {"interior": -3},
        {"transition_per_side": -1},
        {"penalty_decay": 0.0},
        {"drop_blocks": ["r"]},
        {"drop_blocks": ["Z"]},
    ],
)
def test_config_rejects(overrides):
    """Out of range values are configuration errors."""
    with pytest.raises(ConfigError):
        ExperimentConfig.from_conf(_default_conf(**overrides))


@pytest.mark.parametrize(
    "argv",
    [
        ["run", "--problem", "ex9", "--eps", "0.1"],
        ["run", "--problem", "ex1", "--eps", "0.1,0.01"],
        ["sweep", "--problem", "ex1", "--trials", "9"],
        ["sweep", "--problem", "ex1", "--trials", "many"],
    ],
)
def test_invalid_invocations(argv, tmp_path):
    """Bad problems, epsilons and trial counts exit with 2."""
    assert cli.main([*argv, "--out", str(tmp_path)]) == cli.EXIT_CONFIG


def test_tiny_run(tmp_path):
    """A short run writes every report and repeats byte for byte."""
    argv = ["run", "--problem", "ex1", "--eps", "0.1", "--out", str(tmp_path), *TINY]
    argv += ["--emit-fields", "yes"]

    assert cli.main(argv) == cli.EXIT_OK

    for name in (
        "trials_ex1.csv",
        "errors_ex1.csv",
        "table_ex1.csv",
        "history/ex1_eps1e-1_trial0.csv",
        "checkpoints/ex1_eps1e-1_trial0.h5",
        "fields/ex1_eps1e-1.csv",
        "runs.sqlite",
    ):
        assert (tmp_path / name).exists(), name

    with (tmp_path / "trials_ex1.csv").open() as fh:
        rows = list(csv.DictReader(line for line in fh if not line.startswith("#")))
    assert len(rows) == 1
    assert rows[0]["seed"] == "0"
    assert "rel_l2_u1" in rows[0]

    (result,) = metrics.read_error_table(tmp_path / "errors_ex1.csv")
    assert result[:2] == ("ex1", 0.1)
    assert result[2].trials == 1

    fields = (tmp_path / "fields/ex1_eps1e-1.csv").read_text().splitlines()
    assert fields[1] == "x,grid,component,u_pred,u_regular,u_singular,u_exact,abs_err"
    assert len(fields) == 2 + 1001 + 2002

    first = _csv_files(tmp_path)
    assert cli.main(argv) == cli.EXIT_OK
    assert _csv_files(tmp_path) == first

    # The rerun replaces its ledger entry
    db.connect(tmp_path / "runs.sqlite", readonly=True)
    try:
        assert len(db.fetch_trials("ex1")) == 1
    finally:
        db.close()


def test_run_without_exact_solution(tmp_path):
    """Example 7 reports diagnostics instead of error tables."""
    argv = ["run", "--problem", "ex7", "--eps", "0.01", "--out", str(tmp_path), *TINY]

    assert cli.main(argv) == cli.EXIT_OK

    assert not (tmp_path / "errors_ex7.csv").exists()
    header = (tmp_path / "trials_ex7.csv").read_text().splitlines()[1]
    assert header.endswith("boundary_max_dev,interior_max_abs")


def test_drop_blocks_run(tmp_path):
    """Dropped blocks are absent from the checkpoint, which records its origin."""
    argv = ["run", "--problem", "ex1", "--eps", "0.1", "--out", str(tmp_path), *TINY]
    argv += ["--seed", "4", "--drop-blocks", "R"]

    assert cli.main(argv) == cli.EXIT_OK

    checkpoint = tmp_path / "checkpoints" / "ex1_eps1e-1_trial0.h5"
    model, attrs = network.load_model(checkpoint, problems.Interval().level_sets())
    assert list(model.blocks) == ["r", "L"]
    assert int(attrs["seed"]) == 4
    assert len(attrs["config_hash"]) == 12

    header = (tmp_path / "trials_ex1.csv").read_text().splitlines()[0]
    assert f"config_hash={attrs['config_hash']}" in header


def test_aborted_sweep_keeps_finished_trials(tmp_path, monkeypatch):
    """Trials finished before an abort are in the reports, the exit code is 3."""
    train = optimizer.train

    def _train(problem, model, colloc, config=None, epsilon=None):
        if epsilon < 0.05:
            raise optimizer.TrainingAbortedError("Residual not finite.", {})
        return train(problem, model, colloc, config, epsilon)

    monkeypatch.setattr(optimizer, "train", _train)
    argv = ["sweep", "--problem", "ex2", "--eps", "0.1,0.01", "--out", str(tmp_path)]

    assert cli.main([*argv, *TINY]) == cli.EXIT_TRAINING

    with (tmp_path / "trials_ex2.csv").open() as fh:
        rows = list(csv.DictReader(line for line in fh if not line.startswith("#")))
    assert [float(r["epsilon"]) for r in rows] == [0.1]

    results = metrics.read_error_table(tmp_path / "errors_ex2.csv")
    assert [eps for _, eps, _ in results] == [0.1]


def test_dump_fields(tmp_path):
    """Checkpoints reload into a field dump."""
    out = tmp_path / "out"
    argv = ["sweep", "--problem", "ex4", "--eps", "0.1", "--out", str(out), *TINY]
    assert cli.main(argv) == cli.EXIT_OK

    checkpoint = out / "checkpoints" / "ex4_eps1e-1_trial0.h5"
    dump = tmp_path / "fields.csv"
    argv = ["dump-fields", "--checkpoint", str(checkpoint), "--out-file", str(dump)]
    argv += ["--grid-points", "5", "--layer-points", "3"]

    assert cli.main(argv) == cli.EXIT_OK

    lines = dump.read_text().splitlines()
    assert lines[0].startswith("# wlpinn ")
    assert lines[1].startswith("x,y,grid,component,u_pred")
    assert len(lines) == 2 + 25 + 4 * 5 * 3


def test_dump_fields_default_name(tmp_path):
    """Without --out-file the dump sits next to the checkpoint."""
    argv = ["run", "--problem", "ex2", "--eps", "0.1", "--out", str(tmp_path), *TINY]
    assert cli.main(argv) == cli.EXIT_OK
    checkpoint = tmp_path / "checkpoints" / "ex2_eps1e-1_trial0.h5"

    assert cli.main(["dump-fields", "--checkpoint", str(checkpoint)]) == cli.EXIT_OK
    assert checkpoint.with_suffix(".fields.csv").exists()


def test_unwritable_output(tmp_path):
    """An output path that cannot be created exits with 4."""
    blocker = tmp_path / "file"
    blocker.write_text("")
    argv = ["run", "--problem", "ex1", "--eps", "0.1", "--out", str(blocker / "sub")]

    assert cli.main([*argv, *TINY]) == cli.EXIT_IO


def test_missing_config_file(tmp_path):
    """A named config file that does not exist is an I/O error."""
    argv = ["list", "--config-file", str(tmp_path / "nope.yaml")]
    assert cli.main(argv) == cli.EXIT_IO


SWEEP_LIMITS = {
    "ex1": 1e-5,
    "ex2": 1e-5,
    "ex3": 1e-5,
    "ex4": 1e-4,
    "ex5": 1e-4,
    "ex6": 1e-4,
}


@pytest.mark.slow
@pytest.mark.parametrize("problem_id", list(SWEEP_LIMITS))
def test_sweep_accuracy(problem_id, tmp_path):
    """Mean relative errors over five trials stay below the limit for every epsilon."""
    argv = ["sweep", "--problem", problem_id, "--out", str(tmp_path)]
    assert cli.main(argv) == cli.EXIT_OK

    results = metrics.read_error_table(tmp_path / f"errors_{problem_id}.csv")

    assert [eps for _, eps, _ in results] == [1e-2, 1e-4, 1e-6, 1e-8, 1e-10]
    for _, _, report in results:
        assert report.trials == 5
        assert max(report.rel_l2) <= SWEEP_LIMITS[problem_id]
        assert max(report.rel_linf) <= SWEEP_LIMITS[problem_id]


@pytest.mark.slow
def test_poisson_boltzmann_equilibrium(tmp_path):
    """Example 7 reaches a tiny loss, meets the boundary data and rests at zero."""
    argv = ["run", "--problem", "ex7", "--eps", "1e-10", "--out", str(tmp_path)]
    assert cli.main([*argv, "--trials", "1"]) == cli.EXIT_OK

    with (tmp_path / "trials_ex7.csv").open() as fh:
        (row,) = csv.DictReader(line for line in fh if not line.startswith("#"))

    assert float(row["final_loss"]) <= 1e-10
    assert float(row["boundary_max_dev"]) <= 1e-4
    assert float(row["interior_max_abs"]) <= 1e-3
