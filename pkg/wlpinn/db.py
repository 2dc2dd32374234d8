"""Table definitions for the Sqlite ledger of training runs."""
import time
from enum import Enum
from pathlib import Path
from typing import TypeVar

import numpy as np
import peewee as pw

from . import util
from .optimizer import StopReason, TrainReport

# Sqlite database model
database = pw.SqliteDatabase(None)

E = TypeVar("E", bound=Enum)

__schema_version__ = "2026.10"


class EnumField(pw.CharField):
    """An Enum like field for Peewee, stored by value.

    Taken from: https://github.com/coleifer/peewee/issues/630#issuecomment-459404401
    """

    def __init__(self, choices: type[E], *args: tuple, **kwargs: dict):
        super().__init__(*args, **kwargs)
        self.choices = choices

    def db_value(self, value: E) -> str:
        """Convert to the DB type."""
        return value.value

    def python_value(self, value: str) -> E:
        """Convert to the Python type."""
        return self.choices(value)


class BaseModel(pw.Model):
    """Base model class."""

    class Meta:
        """Meta info."""

        database = database


class TrialRecord(BaseModel):
    """One trained (problem, epsilon, trial).

    Attributes
    ----------
    id
        Primary key.
    created
        The UTC Unix timestamp the record was written.
    problem
        The problem id.
    epsilon
        The perturbation parameter.
    trial
        Trial index within the sweep.
    seed
        Seed of the trial.
    config_hash
        Hash of the resolved configuration.
    final_loss, iterations, stop_reason, wall_time
        From the training report.
    rel_l2, rel_linf
        Per-component errors as float64 blobs, null without an exact solution.
    loss_history
        The accepted-step losses as a float64 blob.
    """

    id = pw.IntegerField(primary_key=True)  # noqa: A003
    created = pw.FloatField()

    problem = pw.CharField(index=True)
    epsilon = pw.FloatField()
    trial = pw.SmallIntegerField()
    seed = pw.IntegerField()
    config_hash = pw.CharField()

    final_loss = pw.FloatField()
    iterations = pw.IntegerField()
    stop_reason = EnumField(choices=StopReason)
    wall_time = pw.FloatField()

    rel_l2 = pw.BlobField(null=True)
    rel_linf = pw.BlobField(null=True)
    loss_history = pw.BlobField()


def connect(filename: str | Path, readonly: bool = True) -> None:
    """Connect to the database.

    Parameters
    ----------
    filename
        The path to the database file.
    readonly
        If set, open the file in read-only mode. If not set, open in read-write mode and
        ensure all the tables are created.
    """
    pragmas = {
        "foreign_keys": 1,
        "journal_mode": "wal",
        "synchronous": "normal",
        "temp_store": "memory",
    }

    if readonly:
        database.init(f"file:{filename}?mode=ro", uri=True, pragmas=pragmas)
    else:
        database.init(str(filename), pragmas=pragmas)
        database.create_tables(BaseModel.__subclasses__(), safe=True)


def record_trial(  # noqa: PLR0913
    problem: str,
    epsilon: float,
    trial: int,
    report: TrainReport,
    config_hash: str,
    rel_l2: np.ndarray | None = None,
    rel_linf: np.ndarray | None = None,
) -> TrialRecord:
    """Store a trained trial.

    A record with the same problem, epsilon, trial and config hash is replaced, so a
    rerun of the same configuration leaves one row per trial.
    """
    with database.atomic():
        TrialRecord.delete().where(
            (TrialRecord.problem == problem)
            & (TrialRecord.epsilon == epsilon)
            & (TrialRecord.trial == trial)
            & (TrialRecord.config_hash == config_hash)
        ).execute()

        return TrialRecord.create(
            created=time.time(),
            problem=problem,
            epsilon=epsilon,
            trial=trial,
            seed=report.seed if report.seed is not None else -1,
            config_hash=config_hash,
            final_loss=report.final_loss,
            iterations=report.iterations,
            stop_reason=report.stop_reason,
            wall_time=report.wall_time,
            rel_l2=None if rel_l2 is None else util.array_to_blob(rel_l2),
            rel_linf=None if rel_linf is None else util.array_to_blob(rel_linf),
            loss_history=util.array_to_blob(np.asarray(report.loss_history)),
        )


def decode(data: bytes | None) -> np.ndarray | None:
    """Decode an array column of a `TrialRecord`."""
    if data is None:
        return None
    return util.blob_to_array(bytes(data))


def fetch_trials(problem: str, epsilon: float | None = None) -> list[TrialRecord]:
    """Read the trial records of a problem, largest epsilon first, then by trial.

    Parameters
    ----------
    problem
        The problem id.
    epsilon
        If set, only return trials at this epsilon.
    """
    query = TrialRecord.select().where(TrialRecord.problem == problem)
    if epsilon is not None:
        query = query.where(TrialRecord.epsilon == epsilon)

    return list(query.order_by(TrialRecord.epsilon.desc(), TrialRecord.trial))


def close() -> None:
    """Close the database connection."""
    database.close()
