"""Test the run ledger."""

import numpy as np
import peewee as pw
import pytest

from wlpinn import db
from wlpinn.optimizer import StopReason, TrainReport


@pytest.fixture
def ledger(tmp_path):
    filename = tmp_path / "runs.sqlite"
    db.connect(filename, readonly=False)
    yield filename
    db.close()


def _report(loss, seed=0):
    return TrainReport(
        final_loss=loss,
        iterations=3,
        stop_reason=StopReason.LOSS_TOL,
        loss_history=[1.0, 0.1, loss],
        seed=seed,
        wall_time=0.25,
    )


def test_record_and_fetch(ledger):
    """Trials come back largest epsilon first, then by trial."""
    db.record_trial("ex3", 1e-4, 1, _report(1e-16, 1), "abc", np.array([1e-6, 2e-6]))
    db.record_trial("ex3", 1e-2, 1, _report(2e-16, 1), "abc")
    db.record_trial("ex3", 1e-2, 0, _report(3e-16), "abc")
    db.record_trial("ex1", 1e-2, 0, _report(4e-16), "abc")

    records = db.fetch_trials("ex3")

    assert [(r.epsilon, r.trial) for r in records] == [(1e-2, 0), (1e-2, 1), (1e-4, 1)]
    assert records[0].stop_reason is StopReason.LOSS_TOL
    assert records[0].wall_time == 0.25
    assert db.decode(records[0].rel_l2) is None
    np.testing.assert_array_equal(db.decode(records[2].rel_l2), [1e-6, 2e-6])
    np.testing.assert_array_equal(db.decode(records[2].loss_history), [1.0, 0.1, 1e-16])

    assert len(db.fetch_trials("ex3", 1e-2)) == 2


def test_rerun_replaces_record(ledger):
    """Recording the same trial and config again keeps a single, newer record."""
    db.record_trial("ex4", 1e-2, 0, _report(5e-16), "abc")
    db.record_trial("ex4", 1e-2, 0, _report(6e-16), "abc")
    db.record_trial("ex4", 1e-2, 0, _report(7e-16), "def")

    records = db.fetch_trials("ex4")

    assert len(records) == 2
    assert sorted(r.final_loss for r in records) == [6e-16, 7e-16]


def test_readonly(ledger):
    """A read-only connection can read but not write."""
    db.record_trial("ex2", 1e-2, 0, _report(1e-17), "abc")
    db.close()

    db.connect(ledger, readonly=True)

    assert len(db.fetch_trials("ex2")) == 1
    with pytest.raises(pw.OperationalError):
        db.record_trial("ex2", 1e-2, 1, _report(1e-17), "abc")
