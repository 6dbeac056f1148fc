"""Continual-learning metrics over an accuracy matrix and its CSV format.

``A[j][i]`` (1-based) is the accuracy on task i after training through task j;
entries above the diagonal are evaluations on tasks not yet trained.
"""

from __future__ import annotations

import csv
from dataclasses import asdict, dataclass
from typing import IO, Sequence

import numpy as np

from ..errors import InvalidInput, ParseError


class AccuracyMatrix:
    """T x T accuracies in percent; ``nan`` marks an entry that was not evaluated."""

    def __init__(self, a, task_ids: Sequence[str] | None = None):
        a = np.array(a, dtype=np.float64)
        if a.ndim != 2 or a.shape[0] != a.shape[1] or a.shape[0] == 0:
            raise InvalidInput(f"accuracy matrix must be square and nonempty, got shape {a.shape}")
        seen = a[~np.isnan(a)]
        if np.any(~np.isfinite(seen)) or np.any(seen < 0) or np.any(seen > 100):
            raise InvalidInput("accuracies must be finite and lie in [0, 100]")
        self.a = a
        self.task_ids = [str(i) for i in (task_ids or range(1, a.shape[0] + 1))]
        if len(self.task_ids) != a.shape[0]:
            raise InvalidInput(f"{len(self.task_ids)} task ids for {a.shape[0]} tasks")

    @classmethod
    def empty(cls, T: int, task_ids=None) -> "AccuracyMatrix":
        return cls(np.full((T, T), np.nan), task_ids)

    @property
    def T(self) -> int:
        return self.a.shape[0]

    def __getitem__(self, key):
        return self.a[key]

    def __setitem__(self, key, value):
        if not 0.0 <= value <= 100.0:
            raise InvalidInput(f"accuracy {value} outside [0, 100]")
        self.a[key] = value

    def __eq__(self, other):
        return (
            isinstance(other, AccuracyMatrix)
            and self.task_ids == other.task_ids
            and np.array_equal(self.a, other.a, equal_nan=True)
        )

    def _require(self, mask: np.ndarray, what: str) -> None:
        if np.any(np.isnan(self.a[mask])):
            raise InvalidInput(f"accuracy matrix is missing {what}")


def _as_acc(a) -> AccuracyMatrix:
    return a if isinstance(a, AccuracyMatrix) else AccuracyMatrix(a)


def mfn(a) -> float:
    """Mean accuracy over all tasks after the last task."""
    a = _as_acc(a)
    final = a.a[-1]
    if np.any(np.isnan(final)):
        raise InvalidInput("accuracy matrix is missing entries of the final row")
    return float(final.mean())


def maa(a) -> float:
    """Mean over checkpoints j of the average accuracy on tasks 1..j."""
    a = _as_acc(a)
    a._require(np.tril(np.ones((a.T, a.T), dtype=bool)), "lower-triangle entries")
    return float(np.mean([a.a[j, : j + 1].mean() for j in range(a.T)]))


def bwt(a) -> float:
    """Mean change from just-learned to final accuracy, per task."""
    a = _as_acc(a)
    diag, final = np.diag(a.a), a.a[-1]
    if np.any(np.isnan(diag)) or np.any(np.isnan(final)):
        raise InvalidInput("accuracy matrix is missing diagonal or final-row entries")
    return float(np.mean(final - diag))


def fwt(a) -> float:
    """Mean over tasks i >= 2 of the average accuracy on task i before it was trained."""
    a = _as_acc(a)
    if a.T < 2:
        raise InvalidInput("forward transfer needs at least two tasks")
    a._require(np.triu(np.ones((a.T, a.T), dtype=bool), 1), "upper-triangle entries")
    return float(np.mean([a.a[:i, i].mean() for i in range(1, a.T)]))


def avg(a) -> float:
    """Mean of every entry, seen and unseen tasks alike."""
    a = _as_acc(a)
    if np.any(np.isnan(a.a)):
        raise InvalidInput("accuracy matrix is incomplete")
    return float(a.a.mean())


def transfer_row(a) -> list[float]:
    """Per-column unseen-task means for tasks 2..T."""
    a = _as_acc(a)
    return [float(a.a[:i, i].mean()) for i in range(1, a.T)]


@dataclass(frozen=True)
class MetricsReport:
    mfn: float
    maa: float
    bwt: float
    fwt: float | None
    avg: float
    final: tuple

    NAMES = ("mfn", "maa", "bwt", "fwt", "avg")

    @classmethod
    def from_matrix(cls, a) -> "MetricsReport":
        a = _as_acc(a)
        return cls(
            mfn(a), maa(a), bwt(a), fwt(a) if a.T >= 2 else None, avg(a),
            tuple(float(v) for v in a.a[-1]),
        )

    def to_dict(self) -> dict:
        return asdict(self)


def write_metrics_csv(report: MetricsReport, fh: IO[str]) -> None:
    writer = csv.writer(fh, lineterminator="\n")
    writer.writerow(["metric", "rounded", "value"])
    for name in MetricsReport.NAMES:
        v = getattr(report, name)
        writer.writerow([name, "" if v is None else f"{v:.1f}", "" if v is None else f"{v:.17g}"])


# -- CSV format --------------------------------------------------------------
#
# Optional "#" comment lines, a header of task ids, then one row per checkpoint
# with accuracies to 4 decimals; an empty cell is an entry never evaluated.


def write_accuracy_csv(a: AccuracyMatrix, fh: IO[str], comments: Sequence[str] = ()) -> None:
    for c in comments:
        fh.write(f"# {c}\n")
    writer = csv.writer(fh, lineterminator="\n")
    writer.writerow(a.task_ids)
    for row in a.a:
        writer.writerow(["" if np.isnan(v) else f"{v:.4f}" for v in row])


def read_accuracy_csv(fh: IO[str]) -> AccuracyMatrix:
    header, rows = None, []
    for lineno, line in enumerate(fh, start=1):
        if not line.strip() or line.lstrip().startswith("#"):
            continue
        cells = [c.strip() for c in next(csv.reader([line]))]
        if header is None:
            header = cells
            continue
        if len(cells) != len(header):
            raise ParseError(f"expected {len(header)} cells, found {len(cells)}", lineno)
        try:
            values = [float(c) if c else np.nan for c in cells]
        except ValueError:
            raise ParseError(f"non-numeric cell in {line.strip()!r}", lineno) from None
        if any(not (np.isnan(v) or 0.0 <= v <= 100.0) for v in values):
            raise ParseError("accuracy outside [0, 100]", lineno)
        rows.append(values)
        last = lineno
    if header is None:
        raise ParseError("no header row")
    if len(rows) != len(header):
        raise ParseError(
            f"expected {len(header)} checkpoint rows, found {len(rows)}", last if rows else None
        )
    return AccuracyMatrix(np.array(rows), header)


def load_accuracy(path) -> AccuracyMatrix:
    with open(path, encoding="utf-8", newline="") as fh:
        return read_accuracy_csv(fh)


def save_accuracy(path, a: AccuracyMatrix, comments: Sequence[str] = ()) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        write_accuracy_csv(a, fh, comments)
