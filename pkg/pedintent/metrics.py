"""\
.. currentmodule:: pedintent.metrics

Evaluation metrics of crossing intention and trajectory predictions.

Classification metrics come from the confusion counts of binary decisions,
crossing being the positive class:

>>> acc, prec, rec, f1, counts = classification_metrics(
...     [1, 1, 1, 1, 0, 0, 0, 0, 0, 0], [1, 1, 1, 0, 1, 0, 0, 0, 0, 0])
>>> counts
ConfusionCounts(tp=3, fp=1, fn=1, tn=5)
>>> acc, prec, rec, f1
(0.8, 0.75, 0.75, 0.75)

Precision is 0 when nothing is predicted positive, recall is 0 when there is
no positive label and F1 is 0 when both are 0.

Displacement errors are Euclidean distances between predicted and true
positions, averaged over the horizon (ADE) or taken at the last step (FDE).
They are expressed in the unit of the trajectories, pixels for datasets
generated by :mod:`pedintent.synthworld`.

>>> ade([[0, 0], [1, 1]], [[3, 4], [4, 5]])
5.0


API Reference
-------------

.. autoclass:: ConfusionCounts
.. autoclass:: MetricsReport
    :members: as_dict, as_text
.. autofunction:: classification_metrics
.. autofunction:: f1_score
.. autofunction:: ade
.. autofunction:: fde
.. autofunction:: mean_report
.. autofunction:: write_csv
"""

from __future__ import annotations

import csv
from collections.abc import Iterable, Sequence
from dataclasses import dataclass
from pathlib import Path
from typing import IO, Any, NamedTuple

import numpy as np
import numpy.typing as npt

from ._helpers import open_or_return
from .errors import LabelError, ShapeError

CSV_COLUMNS = (
    "model",
    "acc",
    "prec",
    "rec",
    "f1",
    "ade",
    "fde",
    "tp",
    "fp",
    "fn",
    "tn",
)


class ConfusionCounts(NamedTuple):
    tp: int
    fp: int
    fn: int
    tn: int

    @property
    def total(self) -> int:
        return sum(self)


def _binary(values: Iterable[int], name: str) -> np.ndarray:
    array = np.asarray(list(values))
    if not np.isin(array, (0, 1)).all():
        raise LabelError(f"{name} must be 0 or 1")
    return array.astype(bool)


def f1_score(precision: float, recall: float) -> float:
    """Harmonic mean of precision and recall, 0 when both are 0.

    >>> round(f1_score(0.8650, 0.8803), 4)
    0.8726
    """
    if precision + recall == 0:
        return 0.0
    return 2 * precision * recall / (precision + recall)


def _ratio(num: int, den: int) -> float:
    return num / den if den else 0.0


def rates(counts: ConfusionCounts) -> tuple[float, float, float, float]:
    """Accuracy, precision, recall and F1 of confusion counts."""
    tp, fp, fn, tn = counts
    precision = _ratio(tp, tp + fp)
    recall = _ratio(tp, tp + fn)
    return (
        _ratio(tp + tn, counts.total),
        precision,
        recall,
        f1_score(precision, recall),
    )


def classification_metrics(
    preds: Sequence[int], labels: Sequence[int]
) -> tuple[float, float, float, float, ConfusionCounts]:
    """Accuracy, precision, recall, F1 and confusion counts.

    :raises ShapeError: if lengths differ or are zero.
    :raises LabelError: on values other than 0 and 1.
    """
    if len(preds) != len(labels):
        raise ShapeError(f"{len(preds)} predictions for {len(labels)} labels")
    if not len(preds):
        raise ShapeError("no prediction to score")
    p = _binary(preds, "predictions")
    y = _binary(labels, "labels")
    counts = ConfusionCounts(
        tp=int(np.sum(p & y)),
        fp=int(np.sum(p & ~y)),
        fn=int(np.sum(~p & y)),
        tn=int(np.sum(~p & ~y)),
    )
    return (*rates(counts), counts)


def _distances(pred: npt.ArrayLike, truth: npt.ArrayLike) -> np.ndarray:
    p = np.asarray(pred, dtype=np.float64)
    t = np.asarray(truth, dtype=np.float64)
    if p.shape != t.shape or p.ndim < 2 or p.shape[-1] != 2:
        raise ShapeError(
            f"cannot compare trajectories of shapes {p.shape} and {t.shape}"
        )
    if not p.shape[-2]:
        raise ShapeError("empty trajectory")
    return np.sqrt(np.sum((p - t) ** 2, axis=-1))


def ade(pred: npt.ArrayLike, truth: npt.ArrayLike) -> float:
    """Average displacement error over the horizon.

    With stacked trajectories ``[B, T', 2]``, errors are averaged over
    every step of every trajectory.
    """
    return float(np.mean(_distances(pred, truth)))


def fde(pred: npt.ArrayLike, truth: npt.ArrayLike) -> float:
    """Displacement error at the final step, averaged over stacked trajectories.

    >>> fde([[0, 0], [5, 5]], [[9, 9], [5, 7]])
    2.0
    """
    return float(np.mean(_distances(pred, truth)[..., -1]))


@dataclass(frozen=True)
class MetricsReport:
    """Scores of a model on a dataset.

    ``ade`` and ``fde`` are averaged over every scene of the dataset.
    """

    tp: int
    fp: int
    fn: int
    tn: int
    accuracy: float
    precision: float
    recall: float
    f1: float
    ade: float
    fde: float

    @classmethod
    def from_counts(
        cls, counts: ConfusionCounts, ade: float, fde: float
    ) -> MetricsReport:
        accuracy, precision, recall, f1 = rates(counts)
        return cls(*counts, accuracy, precision, recall, f1, ade, fde)

    @property
    def counts(self) -> ConfusionCounts:
        return ConfusionCounts(self.tp, self.fp, self.fn, self.tn)

    @property
    def total(self) -> int:
        return self.counts.total

    def as_dict(self) -> dict[str, Any]:
        """Flat mapping keyed like CSV columns.

        >>> r = MetricsReport.from_counts(ConfusionCounts(1, 0, 0, 1), 0.5, 1.0)
        >>> r.as_dict()["acc"], r.as_dict()["fde"]
        (1.0, 1.0)
        """
        return {
            "acc": self.accuracy,
            "prec": self.precision,
            "rec": self.recall,
            "f1": self.f1,
            "ade": self.ade,
            "fde": self.fde,
            "tp": self.tp,
            "fp": self.fp,
            "fn": self.fn,
            "tn": self.tn,
        }

    def as_text(self) -> str:
        """``key=value`` lines, floats with 6 decimals.

        >>> report = MetricsReport.from_counts(ConfusionCounts(1, 0, 0, 1), 0, 0)
        >>> print(report.as_text())
        acc=1.000000
        prec=1.000000
        rec=1.000000
        f1=1.000000
        ade=0.000000
        fde=0.000000
        tp=1
        fp=0
        fn=0
        tn=1
        """
        return "\n".join(f"{k}={_format(v)}" for k, v in self.as_dict().items())


def _format(value: object) -> str:
    if isinstance(value, float):
        return f"{value:.6f}"
    return str(value)


def mean_report(reports: Sequence[MetricsReport]) -> MetricsReport:
    """Pool reports of repeated runs.

    Confusion counts are summed, rates recomputed from the pooled counts
    and displacement errors averaged.
    """
    if not reports:
        raise ValueError("no report to average")
    counts = ConfusionCounts(*(sum(c) for c in zip(*(r.counts for r in reports))))
    return MetricsReport.from_counts(
        counts,
        float(np.mean([r.ade for r in reports])),
        float(np.mean([r.fde for r in reports])),
    )


def write_csv(
    rows: Iterable[tuple[str, MetricsReport]], fo: str | Path | IO[str]
) -> None:
    """Write ``(model, report)`` rows as CSV with a header line.

    Floats are written with 6 decimals, in column order
    ``model,acc,prec,rec,f1,ade,fde,tp,fp,fn,tn``.
    """
    with open_or_return(fo, "w") as f:
        writer = csv.writer(f, lineterminator="\n")
        writer.writerow(CSV_COLUMNS)
        for model, report in rows:
            values = report.as_dict()
            writer.writerow([model] + [_format(values[c]) for c in CSV_COLUMNS[1:]])
