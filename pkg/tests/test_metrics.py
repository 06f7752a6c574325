import io

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st


def test_classification_metrics():
    from pedintent.metrics import ConfusionCounts, classification_metrics

    acc, prec, rec, f1, counts = classification_metrics(
        [1, 1, 1, 1, 0, 0, 0, 0, 0, 0], [1, 1, 1, 0, 1, 0, 0, 0, 0, 0]
    )
    assert ConfusionCounts(tp=3, fp=1, fn=1, tn=5) == counts
    assert (0.8, 0.75, 0.75, 0.75) == (acc, prec, rec, f1)

    # Nothing predicted positive, nothing to recall.
    assert (1.0, 0.0, 0.0, 0.0) == classification_metrics([0, 0], [0, 0])[:4]
    assert (0.0, 0.0, 0.0, 0.0) == classification_metrics([1, 1], [0, 0])[:4]


def test_classification_metrics_errors():
    from pedintent.errors import LabelError, ShapeError
    from pedintent.metrics import classification_metrics

    with pytest.raises(ShapeError):
        classification_metrics([1, 0], [1])
    with pytest.raises(ShapeError):
        classification_metrics([], [])
    with pytest.raises(LabelError):
        classification_metrics([1, 2], [1, 0])
    with pytest.raises(LabelError):
        classification_metrics([1, 0], [1, -1])


def test_f1_score():
    from pedintent.metrics import f1_score

    assert 0.8726 == pytest.approx(f1_score(0.8650, 0.8803), abs=1e-4)
    assert 0.0 == f1_score(0.0, 0.0)
    assert 1.0 == f1_score(1.0, 1.0)


@settings(deadline=None)
@given(
    st.lists(st.tuples(st.integers(0, 1), st.integers(0, 1)), min_size=1, max_size=50)
)
def test_classification_recount(pairs):
    from pedintent.metrics import classification_metrics, f1_score

    preds, labels = zip(*pairs)
    acc, prec, rec, f1, counts = classification_metrics(preds, labels)
    tp = sum(1 for p, y in pairs if p and y)
    fp = sum(1 for p, y in pairs if p and not y)
    fn = sum(1 for p, y in pairs if not p and y)
    tn = sum(1 for p, y in pairs if not p and not y)
    assert (tp, fp, fn, tn) == tuple(counts)
    assert len(pairs) == counts.total
    assert (tp + tn) / len(pairs) == acc
    for value in (acc, prec, rec, f1):
        assert 0.0 <= value <= 1.0
    assert f1_score(prec, rec) == f1


def test_displacement_errors():
    from pedintent.errors import ShapeError
    from pedintent.metrics import ade, fde

    truth = np.zeros((4, 2))
    assert 1.0 == ade(truth + [1, 0], truth)
    assert 5.0 == ade(truth + [3, 4], truth)
    pred = truth.copy()
    pred[-1] = [0, 2]
    assert 2.0 == fde(pred, truth)
    assert 0.5 == ade(pred, truth)

    stacked_pred = np.stack([truth + [3, 4], truth])
    stacked_truth = np.stack([truth, truth])
    assert 2.5 == ade(stacked_pred, stacked_truth)
    assert 2.5 == fde(stacked_pred, stacked_truth)

    with pytest.raises(ShapeError):
        ade(np.zeros((3, 2)), np.zeros((4, 2)))
    with pytest.raises(ShapeError):
        fde(np.zeros((3, 3)), np.zeros((3, 3)))
    with pytest.raises(ShapeError, match="empty"):
        ade(np.zeros((0, 2)), np.zeros((0, 2)))


@settings(deadline=None)
@given(
    st.integers(1, 10),
    st.integers(0, 2**32 - 1),
    st.floats(-1e3, 1e3),
    st.floats(-1e3, 1e3),
)
def test_displacement_translation(steps, seed, dx, dy):
    from pedintent.metrics import ade, fde

    rng = np.random.default_rng(seed)
    pred = rng.normal(size=(steps, 2))
    truth = rng.normal(size=(steps, 2))
    shift = np.array([dx, dy])
    assert ade(pred, truth) == pytest.approx(ade(pred + shift, truth + shift))
    assert fde(pred, truth) == pytest.approx(fde(pred + shift, truth + shift))
    step = np.sqrt(np.sum((pred - truth) ** 2, axis=-1))
    assert ade(pred, truth) <= step.max() + 1e-12
    assert fde(pred, truth) >= 0


def test_report():
    from pedintent.metrics import ConfusionCounts, MetricsReport, f1_score

    report = MetricsReport.from_counts(ConfusionCounts(3, 1, 1, 5), 1.5, 2.5)
    assert 10 == report.total
    assert 0.8 == report.accuracy
    assert f1_score(report.precision, report.recall) == report.f1
    assert [
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
    ] == list(report.as_dict())
    lines = report.as_text().splitlines()
    assert "acc=0.800000" == lines[0]
    assert "fde=2.500000" == lines[5]
    assert "tn=5" == lines[-1]


def test_mean_report():
    from pedintent.metrics import ConfusionCounts, MetricsReport, mean_report

    first = MetricsReport.from_counts(ConfusionCounts(2, 0, 0, 2), 1.0, 2.0)
    second = MetricsReport.from_counts(ConfusionCounts(0, 2, 2, 0), 3.0, 4.0)
    mean = mean_report([first, second])
    assert ConfusionCounts(2, 2, 2, 2) == mean.counts
    assert 0.5 == mean.accuracy
    assert (2.0, 3.0) == (mean.ade, mean.fde)
    assert first == mean_report([first])

    with pytest.raises(ValueError):
        mean_report([])


def test_write_csv(tmp_path):
    from pedintent.metrics import ConfusionCounts, MetricsReport, write_csv

    report = MetricsReport.from_counts(ConfusionCounts(3, 1, 1, 5), 1.5, 2.5)
    fo = io.StringIO()
    write_csv([("STGCN", report), ("TA-STGCN", report)], fo)
    assert [
        "model,acc,prec,rec,f1,ade,fde,tp,fp,fn,tn",
        "STGCN,0.800000,0.750000,0.750000,0.750000,1.500000,2.500000,3,1,1,5",
        "TA-STGCN,0.800000,0.750000,0.750000,0.750000,1.500000,2.500000,3,1,1,5",
    ] == fo.getvalue().splitlines()

    path = tmp_path / "report.csv"
    write_csv([("STGCN", report)], path)
    assert 2 == len(path.read_text().splitlines())
