import itertools
from pathlib import Path

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from flowsense.detector import ModelSpec, build_model
from flowsense.encoding import EncodedDataset, load_schema
from flowsense.metrics import (
    ConfusionMatrix, Report, UndefinedMetric, benchmark_report, confusion, metrics, report_row,
    rounded_metrics, within_convex_bounds,
)

ROOT = Path(__file__).resolve().parents[1]


def table_rows():
    """The three reference result rows, parsed from paper.md."""
    lines = (ROOT / "paper.md").read_text().splitlines()
    rows = {}
    for ln in lines:
        parts = ln.split()
        if len(parts) == 4 and parts[0] in ("DNN", "CNN", "RESNEST"):
            rows[parts[0]] = tuple(float(v) for v in parts[1:])
    return rows


def test_reference_rows_parse():
    assert set(table_rows()) == {"DNN", "CNN", "RESNEST"}


def test_constructed_counts_reproduce_resnest_row():
    cm = ConfusionMatrix(tp=982, fn=18, fp=30, tn=970)
    assert tuple(rounded_metrics(cm)) == table_rows()["RESNEST"] == (97.6, 3.0, 98.2)
    assert within_convex_bounds(*metrics(cm))


@pytest.mark.parametrize("name", ["DNN", "CNN"])
def test_dnn_cnn_reference_rows_are_infeasible(name):
    # acc is a weighted mean of dr and 100 - fpr; even with 0.1 slack for
    # one-decimal rounding these rows sit outside that interval
    acc, fpr, dr = table_rows()[name]
    assert not within_convex_bounds(acc, fpr, dr, slack=0.1)


def test_resnest_row_is_feasible_after_rounding():
    assert within_convex_bounds(*table_rows()["RESNEST"], slack=0.1)


def test_infeasibility_by_exhaustive_search():
    # no 1000/1000 confusion matrix rounds to the DNN or CNN row
    rows = table_rows()
    hits = {"DNN": 0, "CNN": 0}
    for tp in range(1001):
        dr = round(100 * tp / 1000, 1)
        for fp in range(1001):
            fpr = round(100 * fp / 1000, 1)
            acc = round(100 * (tp + 1000 - fp) / 2000, 1)
            for k in hits:
                if (acc, fpr, dr) == rows[k]:
                    hits[k] += 1
    assert hits == {"DNN": 0, "CNN": 0}


def test_perfect_and_symmetric():
    assert tuple(metrics(ConfusionMatrix(10, 0, 0, 7))) == (100.0, 0.0, 100.0)
    assert tuple(metrics(ConfusionMatrix(50, 50, 50, 50))) == (50.0, 50.0, 50.0)


def test_confusion_hand_set():
    preds = [1, 0, 1, 1, 0, 0]
    labels = [1, 1, 0, 1, 0, 0]
    assert confusion(preds, labels) == ConfusionMatrix(tp=2, fn=1, fp=1, tn=2)


def test_confusion_extremes():
    y = np.array([0, 1, 1, 0, 1])
    cm = confusion(y, y)
    assert cm.fp == cm.fn == 0 and cm.total == 5
    inv = confusion(1 - y, y)
    assert inv.tp == inv.tn == 0


@pytest.mark.parametrize("preds, labels", [([], []), ([0, 1], [0]), ([0, 2], [0, 1])])
def test_confusion_errors(preds, labels):
    with pytest.raises(ValueError):
        confusion(preds, labels)


@pytest.mark.parametrize("cm", [ConfusionMatrix(0, 0, 3, 4), ConfusionMatrix(3, 4, 0, 0)])
def test_missing_class_is_undefined(cm):
    with pytest.raises(UndefinedMetric):
        metrics(cm)


def test_round_half_to_even():
    # 0.25% rounds to 0.2, 0.35% to 0.4 on the exact rationals
    assert rounded_metrics(ConfusionMatrix(1, 0, 1, 399)).fpr == 0.2
    assert rounded_metrics(ConfusionMatrix(1, 0, 7, 1993)).fpr == 0.4


pairs = st.lists(st.tuples(st.integers(0, 1), st.integers(0, 1)), min_size=2, max_size=200)


@settings(max_examples=300, deadline=None)
@given(pairs, st.randoms(use_true_random=False))
def test_convex_bound_and_permutation_invariance(ps, rnd):
    preds, labels = map(list, zip(*ps))
    if len(set(labels)) < 2:
        return
    m = metrics(confusion(preds, labels))
    assert within_convex_bounds(*m)
    order = list(range(len(ps)))
    rnd.shuffle(order)
    assert metrics(confusion([preds[i] for i in order], [labels[i] for i in order])) == m


def test_counts_sum_to_total():
    for p, y in itertools.product(itertools.product((0, 1), repeat=3), repeat=2):
        assert confusion(p, y).total == 3


# --- reports --------------------------------------------------------------------

def test_report_renderings():
    rep = Report((report_row("resnest", [1] * 982 + [0] * 18 + [1] * 30 + [0] * 970, [1] * 1000 + [0] * 1000),))
    assert rep.to_csv() == "arch,acc_pct,fpr_pct,dr_pct\nresnest,97.6,3.0,98.2\n"
    lines = rep.to_text().splitlines()
    assert lines[0].split() == ["model", "ACC%", "FPR%", "DR%"]
    assert lines[1].split() == ["RESNEST", "97.6", "3.0", "98.2"]


def _test_set():
    rng = np.random.default_rng(0)
    return EncodedDataset(rng.random((20, 130), dtype=np.float32), np.arange(20) % 2, load_schema().hash)


def test_benchmark_report_rows_in_order():
    ds = _test_set()
    models = [build_model(ModelSpec(arch=a, seed=1), ds.schema_hash) for a in ("dnn", "cnn", "resnest")]
    rep = benchmark_report(models, ds)
    assert [r.arch for r in rep.rows] == ["dnn", "cnn", "resnest"]
    assert len(rep.to_csv().splitlines()) == 4
    assert rep.to_csv() == benchmark_report(models, ds).to_csv()
    single = benchmark_report(models[:1], ds)
    assert len(single.rows) == 1 and len(single.to_text().splitlines()) == 2


def test_benchmark_report_schema_mismatch():
    from flowsense.detector import SchemaMismatch
    ds = _test_set()
    m = build_model(ModelSpec(arch="dnn"), "0" * 64)
    with pytest.raises(SchemaMismatch):
        benchmark_report([m], ds)
