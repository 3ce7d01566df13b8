import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from ethfraud.dataset import Dataset, stratified_split
from ethfraud.evaluation import (
    RF_REFERENCE_GRID, SVM_REFERENCE_GRID, XGB_REFERENCE_GRID, ConfusionMatrix, CVResult, GridResult, GridRow,
    Metrics, confusion, cross_validate, evaluate, grid_search, mean_metrics, metrics, select_config,
    write_confusion, write_grid_report, write_metrics_report,
)
from ethfraud.boost import XGBParams
from ethfraud.forest import RFParams
from ethfraud.models import fit_model


def test_confusion_examples():
    assert confusion([1, 1, 0, 0, 1, 0, 1, 0, 0, 0], [1, 1, 0, 0, 1, 0, 1, 0, 0, 0]) == ConfusionMatrix(4, 0, 0, 6)
    pred = [1] * 102 + [1] * 17 + [0] * 329 + [0] * 69991
    act = [1] * 102 + [0] * 17 + [1] * 329 + [0] * 69991
    assert confusion(pred, act) == ConfusionMatrix(102, 17, 329, 69991)
    with pytest.raises(ValueError):
        confusion([1], [1, 0])
    with pytest.raises(ValueError):
        confusion([], [])


def test_metrics_perfect_and_undefined():
    m = metrics(ConfusionMatrix(431, 0, 0, 70008))
    assert (m.recall, m.precision, m.fpr, m.specificity, m.f1) == (100, 100, 0, 100, 100)
    m = metrics(ConfusionMatrix(0, 0, 5, 10))
    assert m.precision is None and m.f1 is None and m.recall == 0
    m = metrics(ConfusionMatrix(3, 0, 0, 0))
    assert m.fpr is None and m.specificity is None
    assert metrics(ConfusionMatrix(0, 2, 3, 1)).f1 == 0.0
    with pytest.raises(ValueError):
        ConfusionMatrix(0, 0, 0, 0)


counts = st.integers(0, 10**6)


@given(counts, counts, counts, counts)
def test_metric_identities(tp, fp, fn, tn):
    if tp + fp + fn + tn == 0:
        return
    m = metrics(ConfusionMatrix(tp, fp, fn, tn))
    if m.specificity is not None:
        assert m.specificity + m.fpr == pytest.approx(100.0, abs=1e-9)
    if m.f1 is not None and m.precision + m.recall > 0:
        assert min(m.precision, m.recall) - 1e-9 <= m.f1 <= max(m.precision, m.recall) + 1e-9
    for v in m.values():
        assert v is None or 0 <= v <= 100


def test_mean_metrics_skips_undefined():
    a = Metrics(90.0, 50.0, None, 10.0, None)
    b = Metrics(80.0, 70.0, 40.0, 20.0, 50.0)
    m = mean_metrics([a, b])
    assert m == Metrics(85.0, 60.0, 40.0, 15.0, 50.0)
    assert mean_metrics([a]).precision is None


def data(n=300, seed=0, n_fraud=60):
    rng = np.random.default_rng(seed)
    y = np.zeros(n, dtype=int)
    y[:n_fraud] = 1
    X = rng.normal(size=(n, 6)) + 1.2 * y[:, None] * np.array([1, 0.5, 0, 0, 0, 0])
    return Dataset(tuple(range(n)), X, y, ("a", "b", "c", "d", "e", "f"))


def test_constant_model_identical_folds():
    cv = cross_validate(XGBParams(n_rounds=3, eta=0.0, early_stop_rounds=None), data(), k=5, seed=1)
    assert len(cv.folds) == 5 and all(f == cv.folds[0] for f in cv.folds)
    assert cv.folds[0].recall == 0 and cv.folds[0].precision is None


def test_symmetric_folds_equal():
    y = np.array([1] * 10 + [0] * 20)
    d = Dataset(tuple(range(30)), np.ones((30, 2)), y, ("a", "b"))
    cv = cross_validate(RFParams(n_trees=5, mtry=1), d, k=2, seed=0)
    assert cv.folds[0] == cv.folds[1]


def test_cv_deterministic_and_fold_errors():
    d = data()
    p = RFParams(n_trees=10, seed=3)
    assert cross_validate(p, d, k=4, seed=2).confusions == cross_validate(p, d, k=4, seed=2).confusions
    from ethfraud.evaluation import FoldError
    with pytest.raises(FoldError, match="fold 0"):
        cross_validate(RFParams(mtry=99), d, k=3)


def test_cv_mean_close_to_single_split():
    from ethfraud.features import build_feature_table
    from ethfraud.synth import SynthParams, generate
    d, _ = build_feature_table(*generate(SynthParams()))
    p = RFParams(n_trees=100, seed=0)
    cv = cross_validate(p, d, k=5, seed=0)
    # one 20% split holds ~50 frauds, so its recall alone is too noisy; average a few splits
    single = []
    for s in range(5):
        train, val = stratified_split(d, 0.8, seed=s)
        single.append(evaluate(fit_model(p, train), val)[1].recall)
    assert abs(cv.mean.recall - np.mean(single)) <= 5.0


def test_reference_grids_shape():
    assert len(RF_REFERENCE_GRID) == 20 and len(SVM_REFERENCE_GRID) == 20 and len(XGB_REFERENCE_GRID) == 20
    assert RF_REFERENCE_GRID[2] == {"mtry": 3, "min_node_size": 10, "cutoff": 0.5}
    assert RF_REFERENCE_GRID[18] == {"mtry": 3, "min_node_size": 10, "cutoff": 0.99}
    assert SVM_REFERENCE_GRID[0] == {"cost": 1.0, "gamma": 0.077}
    assert SVM_REFERENCE_GRID[19] == {"cost": 50.0, "gamma": 2.0}
    assert XGB_REFERENCE_GRID[0] == {"max_depth": 6, "colsample": 0.25, "min_child_weight": 1, "cutoff": 0.5}
    assert XGB_REFERENCE_GRID[15] == {"max_depth": 3, "colsample": 1.0, "min_child_weight": 8, "cutoff": 0.99}


def test_rf_grid_twenty_rows_and_determinism(tmp_path):
    d = data()
    gr = grid_search("rf", RF_REFERENCE_GRID, d, k=3, seed=0, base={"n_trees": 10})
    assert len(gr.rows) == 20 and all(r.error is None for r in gr.rows)
    assert [r.config for r in gr.rows] == RF_REFERENCE_GRID
    again = grid_search("rf", RF_REFERENCE_GRID, d, k=3, seed=0, base={"n_trees": 10})
    assert [r.cv.confusions for r in gr.rows] == [r.cv.confusions for r in again.rows]
    # cutoff never changes training: same (mtry, min_node_size) rows flag more frauds as cutoff grows
    recalls = [gr.rows[i].cv.mean.recall for i in range(0, 20, 4)]
    assert recalls == sorted(recalls)
    p1, p2 = tmp_path / "a.csv", tmp_path / "b.csv"
    write_grid_report(p1, gr)
    write_grid_report(p2, again)
    assert p1.read_bytes() == p2.read_bytes()
    header = p1.read_text().splitlines()[0]
    assert header == "conf,mtry,min_node_size,cutoff,Specificity,Recall,Precision,FPR,F1,error"


def test_svm_grid_twenty_rows():
    d = data(n=120, n_fraud=30)
    gr = grid_search("svm", SVM_REFERENCE_GRID, d, k=3, seed=0)
    assert len(gr.rows) == 20 and all(r.error is None for r in gr.rows)


def test_grid_failures_are_isolated_and_validation_scored():
    d = data()
    train, val = stratified_split(d, 0.8, 0)
    grid = [{"mtry": 2}, {"mtry": 99}, {"bogus": 1}, {"mtry": 1}]
    gr = grid_search("rf", grid, train, k=3, base={"n_trees": 5}, validation=val)
    assert [r.error is None for r in gr.rows] == [True, False, False, True]
    assert gr.rows[0].validation is not None and gr.rows[1].validation is None
    with pytest.raises(ValueError):
        grid_search("rf", [], d)


def _published_rf_grid():
    # configuration and cross-validated metrics of the published random-forest grid
    rows = [
        (99.97, 24.36, 83.33, 0.03, 37.7), (99.96, 25.52, 80.29, 0.04, 38.73),
        (99.98, 23.67, 85.71, 0.02, 37.09), (99.97, 24.59, 83.46, 0.03, 37.99),
        (99.93, 30.16, 72.63, 0.07, 42.62), (99.92, 32.02, 70.41, 0.08, 44.02),
        (99.94, 30.16, 76.47, 0.06, 43.26), (99.93, 32.02, 72.63, 0.07, 44.44),
        (99.79, 42, 55.35, 0.21, 47.76), (99.73, 44.08, 50, 0.27, 46.86),
        (99.81, 41.76, 57.32, 0.19, 48.32), (99.75, 44.32, 52.47, 0.25, 48.05),
        (99.31, 54.06, 32.5, 0.69, 40.59), (99.19, 54.52, 29.3, 0.81, 38.12),
        (99.34, 54.52, 33.76, 0.66, 41.7), (99.24, 55.22, 30.95, 0.76, 39.67),
        (90.67, 83.53, 5.22, 9.33, 9.83), (90.79, 83.06, 5.26, 9.21, 9.89),
        (90.31, 84.92, 5.12, 9.69, 9.65), (90.63, 83.29, 5.19, 9.37, 9.77),
    ]
    return GridResult("rf", [GridRow(c, cv=CVResult([], [], Metrics(*r))) for c, r in zip(RF_REFERENCE_GRID, rows)])


def test_select_config_on_published_rows():
    gr = _published_rf_grid()
    assert gr.rows.index(select_config(gr, "min_fpr")) + 1 == 3
    assert gr.rows.index(select_config(gr, "max_recall")) + 1 == 19
    assert gr.rows.index(select_config(gr, "max_f1")) + 1 == 11


def test_select_config_ties_and_errors():
    m = Metrics(99.0, 50.0, 50.0, 1.0, 50.0)
    gr = GridResult("rf", [GridRow({"a": 1}, cv=CVResult([], [], m)), GridRow({"a": 2}, cv=CVResult([], [], m))])
    assert select_config(gr, "max_recall").config == {"a": 1}
    single = GridResult("rf", gr.rows[1:])
    assert select_config(single, "min_fpr").config == {"a": 2}
    undefined = GridResult("rf", [GridRow({"a": 1}, cv=CVResult([], [], Metrics(None, None, None, None, None)))])
    with pytest.raises(ValueError):
        select_config(undefined, "max_f1")
    with pytest.raises(ValueError):
        select_config(gr, "best")


def test_reports(tmp_path):
    cm = ConfusionMatrix(102, 17, 329, 69991)
    write_confusion(tmp_path / "c.csv", cm)
    assert (tmp_path / "c.csv").read_text().splitlines() == [
        "prediction,actual_fraud,actual_nonfraud,total", "fraud,102,17,119", "nonfraud,329,69991,70320",
        "total,431,70008,70439"]
    write_metrics_report(tmp_path / "m.csv", [("x", metrics(ConfusionMatrix(0, 0, 1, 1)))])
    assert (tmp_path / "m.csv").read_text().splitlines()[1] == "x,100.00,0.00,NA,0.00,NA"
