import hashlib

import numpy as np
import pytest

from xlauth.classify import (
    KNN,
    LOGISTIC_REGRESSION,
    TrainedModel,
    evaluate,
    load_model,
    predict,
    predict_batch,
    save_model,
    save_report,
    split,
    train,
)
from xlauth.errors import StratificationError, TrainingError, ValidationError
from xlauth.features import Dataset, FeatureVector, Scenario


def make_rows(centers: dict[str, tuple[float, float]], n: int, spread: float, seed: int):
    rng = np.random.default_rng(seed)
    rows = []
    for device, (cx, cy) in centers.items():
        for _ in range(n):
            rows.append(
                FeatureVector(
                    cfo_hz=cx + spread * rng.standard_normal(),
                    skew_deg=float(np.clip(cy + spread * rng.standard_normal() * 0.01, -89, 89)),
                    device_id=device,
                )
            )
    return rows


def separable_rows(n=40, seed=0):
    return make_rows({"a": (-1e5, -10.0), "b": (1e5, 10.0)}, n, 1e3, seed)


def test_split_counts_and_determinism():
    rows = make_rows({"a": (0, 0), "b": (1, 1)}, 200, 1.0, 1)
    ds = Dataset(rows=rows, scenario=Scenario.FIXED_SKEW)
    tr1, te1 = split(ds, 0.8, seed=5)
    tr2, te2 = split(ds, 0.8, seed=5)
    assert len(tr1) == 320 and len(te1) == 80
    per_dev = {}
    for row in tr1:
        per_dev[row.device_id] = per_dev.get(row.device_id, 0) + 1
    assert per_dev == {"a": 160, "b": 160}
    assert tr1 == tr2 and te1 == te2
    assert split(ds, 0.8, seed=6)[0] != tr1  # different seed, different partition


def test_split_guards():
    rows = separable_rows(n=40)
    with pytest.raises(StratificationError):
        split(rows, 1.0, seed=0)
    with pytest.raises(StratificationError):
        split(rows, 0.0, seed=0)
    with pytest.raises(StratificationError):
        split([], 0.8, seed=0)
    few = make_rows({"a": (0, 0), "b": (1, 1)}, 4, 1.0, 2)
    with pytest.raises(StratificationError):
        split(few, 0.8, seed=0)
    unlabeled = [FeatureVector(0.0, 0.0)]
    with pytest.raises(StratificationError):
        split(unlabeled, 0.8, seed=0)


def test_train_guards():
    rows = make_rows({"a": (0, 0)}, 10, 1.0, 3)
    with pytest.raises(TrainingError):
        train(rows, algo=KNN)
    with pytest.raises(ValidationError):
        train(separable_rows(), algo=KNN, k=4)  # even k
    with pytest.raises(TrainingError):
        train(separable_rows(), algo="svm")


def test_knn_self_fit_is_perfect():
    rows = separable_rows()
    model = train(rows, algo=KNN, k=5)
    report = evaluate(model, rows)
    assert report.accuracy == 1.0


def test_knn_k1_exact_on_training_points():
    rows = separable_rows()
    model = train(rows, algo=KNN, k=1)
    for row in rows:
        label, conf = predict(model, row)
        assert label == row.device_id and conf == 1.0
    assert evaluate(model, rows).accuracy == 1.0


def test_logreg_separable_accuracy():
    rows = separable_rows()
    model = train(rows, algo=LOGISTIC_REGRESSION)
    assert evaluate(model, rows).accuracy >= 0.99


def test_model_file_bytes_deterministic(tmp_path):
    rows = separable_rows()
    digests = []
    for name in ("m1.json", "m2.json"):
        model = train(rows, algo=KNN, k=5, seed=9)
        path = tmp_path / name
        save_model(model, str(path))
        digests.append(hashlib.sha256(path.read_bytes()).hexdigest())
    assert digests[0] == digests[1]


def test_model_roundtrip_predictions(tmp_path):
    rows = separable_rows()
    for algo in (KNN, LOGISTIC_REGRESSION):
        model = train(rows, algo=algo)
        path = tmp_path / f"{algo}.json"
        save_model(model, str(path))
        loaded = load_model(str(path))
        assert predict_batch(loaded, rows) == predict_batch(model, rows)


def test_knn_tie_break_mean_distance_then_lexicographic():
    # Two training points, equidistant query, k=2: votes tie 1-1; mean
    # distances tie as well, so the lexicographically smaller id wins.
    rows = [
        FeatureVector(cfo_hz=-1.0, skew_deg=0.0, device_id="b"),
        FeatureVector(cfo_hz=1.0, skew_deg=0.0, device_id="a"),
    ]
    model = TrainedModel(
        algo=KNN,
        classes=["a", "b"],
        scaler_means=np.zeros(2),
        scaler_stds=np.ones(2),
        k=1,
        points=np.array([[-1.0, 0.0], [1.0, 0.0]]),
        labels=np.array([1, 0]),
    )
    model.k = 2  # bypass odd-k guard to exercise the documented tie rule
    label, conf = predict(model, FeatureVector(cfo_hz=0.0, skew_deg=0.0))
    assert label == "a" and conf == 0.5
    # closer cluster wins the mean-distance comparison
    label, _ = predict(model, FeatureVector(cfo_hz=0.5, skew_deg=0.0))
    assert label == "a"
    label, _ = predict(model, FeatureVector(cfo_hz=-0.5, skew_deg=0.0))
    assert label == "b"


def test_predict_rejects_nonfinite():
    model = train(separable_rows(), algo=KNN)
    # construct a non-finite vector bypassing FeatureVector's own validation
    bad = FeatureVector.__new__(FeatureVector)
    object.__setattr__(bad, "cfo_hz", float("nan"))
    object.__setattr__(bad, "skew_deg", 0.0)
    object.__setattr__(bad, "device_id", None)
    with pytest.raises(ValidationError):
        predict(model, bad)


def test_evaluate_metric_identities():
    rows = make_rows({"a": (-1e5, -5), "b": (0.0, 0.0), "c": (1e5, 5)}, 50, 3e4, 7)
    train_rows, test_rows = split(rows, 0.8, seed=1)
    model = train(train_rows, algo=KNN, k=5)
    report = evaluate(model, test_rows)
    conf = report.confusion
    assert conf.sum() == len(test_rows)
    assert report.accuracy == pytest.approx(np.trace(conf) / conf.sum())
    # per-class F1 equals the harmonic mean of precision and recall
    f1s, recalls = [], []
    for c in range(len(report.classes)):
        tp = conf[c, c]
        recall = tp / conf[c].sum() if conf[c].sum() else 0.0
        precision = tp / conf[:, c].sum() if conf[:, c].sum() else 0.0
        f1s.append(2 * precision * recall / (precision + recall) if precision + recall else 0.0)
        recalls.append(recall)
    assert report.f1_mean == pytest.approx(np.mean(f1s))
    assert report.recall_mean == pytest.approx(np.mean(recalls))
    assert 0.0 <= report.f1_mean <= 1.0
    # row sums equal per-device test counts
    per_dev = {}
    for row in test_rows:
        per_dev[row.device_id] = per_dev.get(row.device_id, 0) + 1
    for c, cls in enumerate(report.classes):
        assert conf[c].sum() == per_dev[cls]


def test_evaluate_perfect_and_all_wrong():
    rows = separable_rows()
    model = train(rows, algo=KNN, k=1)
    report = evaluate(model, rows)
    assert report.accuracy == report.recall_mean == report.f1_mean == 1.0
    assert np.all(report.confusion == np.diag(np.diag(report.confusion)))
    # swap labels to force every prediction wrong
    swapped = [
        FeatureVector(r.cfo_hz, r.skew_deg, "a" if r.device_id == "b" else "b")
        for r in rows
    ]
    report = evaluate(model, swapped)
    assert report.accuracy == 0.0 and report.recall_mean == 0.0


def test_standardization_absorbs_feature_offset():
    rows = separable_rows()
    offset_rows = [
        FeatureVector(r.cfo_hz + 5e6, r.skew_deg, r.device_id) for r in rows
    ]
    model = train(rows, algo=KNN, k=5)
    model_off = train(offset_rows, algo=KNN, k=5)
    preds = [predict(model, r)[0] for r in rows]
    preds_off = [predict(model_off, r)[0] for r in offset_rows]
    assert preds == preds_off


def test_save_report_files(tmp_path):
    rows = separable_rows()
    model = train(rows, algo=KNN)
    report = evaluate(model, rows)
    json_path = tmp_path / "report.json"
    csv_path = tmp_path / "confusion.csv"
    save_report(report, str(json_path), str(csv_path))
    text = csv_path.read_text().splitlines()
    assert text[0] == "true\\pred,a,b"
    assert len(text) == 3
    assert json_path.read_text().startswith("{")
