"""Device-identity classifiers over extracted feature vectors.

KNN is the production model: it stores standardized training points and
votes among the k nearest by Euclidean distance. A one-vs-rest logistic
regression trained by batch gradient descent serves as the contrast
baseline. Both persist to JSON and predict deterministically, with ties
broken by smallest mean neighbor distance and then lexicographic device id.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

from .errors import StratificationError, TrainingError, ValidationError
from .features import Dataset, FeatureVector

KNN = "knn"
LOGISTIC_REGRESSION = "logreg"

_LR_MAX_ITER = 2000
_LR_TOL = 1e-7


@dataclass
class TrainedModel:
    algo: str
    classes: list[str]
    scaler_means: np.ndarray
    scaler_stds: np.ndarray
    k: int | None = None
    points: np.ndarray | None = None  # standardized training features (KNN)
    labels: np.ndarray | None = None  # class indices aligned with points
    weights: np.ndarray | None = None  # (n_classes, n_features+1) logistic weights
    seed: int = 0

    def __post_init__(self) -> None:
        if self.algo not in (KNN, LOGISTIC_REGRESSION):
            raise ValidationError(f"unknown algorithm {self.algo!r}")
        if self.algo == KNN:
            if self.k is None or self.k < 1 or self.k % 2 == 0:
                raise ValidationError("k must be odd and >= 1")


@dataclass
class EvalReport:
    accuracy: float
    recall_mean: float
    f1_mean: float
    confusion: np.ndarray  # rows: true device, columns: predicted
    classes: list[str]
    split_seed: int
    n_test: int = 0

    def to_dict(self) -> dict:
        return {
            "accuracy": self.accuracy,
            "recall_mean": self.recall_mean,
            "f1_mean": self.f1_mean,
            "classes": self.classes,
            "confusion": self.confusion.tolist(),
            "split_seed": self.split_seed,
            "n_test": self.n_test,
        }


def _rows_to_arrays(
    rows: list[FeatureVector], classes: list[str] | None = None
) -> tuple[np.ndarray, np.ndarray, list[str]]:
    if classes is None:
        classes = sorted({row.device_id for row in rows if row.device_id is not None})
    index = {c: i for i, c in enumerate(classes)}
    X = np.array([[row.cfo_hz, row.skew_deg] for row in rows], dtype=float)
    y = np.array([index[row.device_id] for row in rows], dtype=int)
    return X, y, classes


def split(
    dataset: Dataset | list[FeatureVector],
    train_fraction: float = 0.8,
    seed: int = 0,
) -> tuple[list[FeatureVector], list[FeatureVector]]:
    """Stratified per-device split, deterministic under ``seed``."""
    rows = dataset.rows if isinstance(dataset, Dataset) else list(dataset)
    if not rows:
        raise StratificationError("dataset is empty")
    if not 0.0 < train_fraction < 1.0:
        raise StratificationError("train_fraction must lie strictly inside (0, 1)")
    by_device: dict[str, list[FeatureVector]] = {}
    for row in rows:
        if row.device_id is None:
            raise StratificationError("unlabeled row cannot be stratified")
        by_device.setdefault(row.device_id, []).append(row)
    rng = np.random.default_rng(seed)
    train: list[FeatureVector] = []
    test: list[FeatureVector] = []
    for device in sorted(by_device):
        group = by_device[device]
        if len(group) < 5:
            raise StratificationError(
                f"device {device} has only {len(group)} rows (need >= 5)"
            )
        n_train = int(round(train_fraction * len(group)))
        n_train = min(max(n_train, 1), len(group) - 1)
        order = rng.permutation(len(group))
        train.extend(group[i] for i in order[:n_train])
        test.extend(group[i] for i in order[n_train:])
    return train, test


def train(
    rows: list[FeatureVector],
    algo: str = KNN,
    k: int = 5,
    seed: int = 0,
) -> TrainedModel:
    """Fit a model on labeled rows; scaling comes from this split only."""
    X, y, classes = _rows_to_arrays(rows)
    if len(classes) < 2:
        raise TrainingError("need at least two device classes")
    means = X.mean(axis=0)
    stds = X.std(axis=0)
    stds = np.where(stds == 0.0, 1.0, stds)
    Xs = (X - means) / stds
    if algo == KNN:
        return TrainedModel(
            algo=KNN, classes=classes, scaler_means=means, scaler_stds=stds,
            k=k, points=Xs, labels=y, seed=seed,
        )
    if algo == LOGISTIC_REGRESSION:
        weights = _fit_logistic_ovr(Xs, y, len(classes))
        return TrainedModel(
            algo=LOGISTIC_REGRESSION, classes=classes, scaler_means=means,
            scaler_stds=stds, weights=weights, seed=seed,
        )
    raise TrainingError(f"unknown algorithm {algo!r}")


def _fit_logistic_ovr(Xs: np.ndarray, y: np.ndarray, n_classes: int) -> np.ndarray:
    """Batch gradient descent per class, zero init, capped iterations.

    The step is set just under the stability bound 4/lambda_max(X'X/n)
    (the logistic loss gradient is lambda_max/4-Lipschitz), so descent is
    monotone without a line search.
    """
    Xb = np.hstack([Xs, np.ones((len(Xs), 1))])
    lam_max = float(np.linalg.eigvalsh(Xb.T @ Xb / len(Xb)).max())
    step = 3.96 / lam_max
    weights = np.zeros((n_classes, Xb.shape[1]))
    for c in range(n_classes):
        target = (y == c).astype(float)
        w = np.zeros(Xb.shape[1])
        for _ in range(_LR_MAX_ITER):
            p = 1.0 / (1.0 + np.exp(-(Xb @ w)))
            grad = Xb.T @ (p - target) / len(Xb)
            w -= step * grad
            if np.max(np.abs(grad)) < _LR_TOL:
                break
        weights[c] = w
    return weights


def _standardize(model: TrainedModel, X: np.ndarray) -> np.ndarray:
    return (X - model.scaler_means) / model.scaler_stds


def predict_batch(model: TrainedModel, feats: list[FeatureVector]) -> list[tuple[str, float]]:
    """Vectorized predictions; same tie-break semantics as :func:`predict`."""
    X = np.array([[f.cfo_hz, f.skew_deg] for f in feats], dtype=float)
    if not np.all(np.isfinite(X)):
        raise ValidationError("non-finite feature values")
    Xs = _standardize(model, X)
    if model.algo == KNN:
        return [_knn_vote(model, x) for x in Xs]
    scores = _logistic_scores(model, Xs)
    out = []
    for row in scores:
        best = _argmax_lexicographic(row, model.classes)
        total = row.sum()
        conf = float(row[best] / total) if total > 0 else 1.0 / len(model.classes)
        out.append((model.classes[best], conf))
    return out


def predict(model: TrainedModel, feat: FeatureVector) -> tuple[str, float]:
    """Predicted device id plus a confidence fraction."""
    return predict_batch(model, [feat])[0]


def _knn_vote(model: TrainedModel, x: np.ndarray) -> tuple[str, float]:
    dists = np.sqrt(((model.points - x) ** 2).sum(axis=1))
    # Stable sort: exact distance ties resolve by training-point order.
    order = np.argsort(dists, kind="stable")[: model.k]
    neighbor_labels = model.labels[order]
    votes = np.bincount(neighbor_labels, minlength=len(model.classes))
    top = votes.max()
    tied = np.flatnonzero(votes == top)
    if len(tied) > 1:
        mean_dist = {
            c: dists[order[neighbor_labels == c]].mean() for c in tied
        }
        low = min(mean_dist.values())
        tied = [c for c in tied if mean_dist[c] == low]
        winner = min(tied, key=lambda c: model.classes[c])
    else:
        winner = int(tied[0])
    return model.classes[winner], float(top / model.k)


def _logistic_scores(model: TrainedModel, Xs: np.ndarray) -> np.ndarray:
    Xb = np.hstack([Xs, np.ones((len(Xs), 1))])
    return 1.0 / (1.0 + np.exp(-(Xb @ model.weights.T)))


def _argmax_lexicographic(scores: np.ndarray, classes: list[str]) -> int:
    best = scores.max()
    tied = np.flatnonzero(scores == best)
    return int(min(tied, key=lambda c: classes[c]))


def evaluate(
    model: TrainedModel, rows: list[FeatureVector], split_seed: int = 0
) -> EvalReport:
    """Accuracy, macro recall, macro F1, and the confusion matrix."""
    if not rows:
        raise ValidationError("test set is empty")
    X, y, _ = _rows_to_arrays(rows, classes=model.classes)
    preds = predict_batch(model, rows)
    pred_idx = np.array([model.classes.index(p) for p, _ in preds])
    n = len(model.classes)
    confusion = np.zeros((n, n), dtype=int)
    for t, p in zip(y, pred_idx):
        confusion[t, p] += 1
    accuracy = float(np.trace(confusion) / confusion.sum())
    recalls = np.zeros(n)
    f1s = np.zeros(n)
    for c in range(n):
        tp = confusion[c, c]
        row_sum = confusion[c].sum()
        col_sum = confusion[:, c].sum()
        recall = tp / row_sum if row_sum else 0.0
        precision = tp / col_sum if col_sum else 0.0
        recalls[c] = recall
        f1s[c] = (
            2.0 * precision * recall / (precision + recall)
            if (precision + recall) > 0
            else 0.0
        )
    return EvalReport(
        accuracy=accuracy,
        recall_mean=float(recalls.mean()),
        f1_mean=float(f1s.mean()),
        confusion=confusion,
        classes=list(model.classes),
        split_seed=split_seed,
        n_test=len(rows),
    )


def save_model(model: TrainedModel, path: str) -> None:
    doc: dict = {
        "algo": model.algo,
        "classes": model.classes,
        "scaler": {
            "means": model.scaler_means.tolist(),
            "stds": model.scaler_stds.tolist(),
        },
        "seed": model.seed,
    }
    if model.algo == KNN:
        doc["k"] = model.k
        doc["points"] = model.points.tolist()
        doc["labels"] = model.labels.tolist()
    else:
        doc["weights"] = model.weights.tolist()
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(doc, fh, sort_keys=True, indent=2)
        fh.write("\n")


def load_model(path: str) -> TrainedModel:
    with open(path, encoding="utf-8") as fh:
        doc = json.load(fh)
    kwargs: dict = dict(
        algo=doc["algo"],
        classes=list(doc["classes"]),
        scaler_means=np.array(doc["scaler"]["means"]),
        scaler_stds=np.array(doc["scaler"]["stds"]),
        seed=doc.get("seed", 0),
    )
    if doc["algo"] == KNN:
        kwargs.update(
            k=doc["k"],
            points=np.array(doc["points"]),
            labels=np.array(doc["labels"], dtype=int),
        )
    else:
        kwargs.update(weights=np.array(doc["weights"]))
    return TrainedModel(**kwargs)


def save_report(report: EvalReport, json_path: str, confusion_csv: str | None = None) -> None:
    with open(json_path, "w", encoding="utf-8") as fh:
        json.dump(report.to_dict(), fh, sort_keys=True, indent=2)
        fh.write("\n")
    if confusion_csv is not None:
        with open(confusion_csv, "w", encoding="utf-8") as fh:
            fh.write("true\\pred," + ",".join(report.classes) + "\n")
            for cls, row in zip(report.classes, report.confusion):
                fh.write(cls + "," + ",".join(str(v) for v in row) + "\n")
