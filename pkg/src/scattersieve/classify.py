"""Lightweight realistic/fake classifiers and external probability ingestion.

Three native kinds stand in for the usual zoo of pretrained networks while
keeping diverse views of a frame: a logistic model over the handcrafted
features, a k-nearest-neighbor voter, and a calibrated physics rule over
the composite realism score. Probabilities computed elsewhere enter
through a CSV with columns id,p_realistic,p_fake.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field, replace
from enum import Enum
from pathlib import Path

import numpy as np

from .frames import ProbabilityVector, Verdict
from .metrics import ClassificationReport, ConfusionCounts, classification_report


class ClassifierKind(str, Enum):
    LOGISTIC = "logistic"
    KNEAREST = "knearest"
    PHYSICS_RULE = "physics_rule"
    EXTERNAL = "external"


class TrainingError(ValueError):
    """Data cannot support training (single class, divergence, ...)."""


@dataclass(frozen=True)
class ClassifierSpec:
    kind: ClassifierKind
    learning_rate: float = 0.001
    batch_size: int | None = 32
    epochs: int = 100
    l2: float = 1e-4
    k: int = 5
    csv_path: str | None = None

    def __post_init__(self):
        if self.learning_rate <= 0:
            raise ValueError("learning rate must be positive")
        if self.epochs < 1:
            raise ValueError("epochs must be >= 1")
        if self.kind is ClassifierKind.KNEAREST and self.k % 2 == 0:
            raise ValueError("k must be odd to avoid neighbor ties")
        if self.batch_size is not None and self.batch_size < 1:
            raise ValueError("batch size must be >= 1 (or None for full batch)")

    def to_json(self) -> dict:
        return {
            "kind": self.kind.value,
            "learning_rate": self.learning_rate,
            "batch_size": self.batch_size,
            "epochs": self.epochs,
            "l2": self.l2,
            "k": self.k,
            "csv_path": self.csv_path,
        }

    @staticmethod
    def from_json(obj: dict) -> "ClassifierSpec":
        return ClassifierSpec(
            kind=ClassifierKind(obj["kind"]),
            learning_rate=obj.get("learning_rate", 0.001),
            batch_size=obj.get("batch_size", 32),
            epochs=obj.get("epochs", 100),
            l2=obj.get("l2", 1e-4),
            k=obj.get("k", 5),
            csv_path=obj.get("csv_path"),
        )


@dataclass
class TrainedClassifier:
    id: str
    spec: ClassifierSpec
    params: dict
    validation: ClassificationReport | None = None
    round_index: int = 0
    epoch_losses: list[float] = field(default_factory=list)

    def save(self, path: str | Path) -> None:
        payload = {
            "format_version": 1,
            "id": self.id,
            "spec": self.spec.to_json(),
            "params": _params_to_json(self.params),
            "validation": self.validation.to_json() if self.validation else None,
            "round_index": self.round_index,
            "epoch_losses": self.epoch_losses,
        }
        Path(path).parent.mkdir(parents=True, exist_ok=True)
        Path(path).write_text(json.dumps(payload, indent=2), encoding="utf-8")

    @staticmethod
    def load(path: str | Path) -> "TrainedClassifier":
        obj = json.loads(Path(path).read_text(encoding="utf-8"))
        if obj.get("format_version") != 1:
            raise ValueError(f"unsupported model format {obj.get('format_version')}")
        val = obj.get("validation")
        report = None
        if val is not None:
            report = ClassificationReport(
                accuracy=val["accuracy"], precision=val["precision"],
                recall=val["recall"], f1=val["f1"],
                degenerate=tuple(val.get("degenerate", ())),
            )
        return TrainedClassifier(
            id=obj["id"], spec=ClassifierSpec.from_json(obj["spec"]),
            params=_params_from_json(obj["params"]), validation=report,
            round_index=obj.get("round_index", 0),
            epoch_losses=list(obj.get("epoch_losses", [])),
        )


def _params_to_json(params: dict) -> dict:
    out = {}
    for key, val in params.items():
        if isinstance(val, np.ndarray):
            out[key] = {"__array__": val.tolist()}
        elif isinstance(val, dict):
            out[key] = {"__map__": val}
        else:
            out[key] = val
    return out


def _params_from_json(obj: dict) -> dict:
    out = {}
    for key, val in obj.items():
        if isinstance(val, dict) and "__array__" in val:
            out[key] = np.asarray(val["__array__"], dtype=np.float64)
        elif isinstance(val, dict) and "__map__" in val:
            out[key] = dict(val["__map__"])
        else:
            out[key] = val
    return out


# ---------------------------------------------------------------------------
# splits
# ---------------------------------------------------------------------------

def split_train_validation(n_items: int, verdicts, fraction: float = 0.2,
                           seed: int = 0) -> tuple[np.ndarray, np.ndarray]:
    """Stratified seeded split; returns (train_idx, validation_idx).

    Class proportions in the validation part match the full set within one
    item. Needs at least 5 labeled items per class.
    """
    verdicts = list(verdicts)
    if len(verdicts) != n_items:
        raise ValueError("verdict list length mismatch")
    if not (0.0 < fraction < 1.0):
        raise ValueError("fraction must be in (0, 1)")
    rng = np.random.default_rng(seed)
    train_idx: list[int] = []
    val_idx: list[int] = []
    for cls in (Verdict.REALISTIC, Verdict.FAKE):
        members = np.asarray([i for i, v in enumerate(verdicts) if v is cls])
        if members.size < 5:
            raise TrainingError(
                f"need at least 5 items of class {cls.value}, got {members.size}"
            )
        members = members[rng.permutation(members.size)]
        n_val = int(round(fraction * members.size))
        n_val = min(max(n_val, 1), members.size - 1)
        val_idx.extend(members[:n_val].tolist())
        train_idx.extend(members[n_val:].tolist())
    return np.asarray(sorted(train_idx)), np.asarray(sorted(val_idx))


# ---------------------------------------------------------------------------
# training
# ---------------------------------------------------------------------------

def _sigmoid(z: np.ndarray) -> np.ndarray:
    out = np.empty_like(z)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


def logistic_loss(weights: np.ndarray, bias: float, features: np.ndarray,
                  targets: np.ndarray, l2: float) -> float:
    """Mean binary cross-entropy plus (l2/2)*||w||^2."""
    z = features @ weights + bias
    # stable log(1+exp(-|z|)) formulation
    ce = np.logaddexp(0.0, -z) * targets + np.logaddexp(0.0, z) * (1.0 - targets)
    return float(ce.mean() + 0.5 * l2 * weights @ weights)


def logistic_gradient(weights: np.ndarray, bias: float, features: np.ndarray,
                      targets: np.ndarray, l2: float) -> tuple[np.ndarray, float]:
    """Analytic gradient of logistic_loss in (weights, bias)."""
    p = _sigmoid(features @ weights + bias)
    err = p - targets
    grad_w = features.T @ err / len(targets) + l2 * weights
    grad_b = float(err.mean())
    return grad_w, grad_b


def _train_logistic(spec: ClassifierSpec, features: np.ndarray, targets: np.ndarray,
                    seed: int, init: dict | None) -> tuple[dict, list[float]]:
    n, d = features.shape
    if init is not None:
        weights = np.asarray(init["weights"], dtype=np.float64).copy()
        bias = float(init["bias"])
        if weights.shape[0] != d:
            raise TrainingError("warm-start weights do not match feature length")
    else:
        weights = np.zeros(d)
        bias = 0.0
    rng = np.random.default_rng(seed)
    batch = n if spec.batch_size is None else min(spec.batch_size, n)
    losses = []
    for epoch in range(spec.epochs):
        order = rng.permutation(n)
        for start in range(0, n, batch):
            idx = order[start : start + batch]
            grad_w, grad_b = logistic_gradient(weights, bias, features[idx],
                                               targets[idx], spec.l2)
            weights -= spec.learning_rate * grad_w
            bias -= spec.learning_rate * grad_b
        loss = logistic_loss(weights, bias, features, targets, spec.l2)
        if not np.isfinite(loss):
            raise TrainingError(f"training diverged at epoch {epoch}")
        losses.append(loss)
    return {"weights": weights, "bias": bias}, losses


def _fit_1d_logistic(scores: np.ndarray, targets: np.ndarray,
                     l2: float = 1e-3, iterations: int = 50) -> tuple[float, float]:
    """Newton MLE of p = sigmoid(a*s + b); small ridge keeps separable data finite."""
    a, b = 0.0, 0.0
    for _ in range(iterations):
        z = a * scores + b
        p = _sigmoid(z)
        w = np.clip(p * (1 - p), 1e-9, None)
        g_a = float(((p - targets) * scores).mean() + l2 * a)
        g_b = float((p - targets).mean())
        h_aa = float((w * scores * scores).mean() + l2)
        h_ab = float((w * scores).mean())
        h_bb = float(w.mean()) + 1e-12
        det = h_aa * h_bb - h_ab * h_ab
        if abs(det) < 1e-18:
            break
        da = (h_bb * g_a - h_ab * g_b) / det
        db = (h_aa * g_b - h_ab * g_a) / det
        a -= da
        b -= db
        if abs(da) + abs(db) < 1e-10:
            break
    if not (np.isfinite(a) and np.isfinite(b)):
        raise TrainingError("physics-rule calibration diverged")
    return a, b


def train(spec: ClassifierSpec, features: np.ndarray, verdicts,
          seed: int = 0, validation_fraction: float = 0.2,
          classifier_id: str | None = None, round_index: int = 0,
          init: TrainedClassifier | None = None) -> TrainedClassifier:
    """Fit a classifier and report validation metrics from a held-out split.

    Deterministic under (spec, data, seed); pass init= to warm-start a
    logistic model from a previous round's parameters.
    """
    if spec.kind is ClassifierKind.EXTERNAL:
        raise TrainingError("external classifiers are loaded, not trained")
    features = np.asarray(features, dtype=np.float64)
    verdicts = [Verdict(v) for v in verdicts]
    if features.ndim != 2 or features.shape[0] != len(verdicts):
        raise ValueError("features must be (n, d) aligned with verdicts")
    classes = set(verdicts)
    if len(classes) < 2:
        raise TrainingError("training data contains a single class")
    train_idx, val_idx = split_train_validation(len(verdicts), verdicts,
                                                fraction=validation_fraction, seed=seed)
    targets = np.asarray([1.0 if v is Verdict.REALISTIC else 0.0 for v in verdicts])
    x_train, y_train = features[train_idx], targets[train_idx]

    losses: list[float] = []
    if spec.kind is ClassifierKind.LOGISTIC:
        init_params = init.params if init is not None else None
        params, losses = _train_logistic(spec, x_train, y_train, seed, init_params)
    elif spec.kind is ClassifierKind.KNEAREST:
        if spec.k > len(train_idx):
            raise TrainingError(f"k={spec.k} exceeds training size {len(train_idx)}")
        params = {"features": x_train.copy(), "targets": y_train.copy()}
    elif spec.kind is ClassifierKind.PHYSICS_RULE:
        if features.shape[1] != 1:
            raise ValueError("physics_rule expects a single composite-score feature")
        a, b = _fit_1d_logistic(x_train[:, 0], y_train)
        params = {"a": a, "b": b}
    else:  # pragma: no cover
        raise TrainingError(f"unsupported kind {spec.kind}")

    clf = TrainedClassifier(
        id=classifier_id or spec.kind.value,
        spec=spec, params=params, round_index=round_index, epoch_losses=losses,
    )
    predictions = [
        Verdict.REALISTIC if predict_proba(clf, features[i]).p_realistic >= 0.5
        else Verdict.FAKE
        for i in val_idx
    ]
    actual = [verdicts[i] for i in val_idx]
    clf.validation = classification_report(ConfusionCounts.from_predictions(predictions, actual))
    return clf


def predict_proba(classifier: TrainedClassifier, x) -> ProbabilityVector:
    """Class probabilities for one feature vector (or image id for EXTERNAL)."""
    kind = classifier.spec.kind
    if kind is ClassifierKind.EXTERNAL:
        if not isinstance(x, str):
            raise TypeError("external classifiers predict by image id")
        table = classifier.params["probabilities"]
        if x not in table:
            raise KeyError(f"no external probability for image {x!r}")
        p = table[x]
        return ProbabilityVector(p[0], p[1])
    vals = np.asarray(getattr(x, "values", x), dtype=np.float64).ravel()
    if kind is ClassifierKind.LOGISTIC:
        weights = classifier.params["weights"]
        if vals.shape[0] != weights.shape[0]:
            raise ValueError(f"feature length {vals.shape[0]} != model {weights.shape[0]}")
        p = float(_sigmoid(np.atleast_1d(vals @ weights + classifier.params["bias"]))[0])
    elif kind is ClassifierKind.KNEAREST:
        stored = classifier.params["features"]
        if vals.shape[0] != stored.shape[1]:
            raise ValueError(f"feature length {vals.shape[0]} != model {stored.shape[1]}")
        dists = np.linalg.norm(stored - vals[None, :], axis=1)
        nearest = np.argsort(dists, kind="stable")[: classifier.spec.k]
        p = float(classifier.params["targets"][nearest].mean())
    elif kind is ClassifierKind.PHYSICS_RULE:
        if vals.shape[0] != 1:
            raise ValueError("physics_rule expects a single composite score")
        z = classifier.params["a"] * vals[0] + classifier.params["b"]
        p = float(_sigmoid(np.atleast_1d(z))[0])
    else:  # pragma: no cover
        raise ValueError(f"unsupported kind {kind}")
    return ProbabilityVector.from_p_realistic(p)


def predict_proba_batch(classifier: TrainedClassifier, xs) -> list[ProbabilityVector]:
    return [predict_proba(classifier, x) for x in xs]


# ---------------------------------------------------------------------------
# external probabilities
# ---------------------------------------------------------------------------

def ingest_external(path: str | Path) -> list[tuple[str, ProbabilityVector]]:
    """Read id,p_realistic,p_fake rows; renormalize drifts up to 1e-3.

    Rows further from summing to 1, probabilities outside [0, 1], duplicate
    ids, or malformed lines are hard errors.
    """
    path = Path(path)
    out: list[tuple[str, ProbabilityVector]] = []
    seen: set[str] = set()
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or [h.strip() for h in header[:3]] != ["id", "p_realistic", "p_fake"]:
            raise ValueError(f"{path}: expected header id,p_realistic,p_fake")
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) < 3:
                raise ValueError(f"{path}:{lineno}: malformed row {row!r}")
            image_id = row[0]
            if image_id in seen:
                raise ValueError(f"{path}:{lineno}: duplicate id {image_id!r}")
            seen.add(image_id)
            try:
                p_real, p_fake = float(row[1]), float(row[2])
            except ValueError as exc:
                raise ValueError(f"{path}:{lineno}: non-numeric probability") from exc
            if not (0.0 <= p_real <= 1.0 and 0.0 <= p_fake <= 1.0):
                raise ValueError(f"{path}:{lineno}: probability outside [0, 1]")
            total = p_real + p_fake
            if abs(total - 1.0) > 1e-3:
                raise ValueError(f"{path}:{lineno}: probabilities sum to {total}")
            if total > 0 and abs(total - 1.0) > 1e-9:
                p_real, p_fake = p_real / total, p_fake / total
            out.append((image_id, ProbabilityVector(p_real, p_fake)))
    return out


def external_classifier(path: str | Path, classifier_id: str | None = None
                        ) -> TrainedClassifier:
    """Wrap an external probability CSV as a classifier keyed by image id."""
    rows = ingest_external(path)
    table = {image_id: (pv.p_realistic, pv.p_fake) for image_id, pv in rows}
    spec = ClassifierSpec(kind=ClassifierKind.EXTERNAL, csv_path=str(path))
    return TrainedClassifier(id=classifier_id or Path(path).stem, spec=spec,
                             params={"probabilities": table})
