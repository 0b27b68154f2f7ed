"""Hard, average-soft, and weighted-soft voting over classifier panels.

Hard voting takes the majority label; soft voting thresholds the weighted
mean of p_realistic. Weights are fitted on validation predictions with a
precision-dominant prior plus a greedy grid refinement, because discarding
a generated image is cheap while accepting a fake one is not.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field
from enum import Enum

import numpy as np

from .frames import ProbabilityVector, Verdict
from .metrics import ClassificationReport, ConfusionCounts, classification_report


class VoteStrategy(str, Enum):
    HARD = "hard"
    SOFT_AVERAGE = "soft_average"
    SOFT_WEIGHTED = "soft_weighted"


@dataclass(frozen=True)
class VoteConfig:
    strategy: VoteStrategy = VoteStrategy.SOFT_AVERAGE
    weights: tuple[float, ...] | None = None  # SOFT_WEIGHTED only
    threshold: float = 0.5
    tie_break: Verdict = Verdict.FAKE

    def __post_init__(self):
        if not (0.0 <= self.threshold <= 1.0):
            raise ValueError("threshold must be in [0, 1]")
        if self.weights is not None:
            w = np.asarray(self.weights, dtype=np.float64)
            if w.min() < 0 or abs(w.sum() - 1.0) > 1e-9:
                raise ValueError("weights must be nonnegative and sum to 1")

    def to_json(self) -> dict:
        return {
            "strategy": self.strategy.value,
            "weights": list(self.weights) if self.weights is not None else None,
            "threshold": self.threshold,
            "tie_break": self.tie_break.value,
        }


@dataclass
class PredictionPanel:
    """p_realistic per (classifier, image), aligned with image ids."""

    classifier_ids: list[str]
    image_ids: list[str]
    p_realistic: np.ndarray  # (n_classifiers, n_images)

    def __post_init__(self):
        self.p_realistic = np.asarray(self.p_realistic, dtype=np.float64)
        if self.p_realistic.shape != (len(self.classifier_ids), len(self.image_ids)):
            raise ValueError("panel shape does not match id lists")
        if self.p_realistic.min() < 0 or self.p_realistic.max() > 1:
            raise ValueError("panel probabilities outside [0, 1]")

    @property
    def n_classifiers(self) -> int:
        return len(self.classifier_ids)


@dataclass
class EnsembleReport:
    per_classifier: dict[str, ClassificationReport]
    per_strategy: dict[str, ClassificationReport]
    round_index: int = 0
    weights: tuple[float, ...] | None = None

    def to_json(self) -> dict:
        return {
            "per_classifier": {k: v.to_json() for k, v in self.per_classifier.items()},
            "per_strategy": {k: v.to_json() for k, v in self.per_strategy.items()},
            "round_index": self.round_index,
            "weights": list(self.weights) if self.weights is not None else None,
        }


def hard_vote(predictions, tie_break: Verdict = Verdict.FAKE) -> Verdict:
    """Majority label; exact ties fall to tie_break."""
    predictions = [Verdict(p) for p in predictions]
    if not predictions:
        raise ValueError("hard_vote needs at least one prediction")
    realistic = sum(1 for p in predictions if p is Verdict.REALISTIC)
    fake = len(predictions) - realistic
    if realistic > fake:
        return Verdict.REALISTIC
    if fake > realistic:
        return Verdict.FAKE
    return tie_break


def soft_vote(probabilities, weights=None, threshold: float = 0.5
              ) -> tuple[Verdict, float]:
    """Weighted mean of p_realistic; Realistic iff it reaches the threshold."""
    ps = np.asarray([
        p.p_realistic if isinstance(p, ProbabilityVector) else float(p)
        for p in probabilities
    ])
    if ps.size == 0:
        raise ValueError("soft_vote needs at least one probability")
    if weights is None:
        w = np.full(ps.size, 1.0 / ps.size)
    else:
        w = np.asarray(weights, dtype=np.float64)
        if w.shape != ps.shape:
            raise ValueError(f"{w.size} weights for {ps.size} probabilities")
        if w.min() < 0 or abs(w.sum() - 1.0) > 1e-9:
            raise ValueError("weights must be nonnegative and sum to 1")
    combined = float(w @ ps)
    label = Verdict.REALISTIC if combined >= threshold else Verdict.FAKE
    return label, combined


def _panel_labels(panel_row: np.ndarray, threshold: float) -> list[Verdict]:
    return [Verdict.REALISTIC if p >= threshold else Verdict.FAKE for p in panel_row]


def _precision_at(panel: PredictionPanel, weights: np.ndarray, labels,
                  threshold: float) -> float:
    combined = weights @ panel.p_realistic
    predicted = [Verdict.REALISTIC if c >= threshold else Verdict.FAKE for c in combined]
    counts = ConfusionCounts.from_predictions(predicted, labels)
    return classification_report(counts).precision


def fit_weights(panel: PredictionPanel, labels, threshold: float = 0.5
                ) -> np.ndarray:
    """Precision-prior weights refined by a greedy 0.05-step grid search.

    Initial weights are proportional to max(precision - 0.5, 1e-3)^2 on the
    validation panel; refinement perturbs one coordinate at a time and keeps
    a change only if ensemble validation precision strictly improves. The
    uniform vector competes as a starting candidate, so the result is never
    worse than uniform weighting on this panel.
    """
    labels = [Verdict(v) for v in labels]
    n_clf = panel.n_classifiers
    if n_clf < 2:
        raise ValueError("weight fitting needs at least 2 classifiers")
    if len(labels) != len(panel.image_ids):
        raise ValueError("label count does not match panel")
    n_real = sum(1 for v in labels if v is Verdict.REALISTIC)
    if min(n_real, len(labels) - n_real) < 0.3 * len(labels) / 2:
        warnings.warn("validation labels are strongly imbalanced; "
                      "precision-based weights may be unstable")

    precisions = np.empty(n_clf)
    for i in range(n_clf):
        predicted = _panel_labels(panel.p_realistic[i], threshold)
        counts = ConfusionCounts.from_predictions(predicted, labels)
        precisions[i] = classification_report(counts).precision

    uniform = np.full(n_clf, 1.0 / n_clf)
    if np.all(precisions <= 0.5):
        warnings.warn("no classifier beats precision 0.5; falling back to uniform")
        return uniform

    prior = np.maximum(precisions - 0.5, 1e-3) ** 2
    prior = prior / prior.sum()
    candidates = [prior, uniform]
    scores = [_precision_at(panel, c, labels, threshold) for c in candidates]
    weights = candidates[int(np.argmax(scores))].copy()
    best = max(scores)

    improved = True
    rounds = 0
    while improved and rounds < 200:
        improved = False
        rounds += 1
        for i in range(n_clf):
            for delta in (0.05, -0.05):
                trial = weights.copy()
                trial[i] = max(trial[i] + delta, 0.0)
                total = trial.sum()
                if total <= 0:
                    continue
                trial /= total
                score = _precision_at(panel, trial, labels, threshold)
                if score > best + 1e-12:
                    weights, best = trial, score
                    improved = True
    return weights


def evaluate_grid(panel: PredictionPanel, labels,
                  strategies=(VoteStrategy.HARD, VoteStrategy.SOFT_AVERAGE,
                              VoteStrategy.SOFT_WEIGHTED),
                  weights=None, threshold: float = 0.5,
                  tie_break: Verdict = Verdict.FAKE,
                  round_index: int = 0) -> EnsembleReport:
    """Metric rows per classifier and per voting strategy on one labeled set."""
    labels = [Verdict(v) for v in labels]
    if len(labels) != len(panel.image_ids):
        raise ValueError("label count does not match panel")

    per_classifier = {}
    for i, clf_id in enumerate(panel.classifier_ids):
        predicted = _panel_labels(panel.p_realistic[i], threshold)
        counts = ConfusionCounts.from_predictions(predicted, labels)
        per_classifier[clf_id] = classification_report(counts)

    if weights is None and VoteStrategy.SOFT_WEIGHTED in strategies:
        weights = fit_weights(panel, labels, threshold)
    weights_arr = None if weights is None else np.asarray(weights, dtype=np.float64)

    per_strategy = {}
    n_img = len(panel.image_ids)
    for strategy in strategies:
        predicted = []
        for j in range(n_img):
            column = panel.p_realistic[:, j]
            if strategy is VoteStrategy.HARD:
                votes = _panel_labels(column, threshold)
                predicted.append(hard_vote(votes, tie_break))
            elif strategy is VoteStrategy.SOFT_AVERAGE:
                predicted.append(soft_vote(column, None, threshold)[0])
            else:
                predicted.append(soft_vote(column, weights_arr, threshold)[0])
        counts = ConfusionCounts.from_predictions(predicted, labels)
        per_strategy[strategy.value] = classification_report(counts)

    return EnsembleReport(
        per_classifier=per_classifier, per_strategy=per_strategy,
        round_index=round_index,
        weights=tuple(float(x) for x in weights_arr) if weights_arr is not None else None,
    )
