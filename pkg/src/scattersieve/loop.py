"""Human-in-the-loop round protocol: seed, propose, review, grow, audit.

Each round owns a training manifest whose Realistic subset keeps a 4:6
experimental:generated ratio (within one item) and whose Fake subset
matches the Realistic subset size (within one item). The validation set is
frozen when the first round is seeded and never overlaps any training set.
All labels flow through the append-only LabelStore, so the full history is
reconstructible.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field, replace
from datetime import datetime
from enum import Enum
from pathlib import Path

from .ensemble import EnsembleReport, VoteConfig, VoteStrategy, soft_vote
from .frames import (
    EPOCH,
    LabelRecord,
    LabelSource,
    LabelStore,
    ManifestEntry,
    Origin,
    Verdict,
)


class RoundInvariantError(ValueError):
    """A composition or provenance invariant would be violated."""


class RoundStatus(str, Enum):
    COLLECTING = "collecting"
    TRAINING = "training"
    PROPOSING = "proposing"
    REVIEWING = "reviewing"
    CLOSED = "closed"


@dataclass(frozen=True)
class RoundTargets:
    """Training-set composition; defaults are the seed-round counts."""

    gen_realistic: int = 60
    exp_realistic: int = 40
    fake: int = 100

    def __post_init__(self):
        if min(self.gen_realistic, self.exp_realistic, self.fake) < 0:
            raise ValueError("targets must be non-negative")

    @staticmethod
    def seed(scale: float = 1.0) -> "RoundTargets":
        return RoundTargets(
            gen_realistic=int(round(60 * scale)),
            exp_realistic=int(round(40 * scale)),
            fake=int(round(100 * scale)),
        )

    @staticmethod
    def second(scale: float = 1.0) -> "RoundTargets":
        """The grown-round composition: 1000 realistic (400 experimental) vs 1000."""
        return RoundTargets(
            gen_realistic=int(round(600 * scale)),
            exp_realistic=int(round(400 * scale)),
            fake=int(round(1000 * scale)),
        )

    @property
    def realistic(self) -> int:
        return self.gen_realistic + self.exp_realistic


@dataclass(frozen=True)
class TrainingItem:
    image_id: str
    verdict: Verdict
    origin: Origin

    def to_json(self) -> dict:
        return {"image_id": self.image_id, "verdict": self.verdict.value,
                "origin": self.origin.value}

    @staticmethod
    def from_json(obj: dict) -> "TrainingItem":
        return TrainingItem(obj["image_id"], Verdict(obj["verdict"]), Origin(obj["origin"]))


@dataclass(frozen=True)
class ReviewQueueItem:
    image_id: str
    model_verdict: Verdict
    p_realistic: float
    composite: float
    round_index: int

    @property
    def uncertainty(self) -> float:
        return abs(self.p_realistic - 0.5)

    def to_json(self) -> dict:
        return {
            "image_id": self.image_id,
            "model_verdict": self.model_verdict.value,
            "p_realistic": self.p_realistic,
            "composite": self.composite,
            "round_index": self.round_index,
        }

    @staticmethod
    def from_json(obj: dict) -> "ReviewQueueItem":
        return ReviewQueueItem(obj["image_id"], Verdict(obj["model_verdict"]),
                               obj["p_realistic"], obj["composite"], obj["round_index"])


@dataclass
class RoundState:
    index: int
    status: RoundStatus
    training: list[TrainingItem]
    validation: list[TrainingItem]
    queue: list[ReviewQueueItem] = field(default_factory=list)
    metrics: EnsembleReport | None = None

    @property
    def composition(self) -> dict[str, int]:
        counters = {
            "realistic_experimental": 0,
            "realistic_generated": 0,
            "fake_experimental": 0,
            "fake_generated": 0,
        }
        for item in self.training:
            counters[f"{item.verdict.value}_{item.origin.value}"] += 1
        return counters

    @property
    def training_ids(self) -> set[str]:
        return {item.image_id for item in self.training}

    @property
    def validation_ids(self) -> set[str]:
        return {item.image_id for item in self.validation}

    def to_json(self) -> dict:
        return {
            "index": self.index,
            "status": self.status.value,
            "training": [i.to_json() for i in self.training],
            "validation": [i.to_json() for i in self.validation],
            "queue": [q.to_json() for q in self.queue],
            "metrics": self.metrics.to_json() if self.metrics else None,
            "composition": self.composition,
        }

    @staticmethod
    def from_json(obj: dict) -> "RoundState":
        metrics = None
        if obj.get("metrics") is not None:
            from .metrics import ClassificationReport

            m = obj["metrics"]
            metrics = EnsembleReport(
                per_classifier={k: ClassificationReport(**{kk: (tuple(vv) if kk == "degenerate" else vv)
                                                           for kk, vv in v.items()})
                                for k, v in m["per_classifier"].items()},
                per_strategy={k: ClassificationReport(**{kk: (tuple(vv) if kk == "degenerate" else vv)
                                                         for kk, vv in v.items()})
                              for k, v in m["per_strategy"].items()},
                round_index=m.get("round_index", obj["index"]),
                weights=tuple(m["weights"]) if m.get("weights") else None,
            )
        return RoundState(
            index=obj["index"],
            status=RoundStatus(obj["status"]),
            training=[TrainingItem.from_json(i) for i in obj["training"]],
            validation=[TrainingItem.from_json(i) for i in obj["validation"]],
            queue=[ReviewQueueItem.from_json(q) for q in obj.get("queue", [])],
            metrics=metrics,
        )

    def save(self, path: str | Path) -> None:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(json.dumps(self.to_json(), indent=2), encoding="utf-8")

    @staticmethod
    def load(path: str | Path) -> "RoundState":
        return RoundState.from_json(json.loads(Path(path).read_text(encoding="utf-8")))


def check_composition(items: list[TrainingItem], where: str = "training") -> None:
    """Enforce the 4:6 experimental:generated ratio and class balance (+-1)."""
    realistic = [i for i in items if i.verdict is Verdict.REALISTIC]
    fake = [i for i in items if i.verdict is Verdict.FAKE]
    n_exp = sum(1 for i in realistic if i.origin is Origin.EXPERIMENTAL)
    expected_exp = round(0.4 * len(realistic))
    if abs(n_exp - expected_exp) > 1:
        raise RoundInvariantError(
            f"{where}: realistic subset has {n_exp} experimental of {len(realistic)}; "
            f"the 4:6 ratio wants {expected_exp} (+-1)"
        )
    if abs(len(realistic) - len(fake)) > 1:
        raise RoundInvariantError(
            f"{where}: {len(realistic)} realistic vs {len(fake)} fake breaks class balance (+-1)"
        )


def _transition(state: RoundState, new_status: RoundStatus) -> None:
    check_composition(state.training, f"round {state.index} training")
    if state.training_ids & state.validation_ids:
        raise RoundInvariantError(
            f"round {state.index}: validation overlaps training"
        )
    state.status = new_status


# ---------------------------------------------------------------------------
# round construction
# ---------------------------------------------------------------------------

def _ordered(ids, seed: int) -> list[str]:
    import numpy as np

    ids = sorted(ids)
    rng = np.random.default_rng(seed)
    order = rng.permutation(len(ids))
    return [ids[i] for i in order]


def _take(pool: list[str], count: int, used: set[str], what: str) -> list[str]:
    picked = [i for i in pool if i not in used][:count]
    if len(picked) < count:
        raise RoundInvariantError(
            f"need {count} {what}, only {len(picked)} available"
        )
    used.update(picked)
    return picked


def seed_round(experimental_ids, generated_realistic_ids, generated_fake_ids,
               targets: RoundTargets | None = None, seed: int = 0) -> RoundState:
    """Assemble round 1 plus its frozen validation set from labeled pools.

    The Realistic training subset mixes human-approved generated images with
    experimental ones at the 4:6 ratio; the Fake subset matches its size.
    The validation set is built the same way from disjoint items.
    """
    targets = targets or RoundTargets.seed()
    exp_pool = _ordered(experimental_ids, seed)
    real_pool = _ordered(generated_realistic_ids, seed + 1)
    fake_pool = _ordered(generated_fake_ids, seed + 2)

    used: set[str] = set()
    training = _compose(exp_pool, real_pool, fake_pool, targets, used, "training")
    validation = _compose(exp_pool, real_pool, fake_pool, targets, used, "validation")

    state = RoundState(index=1, status=RoundStatus.COLLECTING,
                       training=training, validation=validation)
    check_composition(state.training, "round 1 training")
    check_composition(state.validation, "round 1 validation")
    _transition(state, RoundStatus.TRAINING)
    return state


def _compose(exp_pool, real_pool, fake_pool, targets: RoundTargets,
             used: set[str], what: str) -> list[TrainingItem]:
    items = [
        TrainingItem(i, Verdict.REALISTIC, Origin.GENERATED)
        for i in _take(real_pool, targets.gen_realistic, used, f"{what} generated realistic")
    ]
    items += [
        TrainingItem(i, Verdict.REALISTIC, Origin.EXPERIMENTAL)
        for i in _take(exp_pool, targets.exp_realistic, used, f"{what} experimental")
    ]
    items += [
        TrainingItem(i, Verdict.FAKE, Origin.GENERATED)
        for i in _take(fake_pool, targets.fake, used, f"{what} generated fake")
    ]
    return items


def record_training_metrics(state: RoundState, report: EnsembleReport) -> None:
    """Attach the post-training metric snapshot; round stays open."""
    state.metrics = report
    _transition(state, RoundStatus.TRAINING)


def propose_labels(state: RoundState, panel_probs: dict[str, dict[str, float]],
                   vote_config: VoteConfig, composites: dict[str, float] | None = None,
                   batch_size: int = 100,
                   store: LabelStore | None = None,
                   timestamp: datetime = EPOCH) -> list[ReviewQueueItem]:
    """Publish a review queue over the unlabeled pool, most uncertain first.

    panel_probs maps classifier id -> image id -> p_realistic for every
    pooled image; the ensemble verdict and combined probability use the
    vote config. Model verdicts are appended to the label store for audit.
    """
    if state.metrics is None:
        raise RoundInvariantError("propose before training metrics are recorded")
    if not panel_probs:
        raise RoundInvariantError("no trained classifiers supplied")
    classifier_ids = sorted(panel_probs)
    pool = sorted(set.intersection(*(set(panel_probs[c]) for c in classifier_ids)))
    excluded = state.training_ids | state.validation_ids
    pool = [i for i in pool if i not in excluded]
    composites = composites or {}

    items = []
    for image_id in pool:
        probs = [panel_probs[c][image_id] for c in classifier_ids]
        weights = vote_config.weights if vote_config.strategy is VoteStrategy.SOFT_WEIGHTED else None
        label, combined = soft_vote(probs, weights, vote_config.threshold)
        items.append(ReviewQueueItem(
            image_id=image_id, model_verdict=label, p_realistic=combined,
            composite=float(composites.get(image_id, float("nan"))),
            round_index=state.index,
        ))
    items.sort(key=lambda q: (q.uncertainty, q.image_id))
    queue = items[:batch_size]
    state.queue = queue
    _transition(state, RoundStatus.PROPOSING)
    if store is not None:
        for q in queue:
            store.append(LabelRecord(image_id=q.image_id, verdict=q.model_verdict,
                                     source=LabelSource.MODEL, round=state.index,
                                     annotator="ensemble", timestamp=timestamp))
    return queue


def apply_review(state: RoundState, decisions, store: LabelStore,
                 annotator: str = "operator",
                 timestamp: datetime = EPOCH) -> RoundState:
    """Record human verdicts for queued items; human overrides model.

    decisions is an iterable of (image_id, Verdict). Unknown ids and repeat
    verdicts in the same round are errors. The queue shrinks as items are
    reviewed; state moves to REVIEWING.
    """
    queued = {q.image_id for q in state.queue}
    decisions = [(image_id, Verdict(v)) for image_id, v in decisions]
    for image_id, _ in decisions:
        if image_id not in queued:
            raise KeyError(f"image {image_id!r} is not in the round {state.index} queue")
    for image_id, verdict in decisions:
        store.append(LabelRecord(image_id=image_id, verdict=verdict,
                                 source=LabelSource.HUMAN, round=state.index,
                                 annotator=annotator, timestamp=timestamp))
    reviewed = {image_id for image_id, _ in decisions}
    state.queue = [q for q in state.queue if q.image_id not in reviewed]
    if decisions:
        _transition(state, RoundStatus.REVIEWING)
    return state


def close_round(state: RoundState) -> None:
    _transition(state, RoundStatus.CLOSED)


def build_next_round(state: RoundState, targets: RoundTargets,
                     experimental_ids, store: LabelStore,
                     origins: dict[str, Origin], retain: bool = True) -> RoundState:
    """Grow the next round's training set from human-confirmed labels.

    Keeps the previous round's items by default, tops up with the most
    recently human-confirmed labels, enforces the 4:6 ratio and class
    balance, and reuses the same frozen validation set.
    """
    if state.status not in (RoundStatus.REVIEWING, RoundStatus.PROPOSING,
                            RoundStatus.CLOSED):
        raise RoundInvariantError(
            f"cannot build next round from status {state.status.value}"
        )
    human = store.human_verdicts()
    order = sorted(human, key=lambda i: (-human[i].round, i))
    validation_ids = state.validation_ids

    def candidates(verdict: Verdict, origin: Origin) -> list[str]:
        prior = [i.image_id for i in state.training
                 if i.verdict is verdict and i.origin is origin] if retain else []
        fresh = [
            i for i in order
            if human[i].verdict is verdict
            and origins.get(i, Origin.GENERATED) is origin
            and i not in validation_ids
            and i not in prior
        ]
        return prior + fresh

    exp_known = {i for i, o in origins.items() if o is Origin.EXPERIMENTAL}
    exp_prior = [i.image_id for i in state.training
                 if i.origin is Origin.EXPERIMENTAL] if retain else []
    exp_fresh = [i for i in sorted(experimental_ids)
                 if i not in validation_ids and i not in exp_prior]

    used: set[str] = set()
    training = [
        TrainingItem(i, Verdict.REALISTIC, Origin.GENERATED)
        for i in _take(candidates(Verdict.REALISTIC, Origin.GENERATED),
                       targets.gen_realistic, used, "human-confirmed realistic")
    ]
    training += [
        TrainingItem(i, Verdict.REALISTIC, Origin.EXPERIMENTAL)
        for i in _take(exp_prior + exp_fresh, targets.exp_realistic, used, "experimental")
    ]
    training += [
        TrainingItem(i, Verdict.FAKE, Origin.GENERATED)
        for i in _take(candidates(Verdict.FAKE, Origin.GENERATED),
                       targets.fake, used, "human-confirmed fake")
    ]

    close_round(state)
    nxt = RoundState(index=state.index + 1, status=RoundStatus.COLLECTING,
                     training=training, validation=list(state.validation))
    check_composition(nxt.training, f"round {nxt.index} training")
    _transition(nxt, RoundStatus.TRAINING)
    return nxt


def round_report(rounds: list[RoundState]) -> dict:
    """Metric trajectory plus composition counters across closed rounds."""
    if not rounds:
        raise ValueError("need at least one round")
    out = {"rounds": []}
    for state in rounds:
        out["rounds"].append({
            "index": state.index,
            "status": state.status.value,
            "composition": state.composition,
            "metrics": state.metrics.to_json() if state.metrics else None,
        })
    return out


# ---------------------------------------------------------------------------
# simulated annotator
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class SimulatedAnnotator:
    """Answers review queues from ground truth with a seeded error rate.

    Decisions are a pure function of (seed, image_id), so replays are
    order-independent.
    """

    truth: dict[str, Verdict]
    error_rate: float = 0.05
    seed: int = 0
    name: str = "simulated"

    def verdict(self, image_id: str) -> Verdict:
        true = self.truth[image_id]
        digest = hashlib.sha256(f"{self.seed}:{image_id}".encode()).digest()
        u = int.from_bytes(digest[:8], "big") / 2**64
        if u < self.error_rate:
            return Verdict.FAKE if true is Verdict.REALISTIC else Verdict.REALISTIC
        return true

    def review(self, queue) -> list[tuple[str, Verdict]]:
        return [(q.image_id, self.verdict(q.image_id)) for q in queue]
