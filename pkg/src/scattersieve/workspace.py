"""Operational glue: a data directory bound to every pipeline stage.

A workspace root is a corpus directory (images/, manifest.jsonl,
labels.jsonl, truth.jsonl) plus the state this package adds on top:
cache/ for features and realism reports, models/ for trained classifiers,
and rounds/ for the loop protocol. Everything derived is cached on disk
and keyed by image id, so repeated runs are cheap and deterministic.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import classify, embed, ensemble, loop, physics
from .frames import (
    DatasetManifest,
    LabelStore,
    Origin,
    PatternClass,
    ScatterFrame,
    Verdict,
    load_frame,
)
from .metrics import ClassificationReport
from .synth import load_truth

NATIVE_CLASSIFIERS = ("logistic", "knearest", "physics_rule")


class WorkspaceError(ValueError):
    """Missing corpus pieces or inconsistent workspace state."""


@dataclass
class RoundArtifacts:
    classifiers: dict[str, classify.TrainedClassifier]
    report: ensemble.EnsembleReport
    weights: tuple[float, ...]


class Workspace:
    def __init__(self, root: str | Path, center_source: str = "truth",
                 store_path: str | Path | None = None):
        self.root = Path(root)
        if not (self.root / "manifest.jsonl").exists():
            raise WorkspaceError(f"{self.root} has no manifest.jsonl; generate a corpus first")
        self.manifest = DatasetManifest.load(self.root / "manifest.jsonl")
        self._entries = {e.image_id: e for e in self.manifest.entries}
        truth_path = self.root / "truth.jsonl"
        self.truth = load_truth(self.root) if truth_path.exists() else {}
        if center_source not in ("truth", "search", "midpoint"):
            raise ValueError(f"unknown center_source {center_source!r}")
        self.center_source = center_source
        self.store = LabelStore(store_path or self.root / "labels.jsonl")
        self.cache_dir = self.root / "cache"
        self.cache_dir.mkdir(exist_ok=True)
        self._frames: dict[str, ScatterFrame] = {}
        self._features: dict[str, np.ndarray] | None = None
        self._reports: dict[str, physics.RealismReport] | None = None
        self._stats: embed.BlockStats | None = None
        self.feature_config = embed.FeatureConfig()

    # -- basic lookups ------------------------------------------------------

    def image_ids(self, origin: Origin | None = None,
                  pattern: PatternClass | None = None) -> list[str]:
        out = []
        for e in self.manifest.entries:
            if origin is not None and e.origin is not origin:
                continue
            if pattern is not None and e.pattern is not pattern:
                continue
            out.append(e.image_id)
        return out

    def entry(self, image_id: str):
        if image_id not in self._entries:
            raise KeyError(f"unknown image id {image_id!r}")
        return self._entries[image_id]

    def frame(self, image_id: str) -> ScatterFrame:
        if image_id not in self._frames:
            entry = self.entry(image_id)
            self._frames[image_id] = load_frame(self.root / entry.path)
        return self._frames[image_id]

    def center_for(self, image_id: str) -> tuple[float, float] | None:
        """Pattern center per the workspace policy (truth sidecar, search, midpoint)."""
        if self.center_source == "truth" and image_id in self.truth:
            cx, cy = self.truth[image_id]["center"]
            return (float(cx), float(cy))
        if self.center_source == "search":
            return None  # let the consumer run find_center
        return self.frame(image_id).midpoint

    # -- realism reports ----------------------------------------------------

    def realism(self, image_id: str) -> physics.RealismReport:
        reports = self._load_reports()
        if image_id not in reports:
            report = physics.realism_report(self.frame(image_id),
                                            center=self.center_for(image_id))
            reports[image_id] = report
            with open(self.cache_dir / "realism.jsonl", "a", encoding="utf-8") as fh:
                fh.write(json.dumps({"image_id": image_id, **report.to_json()}) + "\n")
        return reports[image_id]

    def _load_reports(self) -> dict[str, physics.RealismReport]:
        if self._reports is None:
            self._reports = {}
            path = self.cache_dir / "realism.jsonl"
            if path.exists():
                with open(path, encoding="utf-8") as fh:
                    for line in fh:
                        obj = json.loads(line)
                        self._reports[obj["image_id"]] = physics.RealismReport.from_json(obj)
        return self._reports

    # -- features -----------------------------------------------------------

    def block_stats(self) -> embed.BlockStats:
        """Reference z-normalization stats, fitted on experimental frames."""
        if self._stats is None:
            stats_path = self.cache_dir / "block_stats.json"
            if stats_path.exists():
                obj = json.loads(stats_path.read_text(encoding="utf-8"))
                self._stats = embed.BlockStats(means=obj["means"], stds=obj["stds"])
            else:
                ref_ids = self.image_ids(origin=Origin.EXPERIMENTAL)
                if not ref_ids:
                    ref_ids = self.image_ids()
                ref_ids = ref_ids[:64]
                frames = [self.frame(i) for i in ref_ids]
                centers = [self.center_for(i) or frames[k].midpoint
                           for k, i in enumerate(ref_ids)]
                self._stats = embed.fit_block_stats(frames, self.feature_config,
                                                    centers=centers)
                stats_path.write_text(json.dumps(
                    {"means": self._stats.means, "stds": self._stats.stds}),
                    encoding="utf-8")
        return self._stats

    def features(self, ids) -> np.ndarray:
        table = self._load_features()
        stats = self.block_stats()
        missing = [i for i in ids if i not in table]
        if missing:
            rows = []
            for image_id in missing:
                vec = embed.extract_features(self.frame(image_id), self.feature_config,
                                             stats=stats,
                                             center=self.center_for(image_id))
                table[image_id] = vec.values
                rows.append((image_id, vec.values))
            with open(self.cache_dir / "features.csv", "a", encoding="utf-8") as fh:
                if fh.tell() == 0:
                    width = len(rows[0][1])
                    fh.write(",".join(["id"] + [f"v{i}" for i in range(width)]) + "\n")
                for image_id, vals in rows:
                    fh.write(",".join([image_id] + [repr(float(v)) for v in vals]) + "\n")
        return np.asarray([table[i] for i in ids])

    def _load_features(self) -> dict[str, np.ndarray]:
        if self._features is None:
            self._features = {}
            path = self.cache_dir / "features.csv"
            if path.exists():
                ids, mat = embed.load_features(path)
                self._features = {i: row for i, row in zip(ids, mat)}
        return self._features

    def composites(self, ids) -> np.ndarray:
        return np.asarray([[self.realism(i).composite] for i in ids])

    # physics scores live in [0, 1] with clean frames near 1; this affine puts
    # them on a unit-ish spread next to the z-scored embedding blocks
    PHYS_OFFSET = 0.8
    PHYS_SCALE = 0.15

    def classifier_features(self, ids) -> np.ndarray:
        """Input view for the trainable classifiers: radial and angular
        embedding blocks plus the four rescaled physics scores.

        The thumbnail block is dropped here; it encodes pattern identity,
        which helps the projection scatter but drowns realism cues in a
        linear model.
        """
        full = self.features(ids)
        keep = []
        offset = 0
        for name, width in self.feature_config.blocks():
            if name in ("radial", "angular"):
                keep.append(full[:, offset : offset + width])
            offset += width
        scores = np.asarray([
            [r.symmetry, r.continuity, r.gap_straightness, r.verticality]
            for r in (self.realism(i) for i in ids)
        ])
        keep.append((scores - self.PHYS_OFFSET) / self.PHYS_SCALE)
        return np.hstack(keep)

    # -- rounds -------------------------------------------------------------

    @property
    def rounds_dir(self) -> Path:
        return self.root / "rounds"

    def round_path(self, index: int) -> Path:
        return self.rounds_dir / str(index) / "round.json"

    def save_round(self, state: loop.RoundState) -> None:
        state.save(self.round_path(state.index))

    def load_round(self, index: int) -> loop.RoundState:
        path = self.round_path(index)
        if not path.exists():
            raise WorkspaceError(f"round {index} not found under {self.rounds_dir}")
        return loop.RoundState.load(path)

    def round_indices(self) -> list[int]:
        if not self.rounds_dir.exists():
            return []
        return sorted(int(p.name) for p in self.rounds_dir.iterdir() if p.name.isdigit())

    def seed_round(self, targets: loop.RoundTargets | None = None,
                   pattern: PatternClass | None = None, seed: int = 0) -> loop.RoundState:
        """Round 1 from the label store's human verdicts plus experimental pool."""
        human = self.store.human_verdicts()
        exp = self.image_ids(origin=Origin.EXPERIMENTAL, pattern=pattern)
        gen = set(self.image_ids(origin=Origin.GENERATED, pattern=pattern))
        gen_real = [i for i, rec in human.items()
                    if rec.verdict is Verdict.REALISTIC and i in gen]
        gen_fake = [i for i, rec in human.items()
                    if rec.verdict is Verdict.FAKE and i in gen]
        state = loop.seed_round(exp, gen_real, gen_fake, targets, seed=seed)
        self.save_round(state)
        return state

    def _panel(self, classifiers: dict[str, classify.TrainedClassifier],
               ids: list[str]) -> ensemble.PredictionPanel:
        rows = []
        names = sorted(classifiers)
        feats = self.classifier_features(ids)
        comps = self.composites(ids)
        for name in names:
            clf = classifiers[name]
            if clf.spec.kind is classify.ClassifierKind.PHYSICS_RULE:
                xs = comps
            elif clf.spec.kind is classify.ClassifierKind.EXTERNAL:
                rows.append([classify.predict_proba(clf, i).p_realistic for i in ids])
                continue
            else:
                xs = feats
            rows.append([classify.predict_proba(clf, x).p_realistic for x in xs])
        return ensemble.PredictionPanel(classifier_ids=names, image_ids=list(ids),
                                        p_realistic=np.asarray(rows))

    def _cross_fitted_panel(self, train_ids, train_verdicts, feats, comps,
                            seed: int, epochs: int, externals=None,
                            n_folds: int = 4) -> ensemble.PredictionPanel:
        """Out-of-fold predictions over the training set (stacking style).

        Each fold's items are predicted by classifiers trained on the other
        folds, giving unbiased panel probabilities for every training item;
        weight fitting then has the whole training set to work with instead
        of a sliver.
        """
        n = len(train_ids)
        rng = np.random.default_rng(seed)
        fold_of = np.zeros(n, dtype=int)
        for verdict in (Verdict.REALISTIC, Verdict.FAKE):
            members = np.asarray([i for i, v in enumerate(train_verdicts) if v is verdict])
            members = members[rng.permutation(members.size)]
            for j, idx in enumerate(members):
                fold_of[idx] = j % n_folds
        rows: dict[str, np.ndarray] = {
            "logistic": np.zeros(n), "knearest": np.zeros(n), "physics_rule": np.zeros(n),
        }
        for fold in range(n_folds):
            fit = np.flatnonzero(fold_of != fold)
            out = np.flatnonzero(fold_of == fold)
            if out.size == 0:
                continue
            fit_verdicts = [train_verdicts[i] for i in fit]
            fold_clfs = {
                "logistic": classify.train(
                    classify.ClassifierSpec(classify.ClassifierKind.LOGISTIC, epochs=epochs),
                    feats[fit], fit_verdicts, seed=seed),
                "knearest": classify.train(
                    classify.ClassifierSpec(classify.ClassifierKind.KNEAREST),
                    feats[fit], fit_verdicts, seed=seed),
                "physics_rule": classify.train(
                    classify.ClassifierSpec(classify.ClassifierKind.PHYSICS_RULE),
                    comps[fit], fit_verdicts, seed=seed),
            }
            for name, clf in fold_clfs.items():
                xs = comps[out] if name == "physics_rule" else feats[out]
                for local, global_i in enumerate(out):
                    rows[name][global_i] = classify.predict_proba(clf, xs[local]).p_realistic
        if externals:
            for name, clf in externals.items():
                rows[name] = np.asarray(
                    [classify.predict_proba(clf, i).p_realistic for i in train_ids])
        names = sorted(rows)
        return ensemble.PredictionPanel(classifier_ids=names, image_ids=list(train_ids),
                                        p_realistic=np.asarray([rows[k] for k in names]))

    def train_round(self, state: loop.RoundState, seed: int = 0,
                    epochs: int = 100,
                    externals: dict[str, classify.TrainedClassifier] | None = None
                    ) -> RoundArtifacts:
        """Train the native classifiers on the round's training set, fit the
        voting weights on cross-fitted training predictions, and evaluate
        everything on the frozen validation set.

        Weights must not be fitted on the evaluation set, or the reported
        ensemble precision would be selection-biased.
        """
        train_ids = [i.image_id for i in state.training]
        train_verdicts = [i.verdict for i in state.training]
        feats = self.classifier_features(train_ids)
        comps = self.composites(train_ids)

        classifiers: dict[str, classify.TrainedClassifier] = {}
        classifiers["logistic"] = classify.train(
            classify.ClassifierSpec(classify.ClassifierKind.LOGISTIC, epochs=epochs),
            feats, train_verdicts, seed=seed, round_index=state.index)
        classifiers["knearest"] = classify.train(
            classify.ClassifierSpec(classify.ClassifierKind.KNEAREST),
            feats, train_verdicts, seed=seed, round_index=state.index)
        classifiers["physics_rule"] = classify.train(
            classify.ClassifierSpec(classify.ClassifierKind.PHYSICS_RULE),
            comps, train_verdicts, seed=seed, round_index=state.index)
        if externals:
            classifiers.update(externals)

        oof_panel = self._cross_fitted_panel(train_ids, train_verdicts, feats, comps,
                                             seed=seed, epochs=epochs,
                                             externals=externals)
        weights = ensemble.fit_weights(oof_panel, train_verdicts)

        val_ids = [i.image_id for i in state.validation]
        val_labels = [i.verdict for i in state.validation]
        panel = self._panel(classifiers, val_ids)
        report = ensemble.evaluate_grid(panel, val_labels, weights=weights,
                                        round_index=state.index)
        loop.record_training_metrics(state, report)
        self.save_round(state)

        models_dir = self.root / "models" / f"round{state.index}"
        for name, clf in classifiers.items():
            clf.save(models_dir / f"{name}.json")
        (models_dir / "weights.json").write_text(
            json.dumps({"weights": list(weights),
                        "classifiers": sorted(classifiers)}), encoding="utf-8")
        return RoundArtifacts(classifiers=classifiers, report=report,
                              weights=tuple(float(x) for x in weights))

    def load_round_artifacts(self, index: int) -> RoundArtifacts:
        models_dir = self.root / "models" / f"round{index}"
        if not models_dir.exists():
            raise WorkspaceError(f"no trained models for round {index}")
        meta = json.loads((models_dir / "weights.json").read_text(encoding="utf-8"))
        classifiers = {
            name: classify.TrainedClassifier.load(models_dir / f"{name}.json")
            for name in meta["classifiers"]
        }
        state = self.load_round(index)
        report = state.metrics
        if report is None:
            raise WorkspaceError(f"round {index} has no recorded metrics")
        return RoundArtifacts(classifiers=classifiers, report=report,
                              weights=tuple(meta["weights"]))

    def propose(self, state: loop.RoundState, artifacts: RoundArtifacts,
                batch_size: int = 100,
                pattern: PatternClass | None = None) -> list[loop.ReviewQueueItem]:
        """Score the generated pool with the round's ensemble and queue the
        most uncertain items for review."""
        pool = self.image_ids(origin=Origin.GENERATED, pattern=pattern)
        pool = [i for i in pool
                if i not in state.training_ids and i not in state.validation_ids]
        panel = self._panel(artifacts.classifiers, pool)
        panel_probs = {
            name: {image_id: float(p) for image_id, p in zip(pool, panel.p_realistic[k])}
            for k, name in enumerate(panel.classifier_ids)
        }
        composites = {i: float(self.realism(i).composite) for i in pool}
        config = ensemble.VoteConfig(strategy=ensemble.VoteStrategy.SOFT_WEIGHTED,
                                     weights=artifacts.weights)
        queue = loop.propose_labels(state, panel_probs, config, composites,
                                    batch_size=batch_size, store=self.store)
        self.save_round(state)
        return queue

    def apply_review(self, state: loop.RoundState, decisions,
                     annotator: str = "operator") -> loop.RoundState:
        loop.apply_review(state, decisions, self.store, annotator=annotator)
        self.save_round(state)
        return state

    def build_next_round(self, state: loop.RoundState,
                         targets: loop.RoundTargets,
                         pattern: PatternClass | None = None) -> loop.RoundState:
        exp = self.image_ids(origin=Origin.EXPERIMENTAL, pattern=pattern)
        origins = {e.image_id: e.origin for e in self.manifest.entries}
        nxt = loop.build_next_round(state, targets, exp, self.store, origins)
        self.save_round(state)
        self.save_round(nxt)
        return nxt

    def round_report(self) -> dict:
        rounds = [self.load_round(i) for i in self.round_indices()]
        return loop.round_report(rounds)

    def oracle_annotator(self, error_rate: float = 0.05,
                         seed: int = 0) -> loop.SimulatedAnnotator:
        """Annotator backed by the corpus ground truth (clean = realistic)."""
        if not self.truth:
            raise WorkspaceError("workspace has no truth sidecar")
        truth = {
            image_id: (Verdict.FAKE if row.get("corruption") else Verdict.REALISTIC)
            for image_id, row in self.truth.items()
        }
        return loop.SimulatedAnnotator(truth=truth, error_rate=error_rate, seed=seed,
                                       name="oracle-sim")


# ---------------------------------------------------------------------------
# desk-scale two-round experiment
# ---------------------------------------------------------------------------

def run_hitl_round_pair(root: str | Path, seed: int = 0, error_rate: float = 0.05,
                        scale1: float = 0.1, scale2: float = 0.5,
                        seed_slice: int = 70, epochs: int = 100) -> dict:
    """Run the two-round loop on a corpus with a simulated annotator.

    A seeded slice of the generated pool is labeled first (with label
    noise), round 1 is seeded and trained at scale1, the ensemble proposes
    labels for the remaining pool, the annotator reviews them, and round 2
    is assembled at scale2 and retrained against the same validation set.
    Returns the weighted-soft-voting validation precision of both rounds.
    """
    from .frames import EPOCH, LabelRecord, LabelSource

    root = Path(root)
    ws = Workspace(root, center_source="truth",
                   store_path=root / f"hitl_labels_s{seed}.jsonl")
    annotator = ws.oracle_annotator(error_rate=error_rate, seed=seed)

    gen_ids = ws.image_ids(origin=Origin.GENERATED)
    initial = loop._ordered(gen_ids, seed)[:seed_slice]
    for image_id in initial:
        ws.store.append(LabelRecord(image_id=image_id,
                                    verdict=annotator.verdict(image_id),
                                    source=LabelSource.HUMAN, round=0,
                                    annotator=annotator.name, timestamp=EPOCH))

    state1 = ws.seed_round(targets=loop.RoundTargets.seed(scale1), seed=seed)
    art1 = ws.train_round(state1, seed=seed, epochs=epochs)
    queue = ws.propose(state1, art1, batch_size=len(gen_ids))
    ws.apply_review(state1, annotator.review(queue), annotator=annotator.name)

    state2 = ws.build_next_round(state1, loop.RoundTargets.seed(scale2))
    art2 = ws.train_round(state2, seed=seed, epochs=epochs)

    return {
        "round1_precision": art1.report.per_strategy["soft_weighted"].precision,
        "round2_precision": art2.report.per_strategy["soft_weighted"].precision,
        "round1": art1.report,
        "round2": art2.report,
        "workspace": ws,
    }
