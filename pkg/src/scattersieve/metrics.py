"""Distributional quality metrics and the binary classification report.

Fréchet distance between Gaussian moment fits, kernel distance (unbiased
squared MMD with the cubic polynomial kernel, subset-averaged), and the
exponentiated-KL inception-style score. The feature backbone is pluggable:
any feature CSV with matching dimensions works, so absolute values depend
on the extractor and are comparable only within one extractor.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .frames import ProbabilityVector, Verdict


@dataclass(frozen=True)
class GaussianMoments:
    mean: np.ndarray
    covariance: np.ndarray

    def __post_init__(self):
        mean = np.asarray(self.mean, dtype=np.float64)
        cov = np.asarray(self.covariance, dtype=np.float64)
        if mean.ndim != 1 or cov.shape != (mean.size, mean.size):
            raise ValueError("moments must be a d-vector and a d x d matrix")
        if not (np.isfinite(mean).all() and np.isfinite(cov).all()):
            raise ValueError("non-finite moments")
        if np.abs(cov - cov.T).max() > 1e-9:
            raise ValueError("covariance not symmetric within 1e-9")
        eigvals = np.linalg.eigvalsh(cov)
        if eigvals.min() < -1e-8:
            raise ValueError(f"covariance not PSD (min eigenvalue {eigvals.min():.3e})")
        object.__setattr__(self, "mean", mean)
        object.__setattr__(self, "covariance", cov)

    @property
    def dim(self) -> int:
        return self.mean.size


@dataclass(frozen=True)
class ConfusionCounts:
    """Binary confusion counts with Realistic as the positive class."""

    tp: int
    fp: int
    fn: int
    tn: int

    def __post_init__(self):
        if min(self.tp, self.fp, self.fn, self.tn) < 0:
            raise ValueError("confusion counts must be non-negative")

    @property
    def total(self) -> int:
        return self.tp + self.fp + self.fn + self.tn

    @staticmethod
    def from_predictions(predicted, actual) -> "ConfusionCounts":
        tp = fp = fn = tn = 0
        if len(predicted) != len(actual):
            raise ValueError("prediction and label lists differ in length")
        for p, a in zip(predicted, actual):
            if p is Verdict.REALISTIC and a is Verdict.REALISTIC:
                tp += 1
            elif p is Verdict.REALISTIC and a is Verdict.FAKE:
                fp += 1
            elif p is Verdict.FAKE and a is Verdict.REALISTIC:
                fn += 1
            else:
                tn += 1
        return ConfusionCounts(tp, fp, fn, tn)


@dataclass(frozen=True)
class ClassificationReport:
    accuracy: float
    precision: float
    recall: float
    f1: float
    degenerate: tuple[str, ...] = ()

    def to_json(self) -> dict:
        return {
            "accuracy": self.accuracy,
            "precision": self.precision,
            "recall": self.recall,
            "f1": self.f1,
            "degenerate": list(self.degenerate),
        }


@dataclass(frozen=True)
class MetricReport:
    fid: float
    fid_raw: float
    kid_mean: float
    kid_std: float
    is_mean: float | None
    is_std: float | None
    n_real: int
    n_generated: int
    extractor_id: str

    def __post_init__(self):
        if self.kid_std < 0:
            raise ValueError("kid_std must be >= 0")
        if self.is_mean is not None and self.is_mean < 1.0 - 1e-6:
            raise ValueError("inception-style score is >= 1 analytically")
        if self.n_real <= 0 or self.n_generated <= 0:
            raise ValueError("counts must be positive")

    def to_json(self) -> dict:
        return {
            "fid": self.fid,
            "fid_raw": self.fid_raw,
            "kid_mean": self.kid_mean,
            "kid_std": self.kid_std,
            "is_mean": self.is_mean,
            "is_std": self.is_std,
            "n_real": self.n_real,
            "n_generated": self.n_generated,
            "extractor_id": self.extractor_id,
        }


def _as_matrix(features) -> np.ndarray:
    rows = []
    for f in features:
        rows.append(np.asarray(getattr(f, "values", f), dtype=np.float64))
    mat = np.asarray(rows)
    if mat.ndim != 2:
        raise ValueError("features must be equal-length vectors")
    return mat


def fit_moments(features) -> GaussianMoments:
    """Sample mean and unbiased covariance, symmetrized as (C + C^T)/2."""
    mat = _as_matrix(features)
    n = mat.shape[0]
    if n < 2:
        raise ValueError("need at least 2 feature vectors to fit moments")
    mean = mat.mean(axis=0)
    centered = mat - mean
    cov = (centered.T @ centered) / (n - 1)
    cov = 0.5 * (cov + cov.T)
    return GaussianMoments(mean=mean, covariance=cov)


def frechet_distance(m1: GaussianMoments, m2: GaussianMoments, *,
                     clamp: bool = True) -> float:
    """||mu1 - mu2||^2 + Tr(S1 + S2 - 2 (S1 S2)^{1/2}).

    The matrix square root is taken by eigendecomposition of the symmetrized
    product S1^{1/2} S2 S1^{1/2} with eigenvalues clamped at zero; tiny
    negative results are numerical noise and are clamped at -1e-6 unless
    clamp=False, which returns the raw value.
    """
    if m1.dim != m2.dim:
        raise ValueError(f"dimension mismatch {m1.dim} vs {m2.dim}")
    diff = m1.mean - m2.mean
    s1_vals, s1_vecs = np.linalg.eigh(m1.covariance)
    s1_sqrt = (s1_vecs * np.sqrt(np.clip(s1_vals, 0.0, None))) @ s1_vecs.T
    inner = s1_sqrt @ m2.covariance @ s1_sqrt
    inner = 0.5 * (inner + inner.T)
    cross_vals = np.linalg.eigvalsh(inner)
    tr_sqrt = np.sqrt(np.clip(cross_vals, 0.0, None)).sum()
    raw = float(diff @ diff + np.trace(m1.covariance) + np.trace(m2.covariance)
                - 2.0 * tr_sqrt)
    if not clamp:
        return raw
    return max(raw, -1e-6)


def _poly_kernel(x: np.ndarray, y: np.ndarray) -> np.ndarray:
    d = x.shape[1]
    return (x @ y.T / d + 1.0) ** 3


def kid(x, y, subset_size: int = 100, n_subsets: int = 50,
        seed: int = 0) -> tuple[float, float]:
    """Unbiased squared MMD with kernel (x.y/d + 1)^3, over seeded subsets.

    Each of n_subsets draws takes subset_size points without replacement
    from each set; returns (mean, std) of the per-subset estimates.
    """
    xm, ym = _as_matrix(x), _as_matrix(y)
    if xm.shape[1] != ym.shape[1]:
        raise ValueError("feature dimension mismatch")
    m = subset_size
    if m < 2:
        raise ValueError("subset_size must be >= 2")
    if m > xm.shape[0] or m > ym.shape[0]:
        raise ValueError(
            f"subset_size {m} exceeds set sizes {xm.shape[0]}, {ym.shape[0]}"
        )
    rng = np.random.default_rng(seed)
    estimates = np.empty(n_subsets)
    for i in range(n_subsets):
        xs = xm[rng.choice(xm.shape[0], size=m, replace=False)]
        ys = ym[rng.choice(ym.shape[0], size=m, replace=False)]
        kxx = _poly_kernel(xs, xs)
        kyy = _poly_kernel(ys, ys)
        kxy = _poly_kernel(xs, ys)
        sum_xx = (kxx.sum() - np.trace(kxx)) / (m * (m - 1))
        sum_yy = (kyy.sum() - np.trace(kyy)) / (m * (m - 1))
        sum_xy = 2.0 * kxy.sum() / (m * m)
        estimates[i] = sum_xx + sum_yy - sum_xy
    return float(estimates.mean()), float(estimates.std())


def inception_score(probs, n_splits: int = 10, seed: int = 0) -> tuple[float, float]:
    """exp(mean KL(row || split marginal)) per split; returns (mean, std).

    Rows are class-probability vectors summing to 1; the split assignment
    is a seeded shuffle followed by contiguous partition. Natural log, with
    0*log(0) = 0.
    """
    rows = []
    for p in probs:
        if isinstance(p, ProbabilityVector):
            rows.append([p.p_realistic, p.p_fake])
        else:
            rows.append(np.asarray(p, dtype=np.float64))
    mat = np.asarray(rows, dtype=np.float64)
    if mat.ndim != 2:
        raise ValueError("probability rows must have equal length")
    if np.abs(mat.sum(axis=1) - 1.0).max() > 1e-6:
        raise ValueError("probability rows must sum to 1 within 1e-6")
    n = mat.shape[0]
    if n_splits < 1 or n < n_splits:
        raise ValueError(f"cannot split {n} rows into {n_splits} groups")
    rng = np.random.default_rng(seed)
    order = rng.permutation(n)
    scores = []
    for chunk in np.array_split(order, n_splits):
        group = mat[chunk]
        marginal = group.mean(axis=0)
        ratio = np.zeros_like(group)
        np.divide(group, marginal[None, :], out=ratio, where=group > 0)
        logr = np.where(group > 0, np.log(np.where(ratio > 0, ratio, 1.0)), 0.0)
        kl = (group * logr).sum(axis=1)
        scores.append(np.exp(kl.mean()))
    scores = np.asarray(scores)
    return float(scores.mean()), float(scores.std())


def classification_report(counts: ConfusionCounts) -> ClassificationReport:
    """Accuracy, precision, recall, F1 from confusion counts.

    Division-by-zero cases return 0 for the affected metric and are listed
    in the degenerate field instead of raising.
    """
    if counts.total == 0:
        raise ValueError("empty confusion counts")
    degenerate = []
    accuracy = (counts.tp + counts.tn) / counts.total
    if counts.tp + counts.fp > 0:
        precision = counts.tp / (counts.tp + counts.fp)
    else:
        precision = 0.0
        degenerate.append("precision")
    if counts.tp + counts.fn > 0:
        recall = counts.tp / (counts.tp + counts.fn)
    else:
        recall = 0.0
        degenerate.append("recall")
    if precision + recall > 0:
        f1 = 2.0 * precision * recall / (precision + recall)
    else:
        f1 = 0.0
        degenerate.append("f1")
    return ClassificationReport(accuracy=float(accuracy), precision=float(precision),
                                recall=float(recall), f1=float(f1),
                                degenerate=tuple(degenerate))


def metric_report(real_features, generated_features, probs=None,
                  subset_size: int | None = None, n_subsets: int = 50,
                  n_splits: int = 10, seed: int = 0,
                  extractor_id: str = "") -> MetricReport:
    """FID + KID over two feature sets, optionally IS over class probabilities."""
    real_features = list(real_features)
    real = _as_matrix(real_features)
    gen = _as_matrix(generated_features)
    fid_raw = frechet_distance(fit_moments(real), fit_moments(gen), clamp=False)
    if subset_size is None:
        subset_size = min(100, real.shape[0], gen.shape[0])
    kid_mean, kid_std = kid(real, gen, subset_size=subset_size,
                            n_subsets=n_subsets, seed=seed)
    is_mean = is_std = None
    if probs is not None:
        is_mean, is_std = inception_score(probs, n_splits=n_splits, seed=seed)
        is_mean = max(is_mean, 1.0)  # guard against epsilon-level KL round-off
    if not extractor_id:
        first = next(iter(real_features), None)
        extractor_id = getattr(first, "extractor_id", "external")
    return MetricReport(fid=max(fid_raw, -1e-6), fid_raw=fid_raw,
                        kid_mean=kid_mean, kid_std=kid_std,
                        is_mean=is_mean, is_std=is_std,
                        n_real=real.shape[0], n_generated=gen.shape[0],
                        extractor_id=extractor_id)
