"""Handcrafted feature extraction and a linear projection for scatter plots.

Features concatenate three physically meaningful blocks: the angular-mean
radial profile, a radial-max angular occupancy histogram, and an
area-averaged thumbnail. Blocks can be z-normalized against statistics
fitted on a reference set. The projection is plain PCA with a fixed sign
convention, so layouts are reproducible run to run.
"""

from __future__ import annotations

import csv
import warnings
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .frames import FeatureVector, ScatterFrame
from .physics import NoRadialStructureError, find_center, warp_polar


@dataclass(frozen=True)
class FeatureConfig:
    radial_bins: int = 64
    angular_bins: int = 36
    thumb_side: int = 16
    include_radial: bool = True
    include_angular: bool = True
    include_thumb: bool = True

    def __post_init__(self):
        if min(self.radial_bins, self.angular_bins, self.thumb_side) < 1:
            raise ValueError("feature block sizes must be positive")
        if not (self.include_radial or self.include_angular or self.include_thumb):
            raise ValueError("at least one feature block must be enabled")

    @property
    def length(self) -> int:
        n = 0
        if self.include_radial:
            n += self.radial_bins
        if self.include_angular:
            n += self.angular_bins
        if self.include_thumb:
            n += self.thumb_side**2
        return n

    @property
    def extractor_id(self) -> str:
        return f"handcrafted-r{self.radial_bins}-a{self.angular_bins}-t{self.thumb_side}"

    def blocks(self) -> list[tuple[str, int]]:
        out = []
        if self.include_radial:
            out.append(("radial", self.radial_bins))
        if self.include_angular:
            out.append(("angular", self.angular_bins))
        if self.include_thumb:
            out.append(("thumb", self.thumb_side**2))
        return out


@dataclass(frozen=True)
class BlockStats:
    """Scalar mean/std per feature block, fitted on a reference set."""

    means: dict[str, float]
    stds: dict[str, float]


def _area_downsample(img: np.ndarray, side: int) -> np.ndarray:
    """Mean over near-equal row/column partitions (area averaging)."""
    h, w = img.shape
    row_edges = np.linspace(0, h, side + 1).astype(int)
    col_edges = np.linspace(0, w, side + 1).astype(int)
    row_sums = np.add.reduceat(img, row_edges[:-1], axis=0)
    cell_sums = np.add.reduceat(row_sums, col_edges[:-1], axis=1)
    counts = np.outer(np.diff(row_edges), np.diff(col_edges))
    return cell_sums / counts


def _resample(values: np.ndarray, n: int) -> np.ndarray:
    if len(values) == n:
        return values.astype(np.float64)
    src = np.linspace(0.0, 1.0, len(values))
    dst = np.linspace(0.0, 1.0, n)
    return np.interp(dst, src, values)


def _raw_blocks(frame: ScatterFrame, config: FeatureConfig,
                center: tuple[float, float] | None) -> dict[str, np.ndarray]:
    if center is None:
        try:
            cx, cy, _ = find_center(frame)
            center = (cx, cy)
        except (NoRadialStructureError, ValueError):
            warnings.warn(f"center search failed on {frame.id}; using frame midpoint")
            center = frame.midpoint
    blocks: dict[str, np.ndarray] = {}
    if config.include_radial or config.include_angular:
        polar = warp_polar(frame, center)
        if config.include_radial:
            prof, _ = polar.radial_profile()
            blocks["radial"] = _resample(prof, config.radial_bins)
        if config.include_angular:
            masked = np.where(polar.occupancy, polar.grid, 0.0)
            row_max = masked.max(axis=1)
            edges = np.linspace(0, polar.n_theta, config.angular_bins + 1).astype(int)
            sums = np.add.reduceat(row_max, edges[:-1])
            blocks["angular"] = sums / np.diff(edges)
    if config.include_thumb:
        blocks["thumb"] = _area_downsample(frame.intensities, config.thumb_side).ravel()
    return blocks


def fit_block_stats(frames, config: FeatureConfig = FeatureConfig(),
                    centers=None) -> BlockStats:
    """Fit per-block scalar mean/std over a reference set of frames.

    The reference is usually experimental-only so generated images are
    normalized against the real distribution.
    """
    frames = list(frames)
    if not frames:
        raise ValueError("empty reference set")
    collected: dict[str, list[np.ndarray]] = {}
    for i, frame in enumerate(frames):
        center = None if centers is None else centers[i]
        for name, vals in _raw_blocks(frame, config, center).items():
            collected.setdefault(name, []).append(vals)
    means, stds = {}, {}
    for name, chunks in collected.items():
        data = np.concatenate(chunks)
        means[name] = float(data.mean())
        std = float(data.std())
        stds[name] = std if std > 1e-12 else 1.0
    return BlockStats(means=means, stds=stds)


def extract_features(frame: ScatterFrame, config: FeatureConfig = FeatureConfig(),
                     stats: BlockStats | None = None,
                     center: tuple[float, float] | None = None) -> FeatureVector:
    """Deterministic feature vector for one frame.

    Blocks are concatenated in (radial, angular, thumb) order; with stats
    each block is z-normalized by its reference scalar mean/std.
    """
    blocks = _raw_blocks(frame, config, center)
    parts = []
    for name, _ in config.blocks():
        vals = blocks[name]
        if stats is not None:
            vals = (vals - stats.means[name]) / stats.stds[name]
        parts.append(vals)
    extractor = config.extractor_id + ("-znorm" if stats is not None else "")
    return FeatureVector(values=np.concatenate(parts), extractor_id=extractor)


# ---------------------------------------------------------------------------
# PCA projection
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class ProjectionModel:
    mean: np.ndarray
    axes: np.ndarray  # (d, k), orthonormal columns
    explained_variance_ratio: np.ndarray

    def __post_init__(self):
        gram = self.axes.T @ self.axes
        if not np.allclose(gram, np.eye(self.axes.shape[1]), atol=1e-6):
            raise ValueError("projection axes are not orthonormal")
        ratios = np.asarray(self.explained_variance_ratio)
        if np.any(ratios < -1e-12) or np.any(ratios > 1 + 1e-9):
            raise ValueError("explained-variance ratios outside [0, 1]")
        if np.any(np.diff(ratios) > 1e-12):
            raise ValueError("explained-variance ratios must be non-increasing")

    @property
    def k(self) -> int:
        return self.axes.shape[1]


def fit_projection(features, k: int = 2) -> ProjectionModel:
    """Top-k principal axes of the centered feature matrix.

    Deterministic sign convention: each axis's largest-magnitude component
    is made positive, so refits of identical data give identical models.
    """
    mat = np.asarray([np.asarray(f.values if isinstance(f, FeatureVector) else f)
                      for f in features], dtype=np.float64)
    n, d = mat.shape
    if n < k + 1:
        raise ValueError(f"need at least {k + 1} vectors to fit a rank-{k} projection")
    mean = mat.mean(axis=0)
    centered = mat - mean
    cov = (centered.T @ centered) / (n - 1)
    eigvals, eigvecs = np.linalg.eigh(cov)
    order = np.argsort(eigvals)[::-1]
    eigvals = np.clip(eigvals[order], 0.0, None)
    eigvecs = eigvecs[:, order]
    total = float(eigvals.sum())
    if total <= 0 or eigvals[k - 1] <= 1e-12 * max(total, 1.0):
        rank = int(np.sum(eigvals > 1e-12 * max(total, 1.0)))
        raise ValueError(f"data rank {rank} is below requested k={k}")
    axes = eigvecs[:, :k].copy()
    for j in range(k):
        pivot = int(np.argmax(np.abs(axes[:, j])))
        if axes[pivot, j] < 0:
            axes[:, j] = -axes[:, j]
    ratios = eigvals[:k] / total
    return ProjectionModel(mean=mean, axes=axes, explained_variance_ratio=ratios)


def project(model: ProjectionModel, feature) -> np.ndarray:
    """Project one feature vector into the model's k-dimensional space."""
    vals = np.asarray(feature.values if isinstance(feature, FeatureVector) else feature,
                      dtype=np.float64)
    if vals.shape[0] != model.mean.shape[0]:
        raise ValueError(
            f"feature length {vals.shape[0]} does not match model {model.mean.shape[0]}"
        )
    return (vals - model.mean) @ model.axes


# ---------------------------------------------------------------------------
# CSV persistence (shared schema for external embeddings)
# ---------------------------------------------------------------------------

def save_features(path: str | Path, ids, vectors) -> None:
    """Write one row per image: id plus feature values."""
    vectors = [np.asarray(v.values if isinstance(v, FeatureVector) else v) for v in vectors]
    if len(ids) != len(vectors):
        raise ValueError("ids and vectors differ in length")
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        width = len(vectors[0]) if vectors else 0
        writer.writerow(["id"] + [f"v{i}" for i in range(width)])
        for image_id, vec in zip(ids, vectors):
            if len(vec) != width:
                raise ValueError("inconsistent feature lengths")
            writer.writerow([image_id] + [repr(float(x)) for x in vec])


def load_features(path: str | Path) -> tuple[list[str], np.ndarray]:
    """Read a feature CSV back as (ids, matrix); accepts external files."""
    ids: list[str] = []
    rows: list[list[float]] = []
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or not header or header[0] != "id":
            raise ValueError(f"{path}: expected header starting with 'id'")
        for row in reader:
            if not row:
                continue
            ids.append(row[0])
            rows.append([float(x) for x in row[1:]])
    if not rows:
        raise ValueError(f"{path}: no feature rows")
    widths = {len(r) for r in rows}
    if len(widths) != 1:
        raise ValueError(f"{path}: inconsistent feature lengths {sorted(widths)}")
    if len(set(ids)) != len(ids):
        raise ValueError(f"{path}: duplicate image ids")
    mat = np.asarray(rows, dtype=np.float64)
    if not np.isfinite(mat).all():
        raise ValueError(f"{path}: non-finite feature values")
    return ids, mat
