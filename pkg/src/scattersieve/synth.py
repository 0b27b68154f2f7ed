"""Synthetic scattering-frame generator and controlled corruptions.

Produces ground-truth ring/peak/background frames with beamstop, detector
gap bands, and seeded noise, plus five corruption kinds that each break one
realism criterion on purpose. Corpus generation persists the true frame
parameters in a sidecar so downstream checks have exact oracles.
"""

from __future__ import annotations

import copy
import json
import sys
from dataclasses import dataclass, field, asdict
from enum import Enum
from pathlib import Path
from typing import Sequence

import numpy as np
from scipy import ndimage

from .interp import bilinear_sample
from .frames import (
    EPOCH,
    DatasetManifest,
    FrameError,
    LabelRecord,
    LabelSource,
    ManifestEntry,
    Origin,
    PatternClass,
    ScatterFrame,
    Verdict,
    save_frame,
    write_jsonl,
)

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib


class SpecError(ValueError):
    """A generator spec violates its own invariants."""


@dataclass(frozen=True)
class GapBand:
    """Axis-aligned dead band; orientation 'column' spans full height."""

    orientation: str  # "row" | "column"
    start: int
    width: int

    def __post_init__(self):
        if self.orientation not in ("row", "column"):
            raise SpecError(f"bad gap orientation {self.orientation!r}")
        if self.width < 1 or self.start < 0:
            raise SpecError("gap band needs start >= 0 and width >= 1")


@dataclass(frozen=True)
class RingSpec:
    center: tuple[float, float]
    rings: tuple[tuple[float, float, float], ...] = ()  # (radius, sigma, amplitude)
    beamstop_radius: float = 6.0
    gap_bands: tuple[GapBand, ...] = ()
    background_level: float = 0.05
    noise_sigma: float = 0.0

    def validate(self, size: tuple[int, int]) -> None:
        w, h = size
        half_diag = 0.5 * float(np.hypot(w, h))
        for radius, sigma, amp in self.rings:
            if radius <= 0 or radius >= half_diag:
                raise SpecError(f"ring radius {radius} outside (0, {half_diag:.1f})")
            if sigma <= 0:
                raise SpecError("ring sigma must be positive")
            if not (0.0 < amp <= 1.0):
                raise SpecError(f"ring amplitude {amp} outside (0, 1]")
        if self.rings and self.beamstop_radius >= min(r for r, _, _ in self.rings):
            raise SpecError("beamstop must be smaller than the innermost ring")
        if not (0.0 <= self.background_level <= 0.2):
            raise SpecError("background level outside [0, 0.2]")
        if self.noise_sigma < 0:
            raise SpecError("noise sigma must be >= 0")


@dataclass(frozen=True)
class PeakSpec:
    center: tuple[float, float]
    # (radius, azimuth_deg, angular_sigma_deg, radial_sigma_px, amplitude)
    peaks: tuple[tuple[float, float, float, float, float], ...] = ()
    symmetry_pairs: bool = True
    beamstop_radius: float = 6.0
    gap_bands: tuple[GapBand, ...] = ()
    background_level: float = 0.05
    noise_sigma: float = 0.0

    def validate(self, size: tuple[int, int]) -> None:
        w, h = size
        half_diag = 0.5 * float(np.hypot(w, h))
        for radius, azimuth, sig_t, sig_r, amp in self.peaks:
            if radius <= 0 or radius >= half_diag:
                raise SpecError(f"peak radius {radius} outside (0, {half_diag:.1f})")
            if not (0.0 <= azimuth < 360.0):
                raise SpecError(f"azimuth {azimuth} outside [0, 360)")
            if sig_t <= 0 or sig_r <= 0:
                raise SpecError("peak widths must be positive")
            if not (0.0 < amp <= 1.0):
                raise SpecError(f"peak amplitude {amp} outside (0, 1]")
        if self.peaks and self.beamstop_radius >= min(p[0] for p in self.peaks):
            raise SpecError("beamstop must be smaller than the innermost peak radius")
        if not (0.0 <= self.background_level <= 0.2):
            raise SpecError("background level outside [0, 0.2]")
        if self.noise_sigma < 0:
            raise SpecError("noise sigma must be >= 0")


class CorruptionKind(str, Enum):
    BROKEN_ARC = "broken_arc"
    AZIMUTHAL_SHEAR = "azimuthal_shear"
    ASYMMETRIC_INTENSITY = "asymmetric_intensity"
    WAVY_GAP = "wavy_gap"
    GHOST_TEXTURE = "ghost_texture"


#: Physics score each corruption is built to break (composite = weighted mean).
TARGETED_SCORE = {
    CorruptionKind.BROKEN_ARC: "continuity",
    CorruptionKind.AZIMUTHAL_SHEAR: "verticality",
    CorruptionKind.ASYMMETRIC_INTENSITY: "symmetry",
    CorruptionKind.WAVY_GAP: "gap_straightness",
    CorruptionKind.GHOST_TEXTURE: "composite",
}


@dataclass(frozen=True)
class CorruptionSpec:
    kind: CorruptionKind
    magnitude: float
    seed: int = 0

    def __post_init__(self):
        if not (0.0 < self.magnitude <= 1.0):
            raise SpecError(f"corruption magnitude {self.magnitude} outside (0, 1]")


# ---------------------------------------------------------------------------
# generators
# ---------------------------------------------------------------------------

def _pixel_grid(size: tuple[int, int], center: tuple[float, float]):
    w, h = size
    ys, xs = np.mgrid[0:h, 0:w]
    dx = xs - center[0]
    dy = ys - center[1]
    return np.hypot(dx, dy), np.arctan2(dy, dx)


def _gap_mask(size: tuple[int, int], bands: Sequence[GapBand]) -> np.ndarray | None:
    w, h = size
    if not bands:
        return None
    mask = np.zeros((h, w), dtype=bool)
    for band in bands:
        if band.orientation == "column":
            mask[:, band.start : band.start + band.width] = True
        else:
            mask[band.start : band.start + band.width, :] = True
    return mask


def _finish(img, spec, size, seed, gap_mask, frame_id) -> ScatterFrame:
    # order: zero beamstop/gaps, then noise, then clamp
    r, _ = _pixel_grid(size, spec.center)
    img = np.where(r < spec.beamstop_radius, 0.0, img)
    if gap_mask is not None:
        img = np.where(gap_mask, 0.0, img)
    if spec.noise_sigma > 0:
        rng = np.random.default_rng(seed)
        img = img + rng.normal(0.0, spec.noise_sigma, img.shape)
    return ScatterFrame(id=frame_id, intensities=np.clip(img, 0.0, 1.0), gap_mask=gap_mask)


def generate_rings(spec: RingSpec, size: tuple[int, int], seed: int = 0,
                   frame_id: str | None = None) -> ScatterFrame:
    """Concentric Debye-Scherrer rings with Gaussian radial profiles.

    Intensity is background + sum of amp*exp(-(r-r0)^2 / (2 sigma^2)),
    zeroed on beamstop and gap bands, with optional Gaussian noise, clamped
    to [0, 1]. Deterministic under (spec, seed).
    """
    spec.validate(size)
    r, _ = _pixel_grid(size, spec.center)
    img = np.full(r.shape, spec.background_level, dtype=np.float64)
    for radius, sigma, amp in spec.rings:
        img += amp * np.exp(-((r - radius) ** 2) / (2.0 * sigma**2))
    gm = _gap_mask(size, spec.gap_bands)
    return _finish(img, spec, size, seed, gm, frame_id or f"rings-s{seed}")


def generate_peaks(spec: PeakSpec, size: tuple[int, int], seed: int = 0,
                   frame_id: str | None = None) -> ScatterFrame:
    """Bragg-like peaks: Gaussian in radius and in wrapped azimuth.

    With symmetry_pairs each peak is mirrored at azimuth + 180 deg, so the
    noise-free frame is point-symmetric about the center.
    """
    spec.validate(size)
    r, theta = _pixel_grid(size, spec.center)
    theta_deg = np.degrees(theta) % 360.0
    img = np.full(r.shape, spec.background_level, dtype=np.float64)
    for radius, azimuth, sig_t, sig_r, amp in spec.peaks:
        azimuths = [azimuth]
        if spec.symmetry_pairs:
            azimuths.append((azimuth + 180.0) % 360.0)
        radial = np.exp(-((r - radius) ** 2) / (2.0 * sig_r**2))
        for az in azimuths:
            delta = np.abs(theta_deg - az)
            delta = np.minimum(delta, 360.0 - delta)  # wrapped angular distance
            img += amp * radial * np.exp(-(delta**2) / (2.0 * sig_t**2))
    gm = _gap_mask(size, spec.gap_bands)
    return _finish(img, spec, size, seed, gm, frame_id or f"peaks-s{seed}")


def generate_background(spec: RingSpec, size: tuple[int, int], seed: int = 0,
                        frame_id: str | None = None) -> ScatterFrame:
    """Empty frame: flat background plus beamstop, gaps, and noise."""
    if spec.rings:
        raise SpecError("background spec must have no rings")
    spec.validate(size)
    w, h = size
    img = np.full((h, w), spec.background_level, dtype=np.float64)
    gm = _gap_mask(size, spec.gap_bands)
    return _finish(img, spec, size, seed, gm, frame_id or f"bkg-s{seed}")


# ---------------------------------------------------------------------------
# corruptions
# ---------------------------------------------------------------------------

def _radial_profile(frame: ScatterFrame, center: tuple[float, float]) -> np.ndarray:
    r, _ = _pixel_grid((frame.width, frame.height), center)
    ridx = np.round(r).astype(int)
    n = int(ridx.max()) + 1
    valid = np.ones_like(ridx, dtype=bool)
    if frame.gap_mask is not None:
        valid &= ~frame.gap_mask
    sums = np.bincount(ridx[valid], weights=frame.intensities[valid], minlength=n)
    counts = np.bincount(ridx[valid], minlength=n)
    prof = np.zeros(n)
    np.divide(sums, counts, out=prof, where=counts > 0)
    return prof


def _strongest_radius(frame: ScatterFrame, center: tuple[float, float]) -> float:
    prof = _radial_profile(frame, center)
    lo = min(10, len(prof) - 1)  # skip beamstop neighborhood
    hi = int(0.95 * len(prof))
    if hi <= lo + 1:
        return float(np.argmax(prof))
    return float(lo + int(np.argmax(prof[lo:hi])))


def corrupt(frame: ScatterFrame, spec: CorruptionSpec,
            center: tuple[float, float] | None = None) -> ScatterFrame:
    """Apply one controlled hallucination; deterministic under spec.seed.

    center defaults to the frame midpoint; pass the true pattern center for
    synthetic frames so arc/shear geometry lines up with the rings.
    """
    if center is None:
        center = frame.midpoint
    rng = np.random.default_rng(spec.seed)
    img = frame.intensities.copy()
    gap_mask = frame.gap_mask
    m = spec.magnitude
    h, w = img.shape
    r, theta = _pixel_grid((w, h), center)

    if spec.kind is CorruptionKind.BROKEN_ARC:
        # zero an angular sector of width m*180 deg on the strongest ring
        radius = _strongest_radius(frame, center)
        half_width = np.radians(m * 180.0) / 2.0
        start = rng.uniform(0.0, 2 * np.pi)
        delta = np.angle(np.exp(1j * (theta - start)))
        sector = np.abs(delta) <= half_width
        band = np.abs(r - radius) <= 8.0
        img[sector & band] = 0.0

    elif spec.kind is CorruptionKind.AZIMUTHAL_SHEAR:
        # rotate the upper half-plane's content by m*20 deg about an
        # off-center pivot; circles about the pattern center land displaced,
        # so arcs misalign at the seam
        angle = np.radians(m * 20.0)
        pivot_dir = rng.uniform(0.0, 2 * np.pi)
        pivot_dist = max(10.0, 0.12 * min(w, h))
        px = center[0] + pivot_dist * np.cos(pivot_dir)
        py = center[1] + pivot_dist * np.sin(pivot_dir)
        ys, xs = np.mgrid[0:h, 0:w].astype(np.float64)
        cos_a, sin_a = np.cos(-angle), np.sin(-angle)
        sx = px + (xs - px) * cos_a - (ys - py) * sin_a
        sy = py + (xs - px) * sin_a + (ys - py) * cos_a
        rotated = bilinear_sample(frame.intensities, sx, sy, fill=0.0)
        upper = ys < center[1]
        img = np.where(upper, rotated, img)

    elif spec.kind is CorruptionKind.ASYMMETRIC_INTENSITY:
        upper = np.mgrid[0:h, 0:w][0] < center[1]
        img = np.where(upper, img * (1.0 - m), img)

    elif spec.kind is CorruptionKind.WAVY_GAP:
        if gap_mask is None:
            raise FrameError("wavy_gap corruption needs a frame with a gap_mask")
        img, gap_mask = _wavy_gaps(img, gap_mask, amplitude=m * 8.0, rng=rng)

    elif spec.kind is CorruptionKind.GHOST_TEXTURE:
        noise = rng.standard_normal((h, w))
        texture = ndimage.gaussian_filter(noise, sigma=6.0)
        tmin, tmax = texture.min(), texture.max()
        texture = (texture - tmin) / (tmax - tmin) if tmax > tmin else texture * 0.0
        img = (1.0 - m) * img + m * texture

    else:  # pragma: no cover
        raise SpecError(f"unknown corruption kind {spec.kind}")

    return ScatterFrame(id=f"{frame.id}+{spec.kind.value}",
                        intensities=np.clip(img, 0.0, 1.0), gap_mask=gap_mask)


def _band_runs(mask_1d: np.ndarray) -> list[tuple[int, int]]:
    """Maximal runs of True as (start, stop) pairs."""
    idx = np.flatnonzero(mask_1d)
    if idx.size == 0:
        return []
    splits = np.flatnonzero(np.diff(idx) > 1)
    starts = np.concatenate(([idx[0]], idx[splits + 1]))
    stops = np.concatenate((idx[splits] + 1, [idx[-1] + 1]))
    return list(zip(starts.tolist(), stops.tolist()))


def _wavy_gaps(img: np.ndarray, gap_mask: np.ndarray, amplitude: float,
               rng: np.random.Generator):
    """Displace each gap band sinusoidally along its length.

    The straight band is first healed by linear interpolation across it,
    then the displaced band is zeroed; the mask follows the new band.
    """
    h, w = img.shape
    out = img.copy()
    new_mask = np.zeros_like(gap_mask)

    col_runs = _band_runs(gap_mask.all(axis=0))
    row_runs = _band_runs(gap_mask.all(axis=1))

    def displace(arr2d, mask2d, runs, length):
        # operates column-bands on (h, w) arrays; rows handled via transpose
        for start, stop in runs:
            width = stop - start
            phase = rng.uniform(0.0, 2 * np.pi)
            period = length / 2.0
            offsets = amplitude * np.sin(2 * np.pi * np.arange(length) / period + phase)
            left = arr2d[:, max(start - 1, 0)]
            right = arr2d[:, min(stop, arr2d.shape[1] - 1)]
            ramp = (np.arange(width) + 1.0) / (width + 1.0)
            arr2d[:, start:stop] = left[:, None] * (1 - ramp) + right[:, None] * ramp
            for y in range(length):
                s = int(round(start + offsets[y]))
                s = min(max(s, 0), arr2d.shape[1] - width)
                arr2d[y, s : s + width] = 0.0
                mask2d[y, s : s + width] = True

    displace(out, new_mask, col_runs, h)
    if row_runs:
        out_t = np.ascontiguousarray(out.T)
        mask_t = np.ascontiguousarray(new_mask.T)
        displace(out_t, mask_t, row_runs, w)
        out = out_t.T
        new_mask = mask_t.T
    return out, new_mask


# ---------------------------------------------------------------------------
# corpus generation
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class PatternCounts:
    experimental: int = 0  # clean frames tagged as beamline data
    clean: int = 0         # clean frames tagged as generated (truth: realistic)
    corrupted: int = 0     # corrupted generated frames (truth: fake)

    def __post_init__(self):
        if min(self.experimental, self.clean, self.corrupted) < 0:
            raise SpecError("corpus counts must be >= 0")


@dataclass(frozen=True)
class CorpusConfig:
    counts: dict[PatternClass, PatternCounts]
    size: tuple[int, int] = (256, 256)
    center_jitter: float = 24.0          # max |offset| of true center from midpoint
    noise_sigma: tuple[float, float] = (0.0, 0.008)
    background: tuple[float, float] = (0.04, 0.12)
    magnitude: tuple[float, float] = (0.3, 1.0)
    kinds: tuple[CorruptionKind, ...] = tuple(CorruptionKind)

    @staticmethod
    def from_toml(path: str | Path) -> "CorpusConfig":
        with open(path, "rb") as fh:
            raw = tomllib.load(fh)
        counts = {}
        for name, c in raw.get("counts", {}).items():
            counts[PatternClass(name)] = PatternCounts(
                experimental=int(c.get("experimental", 0)),
                clean=int(c.get("clean", 0)),
                corrupted=int(c.get("corrupted", 0)),
            )
        kwargs = {}
        if "size" in raw:
            kwargs["size"] = (int(raw["size"][0]), int(raw["size"][1]))
        for key in ("center_jitter",):
            if key in raw:
                kwargs[key] = float(raw[key])
        for key in ("noise_sigma", "background", "magnitude"):
            if key in raw:
                kwargs[key] = (float(raw[key][0]), float(raw[key][1]))
        if "kinds" in raw:
            kwargs["kinds"] = tuple(CorruptionKind(k) for k in raw["kinds"])
        return CorpusConfig(counts=counts, **kwargs)


def _draw_ring_spec(cfg: CorpusConfig, rng: np.random.Generator) -> RingSpec:
    w, h = cfg.size
    cx = (w - 1) / 2.0 + rng.uniform(-cfg.center_jitter, cfg.center_jitter)
    cy = (h - 1) / 2.0 + rng.uniform(-cfg.center_jitter, cfg.center_jitter)
    max_r = 0.5 * min(w, h) - cfg.center_jitter - 8.0
    n_rings = int(rng.integers(2, 5))
    radii = np.sort(rng.uniform(0.2 * max_r, max_r, size=n_rings))
    while np.any(np.diff(radii) < 8.0):  # keep rings resolvable
        radii = np.sort(rng.uniform(0.2 * max_r, max_r, size=n_rings))
    rings = tuple(
        (float(rad), float(rng.uniform(1.5, 3.0)), float(rng.uniform(0.5, 1.0)))
        for rad in radii
    )
    return RingSpec(
        center=(cx, cy),
        rings=rings,
        beamstop_radius=min(float(rng.uniform(4.0, 8.0)), float(radii[0]) - 2.0),
        gap_bands=_draw_gaps(cfg, rng),
        background_level=float(rng.uniform(*cfg.background)),
        noise_sigma=float(rng.uniform(*cfg.noise_sigma)),
    )


def _draw_gaps(cfg: CorpusConfig, rng: np.random.Generator) -> tuple[GapBand, ...]:
    w, h = cfg.size
    bands = [GapBand("column", int(rng.integers(int(0.62 * w), int(0.85 * w))),
                     int(rng.integers(4, 8)))]
    if rng.uniform() < 0.5:
        bands.append(GapBand("row", int(rng.integers(int(0.62 * h), int(0.85 * h))),
                             int(rng.integers(4, 8))))
    return tuple(bands)


def _draw_peak_spec(cfg: CorpusConfig, rng: np.random.Generator) -> PeakSpec:
    w, h = cfg.size
    cx = (w - 1) / 2.0 + rng.uniform(-cfg.center_jitter, cfg.center_jitter)
    cy = (h - 1) / 2.0 + rng.uniform(-cfg.center_jitter, cfg.center_jitter)
    max_r = 0.5 * min(w, h) - cfg.center_jitter - 8.0
    n_peaks = int(rng.integers(2, 5))
    peaks = tuple(
        (
            float(rng.uniform(0.3 * max_r, max_r)),
            float(rng.uniform(0.0, 360.0)),
            float(rng.uniform(4.0, 12.0)),
            float(rng.uniform(2.0, 4.0)),
            float(rng.uniform(0.5, 1.0)),
        )
        for _ in range(n_peaks)
    )
    return PeakSpec(
        center=(cx, cy),
        peaks=peaks,
        symmetry_pairs=True,
        beamstop_radius=float(rng.uniform(4.0, 8.0)),
        gap_bands=_draw_gaps(cfg, rng),
        background_level=float(rng.uniform(*cfg.background)),
        noise_sigma=float(rng.uniform(*cfg.noise_sigma)),
    )


def _draw_background_spec(cfg: CorpusConfig, rng: np.random.Generator) -> RingSpec:
    spec = _draw_ring_spec(cfg, rng)
    return RingSpec(center=spec.center, rings=(), beamstop_radius=spec.beamstop_radius,
                    gap_bands=spec.gap_bands, background_level=spec.background_level,
                    noise_sigma=spec.noise_sigma)


def _spec_summary(spec) -> dict:
    d = asdict(spec)
    d["gap_bands"] = [asdict(b) for b in spec.gap_bands]
    return d


def generate_corpus(config: CorpusConfig, out_dir: str | Path, seed: int = 0
                    ) -> tuple[DatasetManifest, list[LabelRecord]]:
    """Write a desk-scale corpus: images/, manifest.jsonl, labels.jsonl, truth.jsonl.

    Clean frames get ground-truth Realistic labels, corrupted frames Fake,
    all from the "oracle" annotator at round 0. truth.jsonl records the exact
    spec of every frame (center, rings, corruption) for oracle-based tests.
    Bit-identical across runs with the same (config, seed).
    """
    out_dir = Path(out_dir)
    img_dir = out_dir / "images"
    img_dir.mkdir(parents=True, exist_ok=True)
    rng = np.random.default_rng(seed)

    entries: list[ManifestEntry] = []
    labels: list[LabelRecord] = []
    truth_rows: list[dict] = []

    for pattern in (PatternClass.RINGS, PatternClass.PEAKS, PatternClass.BACKGROUND):
        counts = config.counts.get(pattern)
        if counts is None:
            continue
        groups = (
            ("exp", Origin.EXPERIMENTAL, counts.experimental, False),
            ("gen", Origin.GENERATED, counts.clean, False),
            ("gen", Origin.GENERATED, counts.corrupted, True),
        )
        serial = 0
        for tag, origin, count, corrupted in groups:
            for _ in range(count):
                frame_seed = int(rng.integers(0, 2**31 - 1))
                if pattern is PatternClass.RINGS:
                    spec = _draw_ring_spec(config, rng)
                    make = generate_rings
                elif pattern is PatternClass.PEAKS:
                    spec = _draw_peak_spec(config, rng)
                    make = generate_peaks
                else:
                    spec = _draw_background_spec(config, rng)
                    make = generate_background
                kind_tag = "fake" if corrupted else "real"
                frame_id = f"{pattern.value}_{tag}_{kind_tag}_{serial:05d}"
                serial += 1
                frame = make(spec, config.size, seed=frame_seed, frame_id=frame_id)
                row = {
                    "image_id": frame_id,
                    "pattern": pattern.value,
                    "origin": origin.value,
                    "center": [spec.center[0], spec.center[1]],
                    "seed": frame_seed,
                    "spec": _spec_summary(spec),
                    "corruption": None,
                }
                if corrupted:
                    kind = config.kinds[int(rng.integers(0, len(config.kinds)))]
                    if kind is CorruptionKind.WAVY_GAP and frame.gap_mask is None:
                        kind = CorruptionKind.BROKEN_ARC
                    cspec = CorruptionSpec(
                        kind=kind,
                        magnitude=float(rng.uniform(*config.magnitude)),
                        seed=int(rng.integers(0, 2**31 - 1)),
                    )
                    frame = corrupt(frame, cspec, center=spec.center)
                    frame = ScatterFrame(id=frame_id, intensities=frame.intensities,
                                         gap_mask=frame.gap_mask)
                    row["corruption"] = {
                        "kind": cspec.kind.value,
                        "magnitude": cspec.magnitude,
                        "seed": cspec.seed,
                        "targeted_score": TARGETED_SCORE[cspec.kind],
                    }
                rel_path = f"images/{frame_id}.png"
                save_frame(frame, out_dir / rel_path, bit_depth=16)
                entries.append(ManifestEntry(path=rel_path, origin=origin,
                                             pattern=pattern, caption=None))
                verdict = Verdict.FAKE if corrupted else Verdict.REALISTIC
                labels.append(LabelRecord(image_id=frame_id, verdict=verdict,
                                          source=LabelSource.HUMAN, round=0,
                                          annotator="oracle", timestamp=EPOCH))
                truth_rows.append(row)

    manifest = DatasetManifest(entries)
    manifest.save(out_dir / "manifest.jsonl")
    write_jsonl(out_dir / "labels.jsonl", (rec.to_json() for rec in labels))
    write_jsonl(out_dir / "truth.jsonl", truth_rows)
    return manifest, labels


def load_truth(corpus_dir: str | Path) -> dict[str, dict]:
    """Read the truth sidecar back as an image_id -> row mapping."""
    from .frames import read_jsonl

    return {row["image_id"]: row for row in read_jsonl(Path(corpus_dir) / "truth.jsonl")}
