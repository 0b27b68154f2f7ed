"""Diffraction-law realism checks.

Scattering cones intersect the detector as concentric circles about the
beam center, so the polar warp of a realistic frame turns rings into
vertical lines. The checks here exploit that: a grid search locates the
beam center by maximizing radial-profile sharpness, and four scores grade
symmetry, ring continuity, detector-gap straightness, and ridge
verticality, composed into a single RealismReport.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy import ndimage, signal

from .frames import ScatterFrame
from .interp import bilinear_sample, nearest_lookup

EPS_SYMMETRY = 1e-3
VERTICALITY_SCALE = 2.0   # bins; e-folding of ridge-position std
GAP_RESIDUAL_SCALE = 1.5  # px;   e-folding of gap-line RMS residual
RING_PROMINENCE = 0.05
DEFAULT_WEIGHTS = (0.3, 0.3, 0.2, 0.2)  # symmetry, continuity, gaps, verticality
DEFAULT_THRESHOLDS = {
    "symmetry": 0.8,
    "continuity": 0.8,
    "gap_straightness": 0.5,
    "verticality": 0.6,
}


class NoRadialStructureError(ValueError):
    """Frame has no radial intensity variation to center on."""


class InsufficientCoverageError(ValueError):
    """Too few occupied polar samples to score."""


class NoRingsError(ValueError):
    """No ridge with the required prominence in the radial profile."""


@dataclass
class PolarImage:
    """Polar resampling: rows are angular bins, columns radial bins.

    occupancy is False where the sample fell outside the frame, on the
    beamstop, or on a detector gap.
    """

    grid: np.ndarray
    occupancy: np.ndarray
    center: tuple[float, float]
    max_radius: float

    def __post_init__(self):
        if self.grid.shape != self.occupancy.shape:
            raise ValueError("occupancy shape differs from grid")
        if min(self.grid.shape) < 1:
            raise ValueError("empty polar grid")

    @property
    def n_theta(self) -> int:
        return self.grid.shape[0]

    @property
    def n_r(self) -> int:
        return self.grid.shape[1]

    @property
    def delta_r(self) -> float:
        return self.max_radius / self.n_r

    def radial_profile(self) -> tuple[np.ndarray, np.ndarray]:
        """Occupancy-weighted angular mean per radial bin, plus counts."""
        counts = self.occupancy.sum(axis=0)
        sums = np.where(self.occupancy, self.grid, 0.0).sum(axis=0)
        prof = np.zeros(self.n_r)
        np.divide(sums, counts, out=prof, where=counts > 0)
        return prof, counts


@dataclass
class RealismReport:
    symmetry: float
    continuity: float
    gap_straightness: float
    verticality: float
    composite: float
    center: tuple[float, float]
    flags: list[str] = field(default_factory=list)

    def to_json(self) -> dict:
        return {
            "symmetry": self.symmetry,
            "continuity": self.continuity,
            "gap_straightness": self.gap_straightness,
            "verticality": self.verticality,
            "composite": self.composite,
            "center": [self.center[0], self.center[1]],
            "flags": list(self.flags),
        }

    @staticmethod
    def from_json(obj: dict) -> "RealismReport":
        return RealismReport(
            symmetry=obj["symmetry"], continuity=obj["continuity"],
            gap_straightness=obj["gap_straightness"], verticality=obj["verticality"],
            composite=obj["composite"], center=tuple(obj["center"]),
            flags=list(obj["flags"]),
        )

    def score(self, name: str) -> float:
        return getattr(self, name)


# ---------------------------------------------------------------------------
# beamstop detection
# ---------------------------------------------------------------------------

def detect_beamstop(frame: ScatterFrame, center: tuple[float, float],
                    zero_thresh: float = 1e-3) -> np.ndarray | None:
    """Largest connected near-zero blob containing or near the center.

    Gap-band pixels are excluded first (when a mask is present) and
    frame-spanning blobs are rejected, so detector gaps are not mistaken
    for the beamstop.
    """
    h, w = frame.intensities.shape
    zero = frame.intensities <= zero_thresh
    if frame.gap_mask is not None:
        zero = zero & ~frame.gap_mask
    if not zero.any():
        return None
    zero = ndimage.binary_closing(zero, structure=np.ones((3, 3), dtype=bool))
    labels, n = ndimage.label(zero, structure=np.ones((3, 3), dtype=int))
    if n == 0:
        return None
    cx = int(np.clip(round(center[0]), 0, w - 1))
    cy = int(np.clip(round(center[1]), 0, h - 1))

    def acceptable(lab: int) -> bool:
        ys, xs = np.nonzero(labels == lab)
        span = max(int(np.ptp(ys)) + 1, int(np.ptp(xs)) + 1)
        return span < 0.5 * min(h, w)

    lab = labels[cy, cx]
    if lab != 0 and acceptable(lab):
        return labels == lab
    centroids = ndimage.center_of_mass(zero, labels, index=range(1, n + 1))
    order = np.argsort([np.hypot(x - center[0], y - center[1]) for y, x in centroids])
    for idx in order:
        dist = np.hypot(centroids[idx][1] - center[0], centroids[idx][0] - center[1])
        if dist > min(h, w) / 6.0:
            break
        if acceptable(idx + 1):
            return labels == idx + 1
    return None


# ---------------------------------------------------------------------------
# polar warp
# ---------------------------------------------------------------------------

def warp_polar(frame: ScatterFrame, center: tuple[float, float],
               n_theta: int = 360, n_r: int | None = None,
               max_radius: float | None = None) -> PolarImage:
    """Resample the frame onto (angle, radius); rings become vertical lines.

    grid[t, k] is the bilinear sample at radius k*delta_r and angle
    2*pi*t/n_theta. Defaults give 1 deg x 1 px bins out to half the short
    frame side.
    """
    h, w = frame.intensities.shape
    cx, cy = center
    if not (0 <= cx <= w - 1 and 0 <= cy <= h - 1):
        raise ValueError(f"center {center} outside frame {w}x{h}")
    if max_radius is None:
        max_radius = min(w, h) / 2.0
    if n_r is None:
        n_r = int(max_radius)
    if n_theta < 8 or n_r < 8:
        raise ValueError("need at least 8 angular and 8 radial bins")

    thetas = np.arange(n_theta) * (2.0 * np.pi / n_theta)
    radii = np.arange(n_r) * (max_radius / n_r)
    xs = cx + radii[None, :] * np.cos(thetas)[:, None]
    ys = cy + radii[None, :] * np.sin(thetas)[:, None]

    grid = bilinear_sample(frame.intensities, xs, ys, fill=0.0)
    occupancy = (xs >= 0) & (xs <= w - 1) & (ys >= 0) & (ys <= h - 1)
    mask = np.zeros((h, w), dtype=bool)
    if frame.gap_mask is not None:
        mask |= frame.gap_mask
    beamstop = detect_beamstop(frame, center)
    if beamstop is not None:
        mask |= beamstop
    if mask.any():
        # dilate so samples whose bilinear support touches a masked pixel
        # count as unoccupied rather than half-contaminated
        mask = ndimage.binary_dilation(mask, structure=np.ones((3, 3), dtype=bool))
        occupancy &= ~nearest_lookup(mask, xs, ys)
    return PolarImage(grid=grid, occupancy=occupancy, center=(float(cx), float(cy)),
                      max_radius=float(max_radius))


# ---------------------------------------------------------------------------
# beam-center grid search
# ---------------------------------------------------------------------------

def _profile_variance_batch(img: np.ndarray, centers: np.ndarray,
                            n_theta: int, n_r: int, max_radius: float) -> np.ndarray:
    """Sharpness objective for many candidate centers at once.

    Objective = variance across radius of the angular-mean radial profile;
    rings collapse to single radial bins exactly when the candidate matches
    the true center, maximizing the variance. Gap/beamstop masking is
    skipped here: it is nearly constant across nearby candidates and the
    search only compares candidates.
    """
    h, w = img.shape
    thetas = np.arange(n_theta) * (2.0 * np.pi / n_theta)
    radii = np.arange(n_r) * (max_radius / n_r)
    offx = (radii[None, :] * np.cos(thetas)[:, None]).ravel()
    offy = (radii[None, :] * np.sin(thetas)[:, None]).ravel()
    xs = centers[:, 0, None] + offx[None, :]
    ys = centers[:, 1, None] + offy[None, :]
    vals = bilinear_sample(img, xs, ys, fill=0.0)
    inside = (xs >= 0) & (xs <= w - 1) & (ys >= 0) & (ys <= h - 1)
    vals = np.where(inside, vals, 0.0).reshape(len(centers), n_theta, n_r)
    counts = inside.reshape(len(centers), n_theta, n_r).sum(axis=1)
    sums = vals.sum(axis=1)
    prof = np.zeros_like(sums)
    np.divide(sums, counts, out=prof, where=counts > 0)
    objectives = np.zeros(len(centers))
    for i in range(len(centers)):
        valid = counts[i] > 0
        if valid.sum() >= 2:
            objectives[i] = float(np.var(prof[i, valid]))
    return objectives


def find_center(frame: ScatterFrame, search_window: int = 40,
                coarse_step: int = 4) -> tuple[float, float, float]:
    """Locate the beam center by coarse-to-fine grid search.

    Scans a (2*search_window)^2 grid around the frame midpoint at
    coarse_step, refines at unit step in a +-4 px box, then applies a
    quarter-pixel quadratic fit. Returns (cx, cy, objective).
    """
    img = frame.intensities
    h, w = img.shape
    mx, my = frame.midpoint
    margin = search_window + 5
    if mx - margin < 0 or my - margin < 0 or mx + margin > w - 1 or my + margin > h - 1:
        raise ValueError(
            f"search window {search_window} does not fit inside the {w}x{h} frame"
        )
    if float(img.max() - img.min()) < 1e-12:
        raise NoRadialStructureError("constant frame has no radial structure")

    max_radius = min(w, h) / 2.0
    coarse_res = (64, 64)
    fine_res = (180, min(128, int(max_radius)))

    offsets = np.arange(-search_window, search_window + 1, coarse_step, dtype=float)
    gx, gy = np.meshgrid(mx + offsets, my + offsets)
    coarse = np.column_stack([gx.ravel(), gy.ravel()])
    obj = _profile_variance_batch(img, coarse, *coarse_res, max_radius)
    best = coarse[int(np.argmax(obj))]

    unit_off = np.arange(-4.0, 5.0)
    ux, uy = np.meshgrid(best[0] + unit_off, best[1] + unit_off)
    unit = np.column_stack([ux.ravel(), uy.ravel()])
    uobj = _profile_variance_batch(img, unit, *fine_res, max_radius)
    if float(uobj.max()) <= 1e-12:
        raise NoRadialStructureError("no radial structure in search window")
    k = int(np.argmax(uobj))
    grid9 = uobj.reshape(9, 9)
    iy, ix = divmod(k, 9)

    def parabolic(vm, v0, vp):
        denom = vm - 2 * v0 + vp
        if abs(denom) < 1e-18:
            return 0.0
        return float(np.clip(0.5 * (vm - vp) / denom, -0.5, 0.5))

    dx = parabolic(grid9[iy, ix - 1], grid9[iy, ix], grid9[iy, ix + 1]) if 0 < ix < 8 else 0.0
    dy = parabolic(grid9[iy - 1, ix], grid9[iy, ix], grid9[iy + 1, ix]) if 0 < iy < 8 else 0.0
    dx = round(dx * 4.0) / 4.0
    dy = round(dy * 4.0) / 4.0
    refined = np.array([[unit[k, 0] + dx, unit[k, 1] + dy]])
    robj = _profile_variance_batch(img, refined, *fine_res, max_radius)
    if robj[0] >= uobj[k]:
        return float(refined[0, 0]), float(refined[0, 1]), float(robj[0])
    return float(unit[k, 0]), float(unit[k, 1]), float(uobj[k])


# ---------------------------------------------------------------------------
# scores
# ---------------------------------------------------------------------------

def symmetry_score(polar: PolarImage) -> float:
    """Point-symmetry about the center via relative intensity differences.

    Pairs each angular row with the row 180 deg away and averages
    1 - |a - b| / (a + b + eps) over pairs where both samples are occupied.
    """
    n = polar.n_theta
    if n % 2 != 0:
        raise ValueError("symmetry_score needs an even number of angular bins")
    half = n // 2
    a = polar.grid[:half]
    b = polar.grid[half:]
    occ = polar.occupancy[:half] & polar.occupancy[half:]
    total_pairs = a.size
    if occ.sum() < 0.10 * total_pairs:
        raise InsufficientCoverageError(
            f"only {occ.sum()}/{total_pairs} symmetric pairs occupied"
        )
    rel = np.abs(a - b) / (a + b + EPS_SYMMETRY)
    return float(1.0 - rel[occ].mean())


def detect_rings(polar: PolarImage, prominence: float = RING_PROMINENCE) -> list[int]:
    """Radial bins of ridge maxima in the angular-mean profile."""
    prof, counts = polar.radial_profile()
    peaks, _ = signal.find_peaks(prof, prominence=prominence)
    return [int(p) for p in peaks if counts[p] > 0]


def _ring_bins(polar: PolarImage, ring_radii) -> list[int]:
    if ring_radii is not None:
        bins = [int(round(r / polar.delta_r)) for r in ring_radii]
        bins = [b for b in bins if 0 <= b < polar.n_r]
        if not bins:
            raise NoRingsError("provided ring radii fall outside the polar grid")
        return bins
    bins = detect_rings(polar)
    if not bins:
        raise NoRingsError("no ring with sufficient prominence detected")
    return bins


def continuity_score(polar: PolarImage, ring_radii=None) -> float:
    """Fraction of each ring's angular bins at or above half its median ridge
    intensity, averaged over rings. Broken arcs lower it in proportion to the
    missing angular extent."""
    bins = _ring_bins(polar, ring_radii)
    per_ring = []
    for b in bins:
        col = polar.grid[:, b]
        occ = polar.occupancy[:, b]
        if occ.sum() == 0:
            continue
        median = float(np.median(col[occ]))
        per_ring.append(float(np.mean(col[occ] >= 0.5 * median)))
    if not per_ring:
        raise NoRingsError("no occupied angular bins on any detected ring")
    return float(np.mean(per_ring))


def verticality_score(polar: PolarImage, ring_radii=None) -> float:
    """exp(-std/s0) of per-row ridge positions in a +-5-bin window per ring.

    A correctly centered ring has a constant ridge position; decentering or
    azimuthal misalignment spreads it.
    """
    bins = _ring_bins(polar, ring_radii)
    per_ring = []
    for b in bins:
        lo = max(b - 5, 0)
        hi = min(b + 6, polar.n_r)
        window = polar.grid[:, lo:hi]
        occ = polar.occupancy[:, lo:hi]
        masked = np.where(occ, window, -np.inf)
        # only rows where the ring bin itself is occupied carry ridge signal;
        # rows masked at the ring (gap crossings) would argmax over background
        rows = polar.occupancy[:, b]
        if rows.sum() < 2:
            continue
        ridge = np.argmax(masked[rows], axis=1).astype(float) + lo
        per_ring.append(float(np.exp(-np.std(ridge) / VERTICALITY_SCALE)))
    if not per_ring:
        raise NoRingsError("no occupied ridge window on any detected ring")
    return float(np.mean(per_ring))


# ---------------------------------------------------------------------------
# gap straightness
# ---------------------------------------------------------------------------

def _runs(flags: np.ndarray) -> list[tuple[int, int]]:
    idx = np.flatnonzero(flags)
    if idx.size == 0:
        return []
    splits = np.flatnonzero(np.diff(idx) > 1)
    starts = np.concatenate(([idx[0]], idx[splits + 1]))
    stops = np.concatenate((idx[splits] + 1, [idx[-1] + 1]))
    return list(zip(starts.tolist(), stops.tolist()))


def _centroid_rms(mask: np.ndarray, axis: int) -> float | None:
    """RMS residual of per-line centroids about a least-squares line.

    axis=0: vertical gap, centroid of x per row; axis=1: horizontal gap,
    centroid of y per column. Lines whose pixel count is an outlier (e.g.
    where the band crosses the beamstop) are dropped.
    """
    if axis == 1:
        mask = mask.T
    counts = mask.sum(axis=1)
    lines = np.flatnonzero(counts)
    if lines.size < 8:
        return None
    median_count = float(np.median(counts[lines]))
    keep = lines[counts[lines] <= 2.0 * median_count]
    if keep.size < 8:
        keep = lines
    pos = np.arange(mask.shape[1], dtype=float)
    centroids = (mask[keep] * pos).sum(axis=1) / counts[keep]
    t = keep.astype(float)
    coeffs = np.polyfit(t, centroids, 1)
    resid = centroids - np.polyval(coeffs, t)
    return float(np.sqrt(np.mean(resid**2)))


def _fit_cross(comp: np.ndarray) -> list[float]:
    """Fit a component that spans the frame both ways (crossing bands).

    Straight horizontal sub-bands (rows almost fully covered) are fitted
    and removed first; whatever remains is fitted as one band along its
    dominant direction, so a displaced band crossed by a straight one still
    shows its full waviness.
    """
    h, w = comp.shape
    out: list[float] = []
    rem = comp.copy()
    for start, stop in _runs(comp.sum(axis=1) >= 0.8 * w):
        band = np.zeros_like(comp)
        band[start:stop] = comp[start:stop]
        rms = _centroid_rms(band, axis=1)
        if rms is not None:
            out.append(rms)
        rem[start:stop] = False
    ys, xs = np.nonzero(rem)
    if ys.size:
        v_span = (int(np.ptp(ys)) + 1) / h
        h_span = (int(np.ptp(xs)) + 1) / w
        if max(v_span, h_span) >= 0.6:
            rms = _centroid_rms(rem, axis=0 if v_span >= h_span else 1)
            if rms is not None:
                out.append(rms)
    return out


def gap_straightness(frame: ScatterFrame, zero_thresh: float = 0.015,
                     span_frac: float = 0.8) -> float:
    """Score how straight the detected detector gaps are.

    Gap candidates are connected near-zero components crossing at least
    span_frac of the frame in one direction; each contributes
    exp(-RMS residual of its centerline / 1.5 px). The beamstop never spans
    the frame, so it is ignored automatically. A frame with no detected
    gaps scores 1.0, since missing gaps are acceptable.
    """
    img = frame.intensities
    h, w = img.shape
    near = img <= zero_thresh
    labels, n = ndimage.label(near, structure=np.ones((3, 3), dtype=int))
    rms_list: list[float] = []
    for lab in range(1, n + 1):
        comp = labels == lab
        ys, xs = np.nonzero(comp)
        spans_v = (int(np.ptp(ys)) + 1) / h >= span_frac
        spans_h = (int(np.ptp(xs)) + 1) / w >= span_frac
        if spans_v and spans_h:
            rms_list.extend(_fit_cross(comp))
        elif spans_v:
            rms = _centroid_rms(comp, axis=0)
            if rms is not None:
                rms_list.append(rms)
        elif spans_h:
            rms = _centroid_rms(comp, axis=1)
            if rms is not None:
                rms_list.append(rms)
    if not rms_list:
        return 1.0
    return float(np.mean(np.exp(-np.asarray(rms_list) / GAP_RESIDUAL_SCALE)))


# ---------------------------------------------------------------------------
# composite report
# ---------------------------------------------------------------------------

def realism_report(frame: ScatterFrame,
                   weights: tuple[float, float, float, float] = DEFAULT_WEIGHTS,
                   thresholds: dict[str, float] | None = None,
                   center: tuple[float, float] | None = None,
                   search_window: int = 40, coarse_step: int = 4) -> RealismReport:
    """Run center search, polar warp, and all four scores on one frame.

    weights apply to (symmetry, continuity, gap_straightness, verticality)
    and must be nonnegative, summing to 1. A failing sub-score is recorded
    as 0 and flagged instead of aborting; pass center= to skip the grid
    search when the true center is known.
    """
    weights = tuple(float(x) for x in weights)
    if len(weights) != 4 or min(weights) < 0 or abs(sum(weights) - 1.0) > 1e-9:
        raise ValueError("weights must be 4 nonnegative values summing to 1")
    thresholds = dict(DEFAULT_THRESHOLDS if thresholds is None else thresholds)

    flags: list[str] = []
    if center is None:
        try:
            cx, cy, _ = find_center(frame, search_window, coarse_step)
            center = (cx, cy)
        except (NoRadialStructureError, ValueError):
            center = frame.midpoint
            flags.append("center")

    scores = {}
    try:
        polar = warp_polar(frame, center)
    except ValueError:
        polar = None
    if polar is None:
        scores["symmetry"] = 0.0
        scores["continuity"] = 0.0
        scores["verticality"] = 0.0
    else:
        try:
            scores["symmetry"] = symmetry_score(polar)
        except (InsufficientCoverageError, ValueError):
            scores["symmetry"] = 0.0
        try:
            bins = _ring_bins(polar, None)
        except NoRingsError:
            bins = None
        if bins is None:
            scores["continuity"] = 0.0
            scores["verticality"] = 0.0
        else:
            radii = [b * polar.delta_r for b in bins]
            try:
                scores["continuity"] = continuity_score(polar, radii)
            except (NoRingsError, ValueError):
                scores["continuity"] = 0.0
            try:
                scores["verticality"] = verticality_score(polar, radii)
            except (NoRingsError, ValueError):
                scores["verticality"] = 0.0
    scores["gap_straightness"] = gap_straightness(frame)

    order = ("symmetry", "continuity", "gap_straightness", "verticality")
    composite = float(sum(w * scores[name] for w, name in zip(weights, order)))
    for name in order:
        if scores[name] < thresholds.get(name, 0.0):
            flags.append(name)

    return RealismReport(
        symmetry=scores["symmetry"], continuity=scores["continuity"],
        gap_straightness=scores["gap_straightness"], verticality=scores["verticality"],
        composite=composite, center=(float(center[0]), float(center[1])), flags=flags,
    )
