"""Core image and dataset types shared by every stage of the pipeline.

A detector frame is stored as a normalized float array in [0, 1] together
with an optional boolean gap mask (True marks a dead detector-gap pixel).
Interchange on disk is single-channel 8- or 16-bit PNG; dataset manifests
and label stores are JSONL.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from datetime import datetime, timezone
from enum import Enum
from pathlib import Path
from typing import Iterable, Iterator, Sequence

import numpy as np
from PIL import Image

MIN_SIDE = 32

#: Fixed instant used for reproducible label stores (oracle/simulated labels).
EPOCH = datetime(2000, 1, 1, tzinfo=timezone.utc)


class FrameError(ValueError):
    """Invalid frame contents or unsupported image file."""


class LabelConflictError(ValueError):
    """A second human verdict for the same (image, round)."""


class PatternClass(str, Enum):
    RINGS = "rings"
    PEAKS = "peaks"
    BACKGROUND = "background"


class Origin(str, Enum):
    EXPERIMENTAL = "experimental"
    GENERATED = "generated"


class Verdict(str, Enum):
    REALISTIC = "realistic"
    FAKE = "fake"


class LabelSource(str, Enum):
    HUMAN = "human"
    MODEL = "model"


@dataclass(frozen=True)
class ScatterFrame:
    """Normalized grayscale detector frame.

    intensities: (height, width) float64 in [0, 1], row-major.
    gap_mask: optional (height, width) bool, True = detector gap pixel.
    """

    id: str
    intensities: np.ndarray
    gap_mask: np.ndarray | None = None

    def __post_init__(self):
        inten = np.array(self.intensities, dtype=np.float64)
        if inten.ndim != 2:
            raise FrameError(f"intensities must be 2-D, got shape {inten.shape}")
        h, w = inten.shape
        if h < MIN_SIDE or w < MIN_SIDE:
            raise FrameError(f"frame {w}x{h} below minimum {MIN_SIDE}x{MIN_SIDE}")
        if not np.isfinite(inten).all():
            raise FrameError("intensities contain NaN/Inf")
        if inten.min() < 0.0 or inten.max() > 1.0:
            raise FrameError("intensities outside [0, 1]")
        inten.setflags(write=False)
        object.__setattr__(self, "intensities", inten)
        if self.gap_mask is not None:
            gm = np.array(self.gap_mask, dtype=bool)
            if gm.shape != inten.shape:
                raise FrameError("gap_mask shape differs from intensities")
            gm.setflags(write=False)
            object.__setattr__(self, "gap_mask", gm)

    @property
    def height(self) -> int:
        return self.intensities.shape[0]

    @property
    def width(self) -> int:
        return self.intensities.shape[1]

    @property
    def midpoint(self) -> tuple[float, float]:
        """(cx, cy) geometric midpoint in pixel coordinates."""
        return ((self.width - 1) / 2.0, (self.height - 1) / 2.0)


@dataclass(frozen=True)
class ManifestEntry:
    path: str
    origin: Origin
    pattern: PatternClass
    caption: str | None = None

    def to_json(self) -> dict:
        return {
            "path": self.path,
            "origin": self.origin.value,
            "pattern": self.pattern.value,
            "caption": self.caption,
        }

    @staticmethod
    def from_json(obj: dict) -> "ManifestEntry":
        return ManifestEntry(
            path=obj["path"],
            origin=Origin(obj["origin"]),
            pattern=PatternClass(obj["pattern"]),
            caption=obj.get("caption"),
        )

    @property
    def image_id(self) -> str:
        return Path(self.path).stem


@dataclass
class DatasetManifest:
    entries: list[ManifestEntry] = field(default_factory=list)

    def __post_init__(self):
        paths = [e.path for e in self.entries]
        if len(set(paths)) != len(paths):
            raise FrameError("manifest paths are not unique")

    def save(self, path: str | Path) -> None:
        write_jsonl(path, (e.to_json() for e in self.entries))

    @staticmethod
    def load(path: str | Path) -> "DatasetManifest":
        return DatasetManifest([ManifestEntry.from_json(o) for o in read_jsonl(path)])

    def by_origin(self, origin: Origin) -> list[ManifestEntry]:
        return [e for e in self.entries if e.origin is origin]

    def __len__(self) -> int:
        return len(self.entries)


@dataclass(frozen=True)
class LabelRecord:
    image_id: str
    verdict: Verdict
    source: LabelSource
    round: int
    annotator: str
    timestamp: datetime

    def __post_init__(self):
        if self.round < 0:
            raise ValueError("round must be non-negative")
        if self.timestamp.tzinfo is None:
            raise ValueError("timestamp must be timezone-aware (UTC)")

    def to_json(self) -> dict:
        return {
            "image_id": self.image_id,
            "verdict": self.verdict.value,
            "source": self.source.value,
            "round": self.round,
            "annotator": self.annotator,
            "timestamp": self.timestamp.astimezone(timezone.utc).isoformat(),
        }

    @staticmethod
    def from_json(obj: dict) -> "LabelRecord":
        return LabelRecord(
            image_id=obj["image_id"],
            verdict=Verdict(obj["verdict"]),
            source=LabelSource(obj["source"]),
            round=int(obj["round"]),
            annotator=obj["annotator"],
            timestamp=datetime.fromisoformat(obj["timestamp"]),
        )


class LabelStore:
    """Append-only JSONL store of LabelRecords with provenance.

    Human verdicts override model verdicts at the same round; later rounds
    override earlier ones. Nothing is ever rewritten in place.
    """

    def __init__(self, path: str | Path):
        self.path = Path(path)
        self._records: list[LabelRecord] = []
        if self.path.exists():
            self._records = [LabelRecord.from_json(o) for o in read_jsonl(self.path)]

    def __len__(self) -> int:
        return len(self._records)

    @property
    def records(self) -> list[LabelRecord]:
        return list(self._records)

    def append(self, record: LabelRecord) -> None:
        if record.source is LabelSource.HUMAN:
            for r in self._records:
                if (
                    r.image_id == record.image_id
                    and r.round == record.round
                    and r.source is LabelSource.HUMAN
                ):
                    raise LabelConflictError(
                        f"human verdict already stored for {record.image_id} round {record.round}"
                    )
        self.path.parent.mkdir(parents=True, exist_ok=True)
        with open(self.path, "a", encoding="utf-8") as fh:
            fh.write(json.dumps(record.to_json()) + "\n")
        self._records.append(record)

    def extend(self, records: Iterable[LabelRecord]) -> None:
        for r in records:
            self.append(r)

    def effective_verdicts(self) -> dict[str, LabelRecord]:
        """Latest-wins verdict per image; human beats model at equal round."""
        best: dict[str, tuple[tuple[int, int, int], LabelRecord]] = {}
        for i, r in enumerate(self._records):
            key = (r.round, 1 if r.source is LabelSource.HUMAN else 0, i)
            if r.image_id not in best or key > best[r.image_id][0]:
                best[r.image_id] = (key, r)
        return {img: rec for img, (_, rec) in best.items()}

    def human_verdicts(self) -> dict[str, LabelRecord]:
        """Latest human verdict per image."""
        best: dict[str, tuple[tuple[int, int], LabelRecord]] = {}
        for i, r in enumerate(self._records):
            if r.source is not LabelSource.HUMAN:
                continue
            key = (r.round, i)
            if r.image_id not in best or key > best[r.image_id][0]:
                best[r.image_id] = (key, r)
        return {img: rec for img, (_, rec) in best.items()}


@dataclass(frozen=True)
class FeatureVector:
    """Fixed-length finite feature values plus the extractor that made them."""

    values: np.ndarray
    extractor_id: str

    def __post_init__(self):
        vals = np.array(self.values, dtype=np.float64).ravel()
        if not np.isfinite(vals).all():
            raise ValueError("feature values contain NaN/Inf")
        vals.setflags(write=False)
        object.__setattr__(self, "values", vals)

    def __len__(self) -> int:
        return self.values.shape[0]


@dataclass(frozen=True)
class ProbabilityVector:
    p_realistic: float
    p_fake: float

    def __post_init__(self):
        for p in (self.p_realistic, self.p_fake):
            if not np.isfinite(p) or p < -1e-9 or p > 1 + 1e-9:
                raise ValueError(f"probability {p} outside [0, 1]")
        if abs(self.p_realistic + self.p_fake - 1.0) > 1e-6:
            raise ValueError(
                f"probabilities must sum to 1, got {self.p_realistic + self.p_fake}"
            )

    @staticmethod
    def from_p_realistic(p: float) -> "ProbabilityVector":
        p = float(min(max(p, 0.0), 1.0))
        return ProbabilityVector(p, 1.0 - p)


# ---------------------------------------------------------------------------
# PNG I/O
# ---------------------------------------------------------------------------

def load_frame(path: str | Path) -> ScatterFrame:
    """Load a single-channel 8- or 16-bit PNG as a normalized frame.

    Intensities are mapped to [0, 1] by dividing by the bit-depth maximum;
    the frame id is the filename stem. Color or palette images are rejected.
    """
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(path)
    with Image.open(path) as img:
        img.load()
        mode = img.mode
        arr = np.asarray(img)
    if mode == "L":
        scale = 255.0
    elif mode in ("I;16", "I"):
        if arr.max(initial=0) > 65535:
            raise FrameError(f"{path.name}: integer image exceeds 16-bit range")
        scale = 65535.0
    else:
        raise FrameError(f"{path.name}: unsupported mode {mode!r}; expected 8/16-bit grayscale")
    return ScatterFrame(id=path.stem, intensities=arr.astype(np.float64) / scale)


def save_frame(frame: ScatterFrame, path: str | Path, bit_depth: int = 16) -> None:
    """Write a frame as single-channel PNG at the given bit depth (8 or 16).

    Round-trip error is bounded by the quantization step 1/(2**bit_depth - 1).
    """
    if bit_depth not in (8, 16):
        raise ValueError(f"bit_depth must be 8 or 16, got {bit_depth}")
    scale = float(2**bit_depth - 1)
    quant = np.round(frame.intensities * scale)
    if bit_depth == 8:
        img = Image.fromarray(quant.astype(np.uint8))
    else:
        img = Image.fromarray(quant.astype(np.uint16))
    img.save(Path(path), format="PNG")


def log_scale(frame: ScatterFrame, k: float = 1000.0) -> ScatterFrame:
    """Monotone log remap v -> log(1 + k*v)/log(1 + k), endpoint-preserving.

    Scattering intensities span decades; this is the standard display
    compression. Output stays in [0, 1] for any k > 0.
    """
    if k <= 0:
        raise ValueError("contrast constant k must be positive")
    mapped = np.log1p(k * frame.intensities) / np.log1p(k)
    return ScatterFrame(id=frame.id, intensities=np.clip(mapped, 0.0, 1.0),
                        gap_mask=frame.gap_mask)


# ---------------------------------------------------------------------------
# JSONL helpers
# ---------------------------------------------------------------------------

def read_jsonl(path: str | Path) -> Iterator[dict]:
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if line:
                yield json.loads(line)


def write_jsonl(path: str | Path, objects: Iterable[dict]) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8") as fh:
        for obj in objects:
            fh.write(json.dumps(obj) + "\n")
