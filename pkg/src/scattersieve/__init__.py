"""Realism scoring, ensemble gating, and human-in-the-loop curation for
generated X-ray scattering images."""

from .frames import (
    DatasetManifest,
    FeatureVector,
    FrameError,
    LabelRecord,
    LabelSource,
    LabelStore,
    ManifestEntry,
    Origin,
    PatternClass,
    ProbabilityVector,
    ScatterFrame,
    Verdict,
    load_frame,
    log_scale,
    save_frame,
)
from .physics import (
    PolarImage,
    RealismReport,
    continuity_score,
    find_center,
    gap_straightness,
    realism_report,
    symmetry_score,
    verticality_score,
    warp_polar,
)
from .synth import (
    CorpusConfig,
    CorruptionKind,
    CorruptionSpec,
    GapBand,
    PatternCounts,
    PeakSpec,
    RingSpec,
    corrupt,
    generate_background,
    generate_corpus,
    generate_peaks,
    generate_rings,
)

__version__ = "0.1.0"
