"""Domain data model: multichannel recordings, labeled segments, datasets.

Covers dataset ingestion from a CSV directory layout, synthetic dataset
generation for desk-scale benchmarks, and non-overlapping segmentation.

On-disk layout
--------------
A dataset directory holds one `<class>_<trial>.csv` file per recording
(rows = time samples, columns = channels, plain decimal text) plus a
`manifest.yaml` with keys `sampling_rate_hz`, `num_channels`, `window_ms`.
`save_dataset` writes exactly this layout (one file per segment, plus an
`index.csv`), so a saved dataset round-trips through `load_dataset`.
"""
from __future__ import annotations

import csv
import math
import re
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import yaml

from .errors import ConfigurationError, DataError
from .util import rng_for

_RECORDING_FILE_RE = re.compile(r"^(\d+)_(\d+)\.csv$")

MANIFEST_NAME = "manifest.yaml"
INDEX_NAME = "index.csv"
DEFAULT_WINDOW_MS = 500.0
DEFAULT_NUM_CHANNELS = 8


def _freeze(arr: np.ndarray) -> np.ndarray:
    """Return a float64 array marked read-only (types are immutable by contract)."""
    out = np.asarray(arr, dtype=np.float64)
    out.flags.writeable = False
    return out


@dataclass(frozen=True)
class MultiChannelRecording:
    """Raw signal matrix: rows are time samples, columns are channels."""

    samples: np.ndarray
    sampling_rate_hz: float
    subject_id: str = ""
    class_label: int | None = None

    def __post_init__(self):
        samples = np.asarray(self.samples, dtype=np.float64)
        if samples.ndim != 2 or samples.shape[0] < 1 or samples.shape[1] < 1:
            raise DataError("recording needs at least 1 sample and 1 channel")
        if not np.isfinite(samples).all():
            raise DataError("recording contains non-finite values")
        if not self.sampling_rate_hz > 0:
            raise DataError("sampling_rate_hz must be positive")
        object.__setattr__(self, "samples", _freeze(samples))

    @property
    def num_channels(self) -> int:
        return self.samples.shape[1]

    @property
    def num_samples(self) -> int:
        return self.samples.shape[0]


@dataclass(frozen=True)
class SegmentContamination:
    """Ground truth of an injection: which channels were hit, how, and how hard."""

    mask: np.ndarray                      # bool, length L
    kinds: tuple                          # str or None per channel
    target_snr_db: float
    achieved_snr_db: tuple                # float or None per channel
    unreachable: tuple                    # bool per channel (target not attainable)

    def __post_init__(self):
        mask = np.asarray(self.mask, dtype=bool)
        mask.flags.writeable = False
        object.__setattr__(self, "mask", mask)
        n = len(mask)
        if not (len(self.kinds) == len(self.achieved_snr_db) == len(self.unreachable) == n):
            raise DataError("contamination record fields must all have length L")


@dataclass(frozen=True)
class Segment:
    """One fixed-length window: L equal-length channel vectors plus a label."""

    data: np.ndarray                      # shape (L, window_samples)
    label: int
    contamination: SegmentContamination | None = None

    def __post_init__(self):
        data = np.asarray(self.data, dtype=np.float64)
        if data.ndim != 2 or data.shape[0] < 1 or data.shape[1] < 1:
            raise DataError("segment data must be a (channels, samples) matrix")
        if not np.isfinite(data).all():
            raise DataError("segment contains non-finite values")
        if self.contamination is not None and len(self.contamination.mask) != data.shape[0]:
            raise DataError("contamination mask length must equal channel count")
        object.__setattr__(self, "data", _freeze(data))

    @property
    def num_channels(self) -> int:
        return self.data.shape[0]

    @property
    def num_samples(self) -> int:
        return self.data.shape[1]


@dataclass(frozen=True)
class SegmentDataset:
    """Labeled segments with shared geometry (L channels, one window length)."""

    segments: tuple
    num_classes: int
    num_channels: int
    sampling_rate_hz: float

    def __post_init__(self):
        segments = tuple(self.segments)
        object.__setattr__(self, "segments", segments)
        if self.num_classes < 1 or self.num_channels < 1 or not self.sampling_rate_hz > 0:
            raise DataError("dataset header fields must be positive")
        if not segments:
            raise DataError("dataset has no segments")
        lengths = {s.num_samples for s in segments}
        if len(lengths) != 1:
            raise DataError("all segments must share one window length")
        seen = set()
        for s in segments:
            if s.num_channels != self.num_channels:
                raise DataError("segment channel count differs from dataset header")
            if not 1 <= s.label <= self.num_classes:
                raise DataError(f"label {s.label} outside 1..{self.num_classes}")
            seen.add(s.label)
        if seen != set(range(1, self.num_classes + 1)):
            missing = sorted(set(range(1, self.num_classes + 1)) - seen)
            raise DataError(f"classes with no segments: {missing}")

    def __len__(self) -> int:
        return len(self.segments)

    @property
    def window_samples(self) -> int:
        return self.segments[0].num_samples

    @property
    def labels(self) -> np.ndarray:
        return np.array([s.label for s in self.segments], dtype=np.int64)

    def subset(self, indices) -> "SegmentDataset":
        """Dataset restricted to `indices`; requires every class to survive."""
        return SegmentDataset(
            segments=tuple(self.segments[i] for i in indices),
            num_classes=self.num_classes,
            num_channels=self.num_channels,
            sampling_rate_hz=self.sampling_rate_hz,
        )


def window_samples_for(window_ms: float, sampling_rate_hz: float) -> int:
    return int(round(window_ms * sampling_rate_hz / 1000.0))


def segment(recording: MultiChannelRecording, window_ms: float) -> list:
    """Cut a recording into non-overlapping windows; the remainder is dropped.

    Windows inherit the recording label. A recording shorter than one window
    is a data error, as is a window of fewer than 8 samples.
    """
    win = window_samples_for(window_ms, recording.sampling_rate_hz)
    if win < 8:
        raise DataError(f"window of {win} samples is below the 8-sample minimum")
    n = recording.num_samples
    if n < win:
        raise DataError(f"recording has {n} samples, shorter than one {win}-sample window")
    count = n // win
    label = recording.class_label if recording.class_label is not None else 0
    out = []
    for i in range(count):
        block = recording.samples[i * win:(i + 1) * win, :].T
        out.append(Segment(data=block, label=label))
    return out


# ---------------------------------------------------------------------------
# Disk ingestion
# ---------------------------------------------------------------------------

def _read_manifest(path: Path) -> dict:
    if not path.is_file():
        raise ConfigurationError(f"manifest not found: {path}")
    with open(path, "r", encoding="utf-8") as fh:
        raw = yaml.safe_load(fh)
    if not isinstance(raw, dict):
        raise ConfigurationError(f"manifest {path} must be a key-value mapping")
    required = ("sampling_rate_hz", "num_channels", "window_ms")
    missing = [k for k in required if k not in raw]
    if missing:
        raise ConfigurationError(f"manifest {path} missing keys: {missing}")
    return raw


def _read_signal_csv(path: Path, num_channels: int) -> np.ndarray:
    """Parse one recording file; errors name the file and 1-based line."""
    rows = []
    with open(path, "r", encoding="utf-8", newline="") as fh:
        for lineno, row in enumerate(csv.reader(fh), start=1):
            if not row or (len(row) == 1 and not row[0].strip()):
                continue  # skip blank lines
            if len(row) < num_channels:
                raise DataError(
                    f"{path}:{lineno}: {len(row)} columns, manifest requires {num_channels}")
            try:
                values = [float(v) for v in row[:num_channels]]
            except ValueError as exc:
                raise DataError(f"{path}:{lineno}: {exc}") from None
            if not all(math.isfinite(v) for v in values):
                raise DataError(f"{path}:{lineno}: non-finite value")
            if rows and len(values) != len(rows[0]):
                raise DataError(f"{path}:{lineno}: ragged row")
            rows.append(values)
    if not rows:
        raise DataError(f"{path}: empty signal file")
    return np.array(rows, dtype=np.float64)


def load_dataset(root_path, manifest=None) -> SegmentDataset:
    """Load `<class>_<trial>.csv` recordings below `root_path` and segment them.

    `manifest` may be a mapping or a path; by default `root_path/manifest.yaml`
    is read. Only the first `num_channels` columns of each file are used, and
    the output ordering is canonical: sorted by (class, trial, window index).
    """
    root = Path(root_path)
    if isinstance(manifest, dict):
        mf = dict(manifest)
        for key in ("sampling_rate_hz", "num_channels", "window_ms"):
            if key not in mf:
                raise ConfigurationError(f"manifest mapping missing key: {key}")
    else:
        mf = _read_manifest(Path(manifest) if manifest is not None else root / MANIFEST_NAME)
    fs = float(mf["sampling_rate_hz"])
    num_channels = int(mf["num_channels"])
    window_ms = float(mf["window_ms"])
    if fs <= 0 or num_channels < 1 or window_ms <= 0:
        raise ConfigurationError("manifest values must be positive")

    entries = []
    for path in root.iterdir() if root.is_dir() else ():
        m = _RECORDING_FILE_RE.match(path.name)
        if m:
            entries.append((int(m.group(1)), int(m.group(2)), path))
    if not entries:
        raise DataError(f"no <class>_<trial>.csv recordings found in {root}")
    entries.sort()

    segments = []
    classes = sorted({cls for cls, _, _ in entries})
    if len(classes) < 2:
        raise DataError(f"{root}: found {len(classes)} class(es), need at least 2")
    if classes != list(range(1, len(classes) + 1)):
        raise DataError(f"{root}: class labels must be 1..M, got {classes}")
    for cls, trial, path in entries:
        samples = _read_signal_csv(path, num_channels)
        rec = MultiChannelRecording(
            samples=samples, sampling_rate_hz=fs,
            subject_id=root.name, class_label=cls)
        segments.extend(segment(rec, window_ms))
    return SegmentDataset(
        segments=tuple(segments),
        num_classes=len(classes),
        num_channels=num_channels,
        sampling_rate_hz=fs,
    )


def save_dataset(ds: SegmentDataset, out_dir) -> Path:
    """Write the canonical dump: manifest + index + one CSV per segment.

    Each segment becomes `<class>_<trial>.csv` (trial numbered within its
    class), so the dump reloads bit-identically through `load_dataset`.
    """
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    window_ms = ds.window_samples * 1000.0 / ds.sampling_rate_hz
    manifest = {
        "sampling_rate_hz": float(ds.sampling_rate_hz),
        "num_channels": int(ds.num_channels),
        "window_ms": float(window_ms),
    }
    with open(out / MANIFEST_NAME, "w", encoding="utf-8") as fh:
        yaml.safe_dump(manifest, fh, sort_keys=True)

    counters: dict = {}
    index_rows = []
    for seg_id, seg in enumerate(ds.segments):
        counters[seg.label] = counters.get(seg.label, 0) + 1
        name = f"{seg.label}_{counters[seg.label]}.csv"
        with open(out / name, "w", encoding="utf-8", newline="") as fh:
            writer = csv.writer(fh, lineterminator="\n")
            for row in seg.data.T:
                writer.writerow([repr(float(v)) for v in row])
        index_rows.append((seg_id, seg.label, name))
    with open(out / INDEX_NAME, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["segment_id", "class_label", "file"])
        writer.writerows(index_rows)
    return out


# ---------------------------------------------------------------------------
# Synthetic benchmark data
# ---------------------------------------------------------------------------

def default_band_centers(num_classes: int, num_channels: int,
                         sampling_rate_hz: float) -> tuple:
    """Per-class, per-channel tone frequencies spread across the dyadic bands.

    Class j sits around 0.8 * nyquist / 2**(M - j), with a mild linear spread
    across channels, so class identity shows up as energy in distinct
    wavelet scales on every channel.
    """
    nyq = sampling_rate_hz / 2.0
    if num_channels > 1:
        factors = np.linspace(0.9, 1.1, num_channels)
    else:
        factors = np.array([1.0])
    centers = []
    for j in range(1, num_classes + 1):
        base = 0.8 * nyq / 2 ** (num_classes - j)
        centers.append(tuple(float(base * f) for f in factors))
    return tuple(centers)


@dataclass(frozen=True)
class SyntheticSpec:
    """Recipe for a seeded synthetic dataset with wavelet-separable classes."""

    num_classes: int
    num_channels: int
    segments_per_class: int
    segment_length: int
    sampling_rate_hz: float
    class_band_centers_hz: tuple | None = None
    amplitude_jitter: float = 0.1
    seed: int = 0
    texture_std_ratio: float = field(default=0.05)

    def __post_init__(self):
        if self.num_classes < 2:
            raise ConfigurationError("need at least 2 classes")
        if self.num_channels < 1:
            raise ConfigurationError("need at least 1 channel")
        if self.segments_per_class < 10:
            raise ConfigurationError("need at least 10 segments per class")
        if self.segment_length < 8 or not self.sampling_rate_hz > 0:
            raise ConfigurationError("segment_length/sampling rate out of range")
        centers = self.class_band_centers_hz
        if centers is None:
            centers = default_band_centers(
                self.num_classes, self.num_channels, self.sampling_rate_hz)
        centers = tuple(tuple(float(f) for f in row) for row in centers)
        if len(centers) != self.num_classes or any(
                len(row) != self.num_channels for row in centers):
            raise ConfigurationError("band centers must be M rows of L frequencies")
        nyq = self.sampling_rate_hz / 2.0
        if any(not 0 < f < nyq for row in centers for f in row):
            raise ConfigurationError(f"band centers must lie in (0, {nyq}) Hz")
        object.__setattr__(self, "class_band_centers_hz", centers)


def generate_synthetic(spec: SyntheticSpec) -> SegmentDataset:
    """Seeded dataset: per-channel class tones with random phase plus texture.

    Channel l of a class-j segment is `a*sin(2*pi*f[j][l]*t + phi)` with a
    per-segment amplitude jitter and white Gaussian texture of std
    `texture_std_ratio * a`. Identical specs (same seed) are bit-identical.
    """
    t = np.arange(spec.segment_length) / spec.sampling_rate_hz
    segments = []
    for cls in range(1, spec.num_classes + 1):
        freqs = np.array(spec.class_band_centers_hz[cls - 1])
        for i in range(spec.segments_per_class):
            rng = rng_for(spec.seed, cls, i)
            phases = rng.uniform(0.0, 2.0 * np.pi, size=spec.num_channels)
            amps = 1.0 + spec.amplitude_jitter * rng.standard_normal(spec.num_channels)
            amps = np.clip(amps, 0.1, None)
            texture = rng.standard_normal((spec.num_channels, spec.segment_length))
            data = (amps[:, None] * np.sin(2.0 * np.pi * freqs[:, None] * t[None, :]
                                           + phases[:, None])
                    + spec.texture_std_ratio * amps[:, None] * texture)
            segments.append(Segment(data=data, label=cls))
    return SegmentDataset(
        segments=tuple(segments),
        num_classes=spec.num_classes,
        num_channels=spec.num_channels,
        sampling_rate_hz=spec.sampling_rate_hz,
    )
