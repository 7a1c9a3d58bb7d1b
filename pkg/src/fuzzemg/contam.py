"""SNR-controlled contamination of segment channels.

Five contaminant families: power-grid sinusoid (48-52 Hz), low-frequency
baseline wander (0.5-1.5 Hz), white Gaussian noise, multiplicative
attenuation (sensor losing skin contact), and amplitude clipping.

One `snr_db` knob controls all five: for additive kinds the injected
component's mean-square power is set to `P_signal / 10**(snr/10)`; for
attenuation and clipping the *distortion* (input minus output) is driven to
that same power, so achieved SNR is comparable across kinds. Powers are
measured on the actual window, which keeps sub-hertz baseline wander
calibrated even when the window covers a fraction of a period.
"""
from __future__ import annotations

import csv
import math
import warnings
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .core import Segment, SegmentContamination, SegmentDataset
from .errors import ConfigurationError, DataError, DegenerateSignalError
from .util import child_seed, rng_for

NOISE_KIND_TAGS = ("powerline", "attenuation", "gaussian", "clipping", "baseline")
POWERLINE_FREQ_RANGE_HZ = (48.0, 52.0)
BASELINE_FREQ_RANGE_HZ = (0.5, 1.5)
DEFAULT_SNR_GRID_DB = (0.0, 1.0, 2.0, 3.0, 4.0, 5.0, 6.0, 10.0, 12.0)

CLIPPING_TOLERANCE_DB = 0.1


@dataclass(frozen=True)
class NoiseKind:
    """A contaminant family plus its parameter record."""

    tag: str
    params: dict

    def __post_init__(self):
        if self.tag not in NOISE_KIND_TAGS:
            raise ConfigurationError(f"unknown noise kind {self.tag!r}")
        if self.tag == "powerline":
            lo, hi = self.params.get("freq_range_hz", POWERLINE_FREQ_RANGE_HZ)
            if not (48.0 <= lo <= hi <= 52.0):
                raise ConfigurationError("powerline frequency must stay within [48, 52] Hz")
        if self.tag == "baseline":
            lo, hi = self.params.get("freq_range_hz", BASELINE_FREQ_RANGE_HZ)
            if not (0.5 <= lo <= hi <= 1.5):
                raise ConfigurationError("baseline frequency must stay within [0.5, 1.5] Hz")


@dataclass(frozen=True)
class ContaminationPlan:
    """How to contaminate a dataset: target SNR plus the master seed."""

    snr_db: float
    seed: int
    snr_grid_db: tuple = DEFAULT_SNR_GRID_DB

    def __post_init__(self):
        if float(self.snr_db) not in {float(v) for v in self.snr_grid_db}:
            warnings.warn(
                f"snr_db={self.snr_db} outside the configured grid {self.snr_grid_db}",
                stacklevel=2)


def signal_power(x: np.ndarray) -> float:
    """Mean squared amplitude."""
    x = np.asarray(x, dtype=np.float64)
    return float(np.mean(np.square(x)))


def noise_power_for_snr(x, snr_db: float) -> float:
    """Power the contaminant must carry to hit `snr_db` against signal `x`."""
    x = np.asarray(x, dtype=np.float64)
    if x.size == 0 or not np.isfinite(x).all():
        raise DataError("signal must be non-empty and finite")
    p_s = signal_power(x)
    if p_s == 0.0:
        raise DegenerateSignalError("SNR undefined for an all-zero signal")
    return p_s / 10.0 ** (snr_db / 10.0)


def measured_snr_db(clean, dirty) -> float:
    """Achieved SNR: clean power over the power of (dirty - clean)."""
    clean = np.asarray(clean, dtype=np.float64)
    dirty = np.asarray(dirty, dtype=np.float64)
    p_d = signal_power(dirty - clean)
    if p_d == 0.0:
        return math.inf
    return 10.0 * math.log10(signal_power(clean) / p_d)


def _add_calibrated_sine(x, snr_db, fs_hz, freq_range, seed):
    """Add a sinusoid whose in-window mean square equals the target power."""
    x = np.asarray(x, dtype=np.float64)
    p_n = noise_power_for_snr(x, snr_db)
    rng = rng_for(seed)
    freq = rng.uniform(freq_range[0], freq_range[1])
    phase = rng.uniform(0.0, 2.0 * np.pi)
    t = np.arange(x.size) / fs_hz
    unit = np.sin(2.0 * np.pi * freq * t + phase)
    ms = np.mean(np.square(unit))
    if ms < 1e-12:
        # window too short to carry this tone; only possible far off contract
        raise DegenerateSignalError("sinusoid carries no power in this window")
    return x + math.sqrt(p_n / ms) * unit


def inject_powerline(x, snr_db: float, fs_hz: float, seed) -> np.ndarray:
    """Add a power-grid tone, frequency uniform in [48, 52] Hz, random phase."""
    if fs_hz <= 2.0 * POWERLINE_FREQ_RANGE_HZ[1]:
        raise ConfigurationError(
            f"sampling rate {fs_hz} Hz aliases a {POWERLINE_FREQ_RANGE_HZ[1]} Hz tone")
    return _add_calibrated_sine(x, snr_db, fs_hz, POWERLINE_FREQ_RANGE_HZ, seed)


def inject_baseline(x, snr_db: float, fs_hz: float, seed) -> np.ndarray:
    """Add baseline wander: a tone with frequency uniform in [0.5, 1.5] Hz."""
    if fs_hz <= 2.0 * BASELINE_FREQ_RANGE_HZ[1]:
        raise ConfigurationError(
            f"sampling rate {fs_hz} Hz aliases a {BASELINE_FREQ_RANGE_HZ[1]} Hz tone")
    return _add_calibrated_sine(x, snr_db, fs_hz, BASELINE_FREQ_RANGE_HZ, seed)


def inject_gaussian(x, snr_db: float, seed) -> np.ndarray:
    """Add zero-mean white Gaussian noise at the target power."""
    x = np.asarray(x, dtype=np.float64)
    p_n = noise_power_for_snr(x, snr_db)
    rng = rng_for(seed)
    return x + math.sqrt(p_n) * rng.standard_normal(x.size)


def inject_attenuation(x, snr_db: float) -> np.ndarray:
    """Scale the signal by g = 1 - 10**(-snr/20).

    The distortion (1-g)*x then has power P_s * 10**(-snr/10), exactly on
    the SNR grid. At 0 dB the channel goes fully silent.
    """
    x = np.asarray(x, dtype=np.float64)
    if signal_power(x) == 0.0:
        raise DegenerateSignalError("SNR undefined for an all-zero signal")
    gain = 1.0 - 10.0 ** (-snr_db / 20.0)
    return gain * x


def clip_level_for_snr(x, snr_db: float):
    """Bisect the clamp level c so |x - clamp(x, -c, c)|^2 matches the target.

    Returns (c, achieved_snr_db, reached). Distortion power decreases
    monotonically in c, so bisection converges; if even c -> 0 cannot reach
    the target (only possible for negative targets), the closest achievable
    point is returned with reached=False.
    """
    x = np.asarray(x, dtype=np.float64)
    if x.size == 0 or not np.isfinite(x).all():
        raise DataError("signal must be non-empty and finite")
    if np.all(x == x.flat[0]):
        raise DegenerateSignalError("clipping level undefined for a constant signal")
    p_s = signal_power(x)
    if p_s == 0.0:
        raise DegenerateSignalError("SNR undefined for an all-zero signal")
    target = p_s / 10.0 ** (snr_db / 10.0)

    def distortion(c):
        return signal_power(x - np.clip(x, -c, c))

    hi = float(np.max(np.abs(x)))
    if distortion(0.0) < target:
        return 0.0, 10.0 * math.log10(p_s / distortion(0.0)), False
    lo = 0.0
    # distortion(hi) == 0 < target <= distortion(lo)
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        d = distortion(mid)
        if d > target:
            lo = mid
        else:
            hi = mid
        if d > 0.0 and abs(10.0 * math.log10(p_s / d) - snr_db) <= CLIPPING_TOLERANCE_DB / 4:
            return mid, 10.0 * math.log10(p_s / d), True
    c = 0.5 * (lo + hi)
    d = distortion(c)
    achieved = math.inf if d == 0.0 else 10.0 * math.log10(p_s / d)
    return c, achieved, abs(achieved - snr_db) <= CLIPPING_TOLERANCE_DB


def inject_clipping(x, snr_db: float) -> np.ndarray:
    """Clamp signal peaks so the removed part carries the target power."""
    x = np.asarray(x, dtype=np.float64)
    c, _, _ = clip_level_for_snr(x, snr_db)
    return np.clip(x, -c, c)


def _contaminate_segment(seg: Segment, snr_db: float, fs_hz: float,
                         plan_seed, seg_index: int):
    """Contaminate one segment; channel/kind draws are independent of snr_db."""
    num_channels = seg.num_channels
    select_rng = rng_for(plan_seed, seg_index, 0)
    k = int(select_rng.integers(1, num_channels))
    channels = np.sort(select_rng.choice(num_channels, size=k, replace=False))
    kind_idx = select_rng.integers(0, len(NOISE_KIND_TAGS), size=k)

    data = seg.data.copy()
    kinds = [None] * num_channels
    achieved = [None] * num_channels
    unreachable = [False] * num_channels
    mask = np.zeros(num_channels, dtype=bool)
    for pos, ch in enumerate(channels):
        tag = NOISE_KIND_TAGS[int(kind_idx[pos])]
        x = seg.data[ch]
        inj_seed = child_seed(plan_seed, seg_index, 1 + int(ch))
        if tag == "powerline":
            y = inject_powerline(x, snr_db, fs_hz, inj_seed)
        elif tag == "baseline":
            y = inject_baseline(x, snr_db, fs_hz, inj_seed)
        elif tag == "gaussian":
            y = inject_gaussian(x, snr_db, inj_seed)
        elif tag == "attenuation":
            y = inject_attenuation(x, snr_db)
        else:
            c, _, reached = clip_level_for_snr(x, snr_db)
            y = np.clip(x, -c, c)
            unreachable[ch] = not reached
        data[ch] = y
        mask[ch] = True
        kinds[ch] = tag
        achieved[ch] = measured_snr_db(x, y)
    record = SegmentContamination(
        mask=mask, kinds=tuple(kinds), target_snr_db=float(snr_db),
        achieved_snr_db=tuple(achieved), unreachable=tuple(unreachable))
    return Segment(data=data, label=seg.label, contamination=record)


def contaminate_segments(segments, sampling_rate_hz: float,
                         plan: ContaminationPlan) -> list:
    """Contaminate a bare segment list (inputs untouched).

    Per segment, 1..L-1 channels are drawn without replacement and each gets
    one of the five kinds uniformly. The selection stream depends only on
    (plan.seed, position in the list), so masks are identical across SNR
    values; this is what lets one fold be re-scored at every grid level with
    the same ground truth.
    """
    segments = list(segments)
    if segments and segments[0].num_channels < 2:
        raise ConfigurationError("contamination requires at least 2 channels")
    return [_contaminate_segment(seg, plan.snr_db, sampling_rate_hz, plan.seed, i)
            for i, seg in enumerate(segments)]


def contaminate_dataset(ds: SegmentDataset, plan: ContaminationPlan):
    """Contaminate every segment of `ds`; returns (new dataset, mask records)."""
    if ds.num_channels < 2:
        raise ConfigurationError("contamination requires at least 2 channels")
    out = contaminate_segments(ds.segments, ds.sampling_rate_hz, plan)
    new_ds = SegmentDataset(
        segments=tuple(out), num_classes=ds.num_classes,
        num_channels=ds.num_channels, sampling_rate_hz=ds.sampling_rate_hz)
    return new_ds, [seg.contamination for seg in out]


def write_mask_sidecar(records, path) -> Path:
    """CSV sidecar: one row per contaminated channel with target/achieved SNR."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["segment_id", "channel", "noise_kind",
                         "target_snr_db", "achieved_snr_db", "unreachable"])
        for seg_id, rec in enumerate(records):
            if rec is None:
                continue
            for ch in np.flatnonzero(rec.mask):
                writer.writerow([
                    seg_id, int(ch), rec.kinds[ch],
                    repr(float(rec.target_snr_db)),
                    repr(float(rec.achieved_snr_db[ch])),
                    int(rec.unreachable[ch]),
                ])
    return path
