"""Command-line surface: dataset synthesis, injection preview, feature
extraction, detector+ensemble training, single-segment prediction, and the
three canned experiment drivers.

Every command is deterministic given its config file and seed. Exit codes:
0 success, 2 configuration error, 3 data error, 4 numerical failure.
"""
from __future__ import annotations

import argparse
import csv
import json
import sys
from pathlib import Path

import numpy as np
import yaml

from . import __version__
from .classify import ChannelTrainingSet, FuzzyKnnEnsemble, build_channel_training_set, tune_k
from .contam import ContaminationPlan, contaminate_dataset, write_mask_sidecar
from .core import (
    SyntheticSpec,
    generate_synthetic,
    load_dataset,
    save_dataset,
    window_samples_for,
)
from .errors import ConfigurationError, DataError, FuzzemgError, NumericalError
from .evaluation import config_from_dict, run_experiment
from .features import WaveletSpec, extract_features, dataset_features, write_feature_cache
from .membership import MEMBERSHIP_KINDS, MembershipSpec
from .occ import fit_channel_detectors, load_model, save_model
from .util import child_seed

BUNDLE_META = "meta.json"
BUNDLE_FORMAT = "fuzzemg-model-bundle"
BUNDLE_VERSION = 1


def _read_yaml(path) -> dict:
    path = Path(path)
    if not path.is_file():
        raise ConfigurationError(f"config file not found: {path}")
    with open(path, "r", encoding="utf-8") as fh:
        raw = yaml.safe_load(fh)
    if raw is None:
        raw = {}
    if not isinstance(raw, dict):
        raise ConfigurationError(f"config {path} must hold a key-value mapping")
    return raw


def _synthetic_spec_from(raw: dict, seed_override) -> SyntheticSpec:
    section = raw.get("synthetic") or raw.get("dataset", {}).get("synthetic")
    if not isinstance(section, dict):
        raise ConfigurationError("config needs a 'synthetic' section")
    seed = seed_override if seed_override is not None else section.get(
        "seed", raw.get("seed"))
    if seed is None:
        raise ConfigurationError("synthetic spec requires a seed")
    try:
        return SyntheticSpec(
            num_classes=int(section.get("num_classes", 4)),
            num_channels=int(section.get("num_channels", 8)),
            segments_per_class=int(section.get("segments_per_class", 40)),
            segment_length=int(section.get("segment_length", 1000)),
            sampling_rate_hz=float(section.get("sampling_rate_hz", 2000.0)),
            class_band_centers_hz=section.get("class_band_centers_hz"),
            amplitude_jitter=float(section.get("amplitude_jitter", 0.1)),
            seed=int(seed),
        )
    except (TypeError, ValueError) as exc:
        raise ConfigurationError(f"bad synthetic spec: {exc}") from exc


def cmd_synth(args) -> int:
    raw = _read_yaml(args.config) if args.config else {}
    spec = _synthetic_spec_from(raw, args.seed)
    ds = generate_synthetic(spec)
    out = save_dataset(ds, args.out)
    print(f"wrote {len(ds)} segments ({ds.num_classes} classes, "
          f"{ds.num_channels} channels) to {out}")
    return 0


def cmd_inject(args) -> int:
    ds = load_dataset(args.data)
    if args.seed is None:
        raise ConfigurationError("inject requires --seed")
    plan = ContaminationPlan(snr_db=float(args.snr), seed=int(args.seed))
    dirty, records = contaminate_dataset(ds, plan)
    out = save_dataset(dirty, args.out)
    sidecar = write_mask_sidecar(records, Path(args.out) / "masks.csv")
    print(f"contaminated {len(dirty)} segments at {args.snr} dB; "
          f"masks in {sidecar}, signals in {out}")
    return 0


def cmd_extract(args) -> int:
    ds = load_dataset(args.data)
    spec = WaveletSpec(levels=args.levels)
    path = write_feature_cache(ds, args.out, spec)
    print(f"wrote features for {len(ds)} segments to {path}")
    return 0


def _write_bundle(out_dir, ds, detectors, train_set: ChannelTrainingSet,
                  k: int, kind: str, ss_beta: float, levels: int) -> Path:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    meta = {
        "format": BUNDLE_FORMAT,
        "version": BUNDLE_VERSION,
        "num_classes": ds.num_classes,
        "num_channels": ds.num_channels,
        "sampling_rate_hz": ds.sampling_rate_hz,
        "window_samples": ds.window_samples,
        "wavelet_levels": levels,
        "k": k,
        "membership_kind": kind,
        "ss_beta": ss_beta,
    }
    with open(out / BUNDLE_META, "w", encoding="utf-8") as fh:
        json.dump(meta, fh, indent=1, sort_keys=True)
        fh.write("\n")
    for ch, (model, band) in enumerate(detectors):
        save_model(model, band, out / f"detector_ch{ch}.json")
    write_feature_cache(ds, out / "train_features.csv", WaveletSpec(levels=levels))
    return out


def _load_bundle(model_dir):
    root = Path(model_dir)
    try:
        with open(root / BUNDLE_META, "r", encoding="utf-8") as fh:
            meta = json.load(fh)
        if meta.get("format") != BUNDLE_FORMAT or meta.get("version") != BUNDLE_VERSION:
            raise DataError(f"{root}: not a version-{BUNDLE_VERSION} model bundle")
        detectors = [load_model(root / f"detector_ch{ch}.json")
                     for ch in range(int(meta["num_channels"]))]
        rows = {}
        with open(root / "train_features.csv", "r", encoding="utf-8") as fh:
            reader = csv.reader(line for line in fh if not line.startswith("#"))
            header = next(reader)
            n_feat = len(header) - 3
            for row in reader:
                seg_id, ch = int(row[0]), int(row[1])
                rows.setdefault(seg_id, {})[ch] = (
                    [float(v) for v in row[2:2 + n_feat]], int(row[-1]))
        seg_ids = sorted(rows)
        num_channels = int(meta["num_channels"])
        labels = [rows[s][0][1] for s in seg_ids]
        feats = [np.array([rows[s][ch][0] for s in seg_ids]) for ch in range(num_channels)]
    except (OSError, ValueError, KeyError, StopIteration) as exc:
        raise DataError(f"cannot load model bundle from {model_dir}: {exc}") from exc
    train_set = build_channel_training_set(feats, labels, int(meta["num_classes"]))
    return meta, detectors, train_set


def cmd_train(args) -> int:
    raw = _read_yaml(args.config) if args.config else {}
    seed = args.seed if args.seed is not None else raw.get("seed")
    if seed is None:
        raise ConfigurationError("train requires a seed (--seed or config)")
    kind = args.kind or raw.get("membership", {}).get("default", "nt")
    if kind not in MEMBERSHIP_KINDS:
        raise ConfigurationError(f"unknown membership kind {kind!r}")
    levels = int(raw.get("wavelet_levels", 3))
    ds = load_dataset(args.data)
    feats = dataset_features(ds, WaveletSpec(levels=levels))
    ch_feats = [feats[:, ch, :] for ch in range(ds.num_channels)]
    labels = ds.labels
    detectors = fit_channel_detectors(
        ch_feats, seed=child_seed(int(seed), 1),
        tune_folds=int(raw.get("tune_folds", 4)))
    k, _ = tune_k(ch_feats, labels, ds.num_classes,
                  grid=tuple(raw.get("k_grid", range(1, 24, 2))),
                  folds=int(raw.get("tune_folds", 4)),
                  seed=child_seed(int(seed), 2), style="ensemble")
    train_set = build_channel_training_set(ch_feats, labels, ds.num_classes)
    out = _write_bundle(args.out, ds, detectors, train_set, k, kind,
                        float(raw.get("membership", {}).get("ss_beta", 10.0)),
                        levels)
    print(f"trained on {len(ds)} segments; K={k}, kind={kind}; bundle at {out}")
    return 0


def cmd_predict(args) -> int:
    meta, detectors, train_set = _load_bundle(args.model)
    path = Path(args.segment)
    if not path.is_file():
        raise DataError(f"segment file not found: {path}")
    try:
        samples = np.loadtxt(path, delimiter=",", ndmin=2)
    except ValueError as exc:
        raise DataError(f"{path}: {exc}") from exc
    window = int(meta["window_samples"])
    num_channels = int(meta["num_channels"])
    if samples.shape[0] < window:
        raise DataError(f"{path}: {samples.shape[0]} samples, need {window}")
    if samples.shape[1] < num_channels:
        raise DataError(f"{path}: {samples.shape[1]} channels, need {num_channels}")
    if samples.shape[0] > window:
        print(f"note: using the first {window} of {samples.shape[0]} samples",
              file=sys.stderr)
    from .core import Segment
    seg = Segment(data=samples[:window, :num_channels].T, label=1)
    spec = WaveletSpec(levels=int(meta["wavelet_levels"]))
    x = extract_features(seg, spec)
    ens = FuzzyKnnEnsemble(
        train_set, k=int(meta["k"]),
        membership_spec=MembershipSpec(meta["membership_kind"],
                                       ss_beta=float(meta["ss_beta"])),
        detectors=detectors)
    purity = ens.channel_purity(x[None, :, :])[0]
    supports, label = ens.predict(x[None, :, :])
    print(json.dumps({
        "label": label,
        "supports": [float(v) for v in supports.d],
        "channel_purity": [float(v) for v in purity],
        "fallback": supports.fallback,
    }, indent=1, sort_keys=True))
    return 0


def cmd_experiment(args) -> int:
    raw = _read_yaml(args.config)
    config = config_from_dict(raw, experiment=args.name,
                              seed_override=args.seed, jobs_override=args.jobs)
    out_dir = args.out or raw.get("out")
    if not out_dir:
        raise ConfigurationError("experiment requires --out or an 'out' config key")
    report = run_experiment(config)
    path = report.write(out_dir)
    print(f"experiment {args.name}: {len(report.records)} metric records; "
          f"report bundle at {path}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="fuzzemg",
        description="Noise-tolerant multichannel biosignal classification toolkit")
    parser.add_argument("--version", action="version", version=f"fuzzemg {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="generate a synthetic dataset on disk")
    p.add_argument("--config", help="YAML with a 'synthetic' section")
    p.add_argument("--seed", type=int, help="override the spec seed")
    p.add_argument("--out", required=True, help="output dataset directory")
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("inject", help="contaminate a dataset at one SNR level")
    p.add_argument("--data", required=True, help="input dataset directory")
    p.add_argument("--snr", type=float, required=True, help="target SNR in dB")
    p.add_argument("--seed", type=int, required=True)
    p.add_argument("--out", required=True, help="output dataset directory")
    p.set_defaults(func=cmd_inject)

    p = sub.add_parser("extract", help="write the wavelet feature cache CSV")
    p.add_argument("--data", required=True, help="input dataset directory")
    p.add_argument("--levels", type=int, default=3)
    p.add_argument("--out", required=True, help="output CSV path")
    p.set_defaults(func=cmd_extract)

    p = sub.add_parser("train", help="fit detectors + ensemble, save a model bundle")
    p.add_argument("--data", required=True, help="training dataset directory")
    p.add_argument("--config", help="optional YAML with tuning grids")
    p.add_argument("--seed", type=int)
    p.add_argument("--kind", choices=MEMBERSHIP_KINDS, help="membership kind")
    p.add_argument("--out", required=True, help="model bundle directory")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("predict", help="classify one raw segment file")
    p.add_argument("--model", required=True, help="model bundle directory")
    p.add_argument("--segment", required=True, help="CSV of samples x channels")
    p.set_defaults(func=cmd_predict)

    p = sub.add_parser("experiment", help="run one of the canned comparisons")
    p.add_argument("name", choices=("exp1", "exp2", "exp3"))
    p.add_argument("--config", required=True, help="experiment YAML")
    p.add_argument("--seed", type=int, help="override the config seed")
    p.add_argument("--out", help="report bundle directory")
    p.add_argument("--jobs", type=int, help="worker processes (default: config or 1)")
    p.set_defaults(func=cmd_experiment)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except ConfigurationError as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return 2
    except DataError as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return 3
    except NumericalError as exc:
        print(f"numerical error: {exc}", file=sys.stderr)
        return 4
    except FuzzemgError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


def entrypoint():
    sys.exit(main())


if __name__ == "__main__":
    entrypoint()
