"""Metrics, cross-validation, statistical comparison, and experiment drivers.

An experiment walks a repeated stratified CV plan. Per (repeat, fold) cell
every configured method is trained on the clean training part; the test
part is contaminated at each SNR of the grid (channel/kind draws depend
only on the fold, never on the SNR level) and every method is scored with
balanced accuracy, Cohen's kappa, and micro-F1. Aggregation produces
per-SNR average ranks and pairwise Wilcoxon signed-rank tests with Holm
correction, written as a deterministic report bundle:

    records.csv        one row per (method, snr, repeat, fold)
    ranks_<crit>.csv   SNR x method average ranks (plot-ready)
    stats_<crit>.json  pairwise p-values, Holm flags, directions
    manifest.json      full config echo, seeds, package version
    predictions.csv    per-segment predictions (optional)

Ranks are computed per (subject, repeat, fold) case at fixed SNR and then
averaged; Wilcoxon pairs are the same fold-level values.
"""
from __future__ import annotations

import json
import math
import warnings
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.stats import rankdata

from . import __version__
from .contam import DEFAULT_SNR_GRID_DB, ContaminationPlan, contaminate_segments
from .core import SyntheticSpec, generate_synthetic, load_dataset
from .classify import (
    DEFAULT_K_GRID,
    BaselineClassifier,
    FuzzyKnnEnsemble,
    GaussianNaiveBayes,
    MixtureNaiveBayes,
    WeightedKnnClassifier,
    build_channel_training_set,
    tune_k,
)
from .errors import ConfigurationError, DataError
from .features import WaveletSpec, dataset_features, extract_features
from .membership import MEMBERSHIP_KINDS, MembershipSpec
from .occ import DEFAULT_NU_GRID, fit_channel_detectors
from .util import child_seed, seed_to_int

CRITERIA = ("bac", "kappa", "f1")

# seed stream tags (keep stable: they define reproducibility)
_TAG_FOLDS = 101
_TAG_DETECTORS = 102
_TAG_K_ENSEMBLE = 103
_TAG_K_GLOBAL = 104
_TAG_CONTAM = 105
_TAG_NBM = 106


# ---------------------------------------------------------------------------
# Metrics
# ---------------------------------------------------------------------------

def bac(y_true, y_pred, num_classes: int) -> float:
    """Balanced accuracy: mean per-class recall over classes present in y_true."""
    y_true = np.asarray(y_true, dtype=np.int64)
    y_pred = np.asarray(y_pred, dtype=np.int64)
    recalls = []
    absent = []
    for j in range(1, num_classes + 1):
        mask = y_true == j
        if mask.any():
            recalls.append(float(np.mean(y_pred[mask] == j)))
        else:
            absent.append(j)
    if absent:
        warnings.warn(f"classes absent from y_true excluded from BAC: {absent}")
    if not recalls:
        raise DataError("no classes present in y_true")
    return float(np.mean(recalls))


def kappa(y_true, y_pred) -> float:
    """Cohen's kappa with marginal-product chance agreement; 0 when p_e == 1."""
    y_true = np.asarray(y_true, dtype=np.int64)
    y_pred = np.asarray(y_pred, dtype=np.int64)
    if y_true.size != y_pred.size or y_true.size == 0:
        raise DataError("need two equal-length non-empty label vectors")
    n = y_true.size
    values = np.union1d(y_true, y_pred)
    p_o = float(np.mean(y_true == y_pred))
    p_e = 0.0
    for v in values:
        p_e += float(np.mean(y_true == v)) * float(np.mean(y_pred == v))
    if p_e >= 1.0:
        return 0.0
    return (p_o - p_e) / (1.0 - p_e)


def micro_f1(y_true, y_pred) -> float:
    """Micro-averaged F1; for single-label data this equals plain accuracy."""
    y_true = np.asarray(y_true, dtype=np.int64)
    y_pred = np.asarray(y_pred, dtype=np.int64)
    if y_true.size != y_pred.size or y_true.size == 0:
        raise DataError("need two equal-length non-empty label vectors")
    values = np.union1d(y_true, y_pred)
    tp = fp = fn = 0
    for v in values:
        tp += int(np.sum((y_pred == v) & (y_true == v)))
        fp += int(np.sum((y_pred == v) & (y_true != v)))
        fn += int(np.sum((y_pred != v) & (y_true == v)))
    f1 = 2.0 * tp / (2.0 * tp + fp + fn)
    accuracy = float(np.mean(y_true == y_pred))
    # single-label identity; if this ever fires the counting above is broken
    assert abs(f1 - accuracy) < 1e-12
    return f1


# ---------------------------------------------------------------------------
# Cross-validation folds
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class FoldPlan:
    """Stratified fold assignments: one (N,) fold-id vector per repeat."""

    folds: int
    repeats: int
    seed: int
    assignments: tuple   # repeats arrays of shape (N,)


def make_folds(labels, folds: int = 10, repeats: int = 4, seed=0) -> FoldPlan:
    """Per repeat, deal each class's shuffled segments round-robin to folds.

    Guarantees: every segment lands in exactly one test fold per repeat and
    per-class fold counts differ by at most one.
    """
    labels = np.asarray(labels, dtype=np.int64)
    if folds < 2:
        raise ConfigurationError("need at least 2 folds")
    assignments = []
    classes = np.unique(labels)
    for rep in range(repeats):
        rng_rep = child_seed(seed, rep)
        fold_ids = np.full(labels.size, -1, dtype=np.int64)
        for j_pos, j in enumerate(classes):
            idx = np.flatnonzero(labels == j)
            perm = np.random.default_rng(
                child_seed(rng_rep, j_pos)).permutation(idx)
            offset = j_pos % folds  # rotate so overall fold sizes stay even
            for i, seg in enumerate(perm):
                fold_ids[seg] = (i + offset) % folds
        assignments.append(fold_ids)
    return FoldPlan(folds=folds, repeats=repeats,
                    seed=seed if isinstance(seed, int) else 0,
                    assignments=tuple(assignments))


# ---------------------------------------------------------------------------
# Statistics
# ---------------------------------------------------------------------------

def _wilcoxon_exact_two_sided(ranks: np.ndarray, w_plus: float) -> float:
    """Exact two-sided p by dynamic programming over all sign patterns.

    Tied (averaged) ranks are multiples of 0.5, so doubling them gives the
    integer lattice the subset-sum table runs on.
    """
    doubled = np.rint(2.0 * ranks).astype(np.int64)
    total = int(doubled.sum())
    counts = np.zeros(total + 1)
    counts[0] = 1.0
    for r in doubled:
        shifted = np.zeros_like(counts)
        shifted[r:] = counts[:total + 1 - r]
        counts = counts + shifted
    n_patterns = 2.0 ** len(doubled)
    w = int(np.rint(2.0 * w_plus))
    p_ge = counts[w:].sum() / n_patterns
    p_le = counts[:w + 1].sum() / n_patterns
    return float(min(1.0, 2.0 * min(p_ge, p_le)))


def wilcoxon_signed_rank(a, b) -> float:
    """Two-sided Wilcoxon signed-rank p-value for paired samples.

    Zero differences are dropped and tied absolute differences get averaged
    ranks. Up to 20 informative pairs the null distribution is enumerated
    exactly; beyond that a tie-corrected normal approximation is used.
    Identical samples give p = 1.
    """
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise DataError("paired samples must have equal length")
    diff = a - b
    diff = diff[diff != 0.0]
    n = diff.size
    if n == 0:
        return 1.0
    ranks = rankdata(np.abs(diff), method="average")
    w_plus = float(ranks[diff > 0.0].sum())
    if n <= 20:
        return _wilcoxon_exact_two_sided(ranks, w_plus)
    mu = n * (n + 1) / 4.0
    var = n * (n + 1) * (2 * n + 1) / 24.0
    _, tie_counts = np.unique(np.abs(diff), return_counts=True)
    var -= float(np.sum(tie_counts ** 3 - tie_counts)) / 48.0
    if var <= 0.0:
        return 1.0
    z = (w_plus - mu) / math.sqrt(var)
    return float(min(1.0, math.erfc(abs(z) / math.sqrt(2.0))))


def holm_adjust(pvals) -> np.ndarray:
    """Holm step-down adjustment: monotone, capped at 1, original order."""
    p = np.asarray(pvals, dtype=np.float64)
    m = p.size
    order = np.argsort(p, kind="stable")
    adjusted = p[order] * (m - np.arange(m))
    adjusted = np.minimum(np.maximum.accumulate(adjusted), 1.0)
    out = np.empty_like(adjusted)
    out[order] = adjusted
    return out


def average_ranks(scores) -> np.ndarray:
    """Mean rank per method over cases; rank 1 is best, ties averaged.

    `scores` is a (methods, cases) matrix of a higher-is-better criterion.
    """
    scores = np.asarray(scores, dtype=np.float64)
    if scores.ndim != 2 or scores.size == 0:
        raise DataError("need a non-empty (methods, cases) score matrix")
    ranks = np.empty_like(scores)
    for c in range(scores.shape[1]):
        ranks[:, c] = rankdata(-scores[:, c], method="average")
    return ranks.mean(axis=1)


# ---------------------------------------------------------------------------
# Method roster
# ---------------------------------------------------------------------------

BASE_FAMILIES = ("knn", "gnb", "nbm")
WEIGHTING_IDS = ("b", "aw", "awc")
BASELINE_METHOD_IDS = tuple(f"{w}-{b}" for b in BASE_FAMILIES for w in WEIGHTING_IDS)
KNOWN_METHOD_IDS = BASELINE_METHOD_IDS + ("fknn", "fknnc")
RESERVED_METHOD_IDS = ("do", "doa")

EXPERIMENT_NAMES = ("exp1", "exp2", "exp3")


@dataclass(frozen=True)
class MethodPlan:
    """One competitor: a method id plus its resolved membership kind."""

    method_id: str
    kind: str       # membership kind, or "" when the method has none
    label: str

    @property
    def family(self) -> str:
        if self.method_id in ("fknn", "fknnc"):
            return "fknn"
        return self.method_id.split("-", 1)[1]

    @property
    def weighting(self) -> str:
        if self.method_id in ("fknn", "fknnc"):
            return ""
        return self.method_id.split("-", 1)[0]


def resolve_methods(method_ids, membership_kinds=None,
                    default_kind: str = "nt") -> tuple:
    """Expand method ids into MethodPlans; `do`/`doa` are rejected.

    `fknn` expands over `membership_kinds` when several are given (labels
    become "fknn:<kind>"); `fknnc` is always the crisp kind; the soft
    baselines (aw*, awc*) use `default_kind`.
    """
    kinds = tuple(membership_kinds) if membership_kinds else (default_kind,)
    for kind in kinds:
        if kind not in MEMBERSHIP_KINDS:
            raise ConfigurationError(f"unknown membership kind {kind!r}")
    plans = []
    for mid in method_ids:
        mid = str(mid).lower()
        if mid in RESERVED_METHOD_IDS:
            raise ConfigurationError(
                f"method {mid!r} is a reserved identifier for external reference "
                "ensembles and is not implemented here")
        if mid not in KNOWN_METHOD_IDS:
            raise ConfigurationError(
                f"unknown method {mid!r}; known: {KNOWN_METHOD_IDS}")
        if mid == "fknn":
            for kind in kinds:
                label = "fknn" if len(kinds) == 1 else f"fknn:{kind}"
                plans.append(MethodPlan(method_id=mid, kind=kind, label=label))
        elif mid == "fknnc":
            plans.append(MethodPlan(method_id=mid, kind="cr", label="fknnc"))
        elif mid.startswith(("aw-", "awc-")):
            plans.append(MethodPlan(method_id=mid, kind=default_kind, label=mid))
        else:
            plans.append(MethodPlan(method_id=mid, kind="", label=mid))
    labels = [p.label for p in plans]
    if len(set(labels)) != len(labels):
        raise ConfigurationError(f"duplicate method entries: {labels}")
    return tuple(plans)


def experiment_method_ids(name: str):
    """Roster for the three canned experiment drivers."""
    if name == "exp1":
        return list(BASELINE_METHOD_IDS), None
    if name == "exp2":
        return ["fknn"], list(MEMBERSHIP_KINDS)
    if name == "exp3":
        return ["b-knn", "aw-knn", "awc-knn", "fknn", "fknnc"], None
    raise ConfigurationError(f"unknown experiment {name!r}; known: {EXPERIMENT_NAMES}")


# ---------------------------------------------------------------------------
# Configuration
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class ExperimentConfig:
    """Fully-resolved run configuration (see `from_dict` for the file schema)."""

    seed: int
    methods: tuple                      # MethodPlans
    snr_grid_db: tuple = DEFAULT_SNR_GRID_DB
    dataset_path: str | None = None
    synthetic: SyntheticSpec | None = None
    grouping: str = "pool"              # pool | per-subject
    folds: int = 10
    repeats: int = 4
    k_grid: tuple = DEFAULT_K_GRID
    nu_grid: tuple = DEFAULT_NU_GRID
    tune_folds: int = 4
    wavelet_levels: int = 3
    ss_beta: float = 10.0
    alpha: float = 0.05
    jobs: int = 1
    write_predictions: bool = True
    experiment_name: str = ""

    def __post_init__(self):
        if self.dataset_path is None and self.synthetic is None:
            raise ConfigurationError("config needs a dataset path or a synthetic spec")
        if self.grouping not in ("pool", "per-subject"):
            raise ConfigurationError("grouping must be 'pool' or 'per-subject'")
        if not self.methods:
            raise ConfigurationError("no methods configured")
        if not self.snr_grid_db:
            raise ConfigurationError("empty SNR grid")


def config_from_dict(raw: dict, experiment: str | None = None,
                     seed_override=None, jobs_override=None) -> ExperimentConfig:
    """Build an ExperimentConfig from a parsed YAML mapping.

    Recognized keys: seed (required), dataset {kind, path, grouping,
    synthetic {...}}, snr_grid_db, methods, membership {kinds, default,
    ss_beta}, folds, repeats, k_grid, nu_grid, tune_folds, wavelet_levels,
    alpha, jobs, write_predictions.
    """
    if not isinstance(raw, dict):
        raise ConfigurationError("config file must hold a key-value mapping")
    seed = seed_override if seed_override is not None else raw.get("seed")
    if seed is None:
        raise ConfigurationError("config requires a seed")
    seed = int(seed)

    ds = raw.get("dataset", {})
    if not isinstance(ds, dict):
        raise ConfigurationError("dataset section must be a mapping")
    kind = ds.get("kind", "synthetic" if "synthetic" in ds else "path")
    dataset_path = None
    synthetic = None
    if kind == "synthetic":
        spec_raw = dict(ds.get("synthetic", {}))
        spec_raw.setdefault("seed", seed)
        try:
            synthetic = SyntheticSpec(
                num_classes=int(spec_raw.get("num_classes", 4)),
                num_channels=int(spec_raw.get("num_channels", 8)),
                segments_per_class=int(spec_raw.get("segments_per_class", 40)),
                segment_length=int(spec_raw.get("segment_length", 1000)),
                sampling_rate_hz=float(spec_raw.get("sampling_rate_hz", 2000.0)),
                class_band_centers_hz=spec_raw.get("class_band_centers_hz"),
                amplitude_jitter=float(spec_raw.get("amplitude_jitter", 0.1)),
                seed=int(spec_raw["seed"]),
            )
        except (TypeError, ValueError) as exc:
            raise ConfigurationError(f"bad synthetic spec: {exc}") from exc
    elif kind == "path":
        dataset_path = ds.get("path")
        if not dataset_path:
            raise ConfigurationError("dataset.kind=path requires dataset.path")
    else:
        raise ConfigurationError(f"dataset.kind must be synthetic or path, got {kind!r}")

    mem = raw.get("membership", {})
    default_kind = mem.get("default", "nt")
    membership_kinds = mem.get("kinds")
    method_ids = raw.get("methods")
    if experiment:
        method_ids, roster_kinds = experiment_method_ids(experiment)
        if roster_kinds is not None:
            membership_kinds = roster_kinds
    if not method_ids:
        raise ConfigurationError("no methods configured (set methods: [...])")
    methods = resolve_methods(method_ids, membership_kinds, default_kind)

    jobs = jobs_override if jobs_override is not None else raw.get("jobs", 1)
    return ExperimentConfig(
        seed=seed,
        methods=methods,
        snr_grid_db=tuple(float(v) for v in raw.get("snr_grid_db", DEFAULT_SNR_GRID_DB)),
        dataset_path=dataset_path,
        synthetic=synthetic,
        grouping=ds.get("grouping", "pool"),
        folds=int(raw.get("folds", 10)),
        repeats=int(raw.get("repeats", 4)),
        k_grid=tuple(int(k) for k in raw.get("k_grid", DEFAULT_K_GRID)),
        nu_grid=tuple(float(v) for v in raw.get("nu_grid", DEFAULT_NU_GRID)),
        tune_folds=int(raw.get("tune_folds", 4)),
        wavelet_levels=int(raw.get("wavelet_levels", 3)),
        ss_beta=float(mem.get("ss_beta", 10.0)),
        alpha=float(raw.get("alpha", 0.05)),
        jobs=int(jobs),
        write_predictions=bool(raw.get("write_predictions", True)),
        experiment_name=experiment or "",
    )


# ---------------------------------------------------------------------------
# Runner
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class MetricRecord:
    subject: str
    method: str
    kind: str
    snr_db: float
    repeat: int
    fold: int
    bac: float
    kappa: float
    f1: float


@dataclass
class _CellContext:
    """Everything a worker needs; pickled once per process."""

    config: ExperimentConfig
    datasets: list          # (subject_id, SegmentDataset, features (N, L, F))
    fold_plans: list        # FoldPlan per dataset
    needs_detectors: bool
    needs_global_k: bool
    needs_ensemble_k: bool


_WORKER_CTX: dict = {}


def _init_worker(ctx: _CellContext):
    _WORKER_CTX["ctx"] = ctx


def _run_cell_in_worker(args):
    return _evaluate_cell(_WORKER_CTX["ctx"], *args)


def _load_datasets(config: ExperimentConfig) -> list:
    if config.synthetic is not None:
        return [("synthetic", generate_synthetic(config.synthetic))]
    root = Path(config.dataset_path)
    if config.grouping == "per-subject":
        subjects = sorted(p for p in root.iterdir()
                          if p.is_dir() and (p / "manifest.yaml").is_file())
        if not subjects:
            raise ConfigurationError(
                f"per-subject grouping found no subject directories under {root}")
        return [(p.name, load_dataset(p)) for p in subjects]
    return [(root.name or "dataset", load_dataset(root))]


def _evaluate_cell(ctx: _CellContext, ds_index: int, repeat: int, fold: int):
    """Train all methods on the cell's clean training part, score all SNRs."""
    config = ctx.config
    subject, ds, feats = ctx.datasets[ds_index]
    wavelet = WaveletSpec(levels=config.wavelet_levels)
    assignment = ctx.fold_plans[ds_index].assignments[repeat]
    test_idx = np.flatnonzero(assignment == fold)
    train_idx = np.flatnonzero(assignment != fold)
    labels = ds.labels
    y_train, y_test = labels[train_idx], labels[test_idx]
    if np.unique(y_train).size != ds.num_classes:
        raise DataError(
            f"training part of repeat {repeat} fold {fold} lost a class; "
            "use more segments per class or fewer folds")

    ch_train = [feats[train_idx, ch, :] for ch in range(ds.num_channels)]
    train_set = build_channel_training_set(ch_train, y_train, ds.num_classes)

    detectors = None
    if ctx.needs_detectors:
        detectors = fit_channel_detectors(
            ch_train, seed=child_seed(config.seed, _TAG_DETECTORS, ds_index, repeat, fold),
            nu_grid=config.nu_grid, tune_folds=config.tune_folds)

    k_ensemble = k_global = None
    if ctx.needs_ensemble_k:
        k_ensemble, _ = tune_k(
            ch_train, y_train, ds.num_classes, grid=config.k_grid,
            folds=config.tune_folds, style="ensemble",
            seed=child_seed(config.seed, _TAG_K_ENSEMBLE, ds_index, repeat, fold))
    if ctx.needs_global_k:
        k_global, _ = tune_k(
            ch_train, y_train, ds.num_classes, grid=config.k_grid,
            folds=config.tune_folds, style="global",
            seed=child_seed(config.seed, _TAG_K_GLOBAL, ds_index, repeat, fold))

    bases = {}
    predictors = {}
    for plan in config.methods:
        if plan.family == "fknn":
            spec = MembershipSpec(plan.kind, ss_beta=config.ss_beta)
            det = None if plan.kind == "cr0" else detectors
            predictors[plan.label] = FuzzyKnnEnsemble(
                train_set, k=k_ensemble, membership_spec=spec, detectors=det)
            continue
        if plan.family not in bases:
            if plan.family == "knn":
                bases[plan.family] = WeightedKnnClassifier(train_set, k=k_global)
            elif plan.family == "gnb":
                bases[plan.family] = GaussianNaiveBayes(train_set)
            else:
                bases[plan.family] = MixtureNaiveBayes(
                    train_set, seed=child_seed(config.seed, _TAG_NBM,
                                               ds_index, repeat, fold),
                    cv_folds=config.tune_folds)
        spec = MembershipSpec(plan.kind or "nt", ss_beta=config.ss_beta)
        predictors[plan.label] = BaselineClassifier(
            bases[plan.family], plan.weighting,
            detectors=detectors if plan.weighting in ("aw", "awc") else None,
            membership_spec=spec)

    test_segments = [ds.segments[i] for i in test_idx]
    contam_seed = seed_to_int(config.seed, _TAG_CONTAM, ds_index, repeat, fold)
    records = []
    predictions = []
    for snr in config.snr_grid_db:
        plan_c = ContaminationPlan(snr_db=snr, seed=contam_seed,
                                   snr_grid_db=config.snr_grid_db)
        dirty = contaminate_segments(test_segments, ds.sampling_rate_hz, plan_c)
        test_feats = np.stack([extract_features(s, wavelet) for s in dirty])
        for plan in config.methods:
            d, y_pred, fallback = predictors[plan.label].predict_batch(test_feats)
            records.append(MetricRecord(
                subject=subject, method=plan.label, kind=plan.kind,
                snr_db=float(snr), repeat=repeat, fold=fold,
                bac=bac(y_test, y_pred, ds.num_classes),
                kappa=kappa(y_test, y_pred),
                f1=micro_f1(y_test, y_pred)))
            if config.write_predictions:
                for row, seg_id in enumerate(test_idx):
                    predictions.append(
                        (subject, int(seg_id), int(y_test[row]), plan.label,
                         plan.kind, float(snr), repeat, fold, int(y_pred[row]),
                         tuple(float(v) for v in d[row]), bool(fallback[row])))
    return records, predictions


@dataclass
class EvaluationReport:
    """All outputs of a run, with deterministic serialization."""

    config: ExperimentConfig
    method_labels: tuple
    num_classes: int
    records: list = field(default_factory=list)
    predictions: list = field(default_factory=list)

    def metric_table(self, criterion: str, snr_db: float):
        """(methods, cases) matrix plus the sorted case keys."""
        by_key = {}
        for rec in self.records:
            if rec.snr_db == snr_db:
                by_key[(rec.method, rec.subject, rec.repeat, rec.fold)] = getattr(
                    rec, criterion)
        cases = sorted({(s, r, f) for (_, s, r, f) in by_key})
        table = np.empty((len(self.method_labels), len(cases)))
        for mi, label in enumerate(self.method_labels):
            for ci, (s, r, f) in enumerate(cases):
                table[mi, ci] = by_key[(label, s, r, f)]
        return table, cases

    def rank_summary(self, criterion: str) -> dict:
        out = {}
        for snr in sorted({r.snr_db for r in self.records}):
            table, _ = self.metric_table(criterion, snr)
            ranks = average_ranks(table)
            out[snr] = {label: float(rk) for label, rk
                        in zip(self.method_labels, ranks)}
        return out

    def stats_summary(self, criterion: str) -> dict:
        """Pairwise Wilcoxon + Holm per SNR; direction from the mean difference."""
        out = {}
        labels = self.method_labels
        for snr in sorted({r.snr_db for r in self.records}):
            table, _ = self.metric_table(criterion, snr)
            pairs = [(i, j) for i in range(len(labels)) for j in range(i + 1, len(labels))]
            raw_p = [wilcoxon_signed_rank(table[i], table[j]) for i, j in pairs]
            adj_p = holm_adjust(raw_p) if raw_p else np.array([])
            entries = []
            for (i, j), p, ph in zip(pairs, raw_p, adj_p):
                mean_diff = float(np.mean(table[i] - table[j]))
                significant = bool(ph <= self.config.alpha)
                if not significant or mean_diff == 0.0:
                    better = ""
                else:
                    better = labels[i] if mean_diff > 0 else labels[j]
                entries.append({
                    "a": labels[i], "b": labels[j],
                    "p": float(p), "p_holm": float(ph),
                    "mean_diff": mean_diff,
                    "significant": significant,
                    "better": better,
                })
            out[snr] = entries
        return out

    def write(self, out_dir) -> Path:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        records = sorted(
            self.records,
            key=lambda r: (r.method, r.snr_db, r.subject, r.repeat, r.fold))
        with open(out / "records.csv", "w", encoding="utf-8", newline="") as fh:
            fh.write("subject,method,kind,snr_db,repeat,fold,bac,kappa,f1\n")
            for r in records:
                fh.write(f"{r.subject},{r.method},{r.kind},{r.snr_db!r},"
                         f"{r.repeat},{r.fold},{r.bac!r},{r.kappa!r},{r.f1!r}\n")

        snr_levels = sorted({r.snr_db for r in self.records})
        for criterion in CRITERIA:
            ranks = self.rank_summary(criterion)
            with open(out / f"ranks_{criterion}.csv", "w", encoding="utf-8",
                      newline="") as fh:
                fh.write("snr_db," + ",".join(self.method_labels) + "\n")
                for snr in snr_levels:
                    row = [repr(float(snr))] + [repr(ranks[snr][label])
                                                for label in self.method_labels]
                    fh.write(",".join(row) + "\n")
            stats = self.stats_summary(criterion)
            payload = {
                "criterion": criterion,
                "alpha": self.config.alpha,
                "methods": list(self.method_labels),
                "snr_levels": [float(s) for s in snr_levels],
                "average_ranks": {repr(float(s)): ranks[s] for s in snr_levels},
                "pairwise": {repr(float(s)): stats[s] for s in snr_levels},
            }
            with open(out / f"stats_{criterion}.json", "w", encoding="utf-8") as fh:
                json.dump(payload, fh, indent=1, sort_keys=True)
                fh.write("\n")

        if self.config.write_predictions:
            sup_cols = ",".join(f"d_{j}" for j in range(1, self.num_classes + 1))
            with open(out / "predictions.csv", "w", encoding="utf-8",
                      newline="") as fh:
                fh.write("subject,segment_id,true_label,method_id,kind,snr_db,"
                         f"repeat,fold,predicted_label,{sup_cols},fallback_flag\n")
                for row in sorted(self.predictions):
                    (subject, seg_id, y, label, kind, snr, repeat, fold,
                     y_hat, d, fb) = row
                    fh.write(f"{subject},{seg_id},{y},{label},{kind},{snr!r},"
                             f"{repeat},{fold},{y_hat},"
                             + ",".join(repr(v) for v in d)
                             + f",{int(fb)}\n")

        manifest = {
            "package": "fuzzemg",
            "version": __version__,
            "experiment": self.config.experiment_name,
            "seed": self.config.seed,
            "grouping": self.config.grouping,
            "methods": [
                {"id": p.method_id, "kind": p.kind, "label": p.label}
                for p in self.config.methods],
            "snr_grid_db": [float(v) for v in self.config.snr_grid_db],
            "folds": self.config.folds,
            "repeats": self.config.repeats,
            "k_grid": list(self.config.k_grid),
            "nu_grid": [float(v) for v in self.config.nu_grid],
            "tune_folds": self.config.tune_folds,
            "wavelet_levels": self.config.wavelet_levels,
            "ss_beta": self.config.ss_beta,
            "alpha": self.config.alpha,
            "ranking_unit": "per (subject, repeat, fold) case at fixed snr",
            "dataset": ({"kind": "synthetic",
                         "num_classes": self.config.synthetic.num_classes,
                         "num_channels": self.config.synthetic.num_channels,
                         "segments_per_class": self.config.synthetic.segments_per_class,
                         "segment_length": self.config.synthetic.segment_length,
                         "sampling_rate_hz": self.config.synthetic.sampling_rate_hz,
                         "amplitude_jitter": self.config.synthetic.amplitude_jitter,
                         "seed": self.config.synthetic.seed}
                        if self.config.synthetic is not None
                        else {"kind": "path", "path": str(self.config.dataset_path)}),
        }
        with open(out / "manifest.json", "w", encoding="utf-8") as fh:
            json.dump(manifest, fh, indent=1, sort_keys=True)
            fh.write("\n")
        return out


def run_experiment(config: ExperimentConfig) -> EvaluationReport:
    """Execute the full CV x SNR grid for every configured method."""
    datasets = []
    for subject, ds in _load_datasets(config):
        counts = np.bincount(ds.labels)[1:]
        if counts.min() < 2:
            raise ConfigurationError(
                f"dataset {subject}: every class needs at least 2 segments for CV")
        feats = dataset_features(ds, WaveletSpec(levels=config.wavelet_levels))
        datasets.append((subject, ds, feats))

    fold_plans = [
        make_folds(ds.labels, folds=config.folds, repeats=config.repeats,
                   seed=child_seed(config.seed, _TAG_FOLDS, i))
        for i, (_, ds, _) in enumerate(datasets)]

    needs_detectors = any(
        p.weighting in ("aw", "awc") or (p.family == "fknn" and p.kind != "cr0")
        for p in config.methods)
    needs_global_k = any(p.family == "knn" for p in config.methods)
    needs_ensemble_k = any(p.family == "fknn" for p in config.methods)
    ctx = _CellContext(config=config, datasets=datasets, fold_plans=fold_plans,
                       needs_detectors=needs_detectors,
                       needs_global_k=needs_global_k,
                       needs_ensemble_k=needs_ensemble_k)

    cells = [(i, rep, fold)
             for i in range(len(datasets))
             for rep in range(config.repeats)
             for fold in range(config.folds)]

    results = []
    if config.jobs > 1:
        with ProcessPoolExecutor(max_workers=config.jobs,
                                 initializer=_init_worker,
                                 initargs=(ctx,)) as pool:
            results = list(pool.map(_run_cell_in_worker, cells))
    else:
        for cell in cells:
            results.append(_evaluate_cell(ctx, *cell))

    report = EvaluationReport(
        config=config,
        method_labels=tuple(p.label for p in config.methods),
        num_classes=datasets[0][1].num_classes)
    for records, predictions in results:
        report.records.extend(records)
        report.predictions.extend(predictions)
    return report
