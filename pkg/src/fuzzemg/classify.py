"""Classifiers: the contamination-aware fuzzy KNN ensemble and the baselines.

The ensemble runs one Gaussian-kernel KNN per channel. For a query, each
channel's detector yields a purity degree r; the similarity of the query to
every training object is corrected by the product r * sim (an algebraic
t-norm), the K largest corrected similarities survive the cut, and the
per-class sums of corrected similarity are pooled over channels and
normalized into class supports. With r identically 1 this reduces exactly
to a similarity-weighted KNN; with r = 0 a channel contributes nothing, as
if deleted.

Baselines share a channel-weighting scheme: `b` ignores the detectors
(all weights 1), `aw` uses the soft purity r as the weight, `awc` keeps a
channel only when r >= 0.5 (the crisp detector boundary for the default
linear membership). Weights enter the global KNN through the distance
metric and the naive Bayes variants through the per-attribute
log-likelihood exponents.
"""
from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np

from .errors import ConfigurationError, DataError
from .membership import MembershipSpec, membership, normalize_score
from .occ import decision
from .util import child_seed, pairwise_sq_dists, rng_for

DEFAULT_K_GRID = tuple(range(1, 24, 2))
VARIANCE_FLOOR = 1e-9
NBM_COMPONENT_GRID = (1, 2, 3)
WEIGHTINGS = ("b", "aw", "awc")


@dataclass(frozen=True)
class ClassSupports:
    """Normalized per-class support vector; `fallback` marks the uniform path."""

    d: np.ndarray
    fallback: bool = False


def sigma_from_train(X) -> float:
    """Standard deviation of all pairwise Euclidean training distances.

    Zero spread (coincident points, or a single pair) falls back to 1.0
    with a warning instead of producing a degenerate kernel.
    """
    X = np.asarray(X, dtype=np.float64)
    if X.ndim != 2 or X.shape[0] < 2:
        raise DataError("need at least 2 training points")
    d2 = pairwise_sq_dists(X, X)
    iu = np.triu_indices(X.shape[0], k=1)
    dists = np.sqrt(d2[iu])
    sigma = float(np.std(dists))
    if sigma <= 0.0:
        warnings.warn("zero spread in pairwise distances, falling back to sigma=1")
        return 1.0
    return sigma


def gaussian_similarity(x, y, sigma: float) -> float:
    """exp(-||x - y||^2 / (2 sigma^2)), in (0, 1]."""
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    return float(np.exp(-float(np.sum((x - y) ** 2)) / (2.0 * sigma * sigma)))


def corrected_similarity(r: float, sim: float) -> float:
    """Product t-norm: similarity discounted by the channel purity degree."""
    return r * sim


def alpha_cut_top_k(u, k: int) -> np.ndarray:
    """Indices of the K largest values; ties broken toward smaller index."""
    u = np.asarray(u, dtype=np.float64)
    if k > u.size:
        raise DataError(f"K={k} exceeds the {u.size} available objects")
    return np.argsort(-u, kind="stable")[:k]


def class_supports(neighbors, num_classes: int) -> ClassSupports:
    """Pool per-channel neighbor lists into normalized class supports.

    `neighbors` is a sequence over channels of (labels, u) pairs for the
    objects that survived the cut. Per channel and class the corrected
    similarities are summed (a fuzzy cardinality), summed over channels,
    and normalized; an all-zero total falls back to the uniform vector.
    """
    totals = np.zeros(num_classes)
    for labels, u in neighbors:
        labels = np.asarray(labels, dtype=np.int64)
        u = np.asarray(u, dtype=np.float64)
        for j in range(1, num_classes + 1):
            totals[j - 1] += float(u[labels == j].sum())
    denom = totals.sum()
    if denom <= 0.0:
        return ClassSupports(d=np.full(num_classes, 1.0 / num_classes), fallback=True)
    return ClassSupports(d=totals / denom)


@dataclass(frozen=True)
class ChannelTrainingSet:
    """Per-channel training features with shared labels and kernel widths."""

    features: tuple            # L matrices of shape (N, d_l)
    labels: np.ndarray         # (N,), values in 1..num_classes
    sigmas: np.ndarray         # (L,)
    num_classes: int

    @property
    def num_channels(self) -> int:
        return len(self.features)

    @property
    def num_objects(self) -> int:
        return len(self.labels)


def build_channel_training_set(channel_features, labels, num_classes: int) -> ChannelTrainingSet:
    """Validate geometry and compute each channel's kernel width."""
    feats = tuple(np.asarray(f, dtype=np.float64) for f in channel_features)
    labels = np.asarray(labels, dtype=np.int64)
    if not feats:
        raise DataError("need at least one channel")
    n = labels.size
    for ch, f in enumerate(feats):
        if f.ndim != 2 or f.shape[0] != n:
            raise DataError(f"channel {ch}: expected ({n}, d) feature matrix")
    if labels.min() < 1 or labels.max() > num_classes:
        raise DataError("labels must lie in 1..num_classes")
    sigmas = np.array([sigma_from_train(f) for f in feats])
    return ChannelTrainingSet(features=feats, labels=labels,
                              sigmas=sigmas, num_classes=num_classes)


def _as_channel_matrices(x, num_channels: int):
    """Normalize input to a list of (n_queries, d_l) matrices."""
    if isinstance(x, np.ndarray) and x.ndim == 3:
        return [x[:, ch, :] for ch in range(num_channels)], x.shape[0]
    mats = [np.atleast_2d(np.asarray(m, dtype=np.float64)) for m in x]
    if len(mats) != num_channels:
        raise DataError(f"expected {num_channels} channels, got {len(mats)}")
    return mats, mats[0].shape[0]


def _class_sums(labels_topk: np.ndarray, u_topk: np.ndarray, num_classes: int) -> np.ndarray:
    """Per-class sums of u over the kept neighbors; shapes (n, k) -> (n, M)."""
    out = np.zeros((labels_topk.shape[0], num_classes))
    for j in range(1, num_classes + 1):
        out[:, j - 1] = np.where(labels_topk == j, u_topk, 0.0).sum(axis=1)
    return out


class FuzzyKnnEnsemble:
    """Per-channel KNN ensemble with detector-corrected similarities.

    `detectors` is the per-channel [(model, band), ...] list; pass None to
    run without correction (purity fixed at 1, e.g. for the cr0 kind or
    during K tuning on clean data).
    """

    def __init__(self, train: ChannelTrainingSet, k: int,
                 membership_spec: MembershipSpec = MembershipSpec("nt"),
                 detectors=None):
        if k < 1 or k > train.num_objects:
            raise DataError(f"K={k} outside 1..{train.num_objects}")
        if detectors is not None and len(detectors) != train.num_channels:
            raise DataError("one detector per channel required")
        self.train = train
        self.k = int(k)
        self.membership_spec = membership_spec
        self.detectors = detectors

    def channel_purity(self, x_channels) -> np.ndarray:
        """Purity degrees r, shape (n_queries, L)."""
        mats, n = _as_channel_matrices(x_channels, self.train.num_channels)
        r = np.ones((n, self.train.num_channels))
        if self.detectors is None:
            return r
        for ch, (model, band) in enumerate(self.detectors):
            scores = decision(model, mats[ch])
            r[:, ch] = membership(self.membership_spec,
                                  normalize_score(scores, band))
        return r

    def supports_batch(self, x_channels):
        """Class supports for a batch; returns (d (n, M), fallback (n,))."""
        mats, n = _as_channel_matrices(x_channels, self.train.num_channels)
        purity = self.channel_purity(mats)
        m = self.train.num_classes
        totals = np.zeros((n, m))
        for ch in range(self.train.num_channels):
            sigma = self.train.sigmas[ch]
            d2 = pairwise_sq_dists(mats[ch], self.train.features[ch])
            sim = np.exp(-d2 / (2.0 * sigma * sigma))
            u = purity[:, ch][:, None] * sim
            order = np.argsort(-u, axis=1, kind="stable")[:, :self.k]
            labels_topk = self.train.labels[order]
            u_topk = np.take_along_axis(u, order, axis=1)
            totals += _class_sums(labels_topk, u_topk, m)
        denom = totals.sum(axis=1)
        fallback = denom <= 0.0
        safe = np.where(fallback, 1.0, denom)
        d = np.where(fallback[:, None], 1.0 / m, totals / safe[:, None])
        return d, fallback

    def predict_batch(self, x_channels):
        """(supports (n, M), labels (n,), fallback (n,)); ties pick the smallest class."""
        d, fallback = self.supports_batch(x_channels)
        labels = np.argmax(d, axis=1) + 1
        return d, labels, fallback

    def predict(self, x_channels):
        """Single-query path: returns (ClassSupports, label)."""
        mats, n = _as_channel_matrices(x_channels, self.train.num_channels)
        if n != 1:
            raise DataError("predict expects a single query; use predict_batch")
        d, labels, fallback = self.predict_batch(mats)
        return ClassSupports(d=d[0], fallback=bool(fallback[0])), int(labels[0])


def fknn_predict(x_channels, train: ChannelTrainingSet, detectors,
                 membership_spec: MembershipSpec, k: int):
    """One-shot form of the ensemble prediction for a single query."""
    ens = FuzzyKnnEnsemble(train, k=k, membership_spec=membership_spec,
                           detectors=detectors)
    return ens.predict(x_channels)


# ---------------------------------------------------------------------------
# Baselines: global weighted KNN, Gaussian NB, mixture NB
# ---------------------------------------------------------------------------

class WeightedKnnClassifier:
    """Single KNN on the concatenated feature space with channel weights
    folded into the squared Euclidean distance."""

    def __init__(self, train: ChannelTrainingSet, k: int):
        if k < 1 or k > train.num_objects:
            raise DataError(f"K={k} outside 1..{train.num_objects}")
        self.train = train
        self.k = int(k)
        self.sigma = sigma_from_train(np.hstack(train.features))

    def supports_batch(self, x_channels, weights):
        mats, n = _as_channel_matrices(x_channels, self.train.num_channels)
        weights = np.atleast_2d(np.asarray(weights, dtype=np.float64))
        if weights.shape[0] == 1 and n > 1:
            weights = np.repeat(weights, n, axis=0)
        d2 = np.zeros((n, self.train.num_objects))
        for ch in range(self.train.num_channels):
            d2 += weights[:, ch][:, None] * pairwise_sq_dists(
                mats[ch], self.train.features[ch])
        sim = np.exp(-d2 / (2.0 * self.sigma * self.sigma))
        order = np.argsort(d2, axis=1, kind="stable")[:, :self.k]
        labels_topk = self.train.labels[order]
        sim_topk = np.take_along_axis(sim, order, axis=1)
        m = self.train.num_classes
        totals = _class_sums(labels_topk, sim_topk, m)
        denom = totals.sum(axis=1)
        fallback = denom <= 0.0
        safe = np.where(fallback, 1.0, denom)
        d = np.where(fallback[:, None], 1.0 / m, totals / safe[:, None])
        return d, fallback


class GaussianNaiveBayes:
    """Naive Bayes with one Gaussian per (class, attribute).

    Channel weights scale each attribute's log-likelihood contribution, so
    weight 0 removes the attribute and weight 1 is the plain classifier.
    """

    def __init__(self, train: ChannelTrainingSet):
        self.train = train
        X = np.hstack(train.features)
        self.attr_slices = []
        start = 0
        for f in train.features:
            self.attr_slices.append((start, start + f.shape[1]))
            start += f.shape[1]
        m = train.num_classes
        self.means = np.zeros((m, X.shape[1]))
        self.vars = np.ones((m, X.shape[1]))
        self.log_priors = np.zeros(m)
        for j in range(1, m + 1):
            rows = X[train.labels == j]
            self.means[j - 1] = rows.mean(axis=0)
            self.vars[j - 1] = np.maximum(rows.var(axis=0), VARIANCE_FLOOR)
            self.log_priors[j - 1] = np.log(rows.shape[0] / X.shape[0])

    def _attribute_weights(self, channel_weights: np.ndarray) -> np.ndarray:
        n, num_ch = channel_weights.shape
        out = np.zeros((n, self.means.shape[1]))
        for ch, (a, b) in enumerate(self.attr_slices):
            out[:, a:b] = channel_weights[:, ch][:, None]
        return out

    def supports_batch(self, x_channels, weights):
        mats, n = _as_channel_matrices(x_channels, self.train.num_channels)
        X = np.hstack(mats)
        weights = np.atleast_2d(np.asarray(weights, dtype=np.float64))
        if weights.shape[0] == 1 and n > 1:
            weights = np.repeat(weights, n, axis=0)
        attr_w = self._attribute_weights(weights)
        m = self.train.num_classes
        log_post = np.empty((n, m))
        for j in range(m):
            ll = (-0.5 * np.log(2.0 * np.pi * self.vars[j])[None, :]
                  - 0.5 * (X - self.means[j][None, :]) ** 2 / self.vars[j][None, :])
            log_post[:, j] = self.log_priors[j] + (attr_w * ll).sum(axis=1)
        log_post -= log_post.max(axis=1, keepdims=True)
        post = np.exp(log_post)
        d = post / post.sum(axis=1, keepdims=True)
        return d, np.zeros(n, dtype=bool)


def _fit_gmm_1d(x: np.ndarray, n_components: int, seed,
                restarts: int = 3, max_iter: int = 200, tol: float = 1e-8):
    """EM for a 1-D Gaussian mixture; deterministic given the seed.

    Restart 0 initializes means at quantiles; the remaining restarts draw
    means from the data. Best final log-likelihood wins.
    """
    x = np.asarray(x, dtype=np.float64)
    n = x.size
    k = min(n_components, max(1, np.unique(x).size))
    base_var = max(float(np.var(x)), VARIANCE_FLOOR)
    if k == 1:
        return (np.array([1.0]), np.array([float(np.mean(x))]),
                np.array([base_var]))

    best = None
    best_ll = -np.inf
    for restart in range(restarts):
        if restart == 0:
            means = np.quantile(x, (np.arange(k) + 0.5) / k)
        else:
            rng = rng_for(seed, restart)
            means = rng.choice(x, size=k, replace=False).astype(np.float64)
        variances = np.full(k, base_var)
        weights = np.full(k, 1.0 / k)
        ll_prev = -np.inf
        for _ in range(max_iter):
            # E step in log space
            log_comp = (np.log(weights)[None, :]
                        - 0.5 * np.log(2.0 * np.pi * variances)[None, :]
                        - 0.5 * (x[:, None] - means[None, :]) ** 2 / variances[None, :])
            log_norm = np.logaddexp.reduce(log_comp, axis=1)
            ll = float(log_norm.sum())
            resp = np.exp(log_comp - log_norm[:, None])
            # M step
            mass = resp.sum(axis=0) + 1e-12
            weights = mass / mass.sum()
            means = (resp * x[:, None]).sum(axis=0) / mass
            variances = ((resp * (x[:, None] - means[None, :]) ** 2).sum(axis=0)
                         / mass)
            variances = np.maximum(variances, VARIANCE_FLOOR)
            if abs(ll - ll_prev) < tol * max(1.0, abs(ll)):
                break
            ll_prev = ll
        if ll > best_ll:
            best_ll = ll
            best = (weights.copy(), means.copy(), variances.copy())
    return best


class MixtureNaiveBayes:
    """Naive Bayes with a per-attribute 1-D Gaussian mixture per class.

    The shared component count is tuned over {1, 2, 3} by 4-fold
    cross-validated balanced accuracy unless given explicitly.
    """

    def __init__(self, train: ChannelTrainingSet, n_components: int | None = None,
                 seed=0, cv_folds: int = 4, component_grid=NBM_COMPONENT_GRID):
        self.train = train
        if n_components is None:
            n_components = _tune_nbm_components(train, component_grid, cv_folds, seed)
        self.n_components = int(n_components)
        self._fit_params(train, seed)

    def _fit_params(self, train: ChannelTrainingSet, seed):
        X = np.hstack(train.features)
        self.attr_slices = []
        start = 0
        for f in train.features:
            self.attr_slices.append((start, start + f.shape[1]))
            start += f.shape[1]
        m = train.num_classes
        n_attr = X.shape[1]
        self.log_priors = np.zeros(m)
        self.mixtures = []  # [class][attr] -> (weights, means, vars)
        for j in range(1, m + 1):
            rows = X[train.labels == j]
            self.log_priors[j - 1] = np.log(rows.shape[0] / X.shape[0])
            per_attr = []
            for a in range(n_attr):
                per_attr.append(_fit_gmm_1d(rows[:, a], self.n_components,
                                            child_seed(seed, j, a)))
            self.mixtures.append(per_attr)

    def _attribute_weights(self, channel_weights: np.ndarray, n_attr: int) -> np.ndarray:
        n = channel_weights.shape[0]
        out = np.zeros((n, n_attr))
        for ch, (a, b) in enumerate(self.attr_slices):
            out[:, a:b] = channel_weights[:, ch][:, None]
        return out

    def supports_batch(self, x_channels, weights):
        mats, n = _as_channel_matrices(x_channels, self.train.num_channels)
        X = np.hstack(mats)
        weights = np.atleast_2d(np.asarray(weights, dtype=np.float64))
        if weights.shape[0] == 1 and n > 1:
            weights = np.repeat(weights, n, axis=0)
        n_attr = X.shape[1]
        attr_w = self._attribute_weights(weights, n_attr)
        m = self.train.num_classes
        log_post = np.empty((n, m))
        for j in range(m):
            ll = np.empty((n, n_attr))
            for a in range(n_attr):
                w, mu, var = self.mixtures[j][a]
                log_comp = (np.log(w)[None, :]
                            - 0.5 * np.log(2.0 * np.pi * var)[None, :]
                            - 0.5 * (X[:, a][:, None] - mu[None, :]) ** 2 / var[None, :])
                ll[:, a] = np.logaddexp.reduce(log_comp, axis=1)
            log_post[:, j] = self.log_priors[j] + (attr_w * ll).sum(axis=1)
        log_post -= log_post.max(axis=1, keepdims=True)
        post = np.exp(log_post)
        d = post / post.sum(axis=1, keepdims=True)
        return d, np.zeros(n, dtype=bool)


class BaselineClassifier:
    """B / AW / AWc weighting on top of a KNN, GNB, or NBM base classifier."""

    def __init__(self, base, weighting: str, detectors=None,
                 membership_spec: MembershipSpec = MembershipSpec("nt")):
        if weighting not in WEIGHTINGS:
            raise ConfigurationError(f"weighting must be one of {WEIGHTINGS}")
        if weighting in ("aw", "awc") and detectors is None:
            raise ConfigurationError(f"{weighting} weighting requires detectors")
        self.base = base
        self.weighting = weighting
        self.detectors = detectors
        self.membership_spec = membership_spec

    def channel_weights(self, x_channels):
        """Per-query channel weights plus a flag for the all-zero fallback."""
        train = self.base.train
        mats, n = _as_channel_matrices(x_channels, train.num_channels)
        if self.weighting == "b":
            return np.ones((n, train.num_channels)), np.zeros(n, dtype=bool)
        r = np.empty((n, train.num_channels))
        for ch, (model, band) in enumerate(self.detectors):
            scores = decision(model, mats[ch])
            r[:, ch] = membership(self.membership_spec,
                                  normalize_score(scores, band))
        w = r if self.weighting == "aw" else (r >= 0.5).astype(np.float64)
        reverted = ~(w.sum(axis=1) > 0.0)
        if reverted.any():
            w = w.copy()
            w[reverted] = 1.0
        return w, reverted

    def predict_batch(self, x_channels):
        mats, _ = _as_channel_matrices(x_channels, self.base.train.num_channels)
        w, reverted = self.channel_weights(mats)
        d, fallback = self.base.supports_batch(mats, w)
        labels = np.argmax(d, axis=1) + 1
        return d, labels, fallback | reverted


def baseline_predict(x_channels, base, weighting: str, detectors=None,
                     membership_spec: MembershipSpec = MembershipSpec("nt")):
    """Single-query baseline prediction: returns (ClassSupports, label)."""
    clf = BaselineClassifier(base, weighting, detectors=detectors,
                             membership_spec=membership_spec)
    d, labels, fallback = clf.predict_batch(x_channels)
    if d.shape[0] != 1:
        raise DataError("baseline_predict expects a single query")
    return ClassSupports(d=d[0], fallback=bool(fallback[0])), int(labels[0])


# ---------------------------------------------------------------------------
# K selection
# ---------------------------------------------------------------------------

def _fold_bac(y_true: np.ndarray, y_pred: np.ndarray, num_classes: int) -> float:
    recalls = []
    for j in range(1, num_classes + 1):
        mask = y_true == j
        if mask.any():
            recalls.append(float(np.mean(y_pred[mask] == j)))
    return float(np.mean(recalls))


def tune_k(channel_features, labels, num_classes: int, grid=DEFAULT_K_GRID,
           folds: int = 4, seed=0, style: str = "ensemble"):
    """Cross-validated K selection on clean training data.

    `style` picks the classifier family: "ensemble" scores the per-channel
    KNN ensemble (purity fixed at 1), "global" the concatenated-space KNN
    with unit weights. Returns (best_k, {k: mean balanced accuracy}); ties
    prefer the smaller K. A one-element grid short-circuits the search.
    """
    if style not in ("ensemble", "global"):
        raise ConfigurationError("style must be 'ensemble' or 'global'")
    grid = sorted(int(k) for k in grid)
    if not grid:
        raise DataError("empty K grid")
    if len(grid) == 1:
        return grid[0], {grid[0]: float("nan")}
    feats = [np.asarray(f, dtype=np.float64) for f in channel_features]
    labels = np.asarray(labels, dtype=np.int64)
    n = labels.size
    perm = rng_for(seed, 0).permutation(n)
    chunks = np.array_split(perm, folds)
    min_train = n - max(c.size for c in chunks)
    grid = [k for k in grid if k <= min_train]
    if not grid:
        raise DataError("all K values exceed the fold training size")
    totals = {k: 0.0 for k in grid}
    count = 0
    for val_idx in chunks:
        if val_idx.size == 0:
            continue
        train_idx = np.setdiff1d(perm, val_idx, assume_unique=True)
        usable = grid
        tr = build_channel_training_set([f[train_idx] for f in feats],
                                        labels[train_idx], num_classes)
        if style == "global":
            mats = [f[val_idx] for f in feats]
            d2 = np.zeros((val_idx.size, train_idx.size))
            for ch in range(tr.num_channels):
                d2 += pairwise_sq_dists(mats[ch], tr.features[ch])
            sigma = sigma_from_train(np.hstack(tr.features))
            sim_all = [np.exp(-d2 / (2.0 * sigma * sigma))]
            orders = [np.argsort(d2, axis=1, kind="stable")]
        else:
            sim_all, orders = [], []
            for ch in range(tr.num_channels):
                d2 = pairwise_sq_dists(feats[ch][val_idx], tr.features[ch])
                sigma = tr.sigmas[ch]
                sim = np.exp(-d2 / (2.0 * sigma * sigma))
                sim_all.append(sim)
                orders.append(np.argsort(-sim, axis=1, kind="stable"))
        y_val = labels[val_idx]
        for k in usable:
            supports = np.zeros((val_idx.size, num_classes))
            for sim, order in zip(sim_all, orders):
                top = order[:, :k]
                supports += _class_sums(tr.labels[top],
                                        np.take_along_axis(sim, top, axis=1),
                                        num_classes)
            y_pred = np.argmax(supports, axis=1) + 1
            totals[k] += _fold_bac(y_val, y_pred, num_classes)
        count += 1
    mean_bac = {k: totals[k] / max(count, 1) for k in grid}
    best = max(grid, key=lambda k: (mean_bac[k], -k))
    return best, mean_bac
