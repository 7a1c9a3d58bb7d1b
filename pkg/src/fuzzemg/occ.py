"""Per-channel contamination detectors: Gaussian-kernel one-class SVMs.

Each channel gets its own detector trained on clean-condition feature
vectors only (labels ignored). The dual problem

    minimize   0.5 * sum_ij alpha_i alpha_j K_ij
    subject to sum_i alpha_i = 1,  0 <= alpha_i <= 1 / (nu * N)

is solved by pairwise coordinate descent on the maximal-violation pair with
a cached kernel matrix; `nu` upper-bounds the training rejection fraction
and lower-bounds the support-vector fraction. The decision score

    score(x) = sum_i alpha_i * exp(-gamma * ||x - s_i||^2) - rho

is positive on the inlier side. A ScoreBand (median absolute training
score) turns raw scores into the band coordinate used by the membership
functions; the band is this module's explicit stand-in for placing the
fuzzy transition region in score units, since nothing pins it externally.
"""
from __future__ import annotations

import json
import warnings
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import DataError, NumericalError
from .util import child_seed, pairwise_sq_dists, rng_for

DEFAULT_NU_GRID = tuple(round(0.1 * i, 1) for i in range(1, 11))
KKT_TOLERANCE = 1e-3
MAX_PAIR_UPDATES = 100_000

MODEL_FORMAT = "fuzzemg-occ-model"
MODEL_VERSION = 1


@dataclass(frozen=True)
class OneClassModel:
    """Trained detector: support vectors, dual weights, offset, kernel width.

    `shift`/`scale` hold an optional per-dimension input standardization
    (the support vectors are stored in the standardized space). Plain
    `train_ocsvm` leaves them unset; `fit_channel_detectors` uses them so
    mixed-scale features (tiny MAVs next to large SSC counts) all reach the
    spherical kernel on an equal footing.
    """

    support_vectors: np.ndarray   # (S, d)
    alpha: np.ndarray             # (S,), each in (0, 1/(nu*N)]
    rho: float
    gamma: float
    nu: float
    dim: int
    n_train: int
    iterations: int = 0
    shift: np.ndarray | None = None
    scale: np.ndarray | None = None


@dataclass(frozen=True)
class ScoreBand:
    """Symmetric score band [-scale, +scale] around the crisp boundary at 0."""

    scale: float

    def __post_init__(self):
        if not self.scale > 0:
            raise DataError("score band scale must be positive")


def default_gamma(X: np.ndarray) -> float:
    """Kernel width 1 / (d * mean per-coordinate variance)."""
    X = np.asarray(X, dtype=np.float64)
    mean_var = float(np.mean(np.var(X, axis=0)))
    if mean_var <= 0.0:
        raise NumericalError("degenerate training data: zero variance")
    return 1.0 / (X.shape[1] * mean_var)


def _solve_dual(kernel: np.ndarray, nu: float, tol: float,
                max_pair_updates: int):
    """Pairwise coordinate descent on the one-class dual for a fixed kernel.

    Returns (alpha, rho, iterations). Box bounds are hit exactly (clamped
    assignments), and pair updates preserve the sum constraint.
    """
    n = kernel.shape[0]
    c_box = 1.0 / (nu * n)

    # feasible start: fill the box bottom-up (for nu == 1 this is the solution)
    alpha = np.zeros(n)
    n_full = int(np.floor(nu * n))
    alpha[:n_full] = c_box
    if n_full < n:
        alpha[n_full] = 1.0 - n_full * c_box
    grad = kernel @ alpha

    iterations = 0
    while iterations < max_pair_updates:
        up = alpha < c_box
        low = alpha > 0.0
        if not up.any() or not low.any():
            break
        g_up = np.where(up, grad, np.inf)
        g_low = np.where(low, grad, -np.inf)
        i = int(np.argmin(g_up))
        j = int(np.argmax(g_low))
        if grad[j] - grad[i] <= tol:
            break
        curv = kernel[i, i] + kernel[j, j] - 2.0 * kernel[i, j]
        if curv <= 1e-12:
            curv = 1e-12
        step = (grad[j] - grad[i]) / curv
        room_i = c_box - alpha[i]
        step = min(step, room_i, alpha[j])
        if step <= 0.0:
            break
        if step == room_i:
            alpha[i] = c_box
        else:
            alpha[i] += step
        if step == alpha[j]:
            alpha[j] = 0.0
        else:
            alpha[j] -= step
        grad += step * (kernel[:, i] - kernel[:, j])
        iterations += 1

    free = (alpha > 0.0) & (alpha < c_box)
    if free.any():
        rho = float(np.mean(grad[free]))
    else:
        upper = grad[alpha == 0.0]
        lower = grad[alpha >= c_box]
        hi = float(np.min(upper)) if upper.size else float(np.max(lower))
        lo = float(np.max(lower)) if lower.size else float(np.min(upper))
        rho = 0.5 * (hi + lo)
    return alpha, rho, iterations


def _validate_training_matrix(X: np.ndarray, nu: float):
    if X.ndim != 2 or X.shape[0] < 8:
        raise DataError("need a (N, d) matrix with N >= 8")
    if not 0.0 < nu <= 1.0:
        raise DataError(f"nu must be in (0, 1], got {nu}")
    if not np.isfinite(X).all():
        raise DataError("training data contains non-finite values")
    if np.all(X == X[0]):
        raise NumericalError("degenerate training data: all points identical")


def train_ocsvm(X, nu: float, gamma: float | None = None,
                tol: float = KKT_TOLERANCE,
                max_pair_updates: int = MAX_PAIR_UPDATES) -> OneClassModel:
    """Solve the one-class dual for `X` and return the trained model."""
    X = np.asarray(X, dtype=np.float64)
    _validate_training_matrix(X, nu)
    if gamma is None:
        gamma = default_gamma(X)
    if not gamma > 0:
        raise DataError("gamma must be positive")
    kernel = np.exp(-gamma * pairwise_sq_dists(X, X))
    alpha, rho, iterations = _solve_dual(kernel, nu, tol, max_pair_updates)
    keep = alpha > 0.0
    return OneClassModel(
        support_vectors=X[keep].copy(), alpha=alpha[keep].copy(), rho=rho,
        gamma=float(gamma), nu=float(nu), dim=X.shape[1], n_train=X.shape[0],
        iterations=iterations)


def decision(model: OneClassModel, x):
    """Decision score(s); positive means inlier. Accepts (d,) or (n, d)."""
    x = np.asarray(x, dtype=np.float64)
    single = x.ndim == 1
    pts = x[None, :] if single else x
    if pts.shape[1] != model.dim:
        raise DataError(f"expected dimension {model.dim}, got {pts.shape[1]}")
    if model.shift is not None:
        pts = (pts - model.shift[None, :]) / model.scale[None, :]
    k = np.exp(-model.gamma * pairwise_sq_dists(pts, model.support_vectors))
    scores = k @ model.alpha - model.rho
    return float(scores[0]) if single else scores


def sample_uniform_outliers(X, n: int, seed) -> np.ndarray:
    """Uniform samples in the bounding box of X expanded by 10% per side."""
    X = np.asarray(X, dtype=np.float64)
    lo = X.min(axis=0)
    hi = X.max(axis=0)
    span = hi - lo
    lo = lo - 0.1 * span
    hi = hi + 0.1 * span
    rng = rng_for(seed)
    return rng.uniform(lo, hi, size=(n, X.shape[1]))


def tune_nu(X, nu_grid=DEFAULT_NU_GRID, folds: int = 4, seed=0) -> float:
    """Pick nu by cross-validated inlier/outlier balanced accuracy.

    Each validation quarter is augmented with an equal-sized set of
    artificial outliers drawn uniformly from the (expanded) bounding box of
    the fold's training part; crisp accuracy is scored at threshold 0.
    Ties prefer the smaller nu. Only the returned value is kept, the caller
    retrains on all of X.
    """
    grid = sorted(float(v) for v in nu_grid)
    if not grid:
        raise DataError("empty nu grid")
    if len(grid) == 1:
        return grid[0]
    X = np.asarray(X, dtype=np.float64)
    n = X.shape[0]
    perm = rng_for(seed, 0).permutation(n)
    chunks = np.array_split(perm, folds)
    scores = np.zeros(len(grid))
    counts = np.zeros(len(grid))
    for f, val_idx in enumerate(chunks):
        if val_idx.size == 0:
            continue
        train_idx = np.setdiff1d(perm, val_idx, assume_unique=True)
        x_tr, x_val = X[train_idx], X[val_idx]
        _validate_training_matrix(x_tr, grid[0])
        outliers = sample_uniform_outliers(x_tr, val_idx.size, child_seed(seed, 1 + f))
        # kernel blocks depend on the fold only, so hoist them out of the grid
        gamma = default_gamma(x_tr)
        k_train = np.exp(-gamma * pairwise_sq_dists(x_tr, x_tr))
        k_val = np.exp(-gamma * pairwise_sq_dists(x_val, x_tr))
        k_out = np.exp(-gamma * pairwise_sq_dists(outliers, x_tr))
        for g, nu in enumerate(grid):
            alpha, rho, _ = _solve_dual(k_train, nu, KKT_TOLERANCE, MAX_PAIR_UPDATES)
            inlier_recall = float(np.mean(k_val @ alpha - rho >= 0.0))
            outlier_recall = float(np.mean(k_out @ alpha - rho < 0.0))
            scores[g] += 0.5 * (inlier_recall + outlier_recall)
            counts[g] += 1.0
    mean_bac = scores / np.maximum(counts, 1.0)
    best = int(np.argmax(mean_bac))  # argmax takes the first max: smallest nu
    return grid[best]


def fit_channel_detectors(channel_features, seed=0, nu_grid=DEFAULT_NU_GRID,
                          tune_folds: int = 4) -> list:
    """Independently tune and train one detector per channel.

    `channel_features` is a sequence of (N, d_l) matrices of clean-condition
    features. Each channel's features are standardized per dimension before
    tuning and training (the resulting model carries the scaler and accepts
    raw features). Returns [(OneClassModel, ScoreBand), ...]; any failure
    aborts with the channel index in the message.
    """
    detectors = []
    for ch, x_ch in enumerate(channel_features):
        try:
            x_ch = np.asarray(x_ch, dtype=np.float64)
            shift = x_ch.mean(axis=0)
            scale = x_ch.std(axis=0)
            scale = np.where(scale > 0.0, scale, 1.0)
            z = (x_ch - shift[None, :]) / scale[None, :]
            nu = tune_nu(z, nu_grid=nu_grid, folds=tune_folds,
                         seed=child_seed(seed, ch))
            raw = train_ocsvm(z, nu)
            model = OneClassModel(
                support_vectors=raw.support_vectors, alpha=raw.alpha,
                rho=raw.rho, gamma=raw.gamma, nu=raw.nu, dim=raw.dim,
                n_train=raw.n_train, iterations=raw.iterations,
                shift=shift, scale=scale)
            band = float(np.median(np.abs(decision(model, x_ch))))
            if not band > 0.0:
                warnings.warn(f"channel {ch}: flat training scores, using unit band")
                band = 1.0
            detectors.append((model, ScoreBand(scale=band)))
        except (DataError, NumericalError) as exc:
            raise type(exc)(f"channel {ch}: {exc}") from exc
    return detectors


def save_model(model: OneClassModel, band: ScoreBand, path) -> Path:
    """Versioned flat-text (JSON) model file for cross-run reuse."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    payload = {
        "format": MODEL_FORMAT,
        "version": MODEL_VERSION,
        "gamma": model.gamma,
        "nu": model.nu,
        "rho": model.rho,
        "dim": model.dim,
        "n_train": model.n_train,
        "band_scale": band.scale,
        "alpha": [float(a) for a in model.alpha],
        "support_vectors": [[float(v) for v in row] for row in model.support_vectors],
        "shift": None if model.shift is None else [float(v) for v in model.shift],
        "scale": None if model.scale is None else [float(v) for v in model.scale],
    }
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(payload, fh, indent=1, sort_keys=True)
        fh.write("\n")
    return path


def load_model(path):
    """Inverse of `save_model`; returns (OneClassModel, ScoreBand)."""
    path = Path(path)
    try:
        with open(path, "r", encoding="utf-8") as fh:
            payload = json.load(fh)
        if payload.get("format") != MODEL_FORMAT or payload.get("version") != MODEL_VERSION:
            raise DataError(f"{path}: not a version-{MODEL_VERSION} {MODEL_FORMAT} file")
        shift = payload.get("shift")
        scale = payload.get("scale")
        model = OneClassModel(
            support_vectors=np.array(payload["support_vectors"], dtype=np.float64),
            alpha=np.array(payload["alpha"], dtype=np.float64),
            rho=float(payload["rho"]), gamma=float(payload["gamma"]),
            nu=float(payload["nu"]), dim=int(payload["dim"]),
            n_train=int(payload["n_train"]),
            shift=None if shift is None else np.array(shift, dtype=np.float64),
            scale=None if scale is None else np.array(scale, dtype=np.float64))
        band = ScoreBand(scale=float(payload["band_scale"]))
    except (OSError, ValueError, KeyError, TypeError) as exc:
        raise DataError(f"cannot load detector model from {path}: {exc}") from exc
    return model, band
