"""Channel-purity membership functions.

A detector score is first mapped into the band coordinate t in [0, 1]
(`normalize_score`): t = 0 at the fully-contaminated band edge, t = 0.5 at
the crisp detector boundary (score 0), t = 1 at the fully-clean edge. Each
membership kind then maps t to a purity degree r in [0, 1]:

    cr   step at the crisp boundary (reproduces the hard detector decision)
    cr0  constant 1 (contamination ignored)
    nt   linear
    lp   linear then parabolic, C1 at the joint
    sm   smoothstep 3t^2 - 2t^3
    ss   logistic, rescaled to hit 0 and 1 exactly at the band edges

All kinds are non-decreasing; every kind except cr0 maps 0 -> 0 and 1 -> 1.
The lp coefficients 4/3 are the unique choice making the linear and
parabolic pieces meet with equal value and slope at t = 0.5 while keeping
the (0,0) and (1,1) endpoints.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConfigurationError
from .occ import ScoreBand

MEMBERSHIP_KINDS = ("cr", "cr0", "nt", "lp", "sm", "ss")


@dataclass(frozen=True)
class MembershipSpec:
    """Which membership shape to use; `ss_beta` is the logistic steepness."""

    kind: str = "nt"
    ss_beta: float = 10.0

    def __post_init__(self):
        if self.kind not in MEMBERSHIP_KINDS:
            raise ConfigurationError(
                f"membership kind must be one of {MEMBERSHIP_KINDS}, got {self.kind!r}")
        if not self.ss_beta > 0:
            raise ConfigurationError("ss_beta must be positive")


def normalize_score(score, band: ScoreBand):
    """Map a raw detector score into the band coordinate t in [0, 1].

    t = clamp((score + s) / (2s), 0, 1), so score 0 lands exactly at 0.5.
    Accepts scalars or arrays.
    """
    s = band.scale
    t = (np.asarray(score, dtype=np.float64) + s) / (2.0 * s)
    t = np.clip(t, 0.0, 1.0)
    return float(t) if t.ndim == 0 else t


def membership(spec: MembershipSpec, t):
    """Purity degree r in [0, 1] for band coordinate t in [0, 1].

    The caller must clamp: t outside [0, 1] is a contract violation.
    Accepts scalars or arrays.
    """
    arr = np.asarray(t, dtype=np.float64)
    if np.any(arr < 0.0) or np.any(arr > 1.0):
        raise ValueError("t must lie in [0, 1]; clamp with normalize_score first")
    kind = spec.kind
    if kind == "cr":
        r = np.where(arr >= 0.5, 1.0, 0.0)
    elif kind == "cr0":
        r = np.ones_like(arr)
    elif kind == "nt":
        r = arr.copy()
    elif kind == "lp":
        r = np.where(arr <= 0.5,
                     (4.0 / 3.0) * arr,
                     1.0 - (4.0 / 3.0) * np.square(1.0 - arr))
    elif kind == "sm":
        r = arr * arr * (3.0 - 2.0 * arr)
    else:  # ss
        beta = spec.ss_beta

        def logistic(v):
            return 1.0 / (1.0 + np.exp(-beta * (v - 0.5)))

        low = logistic(0.0)
        high = logistic(1.0)
        r = (logistic(arr) - low) / (high - low)
    r = np.clip(r, 0.0, 1.0)
    return float(r) if r.ndim == 0 else r


def membership_from_score(spec: MembershipSpec, score, band: ScoreBand):
    """Convenience composition: raw detector score straight to purity."""
    return membership(spec, normalize_score(score, band))
