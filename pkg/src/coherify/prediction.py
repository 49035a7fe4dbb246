"""Predicting the typical squared residual from panel covariance alone.

Under uniform i.i.d. owner selection the composed quote mixes panel
members coordinate by coordinate, so the per-coordinate panel variances D
are the effective covariance. With a single binding constraint of normal
``a`` the expected squared residual is ``kappa * a'Da / |a|^2``: kappa is
1 for equality cuts, 1/2 for an inequality whose boundary passes through
the panel mean with a symmetric panel, and the value degrades to an upper
bound when the panel mean sits strictly inside. ``tr(D)`` bounds the
expectation with no geometry at all.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass

import numpy as np

from .composition import CompositionSpec
from .polytope import Relation, RelationKind, build_polytope
from .projection import project_polytope_batch

EXHAUSTIVE_LIMIT = 65_536
BOUNDARY_TOL = 1e-9

REGIME_EQUALITY = "equality"
REGIME_BOUNDARY = "boundary-inequality"
REGIME_INTERIOR = "interior-inequality"
REGIME_GENERIC = "generic"


@dataclass(frozen=True)
class PanelStats:
    panel_mean: np.ndarray
    diag_cov: np.ndarray
    k: int
    quotes: tuple = ()

    def __post_init__(self):
        self.panel_mean.setflags(write=False)
        self.diag_cov.setflags(write=False)


@dataclass(frozen=True)
class MagnitudePrediction:
    predicted_sq_residual: float
    kappa: float
    normal: np.ndarray | None
    regime: str


def panel_stats(panel) -> PanelStats:
    """Panel mean and per-coordinate variance with 1/k normalization."""
    quotes = [np.asarray(q, dtype=float) for q in panel]
    k = len(quotes)
    if k < 2:
        raise ValueError("panel statistics need at least 2 quotes")
    dims = {q.shape for q in quotes}
    if len(dims) != 1:
        raise ValueError("panel quotes must share one dimension")
    P = np.stack(quotes)
    mean = P.mean(axis=0)
    diag = np.mean((P - mean) ** 2, axis=0)
    return PanelStats(mean, diag, k, tuple(tuple(q) for q in quotes))


def _candidate_normals(relation: Relation) -> list[tuple[np.ndarray, float]]:
    """Defining multi-coordinate halfspaces of an inequality relation, in id order."""
    spec = build_polytope(relation)
    out = []
    for c in spec.halfspaces:
        a = np.asarray(c.a, dtype=float)
        if np.count_nonzero(a) >= 2:
            out.append((a, c.b))
    return out


def predict_magnitude(stats: PanelStats, relation: Relation,
                      empirical_kappa: bool = False) -> MagnitudePrediction:
    """Rayleigh-quotient magnitude prediction for one relation.

    Equality relations use their full-support normal with kappa 1. The
    Frechet and ladder relations pick the defining halfspace with smallest
    slack at the panel mean (ties to the lowest constraint id) and kappa
    1/2; a strictly interior panel mean downgrades the value to an upper
    bound, flagged through the regime. ``empirical_kappa`` replaces 1/2 by
    the positive-part second-moment ratio of the panel scalars.
    """
    D = stats.diag_cov
    m = D.size
    kind = relation.kind
    if kind is RelationKind.NEGATION:
        a = np.ones(2)
        return MagnitudePrediction(float(a @ (D * a)) / 2.0, 1.0, a, REGIME_EQUALITY)
    if kind is RelationKind.PARTITION:
        a = np.ones(m)
        return MagnitudePrediction(float(D.sum()) / m, 1.0, a, REGIME_EQUALITY)
    if kind is RelationKind.PARAPHRASE:
        return MagnitudePrediction(float(D.sum()), 1.0, None, REGIME_GENERIC)
    candidates = _candidate_normals(relation)
    slacks = [b - float(a @ stats.panel_mean) for a, b in candidates]
    pick = int(np.argmin(slacks))
    a, _ = candidates[pick]
    slack = slacks[pick]
    kappa = 0.5
    if empirical_kappa and stats.quotes:
        scalars = np.array([float(a @ np.asarray(q)) for q in stats.quotes])
        scalars = scalars - scalars.mean()
        denom = float(np.sum(scalars**2))
        kappa = float(np.sum(np.maximum(scalars, 0.0) ** 2) / denom) if denom > 0 else 0.5
    regime = REGIME_BOUNDARY if slack <= BOUNDARY_TOL else REGIME_INTERIOR
    rayleigh = float(a @ (D * a)) / float(a @ a)
    return MagnitudePrediction(kappa * rayleigh, kappa, a, regime)


def _assignments_exhaustive(k: int, m: int) -> np.ndarray:
    return np.array(list(itertools.product(range(k), repeat=m)), dtype=int)


def observe_magnitude_samples(comp: CompositionSpec, panel, n_draws: int = 10_000,
                              seed: int = 0) -> np.ndarray:
    """Per-draw squared residuals under uniform i.i.d. owner selection.

    Exhausts all k^m assignments when that is cheaper than sampling;
    otherwise draws ``n_draws`` assignment vectors from ``seed``.
    """
    P = np.stack([np.asarray(q, dtype=float) for q in panel])
    k, m = P.shape
    if m != comp.joint_dim:
        raise ValueError("panel quotes must live on the joint coordinates")
    if k**m <= EXHAUSTIVE_LIMIT:
        sigma = _assignments_exhaustive(k, m)
    else:
        rng = np.random.default_rng(np.random.SeedSequence((abs(int(seed)), 0x0B5E)))
        sigma = rng.integers(0, k, size=(n_draws, m))
    X = P[sigma, np.arange(m)]
    projected = project_polytope_batch(comp.joint_polytope(), X)
    return np.sum((X - projected) ** 2, axis=1)


def observe_magnitude(comp: CompositionSpec, panel, n_draws: int = 10_000,
                      seed: int = 0) -> float:
    """Mean squared residual under uniform i.i.d. owner selection."""
    return float(np.mean(observe_magnitude_samples(comp, panel, n_draws, seed)))
