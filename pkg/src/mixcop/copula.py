"""Finite mixtures of elliptical copulas over serial correlation structures.

A mixture has K components from a single elliptical family (all Gaussian
or all Student-t with one shared df; mixing across families is not
identifiable and is rejected).  Each component carries its own
correlation structure over observation times:

* ``ar1``: rho(t, s) = exp(-decay * |t - s|)
* ``ex``:  rho(t, s) = exp(-decay) for every distinct pair

with ``decay > 0`` so that correlations stay inside (0, 1).

Copula evaluations go through normal/Student-t scores.  The score
transform maps u = 0 and u = 1 to saturation points of the corresponding
univariate CDF, which makes grounding and margin consistency exact in
floating point rather than approximate.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .special import (
    bvn_cdf,
    bvt_cdf_batch,
    bvt_rect_batch,
    bvt_rect_nodes,
    std_normal_quantile,
    student_t_quantile,
)

__all__ = [
    "CorrelationStructure",
    "MixtureCopulaSpec",
    "PairMixture",
    "copula_scores",
    "biv_copula_cdf",
    "rect_prob_z",
]

_STRUCTURES = ("ar1", "ex")
_FAMILIES = ("gaussian", "t")
# rectangle probabilities are floored here before logs are taken
RECT_FLOOR = 1e-300

_GAUSS_SCORE_CLIP = 39.0
_T_SCORE_CLIP = 1e8


@dataclass(frozen=True)
class CorrelationStructure:
    """Serial correlation family for one mixture component."""

    kind: str
    decay: float

    def __post_init__(self):
        if self.kind not in _STRUCTURES:
            raise ValueError(f"unknown correlation structure {self.kind!r}; expected one of {_STRUCTURES}")
        if not np.isfinite(self.decay) or self.decay <= 0:
            raise ValueError("decay parameter must be positive and finite")

    def pair_corr(self, t1, t2):
        """Correlation between observations at times t1 and t2 (vectorized)."""
        t1 = np.asarray(t1, dtype=float)
        t2 = np.asarray(t2, dtype=float)
        if self.kind == "ar1":
            return np.exp(-self.decay * np.abs(t1 - t2))
        same = t1 == t2
        return np.where(same, 1.0, np.exp(-self.decay))

    def matrix(self, times):
        """Full correlation matrix over a time vector."""
        t = np.asarray(times, dtype=float)
        return np.asarray(self.pair_corr(t[:, None], t[None, :]))


@dataclass(frozen=True)
class MixtureCopulaSpec:
    """K-component elliptical mixture copula.

    ``weights`` and ``structures`` have one entry per component; ``df`` is
    the shared degrees of freedom and must be given iff family is "t".
    """

    family: str
    weights: tuple
    structures: tuple
    df: float | None = None

    def __post_init__(self):
        if self.family not in _FAMILIES:
            raise ValueError(f"unknown copula family {self.family!r}; expected one of {_FAMILIES}")
        object.__setattr__(self, "weights", tuple(float(w) for w in self.weights))
        object.__setattr__(self, "structures", tuple(self.structures))
        if len(self.weights) == 0 or len(self.weights) != len(self.structures):
            raise ValueError("weights and structures must be non-empty and of equal length")
        if any(not (0.0 < w < 1.0 or (len(self.weights) == 1 and w == 1.0)) for w in self.weights):
            raise ValueError("mixture weights must lie in (0, 1) (or be exactly 1 for K=1)")
        if abs(sum(self.weights) - 1.0) > 1e-8:
            raise ValueError("mixture weights must sum to 1")
        for s in self.structures:
            if not isinstance(s, CorrelationStructure):
                raise ValueError("structures must be CorrelationStructure instances")
        if self.family == "t":
            if self.df is None or not np.isfinite(self.df) or self.df <= 0:
                raise ValueError("Student-t mixture requires positive df")
        elif self.df is not None:
            raise ValueError("df is only meaningful for the Student-t family")

    @property
    def n_components(self):
        return len(self.weights)

    def component_pair_corrs(self, t1, t2):
        """Per-component correlations for a time pair; shape (K,) + broadcast."""
        return np.array([s.pair_corr(t1, t2) for s in self.structures])

    def corr_matrices(self, times):
        """Stacked per-component correlation matrices, shape (K, d, d)."""
        return np.array([s.matrix(times) for s in self.structures])

    def pair_mixture(self, t1, t2):
        """Freeze the mixture at one time pair."""
        return PairMixture(
            weights=np.array(self.weights),
            rhos=np.array([float(s.pair_corr(t1, t2)) for s in self.structures]),
            family=self.family,
            df=self.df,
        )


def copula_scores(u, family, df=None):
    """Map uniforms to elliptical scores (normal or t quantiles).

    u = 0 and u = 1 land on clipped saturation points where the univariate
    CDF round-trips to exactly 0/1 in double precision.
    """
    u = np.asarray(u, dtype=float)
    if np.any((u < 0) | (u > 1)):
        raise ValueError("uniform scores must lie in [0, 1]")
    if family == "gaussian":
        clip = _GAUSS_SCORE_CLIP
        inner = std_normal_quantile(np.clip(u, 1e-300, 1.0 - 1e-16))
    elif family == "t":
        clip = _T_SCORE_CLIP
        inner = student_t_quantile(np.clip(u, 1e-300, 1.0 - 1e-16), df)
    else:
        raise ValueError(f"unknown copula family {family!r}")
    return np.clip(np.where(u <= 0.0, -clip, np.where(u >= 1.0, clip, inner)), -clip, clip)


def _biv_cdf_z(z1, z2, rho, family, df, nodes=None):
    if family == "gaussian":
        return bvn_cdf(z1, z2, rho)
    return bvt_cdf_batch(z1, z2, rho, df, nodes=nodes)


def biv_copula_cdf(u1, u2, rho, family, df=None):
    """One elliptical copula component C(u1, u2; rho), vectorized."""
    u1 = np.asarray(u1, dtype=float)
    u2 = np.asarray(u2, dtype=float)
    z1 = copula_scores(u1, family, df)
    z2 = copula_scores(u2, family, df)
    return _biv_cdf_z(z1, z2, rho, family, df)


def rect_prob_z(z1_hi, z1_lo, z2_hi, z2_lo, rho, family, df=None, nodes=None):
    """Copula rectangle mass C(hi,hi) - C(lo,hi) - C(hi,lo) + C(lo,lo).

    Arguments are elliptical scores (output of `copula_scores`); all four
    corner arrays share one correlation.  The Student-t family integrates
    the rectangle directly (no corner cancellation); ``nodes`` is then a
    grid from `special.bvt_rect_nodes(z1_hi, z1_lo, df)` reusable across
    rho values.
    """
    z1_hi = np.atleast_1d(np.asarray(z1_hi, dtype=float))
    z1_lo = np.atleast_1d(np.asarray(z1_lo, dtype=float))
    z2_hi = np.atleast_1d(np.asarray(z2_hi, dtype=float))
    z2_lo = np.atleast_1d(np.asarray(z2_lo, dtype=float))
    if family == "t":
        return bvt_rect_batch(z1_hi, z1_lo, z2_hi, z2_lo, rho, df, nodes=nodes)
    n = z1_hi.shape[0]
    a = np.concatenate([z1_hi, z1_lo, z1_hi, z1_lo])
    b = np.concatenate([z2_hi, z2_hi, z2_lo, z2_lo])
    c = bvn_cdf(a, b, np.tile(np.broadcast_to(rho, (n,)), 4))
    rect = c[:n] - c[n : 2 * n] - c[2 * n : 3 * n] + c[3 * n :]
    return np.maximum(rect, 0.0)


@dataclass
class PairMixture:
    """A mixture copula restricted to one observation-time pair."""

    weights: np.ndarray
    rhos: np.ndarray
    family: str
    df: float | None = None

    def cdf(self, u1, u2):
        """Mixture CDF at (u1, u2), vectorized over the uniforms."""
        z1, z2 = np.broadcast_arrays(
            copula_scores(u1, self.family, self.df), copula_scores(u2, self.family, self.df)
        )
        shape = z1.shape
        z1 = np.atleast_1d(z1).ravel()
        z2 = np.atleast_1d(z2).ravel()
        out = np.zeros(z1.shape)
        for w, r in zip(self.weights, self.rhos):
            out = out + w * _biv_cdf_z(z1, z2, np.full(z1.shape, float(r)), self.family, self.df)
        return out.reshape(shape) if shape else float(out[0])

    def rect_prob(self, u1_hi, u1_lo, u2_hi, u2_lo, floor=RECT_FLOOR):
        """Mixture mass of the rectangle (u1_lo, u1_hi] x (u2_lo, u2_hi].

        Floored at ``floor`` so that downstream logs stay finite.
        """
        z1h = copula_scores(u1_hi, self.family, self.df)
        z1l = copula_scores(u1_lo, self.family, self.df)
        z2h = copula_scores(u2_hi, self.family, self.df)
        z2l = copula_scores(u2_lo, self.family, self.df)
        out = None
        nodes = None
        if self.family == "t":
            nodes = bvt_rect_nodes(np.atleast_1d(z1h), np.atleast_1d(z1l), self.df)
        for w, r in zip(self.weights, self.rhos):
            term = w * rect_prob_z(z1h, z1l, z2h, z2l, float(r), self.family, self.df, nodes=nodes)
            out = term if out is None else out + term
        return np.maximum(out, floor)
