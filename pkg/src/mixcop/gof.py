"""Goodness of fit: the modified t-plot for elliptical mixture copulas.

Each subject's counts are mapped to uniforms through the fitted margins,
then to elliptical scores through the component family's univariate
quantile.  Subjects are hard-assigned to the posterior-modal mixture
component, whitened with that component's correlation matrix, and
reduced to a one-sample t statistic; under a correct model the CDF
transform of those statistics is approximately U(0, 1), which the QQ
pairs and the Kolmogorov-Smirnov statistic quantify.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.special import kolmogorov, logsumexp

from .marginals import count_cdf
from .special import (
    inv_sqrt_sym,
    mvn_logpdf_corr,
    mvt_logpdf_corr,
    std_normal_quantile,
    student_t_cdf,
    student_t_quantile,
)

__all__ = ["TplotResult", "tplot", "ks_uniform", "t_statistic"]

# discrete margins can put y at F(y) = 1 exactly; keep quantiles finite
U_CLAMP = 1e-12


@dataclass
class TplotResult:
    """Per-subject t-plot diagnostics.

    ``v`` holds the uniformized t statistics of the included subjects (in
    subject order); ``qq_pairs`` stacks (theoretical, sorted sample)
    columns; single-visit subjects cannot produce a t statistic and are
    counted in ``n_excluded``.
    """

    v: np.ndarray
    t_stats: np.ndarray
    component_assignment: np.ndarray  # 1-based
    posterior_weights: np.ndarray  # (n_included, K)
    subject_ids: np.ndarray
    qq_pairs: np.ndarray  # (n_included, 2)
    ks_statistic: float
    ks_pvalue: float
    n_excluded: int

    def __post_init__(self):
        if np.any((self.v < 0) | (self.v > 1)):
            raise ValueError("v entries must lie in [0, 1]")


def ks_uniform(v):
    """One-sample Kolmogorov-Smirnov statistic against U(0, 1).

    Returns ``(statistic, pvalue)`` with the asymptotic Kolmogorov
    p-value.
    """
    v = np.asarray(v, dtype=float)
    if v.size == 0:
        raise ValueError("empty sample")
    if np.any((v < 0) | (v > 1)):
        raise ValueError("entries must lie in [0, 1]")
    vs = np.sort(v)
    n = vs.size
    i = np.arange(1, n + 1)
    d = float(np.max(np.maximum(i / n - vs, vs - (i - 1) / n)))
    return d, float(kolmogorov(np.sqrt(n) * d))


def t_statistic(z_star):
    """Location ratio sqrt(n) * mean / sd of one subject's whitened scores.

    Scale-free: multiplying ``z_star`` by any positive constant cancels.
    A degenerate sample (sd = 0) saturates to 0 or +-1e8 by the sign of
    the mean.
    """
    z_star = np.asarray(z_star, dtype=float)
    n_i = z_star.size
    z_bar = z_star.mean()
    s = z_star.std(ddof=1)
    if s == 0.0:
        return 0.0 if z_bar == 0.0 else float(np.sign(z_bar) * 1e8)
    return float(np.sqrt(n_i) * z_bar / s)


def tplot(dataset, fit):
    """Modified t-plot of a fitted mixture-copula count model.

    ``fit`` needs a ``.marginal`` stage-1 estimate and a ``.spec()``
    mixture copula (duck-typed; `estimation.FitResult` satisfies both).
    Uniform scores are clamped to [1e-12, 1 - 1e-12] before the quantile
    transform because discrete margins can produce exact 0/1.
    """
    spec = fit.spec()
    marg = fit.marginal
    K = spec.n_components

    mu = marg.mu(dataset)
    u = count_cdf(dataset.y, mu, marg.family, marg.dispersion)
    u = np.clip(u, U_CLAMP, 1.0 - U_CLAMP)
    if spec.family == "gaussian":
        z = std_normal_quantile(u)
    else:
        z = student_t_quantile(u, spec.df)

    log_pi = np.log(np.asarray(spec.weights))
    geometry = {}  # times-key -> (corr stack, inverse sqrt stack)

    v, t_stats, assign, ids = [], [], [], []
    post = []
    n_excluded = 0
    for i, sl in enumerate(dataset.subject_slices()):
        n_i = sl.stop - sl.start
        if n_i < 2:
            n_excluded += 1
            continue
        t_i = dataset.times[sl]
        key = t_i.tobytes()
        if key not in geometry:
            mats = spec.corr_matrices(t_i)
            geometry[key] = (mats, [inv_sqrt_sym(r) for r in mats])
        mats, roots = geometry[key]

        z_i = z[sl]
        if spec.family == "gaussian":
            log_dens = np.array([mvn_logpdf_corr(z_i, r)[0] for r in mats])
        else:
            log_dens = np.array([mvt_logpdf_corr(z_i, r, spec.df)[0] for r in mats])
        log_w = log_pi + log_dens
        w = np.exp(log_w - logsumexp(log_w))
        comp = int(np.argmax(w))

        z_star = roots[comp] @ z_i
        t_stat = t_statistic(z_star)
        v.append(float(student_t_cdf(t_stat, n_i - 1)))
        t_stats.append(float(t_stat))
        assign.append(comp + 1)
        post.append(w)
        ids.append(dataset.subject_ids[sl.start])

    if not v:
        raise ValueError("no subject has two or more visits")
    v = np.asarray(v)
    m = v.size
    theo = (np.arange(1, m + 1) - 0.5) / m
    qq = np.column_stack([theo, np.sort(v)])
    ks_stat, ks_p = ks_uniform(v)
    return TplotResult(
        v=v,
        t_stats=np.asarray(t_stats),
        component_assignment=np.asarray(assign, dtype=int),
        posterior_weights=np.asarray(post),
        subject_ids=np.asarray(ids),
        qq_pairs=qq,
        ks_statistic=ks_stat,
        ks_pvalue=ks_p,
        n_excluded=n_excluded,
    )
