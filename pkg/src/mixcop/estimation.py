"""Two-stage composite-likelihood estimation for mixture-copula count models.

Stage 1 fits the count margins under working independence.  Stage 2 holds
the margins fixed, maps every observation to uniform scores u = F(y) and
u- = F(y-1), and maximizes the pairwise composite log likelihood

    l_c = sum_i sum_{j<k} log sum_l pi_l h_l(u_ij, u_ik),

where h_l is the rectangle mass of the l-th component copula over
[u-, u] x [u-, u] (the joint pmf of the observation pair).  The search is
a box-constrained Nelder-Mead over the free mixture weights and the
correlation decays, with deterministic multi-starts; Student-t degrees of
freedom are profiled over an integer grid.

Standard errors come from the Godambe sandwich built on per-subject score
contributions of the stacked two-stage estimating equations: the marginal
block is analytic, the copula block uses central differences, and the
outer derivative matrix D is differenced at a wider step so the two
levels of differencing stay well separated.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

import numpy as np
from scipy import optimize

from .copula import (
    RECT_FLOOR,
    CorrelationStructure,
    MixtureCopulaSpec,
    copula_scores,
    rect_prob_z,
)
from .marginals import MarginalFit, count_cdf, fit_marginal, marginal_scores
from .special import bvt_rect_nodes

__all__ = [
    "WEIGHT_BOUNDS",
    "DECAY_BOUNDS",
    "CopulaConfig",
    "UniformScores",
    "FitResult",
    "GodambeResult",
    "composite_loglik",
    "fit_two_stage",
    "godambe_covariance",
    "claic_clbic",
]

SCHEMA_VERSION = 1

# stage-2 parameter boxes; the implied last weight is boxed too, which for
# K > 2 doubles as the simplex constraint
WEIGHT_BOUNDS = (1e-4, 1.0 - 1e-4)
DECAY_BOUNDS = (1e-3, 50.0)
DEFAULT_NU_GRID = tuple(range(3, 31))

_FD_STEP_SCORE = 1e-6  # inner step: per-subject copula scores
_FD_STEP_D = 1e-5  # outer step: columns of D


@dataclass(frozen=True)
class CopulaConfig:
    """Stage-2 model structure and optimizer policy.

    ``structures`` lists the correlation kind of each component ("ar1" or
    "ex"), fixing both K and the component labels; ``nu_grid`` (Student-t
    only) is the integer profile grid for the degrees of freedom.
    """

    family: str = "gaussian"
    structures: tuple = ("ar1", "ex")
    nu_grid: tuple | None = None
    n_starts: int = 5
    maxiter: int = 2000
    compute_se: bool = True

    def __post_init__(self):
        if self.family not in ("gaussian", "t"):
            raise ValueError(f"unknown copula family {self.family!r}")
        structures = tuple(self.structures)
        if not structures:
            raise ValueError("need at least one component structure")
        for kind in structures:
            if kind not in ("ar1", "ex"):
                raise ValueError(f"unknown correlation structure {kind!r}")
        object.__setattr__(self, "structures", structures)
        if self.family == "t":
            grid = tuple(float(v) for v in (self.nu_grid or DEFAULT_NU_GRID))
            if not grid or any(v <= 0 for v in grid):
                raise ValueError("nu_grid entries must be positive")
            object.__setattr__(self, "nu_grid", grid)
        elif self.nu_grid is not None:
            raise ValueError("nu_grid is only meaningful for the Student-t family")
        if self.n_starts < 1:
            raise ValueError("n_starts must be at least 1")

    @property
    def n_components(self):
        return len(self.structures)


@dataclass
class UniformScores:
    """Uniform scores u = F(y), u- = F(y-1) at fixed marginal parameters."""

    dataset: object
    u: np.ndarray
    u_minus: np.ndarray

    def __post_init__(self):
        self.u = np.asarray(self.u, dtype=float)
        self.u_minus = np.asarray(self.u_minus, dtype=float)
        if self.u.shape != self.u_minus.shape or self.u.shape != (self.dataset.n_obs,):
            raise ValueError("scores must be one pair per observation")
        if np.any(self.u_minus > self.u) or np.any(self.u_minus < 0) or np.any(self.u > 1):
            raise ValueError("scores must satisfy 0 <= u- <= u <= 1")

    @classmethod
    def from_marginal(cls, marginal, dataset):
        mu = marginal.mu(dataset)
        u = count_cdf(dataset.y, mu, marginal.family, marginal.dispersion)
        u_minus = count_cdf(dataset.y - 1.0, mu, marginal.family, marginal.dispersion)
        return cls(dataset, u, u_minus)


@dataclass
class _PairTable:
    """Within-subject observation pairs, flattened across the dataset."""

    subj: np.ndarray  # subject row index per pair
    i1: np.ndarray  # dataset row of the first pair member
    i2: np.ndarray
    t1: np.ndarray
    t2: np.ndarray
    n_subjects: int

    @property
    def n_pairs(self):
        return self.subj.size


def _pair_table(dataset):
    subj, i1, i2 = [], [], []
    for s_idx, sl in enumerate(dataset.subject_slices()):
        n_i = sl.stop - sl.start
        if n_i < 2:
            continue
        a, b = np.triu_indices(n_i, k=1)
        i1.append(a + sl.start)
        i2.append(b + sl.start)
        subj.append(np.full(a.size, s_idx))
    if not subj:
        raise ValueError("no subject has two or more visits; stage 2 needs pairs")
    subj = np.concatenate(subj)
    i1 = np.concatenate(i1)
    i2 = np.concatenate(i2)
    return _PairTable(
        subj=subj,
        i1=i1,
        i2=i2,
        t1=dataset.times[i1],
        t2=dataset.times[i2],
        n_subjects=dataset.n_subjects,
    )


class _CopulaCache:
    """Elliptical scores (and t quadrature nodes) for fixed margins and df.

    The expensive quantile transforms depend only on the uniforms and df,
    not on the copula parameters, so one cache serves every objective
    evaluation of a stage-2 search.
    """

    def __init__(self, table, scores, family, df):
        self.table = table
        self.family = family
        self.df = df
        self.z1 = copula_scores(scores.u[table.i1], family, df)
        self.z1m = copula_scores(scores.u_minus[table.i1], family, df)
        self.z2 = copula_scores(scores.u[table.i2], family, df)
        self.z2m = copula_scores(scores.u_minus[table.i2], family, df)
        self.nodes = bvt_rect_nodes(self.z1, self.z1m, df) if family == "t" else None

    def component_rect(self, kind, decay):
        rho = CorrelationStructure(kind, decay).pair_corr(self.table.t1, self.table.t2)
        return rect_prob_z(
            self.z1, self.z1m, self.z2, self.z2m, rho, self.family, self.df, nodes=self.nodes
        )


def _pack_eta(weights, decays):
    weights = np.asarray(weights, dtype=float)
    return np.r_[weights[:-1], np.asarray(decays, dtype=float)]


def _unpack_eta(eta, n_components):
    eta = np.asarray(eta, dtype=float)
    free = eta[: n_components - 1]
    weights = np.r_[free, 1.0 - free.sum()]
    return weights, eta[n_components - 1 :]


def _box_violation(eta, n_components):
    weights, decays = _unpack_eta(eta, n_components)
    v = 0.0
    if n_components > 1:
        v += np.sum(np.maximum(WEIGHT_BOUNDS[0] - weights, 0.0))
        v += np.sum(np.maximum(weights - WEIGHT_BOUNDS[1], 0.0))
    v += np.sum(np.maximum(DECAY_BOUNDS[0] - decays, 0.0))
    v += np.sum(np.maximum(decays - DECAY_BOUNDS[1], 0.0))
    return float(v)


def _pair_logmass(cache, kinds, weights, decays):
    mass = 0.0
    for w, kind, d in zip(weights, kinds, decays):
        mass = mass + w * cache.component_rect(kind, float(d))
    if not np.all(np.isfinite(mass)):
        return None
    return np.log(np.maximum(mass, RECT_FLOOR))


def _loglik_from_cache(cache, kinds, eta):
    weights, decays = _unpack_eta(eta, len(kinds))
    lm = _pair_logmass(cache, kinds, weights, decays)
    return -np.inf if lm is None else float(np.sum(lm))


def _loglik_by_subject(cache, kinds, eta):
    weights, decays = _unpack_eta(eta, len(kinds))
    lm = _pair_logmass(cache, kinds, weights, decays)
    if lm is None:
        raise FloatingPointError("non-finite pair mass in per-subject composite scores")
    return np.bincount(cache.table.subj, weights=lm, minlength=cache.table.n_subjects)


def composite_loglik(scores, spec):
    """Pairwise composite log likelihood of a mixture copula at fixed margins.

    Sums ``log sum_l pi_l h_l`` over all within-subject visit pairs, with
    each component correlation taken from its structure at the pair's time
    gap.  Rectangle masses are floored at ``RECT_FLOOR`` before the log;
    the sentinel -inf is returned only if a mass is not finite even after
    that clamping (NaN propagation).
    """
    table = _pair_table(scores.dataset)
    cache = _CopulaCache(table, scores, spec.family, spec.df)
    kinds = tuple(s.kind for s in spec.structures)
    eta = _pack_eta(spec.weights, [s.decay for s in spec.structures])
    return _loglik_from_cache(cache, kinds, eta)


def _default_starts(n_components, n_starts):
    """Deterministic stage-2 starting points spread over the box."""
    K = n_components
    if K == 1:
        base = [np.array([x]) for x in (0.3, 0.7, 0.1, 1.5, 3.0)]
    else:
        eq = np.full(K - 1, 1.0 / K)
        lo = np.full(K - 1, 0.25 / (K - 1))
        hi = np.full(K - 1, 0.75 / (K - 1))
        xi_up = np.geomspace(0.1, 2.0, K)
        base = [
            np.r_[eq, np.full(K, 0.5)],
            np.r_[lo, xi_up],
            np.r_[hi, xi_up[::-1]],
            np.r_[eq, np.clip(xi_up * 2.0, *DECAY_BOUNDS)],
            np.r_[eq, np.clip(xi_up[::-1] * 0.25, *DECAY_BOUNDS)],
        ]
    starts = base[:n_starts]
    i = 0
    while len(starts) < n_starts:
        s = base[i % len(base)].copy()
        s[K - 1 :] = np.clip(s[K - 1 :] * 1.6 ** (i // len(base) + 1), *DECAY_BOUNDS)
        starts.append(s)
        i += 1
    return starts


def _fit_eta(cache, kinds, n_starts, maxiter, extra_starts=()):
    """Multi-start Nelder-Mead over the boxed stage-2 parameters."""
    K = len(kinds)

    def neg(eta):
        v = _box_violation(eta, K)
        if v > 0.0:
            return 1e10 * (1.0 + v)
        return -_loglik_from_cache(cache, kinds, eta)

    results = []
    for x0 in list(_default_starts(K, n_starts)) + [np.asarray(s, float) for s in extra_starts]:
        res = optimize.minimize(
            neg,
            x0,
            method="Nelder-Mead",
            options={"xatol": 1e-5, "fatol": 1e-6, "maxiter": maxiter, "maxfev": maxiter},
        )
        results.append(res)
    best_fun = min(r.fun for r in results)
    # ties across starts resolved toward the smaller first decay
    near = [r for r in results if r.fun <= best_fun + 1e-8]
    return min(near, key=lambda r: r.x[K - 1])


def _canonical_order(weights, decays, kinds):
    """Sort components of equal structure by decay (label-switching rule)."""
    K = len(kinds)
    perm = list(range(K))
    for kind in dict.fromkeys(kinds):
        pos = [i for i in range(K) if kinds[i] == kind]
        for p, src in zip(pos, sorted(pos, key=lambda i: decays[i])):
            perm[p] = src
    return weights[perm], decays[perm]


def _boundary_flags(weights, decays, n_components):
    flags = []
    if n_components > 1 and (
        np.any(weights <= WEIGHT_BOUNDS[0] + 1e-3) or np.any(weights >= WEIGHT_BOUNDS[1] - 1e-3)
    ):
        flags.append("weight")
    if np.any(decays <= DECAY_BOUNDS[0] * 2.0) or np.any(decays >= DECAY_BOUNDS[1] * 0.99):
        flags.append("decay")
    return tuple(flags)


@dataclass
class FitResult:
    """Two-stage estimate with sandwich uncertainty and selection criteria.

    ``structures`` holds the correlation kinds; ``weights``/``decays`` the
    stage-2 estimates in component order; ``standard_errors`` follows
    ``param_names`` (marginal parameters on their natural scale, then the
    free weights pi_1..pi_{K-1}, then the decays xi_1..xi_K).
    """

    marginal: MarginalFit
    family: str
    structures: tuple
    weights: np.ndarray
    decays: np.ndarray
    df: float | None
    comp_loglik: float
    converged: bool
    n_iter: int
    n_eval: int
    boundary: tuple
    param_names: list
    n_subjects: int
    standard_errors: np.ndarray | None = None
    claic: float | None = None
    clbic: float | None = None
    penalty: float | None = None
    se_warning: str | None = None
    nu_profile: list = field(default_factory=list)

    def spec(self):
        return MixtureCopulaSpec(
            family=self.family,
            weights=tuple(self.weights),
            structures=tuple(
                CorrelationStructure(k, float(d)) for k, d in zip(self.structures, self.decays)
            ),
            df=self.df,
        )

    @property
    def n_components(self):
        return len(self.structures)

    @property
    def copula_params(self):
        return _pack_eta(self.weights, self.decays)

    @property
    def params(self):
        """Full natural-scale parameter vector (matches param_names)."""
        theta = np.asarray(self.marginal.beta, dtype=float)
        if self.marginal.dispersion is not None:
            theta = np.r_[theta, self.marginal.dispersion]
        return np.r_[theta, self.copula_params]

    def to_dict(self):
        m = self.marginal
        return {
            "schema_version": SCHEMA_VERSION,
            "marginal": {
                "family": m.family,
                "beta": np.asarray(m.beta, dtype=float).tolist(),
                "dispersion": m.dispersion,
                "loglik": m.loglik,
                "converged": bool(m.converged),
                "grad_norm": m.grad_norm,
                "n_iter": m.n_iter,
                "covariate_names": list(m.covariate_names),
            },
            "copula": {
                "family": self.family,
                "structures": list(self.structures),
                "weights": np.asarray(self.weights, dtype=float).tolist(),
                "decays": np.asarray(self.decays, dtype=float).tolist(),
                "df": self.df,
            },
            "comp_loglik": self.comp_loglik,
            "claic": self.claic,
            "clbic": self.clbic,
            "penalty": self.penalty,
            "param_names": list(self.param_names),
            "standard_errors": None
            if self.standard_errors is None
            else np.asarray(self.standard_errors, dtype=float).tolist(),
            "converged": bool(self.converged),
            "n_iter": self.n_iter,
            "n_eval": self.n_eval,
            "boundary": list(self.boundary),
            "se_warning": self.se_warning,
            "nu_profile": [[nu, ll] for nu, ll in self.nu_profile],
            "n_subjects": self.n_subjects,
        }

    def to_json(self, path=None, indent=2):
        text = json.dumps(self.to_dict(), indent=indent)
        if path is not None:
            with open(path, "w") as fh:
                fh.write(text + "\n")
        return text

    @classmethod
    def from_dict(cls, d):
        if d.get("schema_version") != SCHEMA_VERSION:
            raise ValueError(f"unsupported schema_version {d.get('schema_version')!r}")
        md = d["marginal"]
        marginal = MarginalFit(
            family=md["family"],
            beta=np.asarray(md["beta"], dtype=float),
            dispersion=md["dispersion"],
            loglik=md["loglik"],
            converged=md["converged"],
            grad_norm=md["grad_norm"],
            n_iter=md["n_iter"],
            covariate_names=list(md["covariate_names"]),
        )
        cd = d["copula"]
        se = d["standard_errors"]
        return cls(
            marginal=marginal,
            family=cd["family"],
            structures=tuple(cd["structures"]),
            weights=np.asarray(cd["weights"], dtype=float),
            decays=np.asarray(cd["decays"], dtype=float),
            df=cd["df"],
            comp_loglik=d["comp_loglik"],
            converged=d["converged"],
            n_iter=d["n_iter"],
            n_eval=d["n_eval"],
            boundary=tuple(d["boundary"]),
            param_names=list(d["param_names"]),
            n_subjects=d["n_subjects"],
            standard_errors=None if se is None else np.asarray(se, dtype=float),
            claic=d["claic"],
            clbic=d["clbic"],
            penalty=d["penalty"],
            se_warning=d["se_warning"],
            nu_profile=[(nu, ll) for nu, ll in d["nu_profile"]],
        )

    @classmethod
    def from_json(cls, text_or_path):
        s = str(text_or_path)
        if not s.lstrip().startswith("{"):
            with open(s) as fh:
                s = fh.read()
        return cls.from_dict(json.loads(s))


def _param_names(marginal, n_components):
    covs = list(marginal.covariate_names) or [str(i) for i in range(len(marginal.beta))]
    names = [f"beta_{c}" for c in covs]
    if marginal.dispersion is not None:
        names.append("psi")
    names += [f"pi_{l + 1}" for l in range(n_components - 1)]
    names += [f"xi_{l + 1}" for l in range(n_components)]
    return names


def fit_two_stage(dataset, family, config=None):
    """Two-stage composite-likelihood fit of a mixture-copula count model.

    Stage 1 is the working-independence marginal fit; stage 2 the
    multi-start boxed Nelder-Mead over (free weights, decays), profiled
    over ``config.nu_grid`` for Student-t copulas (ties toward smaller
    df).  Sandwich standard errors and CLAIC/CLBIC are attached unless
    ``config.compute_se`` is off.
    """
    config = config or CopulaConfig()
    marginal = fit_marginal(dataset, family)
    scores = UniformScores.from_marginal(marginal, dataset)
    table = _pair_table(dataset)
    kinds = config.structures
    K = config.n_components

    nu_values = config.nu_grid if config.family == "t" else (None,)
    best = None
    profile = []
    warm = None
    for nu in nu_values:
        cache = _CopulaCache(table, scores, config.family, nu)
        extra = () if warm is None else (warm,)
        res = _fit_eta(cache, kinds, config.n_starts, config.maxiter, extra_starts=extra)
        ll = -float(res.fun)
        profile.append((nu, ll))
        warm = res.x.copy()
        if best is None or ll > best[0] + 1e-8:
            best = (ll, nu, res)

    comp_ll, nu_hat, res = best
    weights, decays = _unpack_eta(res.x, K)
    weights, decays = _canonical_order(weights, decays, kinds)

    fit = FitResult(
        marginal=marginal,
        family=config.family,
        structures=kinds,
        weights=weights,
        decays=decays,
        df=nu_hat,
        comp_loglik=comp_ll,
        converged=bool(res.success) and marginal.converged,
        n_iter=int(res.nit),
        n_eval=int(res.nfev),
        boundary=_boundary_flags(weights, decays, K),
        param_names=_param_names(marginal, K),
        n_subjects=dataset.n_subjects,
        nu_profile=profile if config.family == "t" else [],
    )
    if config.compute_se:
        god = godambe_covariance(dataset, fit)
        fit.standard_errors = god.se
        fit.penalty = god.penalty
        fit.claic, fit.clbic = claic_clbic(fit)
        if god.pinv_used:
            fit.se_warning = "singular score covariance; pseudo-inverse used"
    return fit


@dataclass
class GodambeResult:
    """Sandwich pieces for the stacked two-stage estimating equations."""

    covariance: np.ndarray  # Var(estimates) = D^-1 M D^-T
    se: np.ndarray
    D: np.ndarray  # minus the derivative of the summed scores
    M: np.ndarray  # sum of per-subject score outer products
    J: np.ndarray  # Godambe information D^T M^-1 D, symmetrized
    penalty: float  # tr(M D^-1), the CLAIC/CLBIC complexity term
    pinv_used: bool
    param_names: list


def _scores_per_subject(dataset, fit, x):
    """Per-subject stacked score rows at the natural-scale parameters x."""
    n_beta = len(fit.marginal.beta)
    has_psi = fit.marginal.dispersion is not None
    n_theta = n_beta + has_psi
    theta, eta = x[:n_theta], x[n_theta:]

    internal = np.r_[theta[:n_beta], np.log(theta[n_beta])] if has_psi else theta
    s1 = marginal_scores(internal, dataset, fit.marginal.family)
    if has_psi:
        s1 = s1.copy()
        s1[:, -1] /= theta[n_beta]  # chain rule log psi -> psi

    marg = MarginalFit(
        family=fit.marginal.family,
        beta=theta[:n_beta],
        dispersion=float(theta[n_beta]) if has_psi else None,
        loglik=0.0,
        converged=True,
        grad_norm=0.0,
        n_iter=0,
    )
    scores = UniformScores.from_marginal(marg, dataset)
    table = _pair_table(dataset)
    cache = _CopulaCache(table, scores, fit.family, fit.df)

    s2 = np.empty((dataset.n_subjects, eta.size))
    for j in range(eta.size):
        h = _FD_STEP_SCORE * (1.0 + abs(eta[j]))
        ep, em = eta.copy(), eta.copy()
        ep[j] += h
        em[j] -= h
        s2[:, j] = (
            _loglik_by_subject(cache, fit.structures, ep)
            - _loglik_by_subject(cache, fit.structures, em)
        ) / (2.0 * h)
    return np.hstack([s1, s2])


def godambe_covariance(dataset, fit, step=_FD_STEP_D):
    """Godambe sandwich covariance of the two-stage estimates.

    D is minus the derivative of the summed per-subject scores, column by
    column via central differences with step ``step * (1 + |param|)``; M
    is the sum of score outer products at the estimate.  The block
    structure of the two-stage procedure (marginal scores free of the
    copula parameters) emerges exactly because those scores do not move
    when a copula parameter is perturbed.
    """
    x_hat = fit.params
    p = x_hat.size
    psi_rows = _scores_per_subject(dataset, fit, x_hat)
    M = psi_rows.T @ psi_rows

    D = np.empty((p, p))
    for j in range(p):
        h = step * (1.0 + abs(x_hat[j]))
        xp, xm = x_hat.copy(), x_hat.copy()
        xp[j] += h
        xm[j] -= h
        sp = _scores_per_subject(dataset, fit, xp).sum(axis=0)
        sm = _scores_per_subject(dataset, fit, xm).sum(axis=0)
        D[:, j] = -(sp - sm) / (2.0 * h)

    ident = np.eye(p)
    try:
        D_inv = np.linalg.solve(D, ident)
    except np.linalg.LinAlgError as exc:
        raise np.linalg.LinAlgError("singular sensitivity matrix D; sandwich undefined") from exc
    cov = D_inv @ M @ D_inv.T
    penalty = float(np.trace(M @ D_inv))

    pinv_used = False
    try:
        M_inv = np.linalg.inv(M)
        if not np.all(np.isfinite(M_inv)):
            raise np.linalg.LinAlgError
    except np.linalg.LinAlgError:
        M_inv = np.linalg.pinv(M)
        pinv_used = True
    J = D.T @ M_inv @ D
    J = 0.5 * (J + J.T)

    se = np.sqrt(np.clip(np.diag(cov), 0.0, None))
    return GodambeResult(
        covariance=cov,
        se=se,
        D=D,
        M=M,
        J=J,
        penalty=penalty,
        pinv_used=pinv_used,
        param_names=list(fit.param_names),
    )


def claic_clbic(fit, dataset=None):
    """Composite-likelihood AIC and BIC: -2 l_c + {2, log m} tr(M D^-1).

    Uses the penalty stored on the fit, recomputing the sandwich when the
    fit was produced without standard errors (requires ``dataset`` then).
    """
    penalty = fit.penalty
    if penalty is None:
        if dataset is None:
            raise ValueError("fit has no stored penalty; pass the dataset to recompute it")
        penalty = godambe_covariance(dataset, fit).penalty
    claic = -2.0 * fit.comp_loglik + 2.0 * penalty
    clbic = -2.0 * fit.comp_loglik + math.log(fit.n_subjects) * penalty
    return claic, clbic
