"""Fixed-effects OLS and MM-QR panel quantile regression.

Both estimators follow the scikit-learn estimator protocol with an extra
``groups`` argument holding the entity of every row.  Inference is an
entity-block bootstrap: entities are resampled with replacement, and a
drawn-twice entity counts as two separate entities.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field, replace
from typing import Sequence

import numpy as np
import pandas as pd
from joblib import Parallel, delayed
from scipy.stats import norm
from sklearn.base import BaseEstimator, RegressorMixin
from sklearn.utils.validation import check_is_fitted

from ._validation import check_panel_xy, check_quantiles
from .panel import PanelDataset

log = logging.getLogger(__name__)

DEFAULT_TAUS = (0.1, 0.25, 0.5, 0.75, 0.9)


RESULT_COLUMNS = ["term", "estimate", "se", "p", "stars", "tau", "group", "N"]


class CollinearityError(ValueError):
    """Demeaned regressors are rank deficient."""


class ScaleError(ValueError):
    """MM-QR fitted scale is not strictly positive somewhere."""


def stars(p: float) -> str:
    if p is None or not np.isfinite(p):
        return ""
    return "***" if p < 0.01 else "**" if p < 0.05 else "*" if p < 0.1 else ""


def normal_pvalue(estimate, se):
    """Two-sided p-value of ``estimate / se`` against the standard normal."""
    estimate, se = np.asarray(estimate, float), np.asarray(se, float)
    with np.errstate(divide="ignore", invalid="ignore"):
        z = np.where(se > 0, estimate / se, np.nan)
    return 2 * norm.sf(np.abs(z))


def _codes(groups):
    uniq, codes = np.unique(groups, return_inverse=True)
    return uniq, codes.astype(np.int64)


def _demean(A, codes, n_groups):
    counts = np.bincount(codes, minlength=n_groups).astype(float)
    if A.ndim == 1:
        return A - (np.bincount(codes, A, n_groups) / counts)[codes]
    out = np.empty_like(A)
    for j in range(A.shape[1]):
        out[:, j] = A[:, j] - (np.bincount(codes, A[:, j], n_groups) / counts)[codes]
    return out


def _collinear_set(Xd, names):
    _, s, vt = np.linalg.svd(Xd, full_matrices=False)
    v = vt[-1]
    idx = np.flatnonzero(np.abs(v) > 1e-6 * np.abs(v).max())
    return [names[i] for i in idx]


def _fit_within(X, y, codes, n_groups, names):
    """Within OLS; returns ``(coef, entity_effects, residuals)``."""
    Xd = _demean(X, codes, n_groups)
    yd = _demean(y, codes, n_groups)
    scale = np.abs(X).max(axis=0)
    scale[scale == 0] = 1.0
    if np.linalg.matrix_rank(Xd / scale, tol=1e-10 * max(Xd.shape)) < X.shape[1]:
        raise CollinearityError(
            f"regressors are collinear after removing entity means: {_collinear_set(Xd / scale, names)}")
    coef = np.linalg.lstsq(Xd, yd, rcond=None)[0]
    counts = np.bincount(codes, minlength=n_groups)
    effects = np.bincount(codes, y - X @ coef, n_groups) / counts
    resid = y - X @ coef - effects[codes]
    return coef, effects, resid


def _check_identified(codes, n_groups):
    counts = np.bincount(codes, minlength=n_groups)
    if np.sum(counts >= 2) < 2:
        raise ValueError("fixed effects need at least two entities with two or more observations")


def weighted_quantile(z, w, tau):
    """Exact minimizer of ``sum(w * check_tau(z - q))`` over scalar ``q``."""
    order = np.argsort(z, kind="stable")
    zs, cw = z[order], np.cumsum(w[order])
    k = np.searchsorted(cw, tau * cw[-1] * (1 - 1e-12), side="left")
    return float(zs[min(k, zs.size - 1)])


class _PanelEstimator(RegressorMixin, BaseEstimator):

    def _prepare(self, X, y, groups):
        names = list(X.columns) if hasattr(X, "columns") else None
        X, y, groups = check_panel_xy(X, y, groups)
        self.feature_names_ = names or [f"x{j}" for j in range(X.shape[1])]
        self.n_features_in_ = X.shape[1]
        self.entities_, codes = _codes(groups)
        _check_identified(codes, self.entities_.size)
        return X, y, codes

    def _bootstrap(self, X, y, codes, fit_one):
        """Entity-block bootstrap; returns the stacked replicate estimates."""
        reps = int(self.n_bootstrap)
        if reps <= 0:
            return None
        n_groups = int(codes.max()) + 1
        rows = [np.flatnonzero(codes == g) for g in range(n_groups)]
        seeds = np.random.SeedSequence(self.random_state).spawn(reps)

        def one(seq):
            draw = np.random.default_rng(seq).integers(0, n_groups, n_groups)
            idx = np.concatenate([rows[g] for g in draw])
            new = np.repeat(np.arange(n_groups), [rows[g].size for g in draw])
            try:
                return fit_one(X[idx], y[idx], new, n_groups)
            except ValueError:
                return None

        if self.n_jobs in (None, 1):
            draws = [one(s) for s in seeds]
        else:
            draws = Parallel(n_jobs=self.n_jobs)(delayed(one)(s) for s in seeds)
        good = [d for d in draws if d is not None]
        self.bootstrap_failures_ = reps - len(good)
        if self.bootstrap_failures_:
            log.warning("%d of %d bootstrap replicates failed and were dropped",
                        self.bootstrap_failures_, reps)
        if len(good) < 2:
            raise ValueError("fewer than two usable bootstrap replicates")
        return np.array(good)

    def _effects_for(self, groups):
        pos = {e: i for i, e in enumerate(self.entities_)}
        try:
            return np.array([pos[g] for g in np.asarray(groups)])
        except KeyError as exc:
            raise ValueError(f"entity {exc.args[0]!r} was not seen during fit") from None


class FixedEffectsRegressor(_PanelEstimator):
    """Within (entity-demeaned) OLS.

    Parameters
    ----------
    n_bootstrap : int, default 200
        Entity-block bootstrap replicates for ``bse_``; 0 disables inference.
    random_state : int, default 0
        Master seed; replicate ``r`` uses the ``r``-th spawned child seed.
    n_jobs : int or None
        Parallel bootstrap workers (joblib).  Results do not depend on it.

    Attributes
    ----------
    coef_, intercepts_ (one per entity in ``entities_``), bse_, pvalues_
    """

    def __init__(self, n_bootstrap=200, random_state=0, n_jobs=None):
        self.n_bootstrap = n_bootstrap
        self.random_state = random_state
        self.n_jobs = n_jobs

    def fit(self, X, y, groups=None):
        X, y, codes = self._prepare(X, y, groups)
        names = self.feature_names_
        self.coef_, self.intercepts_, self.resid_ = _fit_within(X, y, codes, self.entities_.size, names)
        self.n_obs_ = y.size
        boot = self._bootstrap(X, y, codes, lambda X, y, c, g: _fit_within(X, y, c, g, names)[0])
        self.bse_ = np.full(X.shape[1], np.nan) if boot is None else boot.std(axis=0, ddof=1)
        self.pvalues_ = normal_pvalue(self.coef_, self.bse_)
        return self

    def predict(self, X, groups=None):
        check_is_fitted(self, "coef_")
        X, _, groups = check_panel_xy(X, np.zeros(len(X)), groups)
        return X @ self.coef_ + self.intercepts_[self._effects_for(groups)]


def _fit_mmqr(X, y, codes, n_groups, names, taus, scale_all=True):
    beta, alpha, resid = _fit_within(X, y, codes, n_groups, names)
    absr = np.abs(resid)
    if np.all(absr <= 1e-12 * max(1.0, np.abs(y).max())):
        raise ScaleError("residuals are all zero; the scale regression is degenerate")
    if scale_all:
        gamma, delta, _ = _fit_within(X, absr, codes, n_groups, names)
    else:
        gamma = np.zeros(X.shape[1])
        delta = np.bincount(codes, absr, n_groups) / np.bincount(codes, minlength=n_groups)
    sigma = delta[codes] + X @ gamma
    bad = np.flatnonzero(sigma <= 0)
    if bad.size:
        raise ScaleError(bad)
    z = resid / sigma
    q = np.array([weighted_quantile(z, sigma, t) for t in taus])
    return {"beta": beta, "alpha": alpha, "gamma": gamma, "delta": delta, "q": q,
            "coef": beta[None, :] + q[:, None] * gamma[None, :], "sigma": sigma, "resid": resid}


class MMQRegressor(_PanelEstimator):
    """Method-of-moments quantile regression with entity effects.

    Location-scale model ``y = a_i + X b + (d_i + X g) U``: ``b`` and ``a_i``
    from within OLS, ``g`` and ``d_i`` from within OLS of the absolute
    residuals, and the quantile ``q(tau)`` of the standardized residual;
    then ``b(tau) = b + q(tau) g``.

    Parameters
    ----------
    quantiles : sequence of float in (0, 1)
    scale : {"all", "none"}
        ``"none"`` forces ``g = 0`` (pure location shift).
    n_bootstrap, random_state, n_jobs
        As in :class:`FixedEffectsRegressor`.
    """

    def __init__(self, quantiles=DEFAULT_TAUS, scale="all", n_bootstrap=200,
                 random_state=0, n_jobs=None):
        self.quantiles = quantiles
        self.scale = scale
        self.n_bootstrap = n_bootstrap
        self.random_state = random_state
        self.n_jobs = n_jobs

    def fit(self, X, y, groups=None):
        taus = check_quantiles(self.quantiles)
        if self.scale not in ("all", "none"):
            raise ValueError(f"scale must be 'all' or 'none', got {self.scale!r}")
        X, y, codes = self._prepare(X, y, groups)
        names = self.feature_names_
        scale_all = self.scale == "all"
        try:
            fit = _fit_mmqr(X, y, codes, self.entities_.size, names, taus, scale_all)
        except ScaleError as exc:
            if isinstance(exc.args[0], np.ndarray):
                self.nonpositive_scale_rows_ = exc.args[0]
                raise ScaleError(f"fitted scale is not positive at rows {exc.args[0].tolist()}") from None
            raise
        self.quantiles_ = taus
        self.location_coef_ = fit["beta"]
        self.scale_coef_ = fit["gamma"]
        self.location_effects_ = fit["alpha"]
        self.scale_effects_ = fit["delta"]
        self.q_ = fit["q"]
        self.coef_ = fit["coef"]
        self.sigma_ = fit["sigma"]
        self.resid_ = fit["resid"]
        self.n_obs_ = y.size
        boot = self._bootstrap(
            X, y, codes,
            lambda X, y, c, g: _fit_mmqr(X, y, c, g, names, taus, scale_all)["coef"])
        self.bse_ = np.full(self.coef_.shape, np.nan) if boot is None else boot.std(axis=0, ddof=1)
        self.pvalues_ = normal_pvalue(self.coef_, self.bse_)
        return self

    def predict(self, X, groups=None):
        """Conditional quantiles, one column per entry of ``quantiles_``."""
        check_is_fitted(self, "coef_")
        X, _, groups = check_panel_xy(X, np.zeros(len(X)), groups)
        e = self._effects_for(groups)
        intercept = self.location_effects_[e][:, None] + self.q_[None, :] * self.scale_effects_[e][:, None]
        return intercept + X @ self.coef_.T


# -- panel-level operations -------------------------------------------------

@dataclass(frozen=True)
class RegressionSpec:
    dependent: str
    regressors: tuple
    moderator: str | None = None
    quantiles: tuple = ()
    group_filter: tuple | None = None
    bootstrap_reps: int = 200
    seed: int = 0
    scale: str = "all"

    def __post_init__(self):
        object.__setattr__(self, "regressors", tuple(self.regressors))
        object.__setattr__(self, "quantiles", tuple(float(q) for q in self.quantiles))
        if not self.regressors:
            raise ValueError("at least one regressor is required")
        if self.quantiles:
            check_quantiles(self.quantiles)


@dataclass(frozen=True)
class Term:
    name: str
    estimate: float
    se: float
    p_value: float

    @property
    def stars(self) -> str:
        return stars(self.p_value)


@dataclass
class RegressionResult:
    terms: list
    n_obs: int
    n_entities: int
    estimator: str
    tau: float | None = None
    group: str | None = None
    extras: dict = field(default_factory=dict)

    def term(self, name) -> Term:
        for t in self.terms:
            if t.name == name:
                return t
        raise KeyError(name)

    def rows(self) -> list:
        return [{"term": t.name, "estimate": t.estimate, "se": t.se, "p": t.p_value,
                 "stars": t.stars, "tau": self.tau, "group": self.group, "N": self.n_obs}
                for t in self.terms]

    def to_frame(self) -> pd.DataFrame:
        return pd.DataFrame(self.rows(), columns=RESULT_COLUMNS)


def _design(panel: PanelDataset, spec: RegressionSpec):
    cols = [spec.dependent, *spec.regressors]
    missing = [c for c in cols if c not in panel.values]
    if missing:
        raise KeyError(f"regression variables missing from panel: {missing}")
    if spec.group_filter is not None:
        scheme, label = spec.group_filter
        if scheme not in panel.groups:
            raise KeyError(f"unknown grouping scheme {scheme!r}")
        panel = panel.subset([e for e, lab in panel.groups[scheme].items() if lab == label])
    df = panel.to_frame(cols)
    if df.empty:
        raise ValueError("no complete observations for the regression")
    return df


def _group_name(spec):
    return None if spec.group_filter is None else str(spec.group_filter[1])


def fe_ols(panel: PanelDataset, spec: RegressionSpec, n_jobs=None) -> RegressionResult:
    df = _design(panel, spec)
    est = FixedEffectsRegressor(spec.bootstrap_reps, spec.seed, n_jobs).fit(
        df[list(spec.regressors)], df[spec.dependent], df["entity"])
    terms = [Term(n, float(b), float(s), float(p))
             for n, b, s, p in zip(spec.regressors, est.coef_, est.bse_, est.pvalues_)]
    return RegressionResult(terms, int(est.n_obs_), int(est.entities_.size), "FE",
                            group=_group_name(spec))


def mmqr(panel: PanelDataset, spec: RegressionSpec, n_jobs=None) -> list:
    df = _design(panel, spec)
    taus = spec.quantiles or DEFAULT_TAUS
    est = MMQRegressor(taus, spec.scale, spec.bootstrap_reps, spec.seed, n_jobs)
    try:
        est.fit(df[list(spec.regressors)], df[spec.dependent], df["entity"])
    except ScaleError:
        rows = getattr(est, "nonpositive_scale_rows_", None)
        if rows is None:
            raise
        where = [(df["entity"].iloc[i], int(df["period"].iloc[i])) for i in rows]
        raise ScaleError(f"fitted scale is not positive at {where}") from None
    out = []
    for k, tau in enumerate(est.quantiles_):
        terms = [Term(n, float(est.coef_[k, j]), float(est.bse_[k, j]), float(est.pvalues_[k, j]))
                 for j, n in enumerate(spec.regressors)]
        out.append(RegressionResult(
            terms, int(est.n_obs_), int(est.entities_.size), "MMQR", float(tau), _group_name(spec),
            extras={"location": dict(zip(spec.regressors, est.location_coef_.tolist())),
                    "scale": dict(zip(spec.regressors, est.scale_coef_.tolist())),
                    "q": float(est.q_[k])}))
    return out


def interaction_name(focal: str, moderator: str) -> str:
    return f"C_{focal}*C_{moderator}"


def add_centered_interaction(panel: PanelDataset, focal: str, moderator: str) -> PanelDataset:
    """Product of the grand-mean-centered focal and moderator variables."""
    for name in (focal, moderator):
        if name not in panel.values:
            raise KeyError(f"unknown variable {name!r}")
    cf = panel.values[focal] - panel.present(focal).mean()
    cm = panel.values[moderator] - panel.present(moderator).mean()
    mask = panel.mask[focal] & panel.mask[moderator]
    return panel.with_variable(interaction_name(focal, moderator), np.where(mask, cf * cm, np.nan), mask)


def moderation(panel: PanelDataset, spec: RegressionSpec, estimators=("fe", "mmqr"), n_jobs=None) -> list:
    """FE (and MM-QR when ``spec.quantiles`` is set) with a centered interaction.

    The first regressor of ``spec`` is the focal variable; the rest are
    controls.
    """
    if not spec.moderator:
        raise ValueError("moderation needs spec.moderator")
    focal, controls = spec.regressors[0], spec.regressors[1:]
    panel = add_centered_interaction(panel, focal, spec.moderator)
    inner = replace(spec, regressors=(focal, spec.moderator,
                                      interaction_name(focal, spec.moderator), *controls))
    out = []
    if "fe" in estimators:
        out.append(fe_ols(panel, inner, n_jobs))
    if "mmqr" in estimators and spec.quantiles:
        out.extend(mmqr(panel, inner, n_jobs))
    return out


@dataclass
class GroupRun:
    label: str
    results: list
    n_entities: int
    skipped: str | None = None


def heterogeneity_run(panel: PanelDataset, spec: RegressionSpec, scheme: str,
                      focal: Sequence[str] | None = None, estimator="fe", n_jobs=None) -> dict:
    """Run ``spec`` separately inside every label of ``scheme``.

    With ``focal`` each name gets its own regression of ``name + controls``,
    where controls are the entries of ``spec.regressors`` not listed in
    ``focal``.
    Groups that cannot identify the fixed-effects model are skipped with
    a reason instead of failing the whole run.
    """
    if scheme not in panel.groups:
        raise KeyError(f"unknown grouping scheme {scheme!r}")
    labels = sorted(set(panel.groups[scheme].values()))
    if focal:
        controls = tuple(r for r in spec.regressors if r not in focal)
        specs = [replace(spec, regressors=(f, *controls)) for f in focal]
    else:
        specs = [spec]
    out = {}
    for lab in labels:
        ents = [e for e, v in panel.groups[scheme].items() if v == lab]
        results, reason = [], None
        for s in specs:
            s = replace(s, group_filter=(scheme, lab))
            try:
                if estimator == "mmqr":
                    results.extend(mmqr(panel, s, n_jobs))
                else:
                    results.append(fe_ols(panel, s, n_jobs))
            except (ValueError, KeyError) as exc:
                reason = f"{type(exc).__name__}: {exc}"
                results = []
                break
        if reason:
            log.info("group %s=%s skipped: %s", scheme, lab, reason)
        out[lab] = GroupRun(lab, results, len(ents), reason)
    return out


def results_frame(results) -> pd.DataFrame:
    out = pd.DataFrame([row for r in results for row in r.rows()], columns=RESULT_COLUMNS)
    return out.astype({"estimate": float, "se": float, "p": float, "tau": float})


def format_table(df: pd.DataFrame) -> str:
    """Aligned-column text rendering of a coefficient frame."""
    show = df.copy()
    for c in ("estimate", "se", "p"):
        show[c] = show[c].map(lambda v: "" if pd.isna(v) else f"{v:.4f}")
    show["tau"] = show["tau"].map(lambda v: "" if pd.isna(v) else f"{v:g}")
    show = show.fillna("")
    return show.to_string(index=False)
