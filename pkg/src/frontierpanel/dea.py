"""Slacks-based DEA with undesirable outputs, plus the super-efficiency variant.

The fractional SBM programs are linearized with the Charnes-Cooper
transformation and solved by :func:`frontierpanel.lp.solve_lp`.  Every
dimension is rescaled by the evaluated unit's own level before the LP is
built; SBM scores are units invariant, so this only improves conditioning.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property
from typing import Hashable, Iterable, Sequence

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_is_fitted

from ._validation import check_positive
from .lp import LpProblem, solve_lp

CRS = "crs"
VRS = "vrs"
EFFICIENT_TOL = 1e-7

FLAG_SUPER_FALLBACK = "super_fallback"
FLAG_GLOBAL_FALLBACK = "global_fallback"


def _check_rts(rts: str) -> str:
    rts = str(rts).lower()
    if rts not in (CRS, VRS):
        raise ValueError(f"rts must be 'crs' or 'vrs', got {rts!r}")
    return rts


@dataclass(frozen=True)
class DmuBundle:
    """One entity-period observation: inputs, good outputs, bad outputs."""

    entity: Hashable
    period: int
    inputs: np.ndarray
    good_outputs: np.ndarray
    bad_outputs: np.ndarray = field(default_factory=lambda: np.zeros(0))

    def __post_init__(self):
        for name in ("inputs", "good_outputs", "bad_outputs"):
            v = np.atleast_1d(np.asarray(getattr(self, name), dtype=float))
            if v.ndim != 1:
                raise ValueError(f"{name} must be a vector")
            if np.any(~np.isfinite(v)) or np.any(v <= 0):
                raise ValueError(
                    f"{name} of {self.key} must be finite and strictly positive")
            v.setflags(write=False)
            object.__setattr__(self, name, v)
        if self.inputs.size == 0 or self.good_outputs.size == 0:
            raise ValueError("a DMU needs at least one input and one good output")

    @property
    def key(self):
        return (self.entity, self.period)

    @property
    def shape(self):
        return (self.inputs.size, self.good_outputs.size, self.bad_outputs.size)


@dataclass(frozen=True)
class ReferenceSet:
    """Bundles spanning a frontier, the returns to scale, and an optional exclusion."""

    bundles: tuple
    rts: str = CRS
    exclude: tuple | None = None

    def __post_init__(self):
        object.__setattr__(self, "bundles", tuple(self.bundles))
        object.__setattr__(self, "rts", _check_rts(self.rts))
        shapes = {b.shape for b in self.bundles}
        if len(shapes) > 1:
            raise ValueError(f"reference bundles disagree on dimensions: {sorted(shapes)}")
        if not self.active:
            raise ValueError("reference set is empty after exclusion")

    @property
    def active(self) -> tuple:
        if self.exclude is None:
            return self.bundles
        return tuple(b for b in self.bundles if b.key != self.exclude)

    def contains(self, key) -> bool:
        return any(b.key == key for b in self.active)

    def without(self, key) -> "ReferenceSet":
        return ReferenceSet(self.bundles, self.rts, exclude=key)

    def with_bundle(self, dmu: DmuBundle) -> "ReferenceSet":
        return ReferenceSet(self.active + (dmu,), self.rts)

    def with_rts(self, rts: str) -> "ReferenceSet":
        return ReferenceSet(self.bundles, rts, self.exclude)

    @cached_property
    def _matrices(self):
        act = self.active
        return (np.array([b.inputs for b in act]),
                np.array([b.good_outputs for b in act]),
                np.array([b.bad_outputs for b in act]).reshape(len(act), -1))

    def matrices(self):
        return self._matrices


@dataclass
class SbmResult:
    """Outcome of one DEA evaluation.

    Slacks are reported in the data's units.  For ``model="super_sbm"``
    they are the distances from the unit to its projection (input and
    bad-output expansion, good-output contraction).
    """

    score: float
    input_slacks: np.ndarray
    good_slacks: np.ndarray
    bad_slacks: np.ndarray
    lambdas: np.ndarray
    status: str = "ok"
    model: str = "sbm"
    rts: str = CRS
    flags: tuple = ()

    @property
    def ok(self) -> bool:
        return self.status == "ok"

    @property
    def slacks(self) -> np.ndarray:
        return np.concatenate([self.input_slacks, self.good_slacks, self.bad_slacks])


def _infeasible(dmu, n_ref, model, rts, flags=()):
    m, s1, s2 = dmu.shape
    nan = np.full
    return SbmResult(np.nan, nan(m, np.nan), nan(s1, np.nan), nan(s2, np.nan),
                     nan(n_ref, np.nan), "infeasible", model, rts, tuple(flags))


def _check_dims(dmu: DmuBundle, ref: ReferenceSet):
    if dmu.shape != ref.bundles[0].shape:
        raise ValueError(
            f"DMU {dmu.key} has dimensions {dmu.shape}, reference has {ref.bundles[0].shape}")


def _sbm_lp(dmu: DmuBundle, ref: ReferenceSet) -> SbmResult:
    X, Yg, Yb = ref.matrices()
    x0, g0, b0 = dmu.inputs, dmu.good_outputs, dmu.bad_outputs
    X, Yg, Yb = X / x0, Yg / g0, Yb / b0 if b0.size else Yb
    n = X.shape[0]
    m, s1, s2 = dmu.shape
    vrs = ref.rts == VRS
    # columns: tau | Lambda (n) | S- (m) | Sg (s1) | Sb (s2)
    nv = 1 + n + m + s1 + s2
    lam = slice(1, 1 + n)
    sx = slice(1 + n, 1 + n + m)
    sg = slice(sx.stop, sx.stop + s1)
    sb = slice(sg.stop, sg.stop + s2)
    rows = 1 + m + s1 + s2 + vrs
    A = np.zeros((rows, nv))
    b = np.zeros(rows)
    A[0, 0] = 1.0
    A[0, sg.start:sb.stop] = 1.0 / (s1 + s2)
    b[0] = 1.0
    r = 1
    A[r:r + m, lam] = X.T
    A[r:r + m, sx] = np.eye(m)
    A[r:r + m, 0] = -1.0
    r += m
    A[r:r + s1, lam] = Yg.T
    A[r:r + s1, sg] = -np.eye(s1)
    A[r:r + s1, 0] = -1.0
    r += s1
    if s2:
        A[r:r + s2, lam] = Yb.T
        A[r:r + s2, sb] = np.eye(s2)
        A[r:r + s2, 0] = -1.0
        r += s2
    if vrs:
        A[r, lam] = 1.0
        A[r, 0] = -1.0
    c = np.zeros(nv)
    c[0] = 1.0
    c[sx] = -1.0 / m
    sol = solve_lp(LpProblem(c, A, ["="] * rows, b))
    if not sol.ok:
        return _infeasible(dmu, n, "sbm", ref.rts)
    z = sol.x
    t = z[0]
    score = float(min(max(sol.objective_value, 0.0), 1.0))
    return SbmResult(score, z[sx] / t * x0, z[sg] / t * g0, z[sb] / t * b0,
                     z[lam] / t, "ok", "sbm", ref.rts)


def _super_lp(dmu: DmuBundle, ref: ReferenceSet) -> SbmResult:
    X, Yg, Yb = ref.matrices()
    x0, g0, b0 = dmu.inputs, dmu.good_outputs, dmu.bad_outputs
    X, Yg, Yb = X / x0, Yg / g0, Yb / b0 if b0.size else Yb
    n = X.shape[0]
    m, s1, s2 = dmu.shape
    vrs = ref.rts == VRS
    # columns: tau | Xbar (m) | Gbar (s1) | Bbar (s2) | Lambda (n)
    nv = 1 + m + s1 + s2 + n
    xb = slice(1, 1 + m)
    gb = slice(xb.stop, xb.stop + s1)
    bb = slice(gb.stop, gb.stop + s2)
    lam = slice(bb.stop, bb.stop + n)
    rows = 1 + 2 * (m + s1 + s2) + vrs
    A = np.zeros((rows, nv))
    b = np.zeros(rows)
    rel = ["="]
    A[0, gb] = 1.0 / s1
    b[0] = 1.0
    r = 1
    for block, M, sign in ((xb, X, ">="), (gb, Yg, "<="), (bb, Yb, ">=")):
        k = block.stop - block.start
        if not k:
            continue
        A[r:r + k, block] = np.eye(k)
        A[r:r + k, lam] = -M.T
        A[r + k:r + 2 * k, block] = np.eye(k)
        A[r + k:r + 2 * k, 0] = -1.0
        rel += [sign] * (2 * k)
        r += 2 * k
    if vrs:
        A[r, lam] = 1.0
        A[r, 0] = -1.0
        rel.append("=")
    c = np.zeros(nv)
    c[xb] = 1.0 / (m + s2)
    c[bb] = 1.0 / (m + s2)
    sol = solve_lp(LpProblem(c, A, rel, b))
    if not sol.ok:
        return _infeasible(dmu, n, "super_sbm", ref.rts)
    z = sol.x
    t = z[0]
    score = sol.objective_value
    if score < 1.0 and score > 1.0 - 1e-9:
        score = 1.0
    proj_x, proj_g, proj_b = z[xb] / t, z[gb] / t, z[bb] / t
    return SbmResult(float(score),
                     np.clip(proj_x - 1.0, 0, None) * x0,
                     np.clip(1.0 - proj_g, 0, None) * g0,
                     np.clip(proj_b - 1.0, 0, None) * b0,
                     z[lam] / t, "ok", "super_sbm", ref.rts)


def _is_efficient(res: SbmResult, dmu: DmuBundle) -> bool:
    if not res.ok or res.score < 1.0 - EFFICIENT_TOL:
        return False
    rel = np.concatenate([res.input_slacks / dmu.inputs,
                          res.good_slacks / dmu.good_outputs,
                          res.bad_slacks / dmu.bad_outputs if dmu.bad_outputs.size else []])
    return bool(np.all(rel < EFFICIENT_TOL))


def sbm_score(dmu: DmuBundle, ref: ReferenceSet) -> SbmResult:
    """Non-oriented SBM score of ``dmu`` against ``ref``.

    ``dmu`` must belong to ``ref`` (matched on its ``(entity, period)``
    key).  Returns a score in ``(0, 1]``; 1 with zero slacks means the unit
    is SBM-efficient.
    """
    _check_dims(dmu, ref)
    if not ref.contains(dmu.key):
        raise ValueError(f"DMU {dmu.key} is not a member of the reference set")
    return _sbm_lp(dmu, ref)


def super_sbm_score(dmu: DmuBundle, ref: ReferenceSet) -> SbmResult:
    """Super-efficiency SBM score of an efficient ``dmu``.

    The unit is removed from ``ref`` before solving.  Raises ``ValueError``
    when the unit is not SBM-efficient or nothing is left to compare with.
    """
    _check_dims(dmu, ref)
    own = ref if ref.contains(dmu.key) else ref.with_bundle(dmu)
    if not _is_efficient(_sbm_lp(dmu, own), dmu):
        raise ValueError(f"DMU {dmu.key} is not SBM-efficient; super-SBM undefined")
    others = tuple(b for b in ref.active if b.key != dmu.key)
    if not others:
        raise ValueError(f"reference set is empty once {dmu.key} is excluded")
    return _super_lp(dmu, ReferenceSet(others, ref.rts))


def efficiency(dmu: DmuBundle, ref: ReferenceSet) -> SbmResult:
    """SBM score, switching to super-SBM for efficient units.

    Efficient units therefore score at least 1 and stay rankable.  When the
    super program has no feasible solution (or no other unit is left) the
    score is reported as 1 with the ``super_fallback`` flag.
    """
    res = sbm_score(dmu, ref)
    if not _is_efficient(res, dmu):
        return res
    others = tuple(b for b in ref.active if b.key != dmu.key)
    if others:
        sup = _super_lp(dmu, ReferenceSet(others, ref.rts))
        if sup.ok:
            return sup
    res.score = 1.0
    res.flags = res.flags + (FLAG_SUPER_FALLBACK,)
    return res


def distance_result(dmu: DmuBundle, frontier: ReferenceSet,
                    fallback: ReferenceSet | None = None) -> SbmResult:
    """Efficiency of ``dmu`` measured against ``frontier``.

    A unit outside ``frontier`` is appended to it first, so cross-period
    values fall below 1 through SBM or exceed 1 through super-SBM.  If the
    result is infeasible and a ``fallback`` (usually the global pooled
    frontier) is given, the evaluation is repeated there and flagged.
    """
    _check_dims(dmu, frontier)
    ref = frontier if frontier.contains(dmu.key) else frontier.with_bundle(dmu)
    res = efficiency(dmu, ref)
    if res.ok or fallback is None:
        return res
    fb = fallback.with_rts(frontier.rts)
    fb = fb if fb.contains(dmu.key) else fb.with_bundle(dmu)
    res = efficiency(dmu, fb)
    res.flags = res.flags + (FLAG_GLOBAL_FALLBACK,)
    return res


def distance(dmu: DmuBundle, frontier: ReferenceSet,
             fallback: ReferenceSet | None = None) -> float:
    res = distance_result(dmu, frontier, fallback)
    if not res.ok:
        raise ValueError(f"no feasible distance for {dmu.key}")
    return res.score


@dataclass(frozen=True)
class Window:
    """Pool of consecutive periods ``start .. start + width - 1``."""

    start: int
    width: int = 1

    def periods(self):
        return range(self.start, self.start + self.width)


class Technology:
    """All observed bundles of a panel, grouped by period.

    Resolves frontier selectors (a period, ``"global"`` or a
    :class:`Window`) into reference sets and caches them.
    """

    def __init__(self, bundles: Iterable[DmuBundle]):
        self.bundles = tuple(sorted(bundles, key=lambda b: (b.period, str(b.entity))))
        if not self.bundles:
            raise ValueError("technology needs at least one bundle")
        self._by_period = {}
        for bnd in self.bundles:
            self._by_period.setdefault(bnd.period, []).append(bnd)
        self._cache = {}

    @property
    def periods(self):
        return sorted(self._by_period)

    def bundle(self, entity, period) -> DmuBundle | None:
        for b in self._by_period.get(period, ()):
            if b.entity == entity:
                return b
        return None

    def frontier(self, spec, rts: str = CRS) -> ReferenceSet:
        rts = _check_rts(rts)
        key = (spec, rts)
        if key not in self._cache:
            if spec == "global":
                members = self.bundles
            elif isinstance(spec, Window):
                members = tuple(b for p in spec.periods() for b in self._by_period.get(p, ()))
            else:
                members = tuple(self._by_period.get(spec, ()))
            if not members:
                raise ValueError(f"frontier {spec!r} has no bundles")
            self._cache[key] = ReferenceSet(members, rts)
        return self._cache[key]

    def distance_result(self, dmu: DmuBundle, spec, rts: str = CRS,
                        global_fallback: bool = True) -> SbmResult:
        fb = self.frontier("global", rts) if global_fallback and spec != "global" else None
        return distance_result(dmu, self.frontier(spec, rts), fb)

    def distance(self, dmu: DmuBundle, spec, rts: str = CRS) -> float:
        res = self.distance_result(dmu, spec, rts)
        if not res.ok:
            raise ValueError(f"no feasible distance for {dmu.key}")
        return res.score


class SBMEfficiency(TransformerMixin, BaseEstimator):
    """Estimator-style wrapper around the super-SBM scorer.

    Columns of ``X`` are ``n_inputs`` inputs, then ``n_good_outputs`` good
    outputs, then the remaining columns as undesirable outputs.

    ``fit`` records the reference technology.  ``transform`` scores new
    rows as outside units (each one appended to the reference in turn);
    ``fit_transform`` scores every fitted row against its own technology.

    Parameters
    ----------
    n_inputs : int
    n_good_outputs : int
    rts : {"crs", "vrs"}
    super_efficiency : bool, default True
        If False, plain SBM scores in (0, 1] are returned.
    """

    def __init__(self, n_inputs=1, n_good_outputs=1, rts=CRS, super_efficiency=True):
        self.n_inputs = n_inputs
        self.n_good_outputs = n_good_outputs
        self.rts = rts
        self.super_efficiency = super_efficiency

    def _bundles(self, X, tag):
        X = check_positive(X, "X")
        if X.ndim != 2:
            raise ValueError("X must be 2-dimensional")
        m, s1 = self.n_inputs, self.n_good_outputs
        if X.shape[1] < m + s1:
            raise ValueError(f"X has {X.shape[1]} columns, need at least {m + s1}")
        return [DmuBundle((tag, i), 0, row[:m], row[m:m + s1], row[m + s1:])
                for i, row in enumerate(X)]

    def fit(self, X, y=None):
        self.reference_ = ReferenceSet(self._bundles(X, "ref"), _check_rts(self.rts))
        self.n_features_in_ = np.asarray(X).shape[1]
        return self

    def _score(self, dmu, ref):
        res = efficiency(dmu, ref) if self.super_efficiency else sbm_score(dmu, ref)
        return res.score

    def transform(self, X):
        check_is_fitted(self, "reference_")
        out = []
        for dmu in self._bundles(X, "new"):
            out.append(self._score(dmu, self.reference_.with_bundle(dmu)))
        return np.array(out)

    def fit_transform(self, X, y=None, **fit_params):
        self.fit(X)
        return np.array([self._score(d, self.reference_) for d in self.reference_.bundles])
