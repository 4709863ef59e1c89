"""Dynamic and static energy-TFP from panel DEA distances.

Dynamic records decompose the productivity change between two adjacent
periods as ``TFP = EC * TC`` and ``EC = PEC * SEC``, where all pieces are
ratios of super-SBM distances to period-specific frontiers.  Static
records score every period cross-section on its own (window width 1).
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np
import pandas as pd

from .dea import CRS, VRS, DmuBundle, Technology
from .panel import PanelDataset, floor_nonpositive

log = logging.getLogger(__name__)

INDICES = ("TFP", "EC", "TC", "PEC", "SEC")
STATIC_INDICES = ("score", "PES", "SES")
# distance name -> (rts, frontier period, bundle period); "t" / "t1" = t / t+1
DISTANCES = {
    "dc_t_t": (CRS, "t", "t"), "dc_t_t1": (CRS, "t", "t1"),
    "dc_t1_t": (CRS, "t1", "t"), "dc_t1_t1": (CRS, "t1", "t1"),
    "dv_t_t": (VRS, "t", "t"), "dv_t_t1": (VRS, "t", "t1"),
    "dv_t1_t": (VRS, "t1", "t"), "dv_t1_t1": (VRS, "t1", "t1"),
}


@dataclass
class TfpRecord:
    entity: object
    t: int
    t1: int
    distances: dict
    TFP: float
    EC: float
    TC: float
    PEC: float
    SEC: float
    flags: dict = field(default_factory=dict)

    @property
    def period(self) -> int:
        return self.t1

    def flag_string(self) -> str:
        return ";".join(f"{k}:{f}" for k, fl in sorted(self.flags.items()) for f in fl)


@dataclass
class StaticTfpRecord:
    entity: object
    period: int
    score: float
    PES: float
    SES: float
    flags: tuple = ()


class TfpRecords(list):
    """List of records; ``skipped`` keeps ``(entity, t, t1, reason)`` tuples."""

    def __init__(self, items=(), skipped=()):
        super().__init__(items)
        self.skipped = list(skipped)


def decompose(d: dict) -> dict:
    """TFP, EC, TC, PEC, SEC from the eight distances."""
    for k, v in d.items():
        if not v > 0:
            raise ValueError(f"distance {k} is {v}; indices need positive distances")
    ec = d["dc_t1_t1"] / d["dc_t_t"]
    tc = math.sqrt((d["dc_t_t1"] / d["dc_t1_t1"]) * (d["dc_t_t"] / d["dc_t1_t"]))
    pec = d["dv_t1_t1"] / d["dv_t_t"]
    sec = (d["dv_t_t"] / d["dc_t_t"]) * (d["dc_t1_t1"] / d["dv_t1_t1"])
    return {"TFP": ec * tc, "EC": ec, "TC": tc, "PEC": pec, "SEC": sec}


class FrontierAnalysis:
    """Shared distance cache over one panel's DEA variables.

    Parameters
    ----------
    panel : PanelDataset
    inputs, good_outputs, bad_outputs : sequences of variable names
    global_fallback : bool
        Re-evaluate infeasible cross-period distances on the pooled frontier.
    """

    def __init__(self, panel: PanelDataset, inputs: Sequence[str], good_outputs: Sequence[str],
                 bad_outputs: Sequence[str] = (), global_fallback: bool = True):
        self.inputs = list(inputs)
        self.good_outputs = list(good_outputs)
        self.bad_outputs = list(bad_outputs)
        names = self.inputs + self.good_outputs + self.bad_outputs
        missing = [n for n in names if n not in panel.values]
        if missing:
            raise KeyError(f"DEA variables missing from panel: {missing}")
        panel, self.floored = floor_nonpositive(panel, names)
        for e, p, n, v in self.floored:
            log.warning("floored non-positive %s=%g at (%s, %s)", n, v, e, p)
        self.panel = panel
        self.global_fallback = global_fallback
        bundles = []
        m, s1 = len(self.inputs), len(self.good_outputs)
        for i, e in enumerate(panel.entities):
            for j, p in enumerate(panel.periods):
                if all(panel.mask[n][i, j] for n in names):
                    v = np.array([panel.values[n][i, j] for n in names])
                    bundles.append(DmuBundle(e, p, v[:m], v[m:m + s1], v[m + s1:]))
        if not bundles:
            raise ValueError("no entity-period has every DEA variable present")
        self.technology = Technology(bundles)
        self._cache = {}

    def distance(self, entity, bundle_period, frontier_period, rts):
        key = (entity, bundle_period, frontier_period, rts)
        if key not in self._cache:
            dmu = self.technology.bundle(entity, bundle_period)
            res = self.technology.distance_result(dmu, frontier_period, rts, self.global_fallback)
            if not res.ok:
                raise ValueError(f"infeasible distance for {key}")
            self._cache[key] = res
        return self._cache[key]

    def dynamic(self) -> TfpRecords:
        tech = self.technology
        periods = list(self.panel.periods)
        out, skipped = [], []
        for e in self.panel.entities:
            for t, t1 in zip(periods[:-1], periods[1:]):
                if tech.bundle(e, t) is None or tech.bundle(e, t1) is None:
                    gone = [p for p in (t, t1) if tech.bundle(e, p) is None]
                    skipped.append((e, t, t1, f"DEA variables absent in {gone}"))
                    continue
                at = {"t": t, "t1": t1}
                dist, flags = {}, {}
                for name, (rts, fp, bp) in DISTANCES.items():
                    res = self.distance(e, at[bp], at[fp], rts)
                    dist[name] = res.score
                    if res.flags:
                        flags[name] = res.flags
                out.append(TfpRecord(e, t, t1, dist, flags=flags, **decompose(dist)))
        for e, t, t1, why in skipped:
            log.info("skipped %s %s->%s: %s", e, t, t1, why)
        return TfpRecords(out, skipped)

    def static(self) -> list:
        out = []
        for b in self.technology.bundles:
            crs = self.distance(b.entity, b.period, b.period, CRS)
            vrs = self.distance(b.entity, b.period, b.period, VRS)
            out.append(StaticTfpRecord(b.entity, b.period, crs.score, vrs.score,
                                       crs.score / vrs.score, tuple(sorted(set(crs.flags + vrs.flags)))))
        out.sort(key=lambda r: (str(r.entity), r.period))
        return out


def compute_tfp(panel, inputs, good_outputs, bad_outputs=(), global_fallback=True) -> TfpRecords:
    return FrontierAnalysis(panel, inputs, good_outputs, bad_outputs, global_fallback).dynamic()


def compute_static_tfp(panel, inputs, good_outputs, bad_outputs=()) -> list:
    return FrontierAnalysis(panel, inputs, good_outputs, bad_outputs).static()


def tfp_frame(records: Iterable[TfpRecord]) -> pd.DataFrame:
    rows = [{"entity": r.entity, "t": r.t, "t1": r.t1,
             **{k: getattr(r, k) for k in INDICES}, "flags": r.flag_string()} for r in records]
    return pd.DataFrame(rows, columns=["entity", "t", "t1", *INDICES, "flags"])


def static_frame(records: Iterable[StaticTfpRecord]) -> pd.DataFrame:
    rows = [{"entity": r.entity, "period": r.period, "score": r.score,
             "PES": r.PES, "SES": r.SES} for r in records]
    return pd.DataFrame(rows, columns=["entity", "period", *STATIC_INDICES])


def records_to_long(records) -> list:
    """``(entity, period, index, value)`` tuples; dynamic records sit at ``t1``."""
    out = []
    for r in records:
        names = INDICES if isinstance(r, TfpRecord) else STATIC_INDICES
        out.extend((r.entity, r.period, n, float(getattr(r, n))) for n in names)
    return out


def trend(records, index: str) -> pd.DataFrame:
    """Per-period mean of ``index`` with the number of contributing entities.

    ``records`` may be TFP/static records or a long frame with ``period``
    and ``index`` columns (e.g. ``PanelDataset.to_frame``).
    """
    if isinstance(records, pd.DataFrame):
        df = records[["period", index]].dropna()
    else:
        rows = [(r.period, getattr(r, index)) for r in records]
        df = pd.DataFrame(rows, columns=["period", index])
    if df.empty:
        raise ValueError("trend needs at least one record")
    g = df.groupby("period")[index]
    out = pd.DataFrame({"mean": g.mean(), "N": g.size()}).reset_index()
    out.insert(1, "index", index)
    return out
