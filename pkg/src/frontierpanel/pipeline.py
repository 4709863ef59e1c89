"""Stage orchestration: CSV panel in, TFP / regression tables out.

Stages run in a fixed order::

    describe, tfp, static-tfp, regress, mmqr, moderate, hetero, trend

Unselected prerequisites (ingest, transforms, groupings, TFP records) are
computed on demand but not written.  Outputs are plain CSV plus aligned
text twins of the coefficient tables; nothing time- or host-dependent is
written, so identical configurations give byte-identical directories.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field, replace
from functools import cached_property
from pathlib import Path

import numpy as np
import pandas as pd

from . import csvio
from .config import STAGES, RunConfig
from .econometrics import RegressionSpec, fe_ols, heterogeneity_run, mmqr, moderation, results_frame
from .panel import CategoricalRule, TertileRule, VariableSpec, apply_transform, assign_groups, describe
from .productivity import (
    INDICES, STATIC_INDICES, FrontierAnalysis, records_to_long, static_frame, tfp_frame, trend,
)

log = logging.getLogger(__name__)


class StageError(RuntimeError):
    """A pipeline stage failed; ``report`` lists what was written before it."""

    def __init__(self, stage, cause, report=None):
        super().__init__(f"stage '{stage}' failed: {cause}")
        self.stage = stage
        self.cause = cause
        self.report = report


@dataclass
class PipelineReport:
    outputs: dict = field(default_factory=dict)
    summary: list = field(default_factory=list)
    completed: list = field(default_factory=list)
    failed_stage: str | None = None

    def files(self) -> list:
        return [p for paths in self.outputs.values() for p in paths]


def _guard(stage):
    """Attribute non-stage errors raised inside ``fn`` to ``stage``."""
    def wrap(fn):
        def inner(self, *a, **kw):
            try:
                return fn(self, *a, **kw)
            except StageError:
                raise
            except Exception as exc:
                raise StageError(stage, exc) from exc
        inner.__name__ = fn.__name__
        inner.__doc__ = fn.__doc__
        return inner
    return wrap


class _Run:
    """Lazily built intermediate products shared by the stages."""

    def __init__(self, cfg: RunConfig):
        self.cfg = cfg

    @cached_property
    @_guard("ingest")
    def raw_panel(self):
        groups = csvio.read_groups_csv(self.cfg.groups) if self.cfg.groups else {}
        return csvio.read_panel_csv(self.cfg.panel, groups)

    @cached_property
    @_guard("transform")
    def transformed(self):
        panel = self.raw_panel
        for name, tr in self.cfg.transforms.items():
            panel = apply_transform(panel, VariableSpec(name, transform=tr))
        return panel

    @cached_property
    @_guard("groups")
    def panel(self):
        panel = self.transformed
        for g in self.cfg.groupings:
            if g.tertile:
                rule = TertileRule(g.scheme, g.tertile, g.descending, g.labels)
            else:
                if g.scheme not in panel.groups:
                    raise KeyError(f"scheme {g.scheme!r} missing from {self.cfg.groups}")
                rule = CategoricalRule(g.scheme, panel.groups[g.scheme])
            panel = assign_groups(panel, rule)
        return panel

    @cached_property
    def analysis(self):
        c = self.cfg
        return FrontierAnalysis(self.panel, c.inputs, c.good_outputs, c.bad_outputs, c.global_fallback)

    @cached_property
    @_guard("tfp")
    def dynamic(self):
        recs = self.analysis.dynamic()
        if not len(recs):
            raise ValueError("no entity has two adjacent periods with complete DEA data")
        return recs

    @cached_property
    @_guard("static-tfp")
    def static(self):
        return self.analysis.static()

    def _merge(self, panel, records, names):
        ei = {e: i for i, e in enumerate(panel.entities)}
        pj = {p: j for j, p in enumerate(panel.periods)}
        for n in names:
            v = np.full((len(panel.entities), len(panel.periods)), np.nan)
            m = np.zeros(v.shape, dtype=bool)
            for e, p, idx, val in records:
                if idx == n:
                    v[ei[e], pj[p]] = val
                    m[ei[e], pj[p]] = True
            panel = panel.with_variable(n, v, m)
        return panel

    def panel_with(self, names) -> object:
        """Panel plus the requested productivity indices (dynamic ones at t1)."""
        panel = self.panel
        dyn = [n for n in names if n in INDICES]
        stat = [n for n in names if n in STATIC_INDICES]
        if dyn:
            panel = self._merge(panel, records_to_long(self.dynamic), dyn)
        if stat:
            panel = self._merge(panel, records_to_long(self.static), stat)
        return panel

    def spec(self, regressors, **kw) -> RegressionSpec:
        c = self.cfg
        return RegressionSpec(c.derived(c.dependent), tuple(regressors),
                              bootstrap_reps=c.bootstrap_reps, seed=c.seed or 0, scale=c.scale, **kw)

    @property
    def controls(self):
        return tuple(self.cfg.derived(n) for n in self.cfg.controls)


def _stage_describe(run: _Run, out: Path):
    names = [run.cfg.derived(n) for n in run.cfg.describe_list]
    panel = run.panel_with(names)
    frames = [describe(panel, names).assign(scheme="all")]
    frames += [describe(panel, names, s).assign(scheme=s) for s in run.cfg.describe_schemes]
    df = pd.concat(frames, ignore_index=True)
    path = csvio.write_frame(df, out / "descriptives.csv", csvio.DESCRIBE_COLUMNS)
    return [path], f"{len(names)} variables, {len(df)} rows"


def _stage_tfp(run: _Run, out: Path):
    recs = run.dynamic
    paths = [csvio.write_tfp_csv(tfp_frame(recs), out / "tfp.csv")]
    skipped = pd.DataFrame(recs.skipped, columns=["entity", "t", "t1", "reason"])
    paths.append(csvio.write_frame(skipped, out / "tfp_skipped.csv", list(skipped.columns)))
    return paths, f"{len(recs)} records, {len(skipped)} skipped pairs"


def _stage_static(run: _Run, out: Path):
    recs = run.static
    return [csvio.write_static_csv(static_frame(recs), out / "static_tfp.csv")], f"{len(recs)} records"


def _regress_all(run, fit):
    c = run.cfg
    panel = run.panel_with(c.indices)
    out = []
    for idx in c.indices:
        out.extend(fit(panel, run.spec((idx, *run.controls))))
    return results_frame(out)


def _stage_regress(run: _Run, out: Path):
    df = _regress_all(run, lambda p, s: [fe_ols(p, s, run.cfg.n_jobs)])
    return list(csvio.write_results(df, out / "regress.csv")), f"{len(run.cfg.indices)} FE regressions"


def _stage_mmqr(run: _Run, out: Path):
    c = run.cfg
    df = _regress_all(run, lambda p, s: mmqr(p, replace(s, quantiles=c.taus), c.n_jobs))
    return list(csvio.write_results(df, out / "mmqr.csv")), \
        f"{len(c.indices)} MM-QR regressions x {len(c.taus)} quantiles"


def _stage_moderate(run: _Run, out: Path):
    c = run.cfg
    panel = run.panel_with([c.focal])
    spec = run.spec((c.focal, *run.controls), moderator=c.derived(c.moderator), quantiles=c.taus)
    df = results_frame(moderation(panel, spec, n_jobs=c.n_jobs))
    return list(csvio.write_results(df, out / "moderation.csv")), f"FE + {len(c.taus)} quantiles"


def _stage_hetero(run: _Run, out: Path):
    c = run.cfg
    panel = run.panel_with(c.indices)
    spec = run.spec((*c.indices, *run.controls),
                    quantiles=c.taus if c.hetero_estimator == "mmqr" else ())
    paths, notes = [], []
    for scheme in c.hetero_schemes:
        runs = heterogeneity_run(panel, spec, scheme, focal=c.indices,
                                 estimator=c.hetero_estimator, n_jobs=c.n_jobs)
        df = results_frame([r for lab in sorted(runs) for r in runs[lab].results])
        csv, txt = csvio.write_results(df, out / f"hetero_{scheme}.csv")
        skipped = [(lab, runs[lab].skipped) for lab in sorted(runs) if runs[lab].skipped]
        if skipped:
            with open(txt, "a", encoding="utf-8") as fh:
                for lab, why in skipped:
                    fh.write(f"skipped group {lab}: {why}\n")
        paths += [csv, txt]
        notes.append(f"{scheme}: {len(runs) - len(skipped)} groups" +
                     (f", skipped {[lab for lab, _ in skipped]}" if skipped else ""))
    return paths, "; ".join(notes) or "no schemes configured"


def _stage_trend(run: _Run, out: Path):
    df = pd.concat([trend(run.dynamic, idx) for idx in run.cfg.trend_indices], ignore_index=True)
    return [csvio.write_frame(df, out / "trend.csv", csvio.TREND_COLUMNS)], \
        f"{df['period'].nunique()} periods x {len(run.cfg.trend_indices)} indices"


_STAGE_FUNCS = {
    "describe": _stage_describe, "tfp": _stage_tfp, "static-tfp": _stage_static,
    "regress": _stage_regress, "mmqr": _stage_mmqr, "moderate": _stage_moderate,
    "hetero": _stage_hetero, "trend": _stage_trend,
}


def run_pipeline(cfg: RunConfig) -> PipelineReport:
    """Run the selected stages of ``cfg`` and write their outputs to ``cfg.out``.

    Raises
    ------
    StageError
        On the first failing stage; later stages do not run.  The error's
        ``report`` holds the outputs already written.
    """
    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    run = _Run(cfg)
    report = PipelineReport()
    for stage in STAGES:
        if stage not in cfg.stages:
            continue
        log.info("stage %s", stage)
        try:
            paths, note = _guard(stage)(lambda self: _STAGE_FUNCS[stage](self, out))(run)
        except StageError as exc:
            report.failed_stage = exc.stage
            report.summary.append(f"{exc.stage}: FAILED ({exc.cause})")
            exc.report = report
            raise
        report.outputs[stage] = [Path(p) for p in paths]
        report.completed.append(stage)
        report.summary.append(f"{stage}: {note} -> {', '.join(Path(p).name for p in paths)}")
    return report
