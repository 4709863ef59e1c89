"""Run configuration: one YAML file plus command-line overrides.

Schema (paths are relative to the config file)::

    panel: panel.csv              # entity,period,variable,value
    groups: groups.csv            # entity,scheme,label (optional)
    out: out                      # output directory
    seed: 12345                   # required when bootstrap_reps > 0
    bootstrap_reps: 200
    taus: [0.1, 0.25, 0.5, 0.75, 0.9]
    stages: all                   # or a list of stage names
    global_fallback: true
    dea:
      inputs: [capital, labor, energy]
      good_outputs: [gdp]
      bad_outputs: [co2]
    transforms: {fdi: signed_log, ei: log}
    regression:
      dependent: pm25
      indices: [TFP, EC, TC, PEC, SEC]
      controls: [fdi, popdens, industry]
      moderator: ei
      focal: TFP                  # index interacted with the moderator
      scale: all                  # or "none" to force gamma = 0
    groupings:                    # schemes used by describe / hetero
      - {scheme: income}          # taken from the groups file
      - {scheme: sci, tertile: sci}
      - {scheme: newenergy, tertile: newenergy, descending: true}
    describe: {variables: [...], schemes: [income]}
    hetero: {schemes: [income, sci], estimator: fe}
    trend: {indices: [TFP, EC, TC]}

Variable names in ``regression``, ``describe`` and ``tertile`` refer to
raw panel variables; transforms are applied before use.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from pathlib import Path

import pandas as pd
import yaml

from ._validation import check_quantiles
from .panel import TRANSFORMS, VariableSpec
from .productivity import INDICES, STATIC_INDICES

STAGES = ("describe", "tfp", "static-tfp", "regress", "mmqr", "moderate", "hetero", "trend")
DEFAULT_TAUS = (0.1, 0.25, 0.5, 0.75, 0.9)

_KEYS = {"panel", "groups", "out", "seed", "bootstrap_reps", "taus", "stages", "global_fallback",
         "dea", "transforms", "regression", "groupings", "describe", "hetero", "trend", "n_jobs"}


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class Grouping:
    scheme: str
    tertile: str | None = None
    descending: bool = False
    labels: tuple | None = None


@dataclass(frozen=True)
class RunConfig:
    panel: Path
    out: Path
    inputs: tuple
    good_outputs: tuple
    bad_outputs: tuple = ()
    groups: Path | None = None
    seed: int | None = None
    bootstrap_reps: int = 200
    taus: tuple = DEFAULT_TAUS
    stages: tuple = STAGES
    global_fallback: bool = True
    transforms: dict = field(default_factory=dict)
    dependent: str | None = None
    indices: tuple = INDICES
    controls: tuple = ()
    moderator: str | None = None
    focal: str = "TFP"
    scale: str = "all"
    groupings: tuple = ()
    describe_variables: tuple | None = None
    describe_schemes: tuple = ()
    hetero_schemes: tuple = ()
    hetero_estimator: str = "fe"
    trend_indices: tuple = INDICES
    n_jobs: int | None = None

    def __post_init__(self):
        bad = [s for s in self.stages if s not in STAGES]
        if bad:
            raise ConfigError(f"unknown stage(s) {bad}; expected names from {list(STAGES)}")
        try:
            check_quantiles(self.taus)
        except ValueError as exc:
            raise ConfigError(str(exc)) from None
        if self.bootstrap_reps < 0:
            raise ConfigError("bootstrap_reps must be >= 0")
        if self.bootstrap_reps > 0 and self.seed is None:
            raise ConfigError("a seed is required when bootstrap_reps > 0")
        if self.seed is not None and not 0 <= self.seed < 2 ** 64:
            raise ConfigError(f"seed must be an unsigned 64-bit integer, got {self.seed}")
        if not self.inputs or not self.good_outputs:
            raise ConfigError("dea needs at least one input and one good output")
        for name, tr in self.transforms.items():
            if tr not in TRANSFORMS:
                raise ConfigError(f"transform {tr!r} for {name!r} not in {TRANSFORMS}")
        for group in (self.indices, self.trend_indices):
            bad = [i for i in group if i not in INDICES]
            if bad:
                raise ConfigError(f"unknown productivity index {bad}; expected from {INDICES}")
        if self.focal not in INDICES:
            raise ConfigError(f"focal must be one of {INDICES}")
        if self.scale not in ("all", "none"):
            raise ConfigError("regression.scale must be 'all' or 'none'")
        if self.hetero_estimator not in ("fe", "mmqr"):
            raise ConfigError("hetero.estimator must be 'fe' or 'mmqr'")
        regress = {"regress", "mmqr", "moderate", "hetero"} & set(self.stages)
        if regress and not self.dependent:
            raise ConfigError(f"stages {sorted(regress)} need regression.dependent")
        if "moderate" in self.stages and not self.moderator:
            raise ConfigError("stage 'moderate' needs regression.moderator")
        known = {g.scheme for g in self.groupings}
        for where, names in (("describe", self.describe_schemes), ("hetero", self.hetero_schemes)):
            bad = [s for s in names if s not in known]
            if bad:
                raise ConfigError(f"{where} refers to undeclared grouping scheme(s) {bad}")

    # names after transformation -----------------------------------------
    def derived(self, name: str) -> str:
        if name in INDICES or name in STATIC_INDICES:
            return name
        return VariableSpec(name, transform=self.transforms.get(name, "none")).derived_name

    @property
    def dea_variables(self) -> tuple:
        return (*self.inputs, *self.good_outputs, *self.bad_outputs)

    @property
    def raw_variables(self) -> list:
        """Panel variables the configuration refers to, in first-use order."""
        names = list(self.dea_variables)
        names += [n for n in (self.dependent, *self.controls, self.moderator) if n]
        names += [g.tertile for g in self.groupings if g.tertile]
        names += [n for n in (self.describe_variables or ()) if n not in INDICES + STATIC_INDICES]
        names += list(self.transforms)
        return list(dict.fromkeys(names))

    @property
    def describe_list(self) -> tuple:
        if self.describe_variables is not None:
            return tuple(self.describe_variables)
        names = [n for n in (self.dependent, *self.controls, self.moderator) if n]
        return tuple(dict.fromkeys([*names, *self.dea_variables]))

    def check_columns(self):
        """Every referenced variable, entity and scheme must exist in the CSVs."""
        if not self.panel.is_file():
            raise ConfigError(f"panel file {self.panel} does not exist")
        head = pd.read_csv(self.panel, usecols=["variable"], dtype=str)["variable"]
        have = set(head.unique())
        missing = [n for n in self.raw_variables if n not in have]
        if missing:
            raise ConfigError(f"variables {missing} not found in {self.panel}")
        csv_schemes = [g.scheme for g in self.groupings if g.tertile is None]
        if csv_schemes:
            if self.groups is None or not self.groups.is_file():
                raise ConfigError(f"schemes {csv_schemes} need a groups file")
            schemes = set(pd.read_csv(self.groups, usecols=["scheme"], dtype=str)["scheme"])
            missing = [s for s in csv_schemes if s not in schemes]
            if missing:
                raise ConfigError(f"schemes {missing} not found in {self.groups}")
        return self


def _tuple(v, key):
    if v is None:
        return ()
    if isinstance(v, str):
        return (v,)
    if not isinstance(v, (list, tuple)):
        raise ConfigError(f"{key} must be a list")
    return tuple(v)


def _section(raw, key, allowed):
    sec = raw.get(key) or {}
    if not isinstance(sec, dict):
        raise ConfigError(f"{key} must be a mapping")
    extra = set(sec) - set(allowed)
    if extra:
        raise ConfigError(f"unknown keys in {key}: {sorted(extra)}")
    return sec


def parse_stages(value) -> tuple:
    """``"all"``, ``"describe,tfp"`` or a list; returned in pipeline order."""
    if value is None or value == "all":
        return STAGES
    items = value.split(",") if isinstance(value, str) else list(value)
    items = [s.strip() for s in items if s.strip()]
    if "all" in items:
        return STAGES
    bad = [s for s in items if s not in STAGES]
    if bad:
        raise ConfigError(f"unknown stage(s) {bad}; expected names from {list(STAGES)}")
    return tuple(s for s in STAGES if s in items)


def parse_taus(value) -> tuple:
    if isinstance(value, str):
        try:
            value = [float(v) for v in value.split(",") if v.strip()]
        except ValueError:
            raise ConfigError(f"cannot parse quantile list {value!r}") from None
    return tuple(float(v) for v in value)


def config_from_dict(raw: dict, base: Path = Path("."), check=True, **overrides) -> RunConfig:
    """Build a :class:`RunConfig`; ``overrides`` replace top-level keys."""
    if not isinstance(raw, dict):
        raise ConfigError("configuration must be a mapping")
    extra = set(raw) - _KEYS
    if extra:
        raise ConfigError(f"unknown configuration keys {sorted(extra)}")
    raw = {**raw, **{k: v for k, v in overrides.items() if v is not None}}
    for key in ("panel", "dea"):
        if key not in raw:
            raise ConfigError(f"missing required key {key!r}")
    dea = _section(raw, "dea", ("inputs", "good_outputs", "bad_outputs"))
    reg = _section(raw, "regression", ("dependent", "indices", "controls", "moderator", "focal", "scale"))
    desc = _section(raw, "describe", ("variables", "schemes"))
    het = _section(raw, "hetero", ("schemes", "estimator"))
    tr = _section(raw, "trend", ("indices",))
    groupings = []
    for g in raw.get("groupings") or ():
        if isinstance(g, str):
            g = {"scheme": g}
        if not isinstance(g, dict) or "scheme" not in g:
            raise ConfigError(f"grouping entries need a 'scheme' key, got {g!r}")
        extra = set(g) - {"scheme", "tertile", "descending", "labels"}
        if extra:
            raise ConfigError(f"unknown grouping keys {sorted(extra)}")
        labels = g.get("labels")
        groupings.append(Grouping(str(g["scheme"]), g.get("tertile"), bool(g.get("descending", False)),
                                  tuple(labels) if labels else None))
    base = Path(base)

    def path(v):
        return None if v is None else (base / Path(v)).resolve() if not Path(v).is_absolute() else Path(v)

    seed = raw.get("seed")
    if seed is not None and (isinstance(seed, bool) or not isinstance(seed, int)):
        raise ConfigError(f"seed must be an integer, got {seed!r}")
    cfg = RunConfig(
        panel=path(raw["panel"]), groups=path(raw.get("groups")), out=path(raw.get("out", "out")),
        inputs=_tuple(dea.get("inputs"), "dea.inputs"),
        good_outputs=_tuple(dea.get("good_outputs"), "dea.good_outputs"),
        bad_outputs=_tuple(dea.get("bad_outputs"), "dea.bad_outputs"),
        seed=seed, bootstrap_reps=int(raw.get("bootstrap_reps", 200)),
        taus=parse_taus(raw.get("taus", DEFAULT_TAUS)), stages=parse_stages(raw.get("stages")),
        global_fallback=bool(raw.get("global_fallback", True)),
        transforms=dict(raw.get("transforms") or {}),
        dependent=reg.get("dependent"), indices=_tuple(reg.get("indices", INDICES), "regression.indices"),
        controls=_tuple(reg.get("controls"), "regression.controls"), moderator=reg.get("moderator"),
        focal=reg.get("focal", "TFP"), scale=reg.get("scale", "all"),
        groupings=tuple(groupings),
        describe_variables=_tuple(desc["variables"], "describe.variables") if "variables" in desc else None,
        describe_schemes=_tuple(desc.get("schemes"), "describe.schemes"),
        hetero_schemes=_tuple(het.get("schemes"), "hetero.schemes"),
        hetero_estimator=het.get("estimator", "fe"),
        trend_indices=_tuple(tr.get("indices", INDICES), "trend.indices"),
        n_jobs=raw.get("n_jobs"),
    )
    return cfg.check_columns() if check else cfg


def load_config(path, check=True, **overrides) -> RunConfig:
    path = Path(path)
    with open(path, encoding="utf-8") as fh:
        raw = yaml.safe_load(fh)
    return config_from_dict(raw, path.parent, check=check, **overrides)


def with_stages(cfg: RunConfig, stages) -> RunConfig:
    return replace(cfg, stages=parse_stages(stages))
