"""Rectangular entity x period panel store with masking and grouping."""

from __future__ import annotations

from dataclasses import dataclass, field
from types import MappingProxyType
from typing import Hashable, Iterable, Mapping, Sequence

import numpy as np
import pandas as pd

ROLES = ("input", "desirable_output", "undesirable_output", "dependent",
         "regressor", "moderator", "grouping")
DEA_ROLES = ("input", "desirable_output", "undesirable_output")
TRANSFORMS = ("none", "signed_log", "log")
_PREFIX = {"signed_log": "slog", "log": "log"}


class AbsentCellError(KeyError):
    """Raised when code tries to read a cell that was never observed."""


@dataclass(frozen=True)
class VariableSpec:
    name: str
    role: str = "regressor"
    transform: str = "none"
    output: str | None = None

    def __post_init__(self):
        if self.role not in ROLES:
            raise ValueError(f"unknown role {self.role!r}; expected one of {ROLES}")
        if self.transform not in TRANSFORMS:
            raise ValueError(f"unknown transform {self.transform!r}; expected one of {TRANSFORMS}")

    @property
    def derived_name(self) -> str:
        if self.output:
            return self.output
        if self.transform == "none":
            return self.name
        return f"{_PREFIX[self.transform]}_{self.name}"


@dataclass(frozen=True)
class PanelDataset:
    """Immutable panel.

    ``values[var]`` is an ``(n_entities, n_periods)`` float array holding NaN
    where ``mask[var]`` is False.  ``groups[scheme]`` maps entity to label.
    """

    entities: tuple
    periods: tuple
    values: Mapping[str, np.ndarray]
    mask: Mapping[str, np.ndarray]
    groups: Mapping[str, Mapping[Hashable, str]] = field(default_factory=dict)

    def __post_init__(self):
        if len(set(self.entities)) != len(self.entities) or list(self.entities) != sorted(self.entities):
            raise ValueError("entities must be unique and sorted")
        if len(set(self.periods)) != len(self.periods) or list(self.periods) != sorted(self.periods):
            raise ValueError("periods must be unique and sorted")
        shape = (len(self.entities), len(self.periods))
        if set(self.values) != set(self.mask):
            raise ValueError("values and mask must cover the same variables")
        vals, masks = {}, {}
        for name in self.values:
            v = np.array(self.values[name], dtype=float)
            mk = np.array(self.mask[name], dtype=bool)
            if v.shape != shape or mk.shape != shape:
                raise ValueError(f"variable {name!r} must have shape {shape}")
            v[~mk] = np.nan
            if not np.all(np.isfinite(v[mk])):
                raise ValueError(f"variable {name!r} has non-finite present cells")
            v.setflags(write=False)
            mk.setflags(write=False)
            vals[name], masks[name] = v, mk
        object.__setattr__(self, "values", MappingProxyType(vals))
        object.__setattr__(self, "mask", MappingProxyType(masks))
        known = set(self.entities)
        grp = {}
        for scheme, mapping in self.groups.items():
            stray = set(mapping) - known
            if stray:
                raise ValueError(f"scheme {scheme!r} labels unknown entities {sorted(map(str, stray))}")
            grp[scheme] = MappingProxyType(dict(mapping))
        object.__setattr__(self, "groups", MappingProxyType(grp))

    @property
    def variables(self) -> list:
        return sorted(self.values)

    @property
    def shape(self):
        return (len(self.entities), len(self.periods))

    def _require(self, name):
        if name not in self.values:
            raise KeyError(f"unknown variable {name!r}")

    def get(self, name, entity, period) -> float:
        self._require(name)
        i = self.entities.index(entity)
        j = self.periods.index(period)
        if not self.mask[name][i, j]:
            raise AbsentCellError(f"{name} is absent for ({entity!r}, {period})")
        return float(self.values[name][i, j])

    def present(self, name) -> np.ndarray:
        self._require(name)
        return self.values[name][self.mask[name]]

    def entity_means(self, name) -> dict:
        """Time average of ``name`` per entity over present cells only."""
        self._require(name)
        out = {}
        for i, e in enumerate(self.entities):
            row = self.values[name][i][self.mask[name][i]]
            if row.size == 0:
                raise ValueError(f"{name} has no present cells for entity {e!r}")
            out[e] = float(row.mean())
        return out

    def to_records(self) -> list:
        recs = []
        for name in self.variables:
            v, mk = self.values[name], self.mask[name]
            for i, j in zip(*np.nonzero(mk)):
                recs.append((self.entities[i], self.periods[j], name, float(v[i, j])))
        return recs

    def to_frame(self, variables: Sequence[str] | None = None) -> pd.DataFrame:
        """Long frame ``entity, period, <vars>`` keeping only complete rows."""
        variables = list(variables) if variables is not None else self.variables
        for name in variables:
            self._require(name)
        keep = np.ones(self.shape, dtype=bool)
        for name in variables:
            keep &= self.mask[name]
        ii, jj = np.nonzero(keep)
        data = {"entity": [self.entities[i] for i in ii],
                "period": [self.periods[j] for j in jj]}
        for name in variables:
            data[name] = self.values[name][ii, jj]
        return pd.DataFrame(data)

    def with_variable(self, name, values, mask) -> "PanelDataset":
        vals = dict(self.values)
        masks = dict(self.mask)
        vals[name] = values
        masks[name] = mask
        return PanelDataset(self.entities, self.periods, vals, masks, self.groups)

    def with_groups(self, scheme, mapping) -> "PanelDataset":
        grp = dict(self.groups)
        grp[scheme] = dict(mapping)
        return PanelDataset(self.entities, self.periods, self.values, self.mask, grp)

    def subset(self, entities) -> "PanelDataset":
        keep = [e for e in self.entities if e in set(entities)]
        idx = [self.entities.index(e) for e in keep]
        vals = {k: v[idx] for k, v in self.values.items()}
        masks = {k: v[idx] for k, v in self.mask.items()}
        grp = {s: {e: lab for e, lab in m.items() if e in keep} for s, m in self.groups.items()}
        return PanelDataset(tuple(keep), self.periods, vals, masks, grp)


def build_panel(records: Iterable[tuple], groups: Mapping | None = None) -> PanelDataset:
    """Rectangularize ``(entity, period, variable, value)`` records.

    Cells never mentioned are masked as absent.
    """
    seen = {}
    for rec in records:
        entity, period, name, value = rec
        if isinstance(period, float) and period.is_integer():
            period = int(period)
        if not isinstance(period, (int, np.integer)) or isinstance(period, bool):
            raise ValueError(f"period must be an integer year, got {period!r}")
        value = float(value)
        key = (entity, int(period), str(name))
        if not np.isfinite(value):
            raise ValueError(f"non-finite value for {key}")
        if key in seen:
            raise ValueError(f"duplicate record for {key}")
        seen[key] = value
    entities = tuple(sorted({k[0] for k in seen}))
    periods = tuple(sorted({k[1] for k in seen}))
    names = sorted({k[2] for k in seen})
    ei = {e: i for i, e in enumerate(entities)}
    pj = {p: j for j, p in enumerate(periods)}
    shape = (len(entities), len(periods))
    vals = {n: np.full(shape, np.nan) for n in names}
    masks = {n: np.zeros(shape, dtype=bool) for n in names}
    for (e, p, n), v in seen.items():
        vals[n][ei[e], pj[p]] = v
        masks[n][ei[e], pj[p]] = True
    return PanelDataset(entities, periods, vals, masks, groups or {})


def signed_log(v):
    """``sign(v) * log1p(|v|)``; defined everywhere and odd."""
    v = np.asarray(v, dtype=float)
    return np.sign(v) * np.log1p(np.abs(v))


def apply_transform(panel: PanelDataset, spec: VariableSpec) -> PanelDataset:
    """Store the transformed variable under ``spec.derived_name``."""
    panel._require(spec.name)
    if spec.transform == "none" and spec.derived_name == spec.name:
        return panel
    v = panel.values[spec.name]
    mk = panel.mask[spec.name]
    if spec.transform == "signed_log":
        out = signed_log(v)
    elif spec.transform == "log":
        bad = mk & ~(v > 0)
        if bad.any():
            i, j = np.argwhere(bad)[0]
            raise ValueError(
                f"log of non-positive {spec.name}={v[i, j]} at "
                f"({panel.entities[i]!r}, {panel.periods[j]})")
        with np.errstate(invalid="ignore", divide="ignore"):
            out = np.log(v)
    else:
        out = v
    return panel.with_variable(spec.derived_name, out, mk)


def floor_nonpositive(panel: PanelDataset, variables: Sequence[str], scale: float = 1e-6):
    """Replace cells <= 0 by ``scale`` times the variable's smallest positive value.

    Returns ``(panel, flagged)`` where ``flagged`` lists ``(entity, period,
    variable, original_value)`` for every replaced cell.
    """
    flagged = []
    for name in variables:
        panel._require(name)
        v = np.array(panel.values[name])
        mk = panel.mask[name]
        bad = mk & (v <= 0)
        if not bad.any():
            continue
        pos = v[mk & (v > 0)]
        if pos.size == 0:
            raise ValueError(f"{name} has no positive values to floor against")
        eps = scale * pos.min()
        for i, j in np.argwhere(bad):
            flagged.append((panel.entities[i], panel.periods[j], name, float(v[i, j])))
        v[bad] = eps
        panel = panel.with_variable(name, v, mk)
    return panel, flagged


@dataclass(frozen=True)
class TertileRule:
    """Split entities into thirds by the time average of ``variable``.

    Cut points are the 1/3 and 2/3 empirical quantiles of the entity
    averages; an average equal to a cut point goes to the earlier group.
    With ``descending=True`` entities are ranked from large to small, so
    the first group holds the largest averages.
    """

    scheme: str
    variable: str
    descending: bool = False
    labels: tuple | None = None

    def resolved_labels(self):
        if self.labels is not None:
            return tuple(self.labels)
        return ("high", "medium", "low") if self.descending else ("low", "medium", "high")


@dataclass(frozen=True)
class CategoricalRule:
    """Copy a user-supplied entity -> label column."""

    scheme: str
    labels: Mapping


def tertile_labels(averages: Mapping, descending=False, labels=("low", "medium", "high")) -> dict:
    ents = list(averages)
    vals = np.array([averages[e] for e in ents], dtype=float)
    if descending:
        vals = -vals
    q1, q2 = np.quantile(vals, [1 / 3, 2 / 3])
    out = {}
    for e, v in zip(ents, vals):
        out[e] = labels[0] if v <= q1 else labels[1] if v <= q2 else labels[2]
    return out


def assign_groups(panel: PanelDataset, rule) -> PanelDataset:
    if isinstance(rule, TertileRule):
        if rule.variable not in panel.values:
            raise KeyError(f"tertile scheme {rule.scheme!r} needs missing variable {rule.variable!r}")
        mapping = tertile_labels(panel.entity_means(rule.variable), rule.descending,
                                 rule.resolved_labels())
    elif isinstance(rule, CategoricalRule):
        missing = [e for e in panel.entities if e not in rule.labels]
        if missing:
            raise KeyError(f"scheme {rule.scheme!r} has no label for entities {missing}")
        mapping = {e: str(rule.labels[e]) for e in panel.entities}
    else:
        raise TypeError(f"unsupported grouping rule {rule!r}")
    return panel.with_groups(rule.scheme, mapping)


def describe(panel: PanelDataset, variables: Sequence[str], scheme: str | None = None) -> pd.DataFrame:
    """N / mean / min / max per variable and group.

    Without ``scheme`` one ``"Summary"`` group is reported.  Groups with no
    present cells keep ``N=0``, NaN moments and ``defined=False``.
    """
    if scheme is None:
        groups = {"Summary": list(panel.entities)}
    else:
        if scheme not in panel.groups:
            raise KeyError(f"unknown grouping scheme {scheme!r}")
        groups = {}
        for e, lab in panel.groups[scheme].items():
            groups.setdefault(lab, []).append(e)
        groups = {k: groups[k] for k in sorted(groups)}
    rows = []
    for name in variables:
        panel._require(name)
        for lab, ents in groups.items():
            idx = [panel.entities.index(e) for e in ents]
            cells = panel.values[name][idx][panel.mask[name][idx]]
            n = int(cells.size)
            rows.append({
                "variable": name, "group": lab, "N": n,
                "mean": float(cells.mean()) if n else np.nan,
                "min": float(cells.min()) if n else np.nan,
                "max": float(cells.max()) if n else np.nan,
                "defined": bool(n),
            })
    return pd.DataFrame(rows, columns=["variable", "group", "N", "mean", "min", "max", "defined"])
