"""Synthetic country panels shaped like the energy-TFP / PM2.5 data."""

from __future__ import annotations

from pathlib import Path

import numpy as np

from .panel import build_panel

INCOME_CLASSES = ("Low Income", "Lower Middle Income", "Upper Middle Income", "High Income")


def synthetic_records(n_entities=12, n_periods=6, start=2000, seed=0, holes=()):
    """Long records plus an ``entity, scheme, label`` group list.

    Variables: ``capital, labor, energy`` (inputs), ``gdp`` (good output),
    ``co2`` (bad output), ``pm25`` (dependent), ``fdi`` (net inflow, may be
    negative), ``popdens``, ``industry``, ``ei`` (energy investment),
    ``sci`` and ``newenergy`` (tertile bases).  ``holes`` lists
    ``(entity_index, period_offset, variable)`` cells to leave out.
    """
    rng = np.random.default_rng(seed)
    n, T = n_entities, n_periods
    skip = {(f"C{i:03d}", start + t, v) for i, t, v in holes}
    size = rng.lognormal(0.0, 0.8, n)
    tech = rng.normal(0.0, 0.15, n)
    drift = rng.normal(0.01, 0.02, n)
    recs = []
    for i in range(n):
        e = f"C{i:03d}"
        base_pm = rng.uniform(10, 60)
        for t in range(T):
            shock = rng.normal(0, 0.05, 5)
            k = size[i] * 100 * np.exp(0.03 * t + shock[0])
            lab = size[i] * 10 * np.exp(0.01 * t + shock[1])
            en = size[i] * 50 * np.exp(0.02 * t + shock[2])
            a = np.exp(tech[i] + drift[i] * t + shock[3])
            gdp = a * k ** 0.35 * lab ** 0.4 * en ** 0.25 * 10
            co2 = en * np.exp(0.3 * rng.normal() - 0.01 * t) * 2.5
            ei = np.exp(rng.normal(2 + 0.5 * np.log(size[i]), 0.3))
            vals = {
                "capital": k, "labor": lab, "energy": en, "gdp": gdp, "co2": co2,
                "pm25": base_pm - 5 * (a - 1) + rng.normal(0, 2),
                "fdi": rng.normal(50, 400),
                "popdens": np.exp(rng.normal(4, 1)),
                "industry": rng.uniform(10, 45),
                "ei": ei,
                "sci": np.exp(rng.normal(np.log(size[i]) + 5, 0.2)),
                "newenergy": rng.uniform(0, 30) * (1 + (i % 3)),
            }
            for name, v in vals.items():
                if (e, start + t, name) not in skip:
                    recs.append((e, start + t, name, float(v)))
    groups = []
    for i in range(n):
        e = f"C{i:03d}"
        groups.append((e, "income", INCOME_CLASSES[i % 4]))
        groups.append((e, "trade", "importer" if i % 2 else "exporter"))
    return recs, groups


def synthetic_panel(**kw):
    recs, groups = synthetic_records(**kw)
    mapping = {}
    for e, scheme, lab in groups:
        mapping.setdefault(scheme, {})[e] = lab
    return build_panel(recs, mapping)


FIXTURE_HOLES = ((3, 2, "energy"),)


def write_fixture(directory, n_entities=12, n_periods=6, seed=0, holes=FIXTURE_HOLES):
    """Write ``panel.csv`` and ``groups.csv`` for a synthetic panel."""
    from .csvio import write_groups_csv, write_panel_csv

    directory = Path(directory)
    recs, groups = synthetic_records(n_entities, n_periods, seed=seed, holes=holes)
    mapping = {}
    for e, scheme, lab in groups:
        mapping.setdefault(scheme, {})[e] = lab
    write_panel_csv(build_panel(recs), directory / "panel.csv")
    write_groups_csv(mapping, directory / "groups.csv")
    return directory / "panel.csv", directory / "groups.csv"
