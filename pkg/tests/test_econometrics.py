import numpy as np
import pandas as pd
import pytest
from scipy.stats import norm
from sklearn.base import clone

from frontierpanel.econometrics import (
    CollinearityError, FixedEffectsRegressor, MMQRegressor, RegressionSpec, ScaleError,
    add_centered_interaction, fe_ols, format_table, heterogeneity_run, mmqr, moderation,
    results_frame, stars, weighted_quantile,
)
from frontierpanel.panel import CategoricalRule, assign_groups, build_panel

from generators import frame_to_panel, hetero_df, linear_panel_df, lsdv, moderation_df


@pytest.mark.parametrize("p,expected", [(0.009, "***"), (0.049, "**"), (0.099, "*"), (0.5, ""), (np.nan, "")])
def test_stars(p, expected):
    assert stars(p) == expected


def test_exact_fit_slope():
    rng = np.random.default_rng(0)
    g = np.repeat(np.arange(5), 4)
    x = rng.normal(size=20)
    y = 2.0 * x + np.repeat(rng.normal(size=5), 4)
    est = FixedEffectsRegressor(n_bootstrap=0).fit(x[:, None], y, g)
    assert abs(est.coef_[0] - 2.0) < 1e-10
    np.testing.assert_allclose(est.predict(x[:, None], g), y, atol=1e-10)


@pytest.mark.parametrize("seed", range(10))
def test_fe_equals_lsdv(seed):
    rng = np.random.default_rng(seed)
    df = linear_panel_df(rng, n_ent=int(rng.integers(3, 15)), T=int(rng.integers(2, 8)), beta=rng.normal(size=3))
    X = df[["x0", "x1", "x2"]].to_numpy()
    est = FixedEffectsRegressor(n_bootstrap=0).fit(X, df["y"], df["entity"])
    np.testing.assert_allclose(est.coef_, lsdv(X, df["y"].to_numpy(), df["entity"]), atol=1e-10, rtol=0)


def test_time_invariant_regressor_is_collinear():
    rng = np.random.default_rng(1)
    df = linear_panel_df(rng)
    df["const_i"] = df.groupby("entity")["x0"].transform("mean")
    with pytest.raises(CollinearityError, match="const_i"):
        FixedEffectsRegressor(n_bootstrap=0).fit(df[["x0", "const_i"]], df["y"], df["entity"])


def test_collinear_pair_named():
    rng = np.random.default_rng(2)
    df = linear_panel_df(rng)
    df["x2"] = 2 * df["x0"] - df["x1"]
    with pytest.raises(CollinearityError) as info:
        FixedEffectsRegressor(n_bootstrap=0).fit(df[["x0", "x1", "x2"]], df["y"], df["entity"])
    assert all(n in str(info.value) for n in ("x0", "x1", "x2"))


def test_single_entity_rejected():
    with pytest.raises(ValueError, match="two entities"):
        FixedEffectsRegressor(n_bootstrap=0).fit(np.arange(5.0)[:, None], np.arange(5.0), np.zeros(5))


def test_entity_constant_shift_invariance():
    rng = np.random.default_rng(3)
    df = linear_panel_df(rng)
    X = df[["x0", "x1"]].to_numpy()
    base = FixedEffectsRegressor(n_bootstrap=0).fit(X, df["y"], df["entity"]).coef_
    shift = pd.Series(rng.normal(0, 100, 20), index=sorted(df["entity"].unique()))
    X2 = X.copy()
    X2[:, 1] += df["entity"].map(shift).to_numpy()
    moved = FixedEffectsRegressor(n_bootstrap=0).fit(X2, df["y"], df["entity"]).coef_
    np.testing.assert_allclose(base, moved, atol=1e-10, rtol=0)


def test_bootstrap_reproducible_and_parallel_invariant():
    rng = np.random.default_rng(4)
    df = linear_panel_df(rng)
    X, y, g = df[["x0", "x1"]], df["y"], df["entity"]
    a = FixedEffectsRegressor(n_bootstrap=50, random_state=7).fit(X, y, g).bse_
    b = FixedEffectsRegressor(n_bootstrap=50, random_state=7).fit(X, y, g).bse_
    c = FixedEffectsRegressor(n_bootstrap=50, random_state=7, n_jobs=2).fit(X, y, g).bse_
    d = FixedEffectsRegressor(n_bootstrap=50, random_state=8).fit(X, y, g).bse_
    assert np.array_equal(a, b) and np.array_equal(a, c)
    assert not np.array_equal(a, d)


def test_estimator_params():
    est = MMQRegressor(quantiles=(0.5,), n_bootstrap=10)
    assert clone(est).get_params()["quantiles"] == (0.5,)
    with pytest.raises(ValueError):
        MMQRegressor(quantiles=(1.0,)).fit(np.ones((4, 1)), np.ones(4), [0, 0, 1, 1])


def test_unseen_entity_predict():
    rng = np.random.default_rng(5)
    df = linear_panel_df(rng)
    est = FixedEffectsRegressor(n_bootstrap=0).fit(df[["x0", "x1"]], df["y"], df["entity"])
    with pytest.raises(ValueError, match="not seen"):
        est.predict(np.zeros((1, 2)), ["nope"])


def test_mmqr_location_only_mode():
    rng = np.random.default_rng(6)
    df = hetero_df(rng, n_ent=30, T=5)
    est = MMQRegressor(scale="none", n_bootstrap=0).fit(df[["x"]], df["y"], df["entity"])
    for k in range(5):
        assert np.array_equal(est.coef_[k], est.location_coef_)
    assert np.all(est.scale_coef_ == 0)


def test_mmqr_q_monotone_and_subgradient():
    rng = np.random.default_rng(7)
    df = hetero_df(rng, n_ent=40, T=6, base=3.0)
    taus = (0.1, 0.25, 0.5, 0.75, 0.9)
    est = MMQRegressor(taus, n_bootstrap=0).fit(df[["x"]], df["y"], df["entity"])
    assert np.all(np.diff(est.q_) >= 0)
    z = est.resid_ / est.sigma_
    for tau, q in zip(taus, est.q_):
        # directional derivatives of sum sigma * check(z - q) at q
        up = np.sum(est.sigma_[z <= q]) * (1 - tau) - np.sum(est.sigma_[z > q]) * tau
        down = np.sum(est.sigma_[z >= q]) * tau - np.sum(est.sigma_[z < q]) * (1 - tau)
        assert up >= -1e-9 and down >= -1e-9


def test_weighted_quantile_brute_force():
    rng = np.random.default_rng(8)
    z, w = rng.normal(size=15), rng.uniform(0.1, 2, 15)
    for tau in (0.1, 0.33, 0.5, 0.9):
        loss = [np.sum(w * (z - c) * (tau - (z - c < 0))) for c in z]
        q = weighted_quantile(z, w, tau)
        assert np.sum(w * (z - q) * (tau - (z - q < 0))) == pytest.approx(min(loss))


def test_mmqr_scale_errors():
    g = np.repeat(np.arange(4), 3)
    x = np.arange(12.0)
    with pytest.raises(ScaleError, match="degenerate"):
        MMQRegressor(n_bootstrap=0).fit(x[:, None], 3 * x, g)
    # the scale regression extrapolates below zero for the largest x
    rng = np.random.default_rng(9)
    x = np.tile(np.linspace(0, 1, 8), 4)
    y = (1.2 - x) * rng.choice([-1, 1], x.size) * 3 + np.repeat(rng.normal(size=4), 8)
    x2 = np.concatenate([x, [40.0, 41.0]])
    y2 = np.concatenate([y, [0.0, 0.1]])
    g2 = np.concatenate([np.repeat(np.arange(4), 8), [4, 4]])
    with pytest.raises(ScaleError, match="rows"):
        MMQRegressor(n_bootstrap=0).fit(x2[:, None], y2, g2)


def test_mmqr_panel_error_names_cells():
    rng = np.random.default_rng(9)
    x = np.tile(np.linspace(0, 1, 8), 4)
    y = (1.2 - x) * rng.choice([-1, 1], x.size) * 3 + np.repeat(rng.normal(size=4), 8)
    recs = [(f"E{i // 8}", 2000 + i % 8, "x", x[i]) for i in range(32)]
    recs += [(f"E{i // 8}", 2000 + i % 8, "y", y[i]) for i in range(32)]
    recs += [("E9", 2000, "x", 40.0), ("E9", 2000, "y", 0.0), ("E9", 2001, "x", 41.0), ("E9", 2001, "y", 0.1)]
    with pytest.raises(ScaleError, match="'E9', 200"):
        mmqr(build_panel(recs), RegressionSpec("y", ("x",), bootstrap_reps=0))


def test_mmqr_predict_shape():
    rng = np.random.default_rng(10)
    df = hetero_df(rng, n_ent=20, T=5, base=3.0)
    est = MMQRegressor((0.25, 0.75), n_bootstrap=0).fit(df[["x"]], df["y"], df["entity"])
    pred = est.predict(df[["x"]], df["entity"])
    assert pred.shape == (100, 2) and np.all(pred[:, 1] >= pred[:, 0])


def test_moderation_constant_moderator():
    rng = np.random.default_rng(11)
    df = moderation_df(rng, n_ent=10, T=4)
    df["LnEI"] = 2.0
    panel = frame_to_panel(df, ["TFP", "LnEI", "ctrl", "AP"])
    with pytest.raises(CollinearityError):
        moderation(panel, RegressionSpec("AP", ("TFP", "ctrl"), moderator="LnEI", bootstrap_reps=0))


def test_moderation_recovers_interaction():
    rng = np.random.default_rng(12)
    panel = frame_to_panel(moderation_df(rng), ["TFP", "LnEI", "ctrl", "AP"])
    (fe,) = moderation(panel, RegressionSpec("AP", ("TFP", "ctrl"), moderator="LnEI",
                                             bootstrap_reps=100, seed=1))
    t = fe.term("C_TFP*C_LnEI")
    assert abs(t.estimate + 0.5) <= 3 * t.se
    assert [x.name for x in fe.terms] == ["TFP", "LnEI", "C_TFP*C_LnEI", "ctrl"]


def test_centering_leaves_interaction_unchanged():
    rng = np.random.default_rng(13)
    df = moderation_df(rng, n_ent=15, T=5)
    df["raw"] = df["TFP"] * df["LnEI"]
    panel = frame_to_panel(df, ["TFP", "LnEI", "ctrl", "AP", "raw"])
    (cent,) = moderation(panel, RegressionSpec("AP", ("TFP", "ctrl"), moderator="LnEI", bootstrap_reps=0))
    raw = fe_ols(panel, RegressionSpec("AP", ("TFP", "LnEI", "raw", "ctrl"), bootstrap_reps=0))
    assert abs(cent.term("C_TFP*C_LnEI").estimate - raw.term("raw").estimate) <= 1e-10
    assert abs(cent.term("TFP").estimate - raw.term("TFP").estimate) > 1e-6


def test_centered_interaction_uses_grand_means():
    p = build_panel([("A", 1, "f", 1.0), ("A", 1, "m", 2.0), ("B", 1, "f", 3.0), ("B", 1, "m", 6.0),
                     ("B", 2, "f", 5.0)])
    out = add_centered_interaction(p, "f", "m")
    # f mean over its 3 present cells = 3; m mean = 4
    assert out.get("C_f*C_m", "A", 1) == (1 - 3) * (2 - 4)
    assert not out.mask["C_f*C_m"][1, 1]


def two_group_panel(rng, betas):
    frames = []
    for k, b in enumerate(betas):
        d = linear_panel_df(rng, n_ent=15, T=6, beta=(b,), noise=0.3)
        d["entity"] = f"G{k}" + d["entity"]
        frames.append(d)
    df = pd.concat(frames)
    panel = frame_to_panel(df, ["x0", "y"])
    labels = {e: e[:2] for e in panel.entities}
    return assign_groups(panel, CategoricalRule("grp", labels))


def test_heterogeneity_signs():
    rng = np.random.default_rng(14)
    panel = two_group_panel(rng, (1.0, -1.0))
    out = heterogeneity_run(panel, RegressionSpec("y", ("x0",), bootstrap_reps=20), "grp")
    assert out["G0"].results[0].term("x0").estimate > 0.5
    assert out["G1"].results[0].term("x0").estimate < -0.5
    assert out["G0"].results[0].group == "G0"


def test_heterogeneity_identical_groups():
    rng = np.random.default_rng(15)
    df = linear_panel_df(rng, n_ent=8, T=5, beta=(0.7,))
    twin = df.copy()
    twin["entity"] = "Z" + twin["entity"]
    panel = frame_to_panel(pd.concat([df, twin]), ["x0", "y"])
    panel = assign_groups(panel, CategoricalRule("g", {e: "b" if e.startswith("Z") else "a" for e in panel.entities}))
    out = heterogeneity_run(panel, RegressionSpec("y", ("x0",), bootstrap_reps=0), "g")
    a, b = out["a"].results[0].to_frame(), out["b"].results[0].to_frame()
    pd.testing.assert_frame_equal(a.drop(columns="group"), b.drop(columns="group"))


def test_heterogeneity_small_group_skipped():
    rng = np.random.default_rng(16)
    df = linear_panel_df(rng, n_ent=8, T=4, beta=(1.0,))
    recs = [(r.entity, int(r.period), c, float(getattr(r, c))) for r in df.itertuples() for c in ("x0", "y")]
    # tiny group: one entity with data, two with a single observation each
    recs += [("T1", 2000, "x0", 1.0), ("T1", 2000, "y", 1.0), ("T1", 2001, "x0", 2.0), ("T1", 2001, "y", 3.0),
             ("T2", 2000, "x0", 1.0), ("T2", 2000, "y", 1.0), ("T3", 2000, "x0", 1.0), ("T3", 2000, "y", 2.0)]
    panel = build_panel(recs)
    panel = assign_groups(panel, CategoricalRule("g", {e: "tiny" if e.startswith("T") else "big" for e in panel.entities}))
    out = heterogeneity_run(panel, RegressionSpec("y", ("x0",), bootstrap_reps=10), "g", focal=None)
    assert out["tiny"].skipped and not out["tiny"].results
    assert out["tiny"].n_entities == 3
    assert out["big"].skipped is None


def test_heterogeneity_focal_rows():
    rng = np.random.default_rng(17)
    df = linear_panel_df(rng, n_ent=10, T=5, beta=(1.0, 2.0, 0.5))
    panel = frame_to_panel(df, ["x0", "x1", "x2", "y"])
    panel = assign_groups(panel, CategoricalRule("g", {e: "all" for e in panel.entities}))
    out = heterogeneity_run(panel, RegressionSpec("y", ("x2",), bootstrap_reps=0), "g", focal=["x0", "x1"])
    assert [r.terms[0].name for r in out["all"].results] == ["x0", "x1"]


def test_results_frame_and_text():
    rng = np.random.default_rng(18)
    df = hetero_df(rng, n_ent=20, T=5, base=3.0)
    panel = frame_to_panel(df.assign(period=df["period"] + 2000), ["x", "y"])
    res = [fe_ols(panel, RegressionSpec("y", ("x",), bootstrap_reps=30))]
    res += mmqr(panel, RegressionSpec("y", ("x",), quantiles=(0.25, 0.75), bootstrap_reps=30))
    out = results_frame(res)
    assert list(out.columns) == ["term", "estimate", "se", "p", "stars", "tau", "group", "N"]
    assert out["tau"].isna().tolist() == [True, False, False]
    assert all(stars(p) == s for p, s in zip(out["p"], out["stars"]))
    assert "0.25" in format_table(out)


def test_mmqr_tracks_heteroskedastic_quantiles():
    rng = np.random.default_rng(19)
    df = hetero_df(rng)
    taus = (0.1, 0.25, 0.5, 0.75, 0.9)
    est = MMQRegressor(taus, n_bootstrap=50, random_state=0).fit(df[["x"]], df["y"], df["entity"])
    truth = 1.0 + 0.5 * norm.ppf(taus)
    assert np.all(np.abs(est.coef_[:, 0] - truth) <= 3 * est.bse_[:, 0])
    assert np.all(np.diff(est.coef_[:, 0]) > 0)
