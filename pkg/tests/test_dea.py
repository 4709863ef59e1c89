import numpy as np
import pytest
from sklearn.base import clone

from frontierpanel.dea import (
    DmuBundle, ReferenceSet, SBMEfficiency, Technology, Window, distance,
    distance_result, efficiency, sbm_score, super_sbm_score,
)

from generators import dominated_copy, mats, random_instance, rescale_dimension
from oracles import random_lambda_scan, sbm_oracle, super_sbm_oracle

A = DmuBundle("A", 2000, [1.0], [1.0])
B = DmuBundle("B", 2000, [2.0], [1.0])


def test_self_reference():
    res = sbm_score(A, ReferenceSet([A]))
    assert res.score == pytest.approx(1.0)
    np.testing.assert_allclose(res.slacks, 0.0, atol=1e-12)


def test_two_dmu_hand_solution():
    ref = ReferenceSet([A, B])
    assert sbm_score(B, ref).score == pytest.approx(0.5, abs=1e-12)
    sup = super_sbm_score(A, ReferenceSet([B]))
    assert sup.model == "super_sbm"
    assert sup.score == pytest.approx(2.0, abs=1e-12)
    assert efficiency(B, ref).score == pytest.approx(0.5, abs=1e-12)
    assert efficiency(A, ref).score == pytest.approx(2.0, abs=1e-12)


def test_scale_all_by_ten():
    A10 = DmuBundle("A", 2000, [10.0], [10.0])
    B10 = DmuBundle("B", 2000, [20.0], [10.0])
    assert sbm_score(B10, ReferenceSet([A10, B10])).score == pytest.approx(0.5)


def test_super_rejects_inefficient():
    with pytest.raises(ValueError, match="not SBM-efficient"):
        super_sbm_score(B, ReferenceSet([A, B]))


def test_super_rejects_empty_after_exclusion():
    with pytest.raises(ValueError):
        super_sbm_score(A, ReferenceSet([A]))


def test_vrs_singleton_dominated_reference_is_still_feasible():
    # positive data always admits a projection (raise inputs, shrink outputs)
    C = DmuBundle("C", 2000, [2.0], [0.5])
    res = super_sbm_score(A, ReferenceSet([C], "vrs"))
    assert res.ok and res.score == pytest.approx(4.0)


def test_sole_dmu_super_fallback():
    res = efficiency(A, ReferenceSet([A], "vrs"))
    assert res.score == 1.0
    assert "super_fallback" in res.flags


def test_vrs_lambdas_sum_to_one():
    rng = np.random.default_rng(3)
    bundles = random_instance(rng, 6)
    ref = ReferenceSet(bundles, "vrs")
    for d in bundles:
        res = efficiency(d, ref)
        assert res.lambdas.sum() == pytest.approx(1.0, abs=1e-7)


def test_membership_required_for_sbm():
    with pytest.raises(ValueError, match="not a member"):
        sbm_score(B, ReferenceSet([A]))


def test_dimension_mismatch():
    odd = DmuBundle("Z", 2000, [1.0, 2.0], [1.0])
    with pytest.raises(ValueError, match="dimensions"):
        sbm_score(odd, ReferenceSet([A]))
    with pytest.raises(ValueError):
        ReferenceSet([A, odd])


def test_nonpositive_bundle_rejected():
    with pytest.raises(ValueError):
        DmuBundle("Z", 2000, [0.0], [1.0])


def test_distance_examples():
    assert distance(DmuBundle("A", 2001, [1.0], [1.0]), ReferenceSet([A])) == pytest.approx(1.0)
    assert distance(B, ReferenceSet([A])) == pytest.approx(0.5)
    tech = Technology([A, B, DmuBundle("A", 2001, [1.5], [1.0]), DmuBundle("B", 2001, [1.0], [2.0])])
    for bnd in tech.bundles:
        assert np.isfinite(tech.distance(bnd, "global"))


def test_window_frontier_pools_periods():
    A1 = DmuBundle("A", 2001, [1.0], [2.0])
    tech = Technology([A, B, A1])
    assert len(tech.frontier(Window(2000, 2)).bundles) == 3
    assert len(tech.frontier(Window(2000, 1)).bundles) == 2
    # A in 2000 is dominated by A in 2001 inside the two-period window
    assert tech.distance(A, Window(2000, 2)) < 1.0


def test_global_fallback_flagged(monkeypatch):
    import frontierpanel.dea as dea

    real = dea.efficiency
    calls = []

    def flaky(dmu, ref):
        calls.append(len(ref.active))
        if len(calls) == 1:
            res = real(dmu, ref)
            res.status = "infeasible"
            return res
        return real(dmu, ref)

    monkeypatch.setattr(dea, "efficiency", flaky)
    A1 = DmuBundle("A", 2001, [1.0], [2.0])
    tech = Technology([A, B, A1])
    res = tech.distance_result(A1, 2000)
    assert res.ok and "global_fallback" in res.flags
    assert calls == [3, 3]


@pytest.mark.parametrize("seed", range(25))
@pytest.mark.parametrize("rts", ["crs", "vrs"])
def test_scores_match_vertex_oracle(seed, rts):
    rng = np.random.default_rng(seed)
    bundles = random_instance(rng, int(rng.integers(2, 5)))
    X, G, Bd = mats(bundles)
    vrs = rts == "vrs"
    ref = ReferenceSet(bundles, rts)
    for j, d in enumerate(bundles):
        res = efficiency(d, ref)
        sbm = sbm_oracle(d.inputs, d.good_outputs, d.bad_outputs, X, G, Bd, vrs=vrs)
        if res.model == "sbm":
            assert res.score == pytest.approx(sbm, abs=1e-4)
        else:
            assert sbm == pytest.approx(1.0, abs=1e-7)
            keep = [i for i in range(len(bundles)) if i != j]
            sup = super_sbm_oracle(d.inputs, d.good_outputs, d.bad_outputs,
                                   X[keep], G[keep], Bd[keep], vrs=vrs)
            assert res.score == pytest.approx(sup, abs=1e-4)


def test_super_oracle_sanity_against_sampling():
    rng = np.random.default_rng(0)
    bundles = random_instance(rng, 4, m=2, s1=1, s2=1)
    X, G, Bd = mats(bundles)
    for j, d in enumerate(bundles):
        res = efficiency(d, ReferenceSet(bundles))
        if res.model != "super_sbm":
            continue
        keep = [i for i in range(4) if i != j]

        def score(lam):
            xb = np.maximum(d.inputs, X[keep].T @ lam)
            gb = np.minimum(d.good_outputs, G[keep].T @ lam)
            bb = np.maximum(d.bad_outputs, Bd[keep].T @ lam)
            return ((xb / d.inputs).sum() + (bb / d.bad_outputs).sum()) / 3 / (gb / d.good_outputs).mean()

        sampled = random_lambda_scan(score, 3, rng)
        assert res.score <= sampled + 1e-9


@pytest.mark.parametrize("seed", range(20))
def test_units_invariance(seed):
    rng = np.random.default_rng(100 + seed)
    bundles = random_instance(rng, 4)
    dim = int(rng.integers(0, sum(bundles[0].shape)))
    factor = rng.uniform(0.01, 100)

    scaled = rescale_dimension(bundles, dim, factor)
    for rts in ("crs", "vrs"):
        s0 = [efficiency(d, ReferenceSet(bundles, rts)).score for d in bundles]
        s1 = [efficiency(d, ReferenceSet(scaled, rts)).score for d in scaled]
        np.testing.assert_allclose(s0, s1, atol=1e-7)


@pytest.mark.parametrize("seed", range(20))
def test_dominance_monotonicity(seed):
    rng = np.random.default_rng(200 + seed)
    bundles = random_instance(rng, 3)
    top = bundles[0]
    worse = dominated_copy(rng, top)
    ref_bundles = bundles + [worse]
    for rts in ("crs", "vrs"):
        ref = ReferenceSet(ref_bundles, rts)
        assert efficiency(worse, ref).score <= efficiency(top, ref).score + 1e-9


@pytest.mark.parametrize("seed", range(20))
def test_vrs_not_below_crs(seed):
    rng = np.random.default_rng(300 + seed)
    bundles = random_instance(rng, 5)
    for d in bundles:
        c = efficiency(d, ReferenceSet(bundles, "crs")).score
        v = efficiency(d, ReferenceSet(bundles, "vrs")).score
        assert v >= c - 1e-7


def test_estimator_api():
    X = np.array([[1.0, 1.0], [2.0, 1.0]])
    est = SBMEfficiency(n_inputs=1, n_good_outputs=1)
    np.testing.assert_allclose(est.fit_transform(X), [2.0, 0.5])
    np.testing.assert_allclose(est.transform([[4.0, 1.0], [0.5, 1.0]]), [0.25, 2.0])
    plain = clone(est).set_params(super_efficiency=False)
    assert plain.get_params()["super_efficiency"] is False
    np.testing.assert_allclose(plain.fit_transform(X), [1.0, 0.5])
    with pytest.raises(ValueError):
        est.fit([[0.0, 1.0]])
