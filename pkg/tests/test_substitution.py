import numpy as np
import pandas as pd
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

import oracles
from mlcoda import composition as cm
from mlcoda.errors import (
    BasisMismatch,
    ConfigError,
    InfeasibleReallocation,
    SamePart,
    UnknownPart,
    UnknownTerm,
)
from mlcoda.model import CodaFit, ModelSpec, PosteriorDraws, build_design
from mlcoda.multilevel import complr
from mlcoda.sbp import pivot_basis
from mlcoda.simulate import reference_spec, simulate
from mlcoda.substitution import (
    ReferencePoint,
    SubstitutionSpec,
    average_substitution,
    cluster_references,
    delta_outcome,
    grand_reference,
    is_feasible,
    predict,
    reallocate,
    simple_substitution,
)

PARTS = ("TST", "WAKE", "MVPA", "LPA", "SB")
TERMS = tuple(f"bilr{k}" for k in range(1, 5)) + tuple(f"wilr{k}" for k in range(1, 5))


def synthetic_fit(out, coef_draws, terms=TERMS, basis_id="auto"):
    """CodaFit whose fixed-effect draws are given directly, shape (chains, draws, p)."""
    spec = ModelSpec("Stress", terms, "ID", chains=coef_draws.shape[0],
                     iter=coef_draws.shape[1] + 1, warmup=1)
    design = build_design(out, spec)
    arr = np.asarray(coef_draws, dtype=float)
    bid = out.basis.basis_id if basis_id == "auto" else basis_id
    names = design.names
    draws = PosteriorDraws(arr, names, 0, bid, names)
    return CodaFit(out, spec, design, draws)


@pytest.fixture(scope="module")
def out():
    return complr(simulate(reference_spec(n_clusters=30, seed=4)).dataset)


@pytest.fixture(scope="module")
def random_fit(out):
    rng = np.random.default_rng(0)
    return synthetic_fit(out, rng.normal(0, 0.5, size=(2, 150, 9)))


# -- reallocation -------------------------------------------------------------

def ref3(xb=(480, 480, 480), xw=(480, 480, 480)):
    return ReferencePoint(np.array(xb, float), np.array(xw, float), 1440.0)


def test_move_sixty_minutes():
    r = reallocate(ref3(), 1, 0, 60, "between")
    np.testing.assert_array_equal(r.between, [540, 420, 480])
    np.testing.assert_array_equal(r.within, [480, 480, 480])
    np.testing.assert_allclose(r.composition, [540, 420, 480], rtol=1e-14)


def test_move_by_name():
    r = reallocate(ref3(), "b", "a", 60, "within", parts=("a", "b", "c"))
    np.testing.assert_array_equal(r.within, [540, 420, 480])
    with pytest.raises(UnknownPart):
        reallocate(ref3(), "z", "a", 60, "within", parts=("a", "b", "c"))


def test_infeasible_and_same_part():
    with pytest.raises(InfeasibleReallocation):
        reallocate(ref3(), 1, 0, 480, "between")
    with pytest.raises(InfeasibleReallocation):
        reallocate(ref3(xb=(1400, 20, 20)), 1, 0, 20.5, "between")
    with pytest.raises(InfeasibleReallocation):
        reallocate(ref3(), 1, 0, -1, "between")
    with pytest.raises(SamePart):
        reallocate(ref3(), 2, 2, 1, "between")


def test_feasibility_bounds():
    comp = np.array([1400.0, 20.0, 20.0])
    assert is_feasible(comp, 1, 2, 19.9, 1440)
    assert is_feasible(comp, 1, 0, 19.9, 1440)
    assert not is_feasible(comp, 1, 2, 20, 1440)
    assert not is_feasible(comp, 1, 2, 0, 1440)
    # The receiving bound only binds for a part pair summing above the total.
    assert not is_feasible(np.array([0.9, 0.5]), 0, 1, 0.6, 1.0)


def test_zero_move_is_identity():
    r0 = ref3((300, 500, 640))
    r = reallocate(r0, 0, 1, 0, "between")
    assert r is not r0
    np.testing.assert_array_equal(r.between, r0.between)
    np.testing.assert_array_equal(r.within, r0.within)


def test_levels_are_orthogonal():
    r0 = ref3((300, 500, 640), (400, 500, 540))
    b = reallocate(r0, 0, 2, 25, "between")
    w = reallocate(r0, 0, 2, 25, "within")
    assert b.within.tobytes() == r0.within.tobytes()
    assert w.between.tobytes() == r0.between.tobytes()


# -- predicted change ---------------------------------------------------------

def _draws_for(beta_between, beta_within, basis):
    k = len(beta_between)
    names = tuple(f"bilr{i + 1}" for i in range(k)) + tuple(f"wilr{i + 1}" for i in range(k))
    arr = np.array(list(beta_between) + list(beta_within), float)[None, None, :]
    return PosteriorDraws(arr, names, 0, basis.basis_id, names)


def test_delta_frozen_value():
    basis = pivot_basis(3)
    d = _draws_for([1, 0], [0, 0], basis)
    r0 = ref3()
    delta = delta_outcome(d, basis, r0, reallocate(r0, 1, 0, 60, "between"), "between")
    np.testing.assert_allclose(delta, [0.15068340866694578], rtol=1e-13)
    # Within-level coefficients are zero, so that level has no effect.
    dw = delta_outcome(d, basis, r0, reallocate(r0, 1, 0, 60, "within"), "within")
    assert dw[0] == 0.0


def test_delta_basis_mismatch():
    basis = pivot_basis(3)
    d = _draws_for([1, 0], [0, 0], pivot_basis(3, 1))
    with pytest.raises(BasisMismatch):
        delta_outcome(d, basis, ref3(), ref3(), "between")


def test_delta_needs_block():
    basis = pivot_basis(3)
    d = PosteriorDraws(np.zeros((1, 1, 2)), ("bilr1", "bilr2"), 0, basis.basis_id)
    with pytest.raises(UnknownTerm):
        delta_outcome(d, basis, ref3(), ref3(), "within")


def test_delta_equals_prediction_difference(random_fit, out):
    ref = grand_reference(out)
    moved = reallocate(ref, 2, 4, 15, "within")
    diff = predict(random_fit.draws, out.basis, moved) - predict(random_fit.draws, out.basis, ref)
    np.testing.assert_allclose(delta_outcome(random_fit.draws, out.basis, ref, moved, "within"),
                               diff, atol=1e-12)


def test_prediction_matches_oracle(random_fit, out):
    refs = cluster_references(out)
    ref = refs[3]
    coef = random_fit.draws.fixed()[7]
    zb = cm.ilr_forward(ref.between, out.basis)
    zw = cm.ilr_forward(ref.within, out.basis)
    expect = oracles.full_prediction(coef, random_fit.draws.fixed_names, zb, zw, {}, 0.0)
    assert predict(random_fit.draws, out.basis, ref, include_group=False)[7] == pytest.approx(expect, abs=1e-12)


# -- references -----------------------------------------------------------------

def test_grand_reference_is_geometric_mean_of_clusters(out):
    ref = grand_reference(out)
    expect = oracles.closure_mp(
        [oracles.geometric_mean_mp(col) for col in out.cluster_comp.T], 1440)
    np.testing.assert_allclose(ref.between, [float(v) for v in expect], rtol=1e-12)
    np.testing.assert_array_equal(ref.within, cm.neutral(5, 1440))


def test_grand_reference_two_clusters():
    df = pd.DataFrame({"ID": [1, 1, 2], "a": [0.4, 0.4, 0.6], "b": [0.6, 0.6, 0.4]})
    ref = grand_reference(complr(df, parts=["a", "b"], idvar="ID"))
    np.testing.assert_allclose(ref.between, [0.5, 0.5], rtol=1e-15)


def test_cluster_references_order(out):
    refs = cluster_references(out)
    assert [r.cluster for r in refs] == list(out.cluster_ids)
    np.testing.assert_allclose(refs[0].between, out.cluster_comp[0], rtol=1e-14)


# -- tables ---------------------------------------------------------------------

def test_simple_table_shape(random_fit):
    res = simple_substitution(random_fit, SubstitutionSpec())
    assert len(res) == 400
    t = res.table
    assert list(t.columns[:4]) == ["level", "from", "to", "delta"]
    assert set(t["level"]) == {"between", "within"}
    assert (t["n_draws"] == 300).all()
    assert (t["lower"] <= t["mean"]).all() and (t["mean"] <= t["upper"]).all()
    assert (t["n_infeasible"] == 0).all()


def test_zero_coefficients_give_zero_change(out):
    fit = synthetic_fit(out, np.zeros((1, 20, 9)))
    for fn in (simple_substitution, average_substitution):
        t = fn(fit, SubstitutionSpec(deltas=(5, 30))).table
        # Cells with MVPA as donor at 30 minutes are infeasible (NaN) at the grand mean.
        vals = t.loc[t["mean"].notna(), ["mean", "sd", "lower", "upper"]].to_numpy()
        assert len(vals) >= 76 and (vals == 0).all()


def test_brute_force_oracle(random_fit, out):
    spec = SubstitutionSpec(deltas=(10,), levels=("between",))
    t = simple_substitution(random_fit, spec).table
    ref = grand_reference(out)
    row = t[(t["from"] == "SB") & (t["to"] == "MVPA")].iloc[0]
    new = np.array(ref.between)
    new[4] -= 10
    new[2] += 10
    rows = oracles.pivot_rows(5)
    dz = np.array(oracles.balance_coords_float(new[None], rows)[0]) \
        - np.array(oracles.balance_coords_float(ref.between[None], rows)[0])
    per_draw = random_fit.draws.flat([f"bilr{k}" for k in range(1, 5)]) @ dz
    assert row["mean"] == pytest.approx(per_draw.mean(), abs=1e-10)
    assert row["lower"] == pytest.approx(np.quantile(per_draw, 0.025), abs=1e-10)


def test_average_over_identical_clusters_equals_simple():
    df = pd.DataFrame({
        "ID": np.repeat([1, 2, 3], 3),
        "TST": [480, 470, 490] * 3, "WAKE": [60, 70, 50] * 3, "MVPA": [40.0] * 9,
        "LPA": [300, 310, 290] * 3, "SB": [560, 550, 570] * 3,
        "Stress": np.arange(9.0),
    })
    out = complr(df, parts=list(PARTS), idvar="ID", total=1440, outcome="Stress")
    fit = synthetic_fit(out, np.random.default_rng(1).normal(size=(1, 40, 9)))
    spec = SubstitutionSpec(deltas=(5, 20))
    a = average_substitution(fit, spec).table
    s = simple_substitution(fit, spec).table
    cols = ["mean", "sd", "lower", "upper"]
    np.testing.assert_allclose(a[cols].to_numpy(), s[cols].to_numpy(), rtol=1e-12, atol=1e-14)


def test_infeasible_cluster_is_excluded():
    df = pd.DataFrame({
        "ID": [1, 1, 2, 2],
        "a": [10.0, 10.0, 500, 500], "b": [700.0, 700, 470, 470], "c": [730.0, 730, 470, 470],
        "y": [1.0, 2, 3, 5],
    })
    out = complr(df, parts=["a", "b", "c"], idvar="ID", total=1440, outcome="y")
    terms = ("bilr1", "bilr2", "wilr1", "wilr2")
    spec = ModelSpec("y", terms, "ID", chains=1, iter=2, warmup=1)
    names = build_design(out, spec).names
    draws = PosteriorDraws(np.ones((1, 1, 5)), names, 0, out.basis.basis_id, names)
    fit = CodaFit(out, spec, build_design(out, spec), draws)
    t = average_substitution(fit, SubstitutionSpec(deltas=(20,), levels=("between",))).table
    row = t[(t["from"] == "a") & (t["to"] == "b")].iloc[0]
    assert row["n_infeasible"] == 1
    only = ReferencePoint(out.cluster_comp[1], cm.neutral(3, 1440), 1440)
    expect = delta_outcome(draws, out.basis, only, reallocate(only, 0, 1, 20, "between"),
                           "between")
    assert row["mean"] == pytest.approx(expect[0], abs=1e-12)
    t = average_substitution(fit, SubstitutionSpec(deltas=(600,), levels=("between",))).table
    row = t[(t["from"] == "a") & (t["to"] == "b")].iloc[0]
    assert row["n_infeasible"] == 2 and np.isnan(row["mean"])


def test_continuity_at_small_delta(random_fit):
    t = simple_substitution(random_fit, SubstitutionSpec(deltas=(1e-6,))).table
    assert np.abs(t["mean"]).max() < 1e-5


def test_user_grid(random_fit, out):
    ref = grand_reference(out)
    grid = pd.DataFrame([dict(zip(PARTS, ref.between))])
    a = simple_substitution(random_fit, SubstitutionSpec(deltas=(5,), ref=grid)).table
    b = simple_substitution(random_fit, SubstitutionSpec(deltas=(5,))).table
    np.testing.assert_allclose(a["mean"], b["mean"], rtol=1e-12)
    with pytest.raises(ConfigError):
        simple_substitution(random_fit, SubstitutionSpec(ref=grid.drop(columns="SB")))


def test_spec_validation():
    with pytest.raises(ConfigError):
        SubstitutionSpec(deltas=(0,))
    with pytest.raises(ConfigError):
        SubstitutionSpec(levels=("middle",))
    with pytest.raises(ConfigError):
        SubstitutionSpec(ref="elsewhere")
    with pytest.raises(ConfigError):
        SubstitutionSpec(ci_level=1.0)


def test_basis_mismatch_in_table(out):
    fit = synthetic_fit(out, np.zeros((1, 4, 9)), basis_id="0" * 16)
    with pytest.raises(BasisMismatch):
        simple_substitution(fit)


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 4), st.integers(0, 4), st.floats(0.1, 30), st.integers(0, 10 ** 6))
def test_between_change_ignores_within_part(i, j, t, seed):
    if i == j:
        return
    basis = pivot_basis(5)
    xw = np.random.default_rng(seed).uniform(50, 500, 5)
    d = _draws_for([0.3, -0.2, 0.1, 0.4], [1, 2, 3, 4], basis)
    deltas = []
    for w in (cm.neutral(5, 1440), xw):
        r0 = ReferencePoint(np.array([480, 60, 40, 300, 560.0]), w, 1440)
        deltas.append(delta_outcome(d, basis, r0, reallocate(r0, i, j, t, "between"),
                                    "between")[0])
    assert deltas[0] == deltas[1]
