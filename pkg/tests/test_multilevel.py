import numpy as np
import pandas as pd
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

import oracles
from mlcoda import composition as cm
from mlcoda.errors import BasisDimensionMismatch, NonPositivePart, SchemaError
from mlcoda.multilevel import LongDataset, complr, summary_complr
from mlcoda.sbp import pivot_basis
from mlcoda.simulate import reference_spec, simulate


def two_row_cluster():
    return pd.DataFrame({"ID": [1, 1], "a": [0.4, 0.6], "b": [0.6, 0.4]})


def test_two_row_cluster_example():
    out = complr(two_row_cluster(), parts=["a", "b"], idvar="ID")
    np.testing.assert_allclose(out.between, [[0.5, 0.5]] * 2, rtol=1e-15)
    np.testing.assert_allclose(out.within, [[0.4, 0.6], [0.6, 0.4]], rtol=1e-14)
    np.testing.assert_allclose(out.blr, 0, atol=1e-16)


def test_single_row_clusters():
    df = pd.DataFrame({"ID": [1, 2, 3], "a": [1.0, 2, 3], "b": [3.0, 1, 2], "c": [1.0, 1, 5]})
    out = complr(df, parts=list("abc"), idvar="ID")
    np.testing.assert_allclose(out.wlr, 0, atol=1e-12)
    np.testing.assert_allclose(out.blr, out.lr, atol=1e-12)
    np.testing.assert_allclose(out.within, 1 / 3, rtol=1e-12)


@pytest.fixture(scope="module")
def sim_out():
    return complr(simulate(reference_spec()).dataset)


def test_reference_identities(sim_out):
    out = sim_out
    assert out.ngrps == 266 and 3400 <= out.nobs <= 3600
    np.testing.assert_allclose(cm.perturb(out.between, out.within, 1440), out.comp,
                               rtol=0, atol=1e-9 * 1440)
    assert np.abs(out.blr + out.wlr - out.lr).max() <= 1e-10


def test_between_constant_and_within_neutral(sim_out):
    out = sim_out
    for code in range(out.ngrps):
        rows = out.cluster_codes == code
        assert np.ptp(out.between[rows], axis=0).max() == 0
        np.testing.assert_allclose(cm.geometric_mean_composition(out.within[rows], 1440),
                                   cm.neutral(5, 1440), atol=1e-9)


def test_simulated_coordinates_recovered():
    spec = reference_spec(n_clusters=20)
    sim = simulate(spec)
    out = complr(sim.dataset)
    # Oracle: balances of each row computed directly from geometric means.
    expect = oracles.balance_coords_float(sim.dataset.parts_array(), oracles.pivot_rows(5))
    np.testing.assert_allclose(out.lr, expect, atol=1e-10)
    # Between ilr equals the row-average of the raw coordinates of the cluster.
    means = pd.DataFrame(expect).groupby(out.cluster_codes).transform("mean").to_numpy()
    np.testing.assert_allclose(out.blr, means, atol=1e-10)


def test_between_is_row_order_independent():
    df = simulate(reference_spec(n_clusters=15)).dataset.data
    parts = ["TST", "WAKE", "MVPA", "LPA", "SB"]
    a = complr(df, parts=parts, idvar="ID", total=1440)
    shuffled = df.sample(frac=1.0, random_state=3)
    b = complr(shuffled, parts=parts, idvar="ID", total=1440)
    np.testing.assert_allclose(b.cluster_comp, a.cluster_comp, rtol=1e-13)


@settings(max_examples=25, deadline=None)
@given(st.integers(2, 6), st.integers(1, 6), st.integers(0, 10 ** 6))
def test_identities_property(D, n_clusters, seed):
    rng = np.random.default_rng(seed)
    ids = rng.integers(0, n_clusters, size=25)
    x = rng.lognormal(0, 2, size=(25, D))
    df = pd.DataFrame(x, columns=[f"p{i}" for i in range(D)])
    df["g"] = ids
    out = complr(df, parts=list(df.columns[:D]), idvar="g", total=24)
    np.testing.assert_allclose(cm.perturb(out.between, out.within, 24), out.comp, atol=1e-9 * 24)
    assert np.abs(out.blr + out.wlr - out.lr).max() <= 1e-10
    np.testing.assert_allclose(out.wlr, cm.ilr_forward(out.within, out.basis), atol=1e-9)


@pytest.mark.parametrize("transform", ["alr", "clr"])
def test_other_transforms_split_additively(transform):
    df = simulate(reference_spec(n_clusters=10)).dataset
    out = complr(df, transform=transform)
    fwd = cm.alr_forward if transform == "alr" else cm.clr_forward
    np.testing.assert_allclose(out.lr, fwd(out.comp), atol=1e-12)
    np.testing.assert_allclose(out.blr + out.wlr, out.lr, atol=1e-12)
    assert out.basis is None
    assert out.lr_names("within")[0] == f"w{transform}1"


def test_custom_sbp_and_mismatch():
    df = two_row_cluster()
    df["c"] = [0.2, 0.3]
    out = complr(df, parts=list("abc"), idvar="ID", sbp=[[1, 1, -1], [1, -1, 0]])
    np.testing.assert_allclose(out.lr, oracles.balance_coords_float(
        out.comp, [[1, 1, -1], [1, -1, 0]]), atol=1e-12)
    with pytest.raises(BasisDimensionMismatch):
        complr(df, parts=list("abc"), idvar="ID", sbp=pivot_basis(4))
    with pytest.raises(BasisDimensionMismatch):
        complr(df, parts=list("abc"), idvar="ID", sbp=np.ones((4, 5)))


def test_zero_part_reports_rows():
    df = pd.DataFrame({"ID": [1, 1, 2], "a": [1.0, 0.0, 2.0], "b": [1.0, 1.0, -1.0]})
    with pytest.raises(NonPositivePart) as info:
        complr(df, parts=["a", "b"], idvar="ID")
    assert info.value.rows == [2, 3]


def test_schema_errors():
    df = two_row_cluster()
    with pytest.raises(SchemaError, match="zz"):
        LongDataset(df, ("a", "zz"), "ID")
    with pytest.raises(SchemaError):
        LongDataset(df, ("a", "b"), ["ID", "a"])
    bad = df.assign(ID=[1, None])
    with pytest.raises(SchemaError):
        LongDataset(bad, ("a", "b"), "ID")
    with pytest.raises(SchemaError):
        complr(df)
    with pytest.raises(ValueError):
        complr(df, parts=["a", "b"], idvar="ID", transform="xyz")


def test_summary(sim_out):
    s = summary_complr(sim_out)
    assert s.nobs == sim_out.nobs and s.ngrps == 266
    assert s.logratios == ("ilr1", "ilr2", "ilr3", "ilr4")
    assert s.idvar == "ID" and s.transform_type == "ilr" and s.total == 1440
    text = s.to_text()
    assert "composition_parts" in text and "TST, WAKE, MVPA, LPA, SB" in text


def test_summary_single_row():
    out = complr(pd.DataFrame({"ID": [7], "a": [1.0], "b": [2.0]}), parts=["a", "b"], idvar="ID")
    s = summary_complr(out)
    assert (s.nobs, s.ngrps) == (1, 1)


def test_to_frame_columns(sim_out):
    frame = sim_out.to_frame()
    for prefix in ("ilr", "bilr", "wilr"):
        assert [f"{prefix}{k}" for k in range(1, 5)] == [c for c in frame.columns
                                                          if c.rstrip("1234") == prefix]
    assert len(frame) == sim_out.nobs
