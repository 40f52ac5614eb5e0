import numpy as np
import pytest

from mlcoda.errors import UnknownPart
from mlcoda.model import CodaFit, ModelSpec, PosteriorDraws, build_design
from mlcoda.multilevel import complr
from mlcoda.plotting import plot_data, plot_substitution
from mlcoda.simulate import reference_spec, simulate
from mlcoda.substitution import SubstitutionSpec, simple_substitution


@pytest.fixture(scope="module")
def result():
    out = complr(simulate(reference_spec(n_clusters=20, seed=2)).dataset)
    spec = ModelSpec.from_formula("Stress ~ bilr1 + bilr2 + bilr3 + bilr4 + wilr1 + wilr2"
                                  " + wilr3 + wilr4 + (1 | ID)")
    design = build_design(out, spec)
    arr = np.random.default_rng(0).normal(size=(1, 50, 9))
    draws = PosteriorDraws(arr, design.names, 0, out.basis.basis_id, design.names)
    fit = CodaFit(out, spec, design, draws)
    return simple_substitution(fit, SubstitutionSpec(deltas=(1, 2, 5)))


def test_filter_to_part(result):
    data = plot_data(result, to="TST", level="between")
    assert set(data["to"]) == {"TST"}
    assert data["from"].nunique() == 4 and len(data) == 12
    assert list(data["from"].drop_duplicates()) == ["WAKE", "MVPA", "LPA", "SB"]
    assert list(data["delta"][:3]) == [1, 2, 5]


def test_unknown_part(result):
    with pytest.raises(UnknownPart):
        plot_data(result, to="NAP")


def test_svg_is_reproducible(result, tmp_path):
    a, b = tmp_path / "a.svg", tmp_path / "b.svg"
    plot_substitution(result, "SB", "within", a)
    plot_substitution(result, "SB", "within", b)
    assert a.read_bytes() == b.read_bytes()
    assert a.read_text().lstrip().startswith("<?xml")


def test_returns_figure(result):
    fig = plot_substitution(result, "MVPA", "between")
    assert len(fig.axes[0].get_lines()) == 5  # four series and the zero line
