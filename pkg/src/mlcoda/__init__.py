"""Multilevel compositional data analysis.

Log-ratio transforms on the simplex, between/within decomposition of
clustered compositions, a Gibbs-sampled random-intercept model in the
resulting coordinates, and isotemporal substitution on the fitted model.
"""

__version__ = "0.1.0"

from .composition import (
    Composition,
    IlrVector,
    alr_forward,
    alr_inverse,
    closure,
    clr_forward,
    clr_inverse,
    geometric_mean_composition,
    ilr_forward,
    ilr_inverse,
    neutral,
    perturb,
    perturb_inv,
)
from .diagnostics import ess_bulk, ess_mean, ess_tail, mcse_mean, rhat
from .model import (
    CodaFit,
    Design,
    ModelSpec,
    PosteriorDraws,
    build_design,
    fit_model,
    gibbs_fit,
    parse_formula,
    summarize_fit,
)
from .multilevel import ComplrOutput, LongDataset, complr, summary_complr
from .pivot import pivot_coord
from .plotting import plot_data, plot_substitution
from .sbp import (
    IlrBasis,
    SbpMatrix,
    contrast_matrix,
    default_pivot_sbp,
    pivot_basis,
    pivot_sbp_for_part,
    rotation_between,
    validate_sbp,
)
from .simulate import SimulationSpec, reference_spec, simulate
from .substitution import (
    ReferencePoint,
    SubstitutionResult,
    SubstitutionSpec,
    average_substitution,
    cluster_references,
    delta_outcome,
    grand_reference,
    reallocate,
    simple_substitution,
)
