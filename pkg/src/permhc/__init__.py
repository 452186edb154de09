"""Permutation-calibrated higher criticism for detecting a few anomalous streams among many."""

__version__ = "0.1.0"

from .core import (
    Grid,
    GridKind,
    Method,
    SampleMoments,
    SparsityParams,
    StreamMatrix,
    TestResult,
    build_data_grid,
    build_theorem_grid,
    classic_hc,
    count_exceedances,
    sample_moments,
    standardized_count,
    stream_means,
)
from .oracle import (
    NullModel,
    approx_hc_test,
    calibrate_oracle,
    oracle_hc_test,
    oracle_pq_gamma,
    oracle_pq_normal,
    rho_star,
    signal_theta,
)
from .permute import (
    PermutationPlan,
    Strategy,
    estimate_pq,
    hat_N,
    hat_T,
    max_quantile,
    per_stream_pvalues,
    perm_hc_test,
    perm_max_test,
    sample_permuted_means,
)


from .io import normalize_panel, read_matrix, read_panel, read_population, write_matrix
from .pipeline import (
    Mode,
    SeriesPanel,
    WindowReport,
    exclude_clear_outliers,
    fit_ar1,
    residuals,
    scan,
)
from .simgen import (
    ExperimentSpec,
    PowerCurve,
    Sweep,
    SweepKind,
    gen_exponential,
    gen_normal,
    paper_figure,
    run_experiment,
    run_experiments,
)

__all__ = [
    "__version__",
    "Grid",
    "GridKind",
    "Method",
    "SampleMoments",
    "SparsityParams",
    "StreamMatrix",
    "TestResult",
    "build_data_grid",
    "build_theorem_grid",
    "classic_hc",
    "count_exceedances",
    "sample_moments",
    "standardized_count",
    "stream_means",
    "NullModel",
    "approx_hc_test",
    "calibrate_oracle",
    "oracle_hc_test",
    "oracle_pq_gamma",
    "oracle_pq_normal",
    "rho_star",
    "signal_theta",
    "PermutationPlan",
    "Strategy",
    "estimate_pq",
    "hat_N",
    "hat_T",
    "max_quantile",
    "per_stream_pvalues",
    "perm_hc_test",
    "perm_max_test",
    "sample_permuted_means",
    "Mode",
    "SeriesPanel",
    "WindowReport",
    "exclude_clear_outliers",
    "fit_ar1",
    "residuals",
    "scan",
    "ExperimentSpec",
    "PowerCurve",
    "Sweep",
    "SweepKind",
    "gen_exponential",
    "gen_normal",
    "paper_figure",
    "run_experiment",
    "run_experiments",
    "normalize_panel",
    "read_matrix",
    "read_panel",
    "read_population",
    "write_matrix",
]
