"""Semi-supervised Gaussian mixture classification with a missing-label mechanism."""

__version__ = "0.1.0"

from .errors import (  # noqa: F401
    CellError,
    ContractError,
    CurveError,
    DimensionError,
    DomainError,
    EmptyClassError,
    FoldError,
    QuadratureError,
    RankError,
    SingularityError,
    SslmixError,
    UnsupportedError,
)
from .model import (  # noqa: F401
    CanonicalTwoClass,
    MixtureParams,
    PartialSample,
    as_canonical,
    log_component_density,
    log_mixture_density,
    mixture_density,
    sample_mixture,
)
from .classify import (  # noqa: F401
    ErrorReport,
    bayes_allocate,
    empirical_error_rate,
    linear_rule_error,
    optimal_error_two_class,
    posterior,
    shannon_entropy,
)
from .missing import (  # noqa: F401
    DiscriminantCoeffs,
    Form,
    GammaEstimate,
    MissingnessParams,
    beta_from_theta,
    discriminant,
    gamma_expected,
    missing_prob,
    simulate_missing_flags,
    taylor_log_entropy,
)
from .estimate import (  # noqa: F401
    FitResult,
    align_components,
    fit_cc,
    fit_full,
    fit_ig,
    fit_xi_profile,
    init_strategy,
    loglik_cc,
    loglik_full,
    loglik_ig,
    loglik_miss,
)
from .efficiency import (  # noqa: F401
    AreCurvePoint,
    are_curve,
    are_full_vs_cc,
    are_full_vs_ig,
    quad_b0,
    quad_c0,
    quad_gamma_d0,
    u0_a0,
)
from .study import (  # noqa: F401
    RECell,
    ReplicationRecord,
    StudyConfig,
    bootstrap_se,
    estimate_re,
    missing_proportion_curve,
    reference_error,
    run_cell,
    run_replication,
    run_study,
    separation_degree,
    three_class_config,
    two_class_config,
)
from .diagnostics import kfold_cv, nadaraya_watson_missing, pca_project  # noqa: F401
