"""Structural nested mean models for modified treatment policy effects."""

__version__ = "0.1.0"

from .core import (  # noqa: E402
    Basis,
    BlipSpec,
    ConfigError,
    DataError,
    EstimateReport,
    MTPError,
    Panel,
    PolicyEvalError,
    PolicySpec,
    PositivityError,
    SingularSystemError,
    apply_policy,
    blip,
    blip_down,
    blip_value,
)
from .longitudinal import (  # noqa: E402
    BootstrapError,
    BootstrapResult,
    backward_recursion_step,
    bootstrap_ci,
    estimate_longitudinal,
)
from .nuisance import (  # noqa: E402
    BoostedTrees,
    FoldPlan,
    LeastSquares,
    TreatmentModel,
    adjoint_pullback,
    adjoint_pullback_discrete,
    adjoint_pullback_general,
    density_ratio,
    fit_mean,
    make_folds,
)
from .point import (  # noqa: E402
    NuisanceConfig,
    OracleNuisance,
    ScoreTerms,
    estimate_point,
    estimate_point_outcome_regression,
    sandwich_variance,
    score_point,
)
from .simulation import (  # noqa: E402
    LongDgpParams,
    MonteCarloConfig,
    MonteCarloSummary,
    PointDgpParams,
    PtPointParams,
    PtTwoPeriodParams,
    calibrate_psi0,
    gen_longitudinal_dgp,
    gen_point_dgp,
    gen_pt_dgp,
    gformula_oracle,
    run_monte_carlo,
)
from .trends import estimate_pt_point, estimate_pt_two_period  # noqa: E402

__all__ = [name for name in dir() if not name.startswith("_")]
