"""Population power curves for ASCA with permutation testing."""

__version__ = "0.1.0"

from .curves import (  # noqa: E402
    CurveConfig,
    PowerCurve,
    absolute_power_curve,
    bootstrap_ci,
    mean_f_profile,
    relative_power_curve,
)
from .decompose import asca_table, decompose, f_ratios, fit  # noqa: E402
from .design import (  # noqa: E402
    DesignModel,
    FactorSpec,
    InteractionSpec,
    ReplicationPlan,
    build_coding_matrix,
    build_run_table,
    degrees_of_freedom,
    descendants,
    reference_model,
    validate_model,
)
from .distributions import Distribution  # noqa: E402
from .permute import p_value, permutation_test  # noqa: E402
from .theory import VarianceParams, expected_f, expected_ms  # noqa: E402
