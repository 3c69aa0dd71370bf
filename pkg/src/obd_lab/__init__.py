"""obd_lab: model-assisted phase I/II dose-finding workbench.

Seven designs (BOIN-ET, BOIN12, UBI, TEPI-2, PRINTE, STEIN, uTPI), randomized
dose-response scenario generation, Monte Carlo operating characteristics, a CLI,
and an HTTP session service for live trial conduct.
"""

__version__ = "0.1.0"

from .core import (
    Decision,
    DecisionKind,
    OutcomeCounts,
    Scenario,
    TrialError,
    TrialPlan,
    TrialState,
    UtilityScores,
    record_cohort,
)
from .designs import (
    DesignConfig,
    DesignId,
    ObdResult,
    apply_elimination,
    decide,
    make_config,
    select_obd,
    suggested_obd,
)
from .engine import (
    BatchResult,
    OCMetrics,
    TrialRecord,
    compute_metrics,
    run_batch,
    run_trial,
)
from .scenario import (
    ScenarioSpec,
    align,
    gen_case_study,
    gen_no_obd,
    gen_with_obd,
    sample_outcomes,
)

__all__ = [
    "BatchResult",
    "Decision",
    "DecisionKind",
    "DesignConfig",
    "DesignId",
    "OCMetrics",
    "ObdResult",
    "OutcomeCounts",
    "Scenario",
    "ScenarioSpec",
    "TrialError",
    "TrialPlan",
    "TrialRecord",
    "TrialState",
    "UtilityScores",
    "align",
    "apply_elimination",
    "compute_metrics",
    "decide",
    "gen_case_study",
    "gen_no_obd",
    "gen_with_obd",
    "make_config",
    "record_cohort",
    "run_batch",
    "run_trial",
    "sample_outcomes",
    "select_obd",
    "suggested_obd",
    "__version__",
]
