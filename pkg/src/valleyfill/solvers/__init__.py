from .centralized import (
    dual_bound_from_slater,
    kkt_residuals,
    objective_lower_bound,
    run_centralized,
    slater_point,
)
from .certificate import CertificateReport, certificate_constants, certify
from .report import SolveReport
from .spds import (
    IterationState,
    SpdsConfig,
    initial_state,
    study_config,
    run_pds,
    run_rpds,
    run_spds,
    spds_dual_step,
    spds_primal_step,
)

__all__ = [
    "CertificateReport",
    "IterationState",
    "SolveReport",
    "SpdsConfig",
    "certificate_constants",
    "certify",
    "dual_bound_from_slater",
    "initial_state",
    "kkt_residuals",
    "objective_lower_bound",
    "study_config",
    "run_centralized",
    "run_pds",
    "run_rpds",
    "run_spds",
    "slater_point",
    "spds_dual_step",
    "spds_primal_step",
]
