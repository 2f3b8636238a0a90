"""Conditional gradient solver over atomic sets with gauge-type penalties
and gap-safe screening."""

from .atoms import (
    EXPLICIT,
    HYPERCUBE,
    SIGNED_BASIS,
    Atom,
    AtomicSet,
    AtomMask,
    load_atoms_file,
    save_atoms_file,
)
from .errors import (
    CertificateCorruptionError,
    ContractViolationError,
    DivergenceError,
    FileFormatError,
    InfeasibleGaugeError,
    ReferenceMismatchError,
    UnboundedConjugateError,
    UnboundedStepError,
)
from .experiments import (
    ExperimentConfig,
    ReferenceSolution,
    ResidualSeries,
    build_certificate,
    gen_synthetic,
    identified_at,
    load_mnist_pair,
    load_reference,
    rate_slope,
    read_trace_csv,
    reference_solve,
    residuals,
    run_experiment,
    save_reference,
    write_residuals_csv,
    write_screen_csv,
    write_trace_csv,
)
from .losses import (
    DataMatrix,
    LogisticLoss,
    QuadraticLoss,
    load_data_file,
    save_data_file,
)
from .penalties import INDICATOR, LOG_BARRIER, POWER, Penalty
from .screening import (
    ScreenReport,
    SupportCertificate,
    apply_rule,
    delta,
    support_of,
)
from .solver import (
    RunResult,
    Snapshot,
    SolverConfig,
    SolverState,
    TraceRecord,
    gap_primal,
    problem_fingerprint,
    run,
    step,
    theta_schedule,
)

__version__ = "0.1.0"

__all__ = [
    "Atom",
    "AtomicSet",
    "AtomMask",
    "CertificateCorruptionError",
    "ContractViolationError",
    "DataMatrix",
    "DivergenceError",
    "EXPLICIT",
    "ExperimentConfig",
    "FileFormatError",
    "HYPERCUBE",
    "INDICATOR",
    "InfeasibleGaugeError",
    "LOG_BARRIER",
    "LogisticLoss",
    "POWER",
    "Penalty",
    "QuadraticLoss",
    "ReferenceMismatchError",
    "ReferenceSolution",
    "ResidualSeries",
    "RunResult",
    "SIGNED_BASIS",
    "ScreenReport",
    "Snapshot",
    "SolverConfig",
    "SolverState",
    "SupportCertificate",
    "TraceRecord",
    "UnboundedConjugateError",
    "UnboundedStepError",
    "apply_rule",
    "build_certificate",
    "delta",
    "gap_primal",
    "gen_synthetic",
    "identified_at",
    "load_atoms_file",
    "load_data_file",
    "load_mnist_pair",
    "load_reference",
    "problem_fingerprint",
    "rate_slope",
    "read_trace_csv",
    "reference_solve",
    "residuals",
    "run",
    "run_experiment",
    "save_atoms_file",
    "save_data_file",
    "save_reference",
    "step",
    "support_of",
    "theta_schedule",
    "write_residuals_csv",
    "write_screen_csv",
    "write_trace_csv",
]
