"""Settingless two-terminal power line protection.

Per observation window the engine asks which circuit model explains the
synchronized terminal measurements best: the healthy series line, a
faulted line with unknown shunt-fault position and resistances, or a
healthy-to-faulted transition inside the window.  Each faulted
hypothesis is a small box-constrained convex QP solved exactly; the
smallest mean squared model mismatch wins.  The package also ships a
trapezoidal nodal transient simulator of the two-source test grid and a
batch harness for security/dependability studies.
"""

from .boxqp import QpSolution, solve_box_qp
from .decision import (
    BEFORE_WINDOW,
    RelayVerdict,
    classify_fault_type,
    fault_current_materiality,
    select_case,
)
from .errors import (
    DataIntegrityError,
    DegradedDataError,
    InvalidParameterError,
    InvalidWindowError,
    LineGuardError,
    SimulationError,
)
from .grid import (
    FaultSpec,
    GridScenario,
    OPEN,
    PhaseImpedance,
    SequenceLineParameters,
    SourceParameters,
    assemble_fault_matrix,
    build_phase_matrices,
    random_scenario,
)
from .harness import (
    DetectionParams,
    ScenarioCase,
    StudyReport,
    WindowVerdict,
    run_detection_stream,
    run_suite,
    sweep_line_params,
    sweep_noise,
)
from .mismatch import (
    CaseResult,
    MismatchData,
    Partition,
    build_mismatch,
    evaluate_all_cases,
    partition,
)
from .preprocess import PreparedWindow, estimate_derivatives, prepare_window
from .simulate import (
    WaveformRecord,
    add_noise,
    drop_samples,
    realize_scenario,
    record_from_csv,
    record_to_csv,
    simulate,
)

__version__ = "0.1.0"

__all__ = [name for name in dir() if not name.startswith("_")]
