"""Simulation and certification toolkit for event-triggered control of
two-time-scale (singularly perturbed) systems.

The package simulates the sampled-data closed loop as a hybrid system with
flow and jump maps, implements three triggering policies plus a periodic
baseline, derives stability certificates from quadratic Lyapunov data, and
post-processes solution arcs into minimum inter-event times, decay
envelopes, and practical-ball radii.
"""

from .errors import (
    CertificateError,
    CertificateInfeasibleError,
    ConfigurationError,
    DimensionError,
    DivergenceError,
    EtcsimError,
    InfeasibleDwellError,
    InsufficientDataError,
    OrderingError,
)
from .hybrid import (
    HybridArc,
    HybridState,
    HybridSystemInterface,
    HybridTime,
    JumpRecord,
    MonitorValues,
    Termination,
)
from .plant import (
    LinearPlantSpec,
    PlantSpec,
    apply_jump,
    check_root_consistency,
    closed_loop_flow,
    jump_map_hy,
    reduced_fast_flow,
    reduced_slow_flow,
    shift_coordinates,
)
from .triggers import (
    GammaForm,
    PolicyKind,
    TriggerPolicy,
    deadzone_event,
    naive_event,
    periodic_event,
    time_regularized_event,
)
from .certificates import (
    AnalysisParameters,
    AssumptionConstants,
    AssumptionReport,
    DwellComparison,
    LyapunovCertificate,
    QuadraticLyapunovData,
    derive_constants,
    dwell_time_ode,
    epsilon_star_search,
    max_dwell_time,
    select_analysis_parameters,
    trigger_slope_bound,
    validate_assumptions,
)
from .simulate import (
    SolverConfig,
    build_hybrid_system,
    integrate_arc,
    locate_event,
    monitor_r,
    monitor_v,
)
from .analysis import (
    ArcSummary,
    ComparisonResult,
    EnvelopeFit,
    SweepResult,
    certified_ball_radius,
    fit_envelope,
    inter_event_times,
    practical_ball,
    summarize_arc,
    sweep,
    transmission_comparison,
)
from .scenario import Scenario, load_scenario, load_scenario_file

__version__ = "0.1.0"
