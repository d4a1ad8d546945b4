"""A simulation kernel for digital twins built from heterogeneous models.

Finite state machines, coloured Petri nets and hybrid automata are
composed into digital twin components that exchange timestamped events
over latency-bearing channels.  Runs are deterministic: the same model
and stimuli give byte-identical traces.
"""

from .composition import (
    Channel,
    DtcSpec,
    Endpoint,
    InstanceSpec,
    Stimulus,
    SystemSpec,
    Wire,
    system_run,
)
from .core import NS_PER_S, Event, Trace, TraceRecord, diff_traces, seconds, to_seconds
from .cpn import CpnNet, Marking, cpn_fire, cpn_step, enabled_bindings
from .errors import (
    CalibrationError,
    ComparisonError,
    ContractViolation,
    CrossingAmbiguityError,
    ExecutionError,
    InvariantViolationError,
    ModelError,
    NonConvergenceError,
    NonQuiescenceError,
    NumericDivergenceError,
    OracleOverflowError,
    PlantTraceError,
    SimulationError,
    TraceEncodingError,
    TwinKernelError,
    ZenoError,
)
from .fsm import FsmModel, fsm_step
from .ha import HaModel, ha_advance
from .modelspec import canonical_print, load_file, load_text, parse_model
from .reachability import reachable_markings
from .twinlink import calibrate_scalar, compare_traces, load_plant_trace

__version__ = "0.1.0"

__all__ = [
    "CalibrationError",
    "Channel",
    "ComparisonError",
    "ContractViolation",
    "CpnNet",
    "CrossingAmbiguityError",
    "DtcSpec",
    "Endpoint",
    "Event",
    "ExecutionError",
    "FsmModel",
    "HaModel",
    "InstanceSpec",
    "InvariantViolationError",
    "Marking",
    "ModelError",
    "NS_PER_S",
    "NonConvergenceError",
    "NonQuiescenceError",
    "NumericDivergenceError",
    "OracleOverflowError",
    "PlantTraceError",
    "SimulationError",
    "Stimulus",
    "SystemSpec",
    "Trace",
    "TraceEncodingError",
    "TraceRecord",
    "TwinKernelError",
    "Wire",
    "ZenoError",
    "calibrate_scalar",
    "canonical_print",
    "compare_traces",
    "cpn_fire",
    "cpn_step",
    "diff_traces",
    "enabled_bindings",
    "fsm_step",
    "ha_advance",
    "load_file",
    "load_plant_trace",
    "load_text",
    "parse_model",
    "reachable_markings",
    "seconds",
    "system_run",
    "to_seconds",
]
