"""Desk-scale simulator of RAN-driven real-time spectrum sharing.

A simulated 5G-NR-like base station reserves sensing symbols, streams
their I/Q over a publish/subscribe wire to a detector app, and applies
the barred-PRB control actions the detector sends back - reproducing the
closed sensing/scheduling loop and its throughput consequences, fully
deterministically.
"""

from .airspace import (
    IncumbentProfile,
    IqSymbol,
    NoiseModel,
    active_at,
    footprint_mask,
    incumbent_footprint,
    interference_linear_per_prb,
    stream_rng,
    synthesize_sensing_iq,
)
from .capture import CaptureError, read_capture, write_capture
from .dapp import (
    Dapp,
    DetectorParams,
    DetectorState,
    dapp_step,
    detect_capture,
    detect_raw,
    estimate_floor,
    hysteresis_update,
    new_detector_state,
    prb_energies,
)
from .gnb import (
    Allocation,
    Gnb,
    SchedulerState,
    UeContext,
    agent_poll,
    apply_control_action,
    new_scheduler,
    schedule_slot,
    slot_throughput_bits,
)
from .grid import (
    Numerology,
    PrbGrid,
    SensingSchedule,
    SlotKind,
    TddPattern,
    default_sensing_schedule,
    default_tdd_pattern,
    make_grid,
    prb_to_subcarriers,
    sensing_symbols_in_frame,
    slot_kind,
    symbols_per_frame,
)
from .metrics import export_metrics
from .scenario import Scenario, ScenarioError, TransportSpec, load_scenario
from .sim import MetricsLog, MetricsRecord, TransportError, run

__version__ = "0.1.0"
