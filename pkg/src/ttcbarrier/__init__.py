"""TTC barrier-certificate verification and trajectory conflict validation.

Pure kinematics (``kinematics``), SMT-LIB query generation and model parsing
(``smtlib``), the external solver driver and grid oracle (``solver``),
HighD-style trajectory ingestion (``ingest``), conflict scanning plus speed
adjustment (``pipeline``) and the command-line front end (``cli``).

Hot numeric loops live in a compiled extension with a numpy fallback;
``ttcbarrier.backend_name()`` reports which one is active.
"""

from ._backend import backend_name, get_kernels
from .kinematics import (
    BarrierKind,
    BarrierParams,
    BarrierValue,
    DegenerateClosing,
    PairState,
    SafetyClass,
    TtcKind,
    TtcValue,
    VehicleState,
    barrier_derivative,
    barrier_value,
    classify,
    pair_from_gap,
    safe_accel_bound,
    ttc,
)

__version__ = "0.1.0"

__all__ = [
    "BarrierKind",
    "BarrierParams",
    "BarrierValue",
    "DegenerateClosing",
    "PairState",
    "SafetyClass",
    "TtcKind",
    "TtcValue",
    "VehicleState",
    "backend_name",
    "barrier_derivative",
    "barrier_value",
    "classify",
    "get_kernels",
    "pair_from_gap",
    "safe_accel_bound",
    "ttc",
    "__version__",
]
