"""Set disjointness through F_p and F_0 sketches: instances, exact case checks,
streaming estimators and a simulated one-way relay protocol."""

from .core import (
    DISJOINT,
    CorruptPayload,
    FrequencyVector,
    InvalidArgument,
    Mode,
    NonIntegerWeight,
    Parameters,
    PromiseInstance,
    PromiseViolation,
    RegimeViolation,
    StreamUpdate,
    Truth,
    gen_instance,
    make_parameters,
    parameters_from_root,
    sum_shares,
)
from .protocol import Decision, infer_disj, make_factory, run_protocol

__version__ = "0.1.0"

__all__ = [
    "DISJOINT",
    "CorruptPayload",
    "Decision",
    "FrequencyVector",
    "InvalidArgument",
    "Mode",
    "NonIntegerWeight",
    "Parameters",
    "PromiseInstance",
    "PromiseViolation",
    "RegimeViolation",
    "StreamUpdate",
    "Truth",
    "gen_instance",
    "infer_disj",
    "make_factory",
    "make_parameters",
    "parameters_from_root",
    "run_protocol",
    "sum_shares",
]
