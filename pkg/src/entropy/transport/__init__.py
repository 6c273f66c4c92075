"""Framing plus two delivery backends: simulated and TCP."""

from .simnet import (LatencyModel, SimNetwork, SimulationStalled, TransportError,
                     UnknownDestination, VirtualTimeLoop, run_virtual)
from .wire import (HEADER_LEN, MAX_PAYLOAD, Envelope, WireError, decode_envelope,
                   encode_envelope)

__all__ = [
    "Envelope", "HEADER_LEN", "LatencyModel", "MAX_PAYLOAD", "SimNetwork",
    "SimulationStalled", "TransportError", "UnknownDestination", "VirtualTimeLoop",
    "WireError", "decode_envelope", "encode_envelope", "run_virtual",
]
