"""Buffered asynchronous federated learning with bidirectional
quantization: codecs, protocol state machines, a deterministic
discrete-event simulator, and convergence-theory utilities."""

from .quantizers import (
    QuantizedMessage,
    QuantizerSpec,
    compression_parameter,
    decode,
    dequantize,
    encoded_bits,
    quantize,
)
from .protocol import HyperParams, SyncMode
from .simulator import DelayModel, MetricsLog, run_simulation
from .config import ExperimentConfig, parse_config

__all__ = [
    "QuantizedMessage",
    "QuantizerSpec",
    "compression_parameter",
    "decode",
    "dequantize",
    "encoded_bits",
    "quantize",
    "HyperParams",
    "SyncMode",
    "DelayModel",
    "MetricsLog",
    "run_simulation",
    "ExperimentConfig",
    "parse_config",
]

__version__ = "0.1.0"
