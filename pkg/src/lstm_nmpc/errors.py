"""
Exception Hierarchy.

Every error raised on purpose by the toolchain derives from `NmpcError`, so the
command-line entry point can catch one type, log it and exit cleanly. Each
concern has its own branch:

- network evaluation: `LayerDimensionError`, `NonFiniteActivationError`,
  `NetworkSpecError`
- weights container: `WeightsFileError` and its four distinct failure modes
- training: `TrainingDivergedError`
- wire protocol: `WireError` and its decoding/encoding failure modes
- configuration: `ConfigError`
- closed loop: `UnstableLoopError`
- command line: `MissingArtifactError`
"""

from __future__ import annotations


class NmpcError(Exception):
    """Base class for all toolchain errors."""


class NetworkSpecError(NmpcError):
    """Raised when a network architecture violates its structural rules."""


class LayerDimensionError(NmpcError):
    """Raised when a vector does not match the width a layer expects."""

    def __init__(self, layer_index: int, expected: int, received: int):
        self.layer_index = layer_index
        self.expected = expected
        self.received = received
        super().__init__(
            f"layer {layer_index}: expected input width {expected}, received {received}"
        )


class NonFiniteActivationError(NmpcError):
    """Raised when a layer produces NaN or infinite values."""

    def __init__(self, layer_index: int):
        self.layer_index = layer_index
        super().__init__(f"layer {layer_index}: non-finite activation")


class WeightsFileError(NmpcError):
    """Base class for weights container failures."""


class WeightsMagicError(WeightsFileError):
    """The file does not start with the weights container magic."""


class WeightsVersionError(WeightsFileError):
    """The container format version is not supported."""


class WeightsChecksumError(WeightsFileError):
    """The CRC32 trailer does not match the file contents."""


class WeightsTruncatedError(WeightsFileError):
    """The file ends before the declared contents."""


class TrainingDivergedError(NmpcError):
    """Raised when the training loss becomes non-finite."""

    def __init__(self, epoch: int, history: list):
        self.epoch = epoch
        self.history = history
        super().__init__(
            f"training diverged at epoch {epoch} after {len(history)} completed epochs"
        )


class WireError(NmpcError):
    """Base class for packet encoding/decoding failures."""


class BadMagicError(WireError):
    """Packet header magic is not 0x48434349."""


class BadVersionError(WireError):
    """Packet header carries an unsupported protocol version."""


class UnknownMessageTypeError(WireError):
    """Packet header carries an unknown message type."""


class TruncatedPacketError(WireError):
    """Packet is shorter than its header or its message type requires."""


class PacketLengthError(WireError):
    """Packet is longer than its message type allows."""


class WireValueError(WireError):
    """A message field cannot be represented on the wire."""


class ConfigError(NmpcError):
    """Raised for unknown keys, wrong types or violated config invariants."""


class UnstableLoopError(NmpcError):
    """Raised when a closed-loop output leaves the allowed envelope."""

    def __init__(self, cycle: int, diagnostics: dict):
        self.cycle = cycle
        self.diagnostics = diagnostics
        details = ", ".join(f"{key}={value:.4g}" for key, value in diagnostics.items())
        super().__init__(f"closed loop unstable at cycle {cycle}: {details}")


class MissingArtifactError(NmpcError):
    """Raised when a subcommand needs an artifact another subcommand produces."""

    def __init__(self, path, prerequisite: str):
        self.path = path
        self.prerequisite = prerequisite
        super().__init__(
            f"missing artifact {path}; run the `{prerequisite}` subcommand first"
        )
