"""Exception types shared across the simulator."""


class DxError(Exception):
    """Base class for all simulator errors."""


class ConfigError(DxError):
    """Bad or unknown configuration key/value."""


class CapacityError(DxError):
    """Physical address outside the configured DRAM capacity."""


class ProtocolError(DxError):
    """DRAM command illegal for the current bank state."""


class EncodingError(DxError):
    """Instruction cannot be encoded (malformed operand set)."""


class DecodeError(DxError):
    """Binary instruction words cannot be decoded."""


class ValidationError(DxError):
    """Program failed the static legality checks."""


class DispatchError(DxError):
    """Instruction rejected at dispatch/issue time (dynamic operand problem)."""


class BoundsError(DxError):
    """Index outside the registered array during execution."""


class DeadlockError(DxError):
    """Simulation cannot make progress; carries a scoreboard snapshot."""

    def __init__(self, message: str, snapshot: str = ""):
        super().__init__(message)
        self.snapshot = snapshot


class ConsistencyError(DxError):
    """Internal state disagreement (e.g. response without a matching entry)."""


class GenerationError(DxError):
    """Workload generator cannot satisfy the requested pattern."""
