"""
Exception hierarchy for the droplock simulator.
"""

from typing import Optional


class DroplockError(Exception):
    """Base class for all simulator, protocol and tooling errors."""


class ConfigError(DroplockError, ValueError):
    """Invalid configuration or override value."""


class UnknownScenario(DroplockError, ValueError):
    """Requested scenario name is not registered."""


class SimulationError(DroplockError):
    """Event-loop misuse (unknown target, missing handler)."""


class CausalityError(SimulationError, ValueError):
    """An event was scheduled before the current virtual time."""


class ProtocolError(DroplockError, ValueError):
    """A frame violates the sensor protocol's layout rules."""


class LinkError(DroplockError):
    """A UART or BLE operation was attempted in an invalid state."""


class RingBufferOverflow(DroplockError):
    """Bytes did not fit into the ring buffer and were dropped."""

    def __init__(self, dropped: int, capacity: int):
        super().__init__(f"ring buffer overflow: dropped {dropped} bytes (capacity {capacity})")
        self.dropped = dropped
        self.capacity = capacity


class CaptureError(DroplockError):
    """A host-side capture did not produce an image."""

    def __init__(self, message: str, stats: Optional[object] = None):
        super().__init__(message)
        self.stats = stats


class CaptureTimeout(CaptureError):
    """No finger, or the upload stalled, before the deadline."""


class PolicyDenied(CaptureError):
    """The sensor refused the upload because of its upload policy."""


class DfuError(DroplockError):
    """Base class for firmware-update failures."""


class AuthFailed(DfuError):
    """Supplied serial/key do not match the registered credentials."""


class AlreadyRegistered(DfuError):
    """The lock already has credentials; the pre-registration route is closed."""


class NotInDfuMode(DfuError):
    """Flashing was attempted without DFU mode active."""


class SigningKeyRequired(DfuError, ValueError):
    """A signed package was requested without a private key."""


class PackageFormatError(DfuError, ValueError):
    """A package container could not be parsed."""


class PatchRangeError(DfuError, ValueError):
    """A tamper patch falls outside the firmware image."""


class ArtifactError(DroplockError):
    """Reading or writing an output artifact failed."""

    def __init__(self, path: str, reason: str):
        super().__init__(f"{path}: {reason}")
        self.path = path
