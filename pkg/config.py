"""
Configuration module for the droplock simulator.
Contains the defaults table every scenario and CLI run starts from.
"""

from dataclasses import asdict, dataclass, replace
from typing import Any, Dict, List

# Run Configuration
DEFAULT_SEED = 1
DEFAULT_OUT_DIR = "out"

# Fingerprint Sensor
IMAGE_WIDTH = 160
IMAGE_HEIGHT = 160
IMAGE_DPI = 508
FULL_IMAGE_BYTES = IMAGE_WIDTH * IMAGE_HEIGHT  # 25,600
QUARTER_IMAGE_BYTES = FULL_IMAGE_BYTES // 4  # 6,400
TEMPLATE_BYTES = 512
CAPTURE_DELAY_MS = 500  # not reported for the real part; keeps uploads dominant
SENSOR_POLICIES = ["allow_image", "template_only", "deny"]
DEFAULT_SENSOR_POLICY = "allow_image"

# UART (8N1)
UART_BAUD_RATES = [9600, 19200, 38400, 57600, 115200]
DEFAULT_UART_BAUD = 115200
DOWNSHIFT_BAUD = 9600
UART_FRAME_BITS = 10

# BLE link
BLE_PAYLOAD_CAP = 20
BLE_INTERVAL_UNIT_US = 1250
BLE_INTERVAL_US = 21250  # 17 x 1.25 ms; 20 B / 21.25 ms ~= 7.53 kbps
BLE_NOTIFICATIONS_PER_INTERVAL = 1

# Bridge firmware
ADV_NAME = "IoT Droplock"
WAKE_WINDOW_S = 60
RING_CAPACITY = 2048
BRIDGE_IDLE_FLUSH_US = 5000

# Proof-of-concept controller
POC_IDLE_TIMEOUT_S = 60
POC_FETCH_WINDOW_S = 30
POC_FETCH_DELAY_S = 5
POC_CYCLES = 1

# Host client
FINGER_POLL_PERIOD_MS = 200
CAPTURE_TIMEOUT_S = 60
UPLOAD_STALL_TIMEOUT_S = 5
HOST_CONNECT_DELAY_S = 1
FINGER_AT_S = 5

# Firmware update
DFU_FLASH_DURATION_S = 60
DFU_PACKAGE_MAGIC = b"DLFW"
DFU_PACKAGE_VERSION = 1

# Scenarios
SCENARIO_NAMES = [
    "poc_sequence",
    "cots_capture",
    "overflow_115200",
    "dfu_infection",
    "policy_denied",
    "quarter_capture",
    "dfu_hardened",
]


def get_scenario_names() -> List[str]:
    """Get the names accepted by run_scenario."""
    return list(SCENARIO_NAMES)


def get_output_names(scenario: str) -> Dict[str, str]:
    """Generate artifact file names for a scenario run."""
    return {
        "log": f"{scenario}.log",
        "image": f"{scenario}.pgm",
    }


@dataclass(frozen=True)
class SimulationConfig:
    """Validated knobs for one simulation run."""

    seed: int = DEFAULT_SEED
    ble_interval_us: int = BLE_INTERVAL_US
    ble_notifications: int = BLE_NOTIFICATIONS_PER_INTERVAL
    uart_baud: int = DEFAULT_UART_BAUD
    downshift_baud: int = DOWNSHIFT_BAUD
    downshift: bool = True
    ring_capacity: int = RING_CAPACITY
    sensor_policy: str = DEFAULT_SENSOR_POLICY
    finger_at_s: float = FINGER_AT_S
    finger_present: bool = True
    wake_window_s: float = WAKE_WINDOW_S
    capture_timeout_s: float = CAPTURE_TIMEOUT_S
    poc_cycles: int = POC_CYCLES
    poc_fetch_delay_s: float = POC_FETCH_DELAY_S

    def validate(self) -> "SimulationConfig":
        """
        Check every field before a simulation starts.

        Returns:
            SimulationConfig: self, for chaining

        Raises:
            ConfigError: On the first invalid value
        """
        from modules.errors import ConfigError

        if not 0 <= self.seed < 2 ** 64:
            raise ConfigError(f"seed must be an unsigned 64-bit integer, got {self.seed}")
        if self.ble_interval_us <= 0 or self.ble_interval_us % BLE_INTERVAL_UNIT_US:
            raise ConfigError(f"BLE interval must be a positive multiple of {BLE_INTERVAL_UNIT_US} us, got {self.ble_interval_us}")
        if self.ble_notifications < 1:
            raise ConfigError(f"notifications per interval must be >= 1, got {self.ble_notifications}")
        for name in ("uart_baud", "downshift_baud"):
            if getattr(self, name) not in UART_BAUD_RATES:
                raise ConfigError(f"{name} must be one of {UART_BAUD_RATES}, got {getattr(self, name)}")
        if self.ring_capacity < 1:
            raise ConfigError(f"ring capacity must be positive, got {self.ring_capacity}")
        if self.sensor_policy not in SENSOR_POLICIES:
            raise ConfigError(f"sensor policy must be one of {SENSOR_POLICIES}, got {self.sensor_policy}")
        if self.finger_at_s < 0 or self.capture_timeout_s <= 0 or self.wake_window_s <= 0:
            raise ConfigError("durations must be positive")
        if self.poc_cycles < 1:
            raise ConfigError(f"poc cycles must be >= 1, got {self.poc_cycles}")
        if self.poc_fetch_delay_s < 0:
            raise ConfigError("fetch delay must not be negative")
        return self

    def with_overrides(self, **overrides: Any) -> "SimulationConfig":
        """Return a validated copy with non-None overrides applied."""
        from modules.errors import ConfigError

        unknown = set(overrides) - set(asdict(self))
        if unknown:
            raise ConfigError(f"Unknown configuration keys: {sorted(unknown)}")
        values = {k: v for k, v in overrides.items() if v is not None}
        return replace(self, **values).validate()


def get_default_config() -> Dict[str, Any]:
    """Get the defaults table as a plain dictionary."""
    return asdict(SimulationConfig())
