"""
Unit tests for configuration module.
"""

import unittest

from config import (
    BLE_INTERVAL_US,
    BLE_PAYLOAD_CAP,
    DOWNSHIFT_BAUD,
    FULL_IMAGE_BYTES,
    POC_FETCH_WINDOW_S,
    POC_IDLE_TIMEOUT_S,
    QUARTER_IMAGE_BYTES,
    RING_CAPACITY,
    UART_BAUD_RATES,
    WAKE_WINDOW_S,
    ADV_NAME,
    SimulationConfig,
    get_default_config,
    get_output_names,
    get_scenario_names,
)
from modules.errors import ConfigError


class TestConfig(unittest.TestCase):
    """Test configuration module."""

    def test_image_sizes(self):
        """Full and quarter images have fixed sizes."""
        self.assertEqual(FULL_IMAGE_BYTES, 25600)
        self.assertEqual(QUARTER_IMAGE_BYTES, 6400)

    def test_timing_defaults(self):
        """Wake, idle and fetch windows."""
        self.assertEqual(WAKE_WINDOW_S, 60)
        self.assertEqual(POC_IDLE_TIMEOUT_S, 60)
        self.assertEqual(POC_FETCH_WINDOW_S, 30)

    def test_link_defaults(self):
        """Link parameters."""
        self.assertEqual(BLE_PAYLOAD_CAP, 20)
        self.assertEqual(RING_CAPACITY, 2048)
        self.assertEqual(DOWNSHIFT_BAUD, 9600)
        self.assertEqual(BLE_INTERVAL_US % 1250, 0)
        self.assertIn(115200, UART_BAUD_RATES)
        self.assertEqual(ADV_NAME, "IoT Droplock")

    def test_scenario_names(self):
        """Every scenario is listed once."""
        names = get_scenario_names()
        self.assertEqual(len(names), len(set(names)))
        for name in ("poc_sequence", "cots_capture", "overflow_115200", "dfu_infection", "policy_denied"):
            self.assertIn(name, names)

    def test_scenario_names_returns_copy(self):
        """Mutating the result does not affect the table."""
        get_scenario_names().append("bogus")
        self.assertNotIn("bogus", get_scenario_names())

    def test_output_names(self):
        """Artifact names follow the scenario name."""
        names = get_output_names("cots_capture")
        self.assertEqual(names["log"], "cots_capture.log")
        self.assertEqual(names["image"], "cots_capture.pgm")

    def test_default_config_table(self):
        """Defaults table mirrors SimulationConfig."""
        table = get_default_config()
        self.assertEqual(table["seed"], 1)
        self.assertEqual(table["ring_capacity"], RING_CAPACITY)
        self.assertTrue(table["downshift"])


class TestSimulationConfig(unittest.TestCase):
    """Test validation and overrides."""

    def test_defaults_validate(self):
        config = SimulationConfig()
        self.assertIs(config.validate(), config)

    def test_override_applies(self):
        config = SimulationConfig().with_overrides(seed=7, uart_baud=9600)
        self.assertEqual(config.seed, 7)
        self.assertEqual(config.uart_baud, 9600)

    def test_none_overrides_ignored(self):
        config = SimulationConfig().with_overrides(seed=None, ring_capacity=None)
        self.assertEqual(config, SimulationConfig())

    def test_unknown_key_rejected(self):
        with self.assertRaises(ConfigError):
            SimulationConfig().with_overrides(colour="red")

    def test_invalid_values_rejected(self):
        bad = [
            {"seed": -1},
            {"seed": 2 ** 64},
            {"ble_interval_us": 1000},
            {"ble_interval_us": 0},
            {"ble_notifications": 0},
            {"uart_baud": 12345},
            {"ring_capacity": 0},
            {"sensor_policy": "maybe"},
            {"poc_cycles": 0},
            {"poc_fetch_delay_s": -1},
            {"capture_timeout_s": 0},
        ]
        for override in bad:
            with self.subTest(override=override):
                with self.assertRaises(ConfigError):
                    SimulationConfig().with_overrides(**override)

    def test_config_error_is_value_error(self):
        with self.assertRaises(ValueError):
            SimulationConfig(ring_capacity=-5).validate()


if __name__ == '__main__':
    unittest.main()
