"""
Integration tests for the end-to-end scenarios.
These tests run whole attack chains on the simulator.
"""

import tempfile
import unittest
from pathlib import Path

from config import SimulationConfig, get_scenario_names
from modules.errors import UnknownScenario
from modules.harvest_client import load_pgm
from modules.scenarios import SCENARIOS, run_scenario
from modules.sensor_sim import Resolution, generate_fingerprint
from modules.sim_core import seconds


class TestScenarioRegistry(unittest.TestCase):

    def test_every_name_registered(self):
        self.assertEqual(sorted(SCENARIOS), sorted(get_scenario_names()))

    def test_unknown_scenario(self):
        with self.assertRaises(UnknownScenario):
            run_scenario("bogus")


class TestAttackChain(unittest.TestCase):
    """Each scenario passes its own checks with default settings."""

    def test_cots_capture(self):
        report = run_scenario("cots_capture")
        self.assertTrue(report.passed, report.checks)
        self.assertEqual(len(report.image.pixels), 25600)
        self.assertLess(report.details["high_watermark"], 1024)
        self.assertTrue(report.checks["upload_duration"])
        self.assertTrue(report.checks["throughput"])
        discovered = report.log.first("DISCOVERED", "host")
        self.assertIn("IoT Droplock", discovered.detail)

    def test_quarter_capture(self):
        report = run_scenario("quarter_capture")
        self.assertTrue(report.passed, report.checks)
        self.assertEqual(len(report.image.pixels), 6400)

    def test_overflow_115200(self):
        report = run_scenario("overflow_115200")
        self.assertTrue(report.passed, report.checks)
        self.assertLessEqual(report.details["overflow_after_us"], 250_000)
        self.assertGreaterEqual(report.stats.checksum_failures, 1)

    def test_policy_denied(self):
        report = run_scenario("policy_denied")
        self.assertTrue(report.passed, report.checks)
        self.assertIsNone(report.image)

    def test_dfu_infection(self):
        report = run_scenario("dfu_infection")
        self.assertTrue(report.passed, report.checks)
        flash_start = report.log.first("FLASH_START", "lock")
        flash_done = report.log.first("FLASH_DONE", "lock")
        self.assertEqual(flash_done.at - flash_start.at, seconds(60))
        self.assertTrue(report.checks["registered_lock_refuses_route"])
        self.assertIsNotNone(report.image)

    def test_dfu_hardened(self):
        report = run_scenario("dfu_hardened")
        self.assertTrue(report.passed, report.checks)
        self.assertEqual(report.log.count("FLASH_REJECTED", "lock"), 3)

    def test_poc_sequence(self):
        report = run_scenario("poc_sequence")
        self.assertTrue(report.passed, report.checks)
        self.assertEqual(report.log.first("ACTUATE", "poc").at, seconds(60))
        self.assertGreaterEqual(report.details["uart_upload_s"], 2.0)
        self.assertLessEqual(report.details["uart_upload_s"], 2.5)

    def test_poc_multiple_cycles(self):
        report = run_scenario("poc_sequence", SimulationConfig(poc_cycles=3))
        self.assertTrue(report.passed, report.checks)
        self.assertEqual(report.log.count("IMAGE_READY", "poc"), 3)


class TestMitigationWhatIfs(unittest.TestCase):
    """Overrides change outcomes the way the link arithmetic predicts."""

    def test_faster_ble_shortens_upload(self):
        fast = run_scenario("cots_capture", SimulationConfig(ble_interval_us=7500, ble_notifications=4, downshift_baud=57600))
        self.assertIsNotNone(fast.image)
        self.assertLess(fast.stats.duration, 10)
        self.assertEqual(fast.stats.overflow_events, 0)

    def test_small_ring_overflows_even_with_downshift(self):
        report = run_scenario("cots_capture", SimulationConfig(ring_capacity=16))
        self.assertFalse(report.passed)
        self.assertGreaterEqual(report.log.count("OVERFLOW", "bridge"), 1)

    def test_no_finger(self):
        report = run_scenario("cots_capture", SimulationConfig(finger_present=False, capture_timeout_s=3))
        self.assertFalse(report.passed)
        self.assertEqual(report.details["error"], "CaptureTimeout")

    def test_poc_without_finger(self):
        report = run_scenario("poc_sequence", SimulationConfig(finger_present=False))
        self.assertTrue(report.passed, report.checks)
        self.assertEqual(report.log.count("ACTUATE", "poc"), 2)


class TestDeterminism(unittest.TestCase):
    """Same seed, same bytes."""

    def _artifacts(self, name, seed, out_dir):
        report = run_scenario(name, SimulationConfig(seed=seed), out_dir=out_dir)
        return {p.name: p.read_bytes() for p in report.artifacts}

    def test_identical_outputs_per_seed(self):
        for name in get_scenario_names():
            with self.subTest(scenario=name):
                with tempfile.TemporaryDirectory() as a, tempfile.TemporaryDirectory() as b:
                    first = self._artifacts(name, 7, a)
                    second = self._artifacts(name, 7, b)
                    self.assertIn(f"{name}.log", first)
                    self.assertEqual(first, second)

    def test_seed_changes_finger(self):
        one = run_scenario("quarter_capture", SimulationConfig(seed=1))
        two = run_scenario("quarter_capture", SimulationConfig(seed=2))
        self.assertNotEqual(one.image.pixels, two.image.pixels)

    def test_written_image_matches_finger(self):
        with tempfile.TemporaryDirectory() as out:
            report = run_scenario("cots_capture", SimulationConfig(seed=11), out_dir=out)
            image = load_pgm(Path(out) / "cots_capture.pgm")
            self.assertEqual(image.pixels, generate_fingerprint(report.details["finger_seed"]).pixels)
            self.assertTrue((Path(out) / "cots_capture.log").read_text().startswith("t=0 "))

    def test_cheap_scenarios_across_seeds(self):
        for seed in range(1, 101):
            with self.subTest(seed=seed):
                self.assertTrue(run_scenario("dfu_hardened", SimulationConfig(seed=seed)).passed)

    def test_captured_image_matches_finger_across_seeds(self):
        fingers = set()
        for seed in range(1, 101):
            with self.subTest(seed=seed):
                report = run_scenario("quarter_capture", SimulationConfig(seed=seed))
                self.assertIsNotNone(report.image, report.checks)
                finger = report.details["finger_seed"]
                self.assertEqual(report.image.pixels, generate_fingerprint(finger, Resolution.QUARTER).pixels)
                self.assertEqual(report.stats.checksum_failures, 0)
                fingers.add(finger)
        self.assertEqual(len(fingers), 100)


if __name__ == '__main__':
    unittest.main()
