"""
Unit tests for utility functions.
"""

import unittest
from unittest.mock import patch

from config import FULL_IMAGE_BYTES
from modules.harvest_client import CaptureStats
from modules.scenarios import ScenarioReport
from modules.sim_core import SimLog
from utils.helpers import (
    format_hex,
    parse_hex,
    print_error,
    print_report_summary,
    print_section,
    print_success,
)


def _printed(mock_print):
    return "\n".join(" ".join(str(a) for a in call[0]) for call in mock_print.call_args_list)


class TestUtilityFunctions(unittest.TestCase):
    """Test utility helper functions."""

    @patch('builtins.print')
    def test_print_section(self, mock_print):
        """Test print_section function."""
        print_section("Test Section")

        self.assertTrue(mock_print.called)
        self.assertIn("Test Section", _printed(mock_print))
        self.assertIn("=" * 60, _printed(mock_print))

    @patch('builtins.print')
    def test_print_error(self, mock_print):
        """Test print_error function."""
        print_error("Test error message")

        mock_print.assert_called_once_with("✗ ERROR: Test error message")

    @patch('builtins.print')
    def test_print_success(self, mock_print):
        """Test print_success function."""
        print_success("Test success message")

        mock_print.assert_called_once_with("✓ Test success message")

    def test_parse_hex_variants(self):
        """Spaces, colons and a 0x prefix are tolerated."""
        self.assertEqual(parse_hex("deadbeef"), b"\xde\xad\xbe\xef")
        self.assertEqual(parse_hex("0xDEAD"), b"\xde\xad")
        self.assertEqual(parse_hex("de ad:be ef"), b"\xde\xad\xbe\xef")
        self.assertEqual(parse_hex(""), b"")

    def test_parse_hex_invalid(self):
        with self.assertRaises(ValueError):
            parse_hex("xyz")
        with self.assertRaises(ValueError):
            parse_hex("abc")

    def test_format_hex(self):
        self.assertEqual(format_hex(b"\x01\xab"), "01ab")
        self.assertEqual(format_hex(b"\x01\x02\x03", group=2), "0102 03")


class TestReportSummary(unittest.TestCase):
    """Test the scenario summary printer."""

    def _report(self, ok: bool) -> ScenarioReport:
        report = ScenarioReport("cots_capture", SimLog())
        report.check("image size", True)
        report.check("upload duration", ok)
        report.stats = CaptureStats(bytes_received=FULL_IMAGE_BYTES, duration=27.0)
        return report

    @patch('builtins.print')
    def test_passed_summary(self, mock_print):
        print_report_summary(self._report(True))

        out = _printed(mock_print)
        self.assertIn("Scenario: cots_capture", out)
        self.assertIn("Bytes received: 25600", out)
        self.assertIn("✓ cots_capture passed", out)

    @patch('builtins.print')
    def test_failed_summary_names_checks(self, mock_print):
        print_report_summary(self._report(False))

        out = _printed(mock_print)
        self.assertIn("✗ upload duration", out)
        self.assertIn("failed: upload duration", out)


if __name__ == '__main__':
    unittest.main()
