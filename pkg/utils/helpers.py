"""
Console and hex helpers for the droplock command line.
"""

import logging
from typing import Optional

logger = logging.getLogger(__name__)


def print_section(title: str, width: int = 60) -> None:
    """
    Print a formatted section header.

    Args:
        title: Section title
        width: Width of the separator line
    """
    print("\n" + "=" * width)
    print(f"  {title}")
    print("=" * width)


def print_error(message: str) -> None:
    """
    Print formatted error message.

    Args:
        message: Error message to display
    """
    print(f"✗ ERROR: {message}")


def print_success(message: str) -> None:
    """
    Print formatted success message.

    Args:
        message: Success message to display
    """
    print(f"✓ {message}")


def print_report_summary(report) -> None:
    """
    Print the outcome of a scenario run.

    Args:
        report: ScenarioReport to summarize
    """
    print_section(f"Scenario: {report.name}")
    for name, ok in report.checks.items():
        print(f"{'✓' if ok else '✗'} {name}")
    if report.stats is not None:
        stats = report.stats
        print("\nCapture:")
        print(f"   Bytes received: {stats.bytes_received}")
        print(f"   Upload duration: {stats.duration:.3f} s")
        print(f"   Effective rate: {stats.effective_kbps:.2f} kbps")
        print(f"   Overflow events: {stats.overflow_events}")
        print(f"   Checksum failures: {stats.checksum_failures}")
    for key, value in sorted(report.details.items()):
        print(f"   {key}: {value}")
    if report.artifacts:
        print("\nArtifacts:")
        for path in report.artifacts:
            print(f"   {path}")
    print()
    if report.passed:
        print_success(f"{report.name} passed")
    else:
        failed = [name for name, ok in report.checks.items() if not ok]
        print_error(f"{report.name} failed: {', '.join(failed) or 'no checks ran'}")


def parse_hex(text: str) -> bytes:
    """
    Parse a hex string, tolerating spaces, colons and a 0x prefix.

    Raises:
        ValueError: If the text is not valid hex
    """
    cleaned = text.strip()
    if cleaned.lower().startswith("0x"):
        cleaned = cleaned[2:]
    cleaned = cleaned.replace(" ", "").replace(":", "")
    try:
        return bytes.fromhex(cleaned)
    except ValueError:
        raise ValueError(f"not a hex string: '{text}'")


def format_hex(data: bytes, group: Optional[int] = None) -> str:
    """Lowercase hex, optionally split into space-separated groups of bytes."""
    if not group:
        return data.hex()
    return " ".join(data[i:i + group].hex() for i in range(0, len(data), group))
