"""
Utility package initialization.
"""

from .helpers import (
    format_hex,
    parse_hex,
    print_error,
    print_report_summary,
    print_section,
    print_success,
)

__all__ = [
    'format_hex',
    'parse_hex',
    'print_error',
    'print_report_summary',
    'print_section',
    'print_success',
]
