"""
Command-line entry point for the droplock simulator.

Subcommands:
- simulate <scenario>: run one attack or mitigation scenario
- proto encode|decode: convert between frame lines and wire hex
- dfu pack|verify|tamper: build, check and modify update packages
- image gen: render a synthetic fingerprint to PGM

Exit codes: 0 success/accepted, 1 failed/rejected, 2 usage or malformed input.
"""

import argparse
import logging
import sys
from pathlib import Path
from typing import List, Optional

from config import (
    DEFAULT_OUT_DIR,
    DEFAULT_SEED,
    SENSOR_POLICIES,
    SimulationConfig,
    get_scenario_names,
)
from modules import (
    DfuPackage,
    Resolution,
    StreamParser,
    TrustMode,
    TrustPolicy,
    build_package,
    encode_frame,
    generate_fingerprint,
    run_scenario,
    save_pgm,
    tamper_package,
    verify_package,
)
from modules.dfu_tool import ProtectionKind, load_private_key, load_public_key
from modules.errors import ArtifactError, DroplockError
from modules.fpr_protocol import format_frame, parse_frame_line
from utils import format_hex, parse_hex, print_error, print_report_summary, print_success

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_FAILED = 1
EXIT_USAGE = 2


def configure_logging(verbose: bool = False) -> None:
    """Route log records to stderr; DEBUG with --verbose."""
    logging.basicConfig(
        level=logging.DEBUG if verbose else logging.WARNING,
        format='%(asctime)s - %(name)s - %(levelname)s - %(message)s',
        stream=sys.stderr,
        force=True,
    )


def cmd_simulate(args: argparse.Namespace) -> int:
    config = SimulationConfig().with_overrides(
        seed=args.seed,
        ble_interval_us=args.ble_interval_us,
        ble_notifications=args.ble_notifications,
        uart_baud=args.uart_baud,
        ring_capacity=args.ring_capacity,
        sensor_policy=args.sensor_policy,
        downshift=False if args.no_downshift else None,
        finger_at_s=args.finger_at,
        poc_cycles=args.poc_cycles,
    )
    report = run_scenario(args.scenario, config, out_dir=args.out)
    print_report_summary(report)
    return EXIT_OK if report.passed else EXIT_FAILED


def cmd_proto_decode(args: argparse.Namespace) -> int:
    """Hex dump on stdin, one decoded frame per line on stdout."""
    text = args.input.read()
    data = parse_hex("".join(text.split()))
    parser = StreamParser()
    frames = parser.push(data)
    for frame in frames:
        print(format_frame(frame))
    if parser.checksum_failures:
        logger.warning(f"{parser.checksum_failures} frame(s) failed the checksum")
    if parser.discarded_bytes:
        logger.warning(f"Skipped {parser.discarded_bytes} byte(s) while resynchronizing")
    if data and not frames:
        print_error("no valid frames in input")
        return EXIT_FAILED
    return EXIT_OK


def cmd_proto_encode(args: argparse.Namespace) -> int:
    """Frame lines on stdin, one hex-encoded frame per line on stdout."""
    for line in args.input:
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        print(format_hex(encode_frame(parse_frame_line(line))))
    return EXIT_OK


def _read_file(path: str) -> bytes:
    try:
        return Path(path).read_bytes()
    except OSError as e:
        raise ArtifactError(path, e.strerror or str(e))


def cmd_dfu_pack(args: argparse.Namespace) -> int:
    firmware = _read_file(args.fw)
    if args.sign:
        pkg = build_package(firmware, ProtectionKind.SIGNED, load_private_key(args.sign), args.name, args.version)
    else:
        pkg = build_package(firmware, name=args.name, version=args.version)
    pkg.save(args.output)
    print_success(f"Packed {len(firmware)} bytes ({'signed' if pkg.is_signed else 'legacy CRC-16'}) into {args.output}")
    return EXIT_OK


def cmd_dfu_verify(args: argparse.Namespace) -> int:
    pkg = DfuPackage.load(args.pkg)
    mode = TrustMode.REQUIRE_SIGNATURE if args.require_signature else TrustMode.ACCEPT_LEGACY
    policy = TrustPolicy.with_keys(mode, [load_public_key(path) for path in args.trust])
    report = verify_package(pkg, policy)
    if report.accepted:
        print_success(f"{args.pkg} accepted ({mode.value})")
        return EXIT_OK
    print(f"✗ {args.pkg} rejected ({mode.value}): {', '.join(report.reasons)}")
    return EXIT_FAILED


def cmd_dfu_tamper(args: argparse.Namespace) -> int:
    pkg = DfuPackage.load(args.pkg)
    patch = parse_hex(args.bytes)
    tampered = tamper_package(pkg, args.offset, patch, fixup_crc=args.fixup_crc)
    output = args.output or args.pkg
    tampered.save(output)
    note = " with CRC fix-up" if args.fixup_crc and not pkg.is_signed else ""
    print_success(f"Patched {len(patch)} byte(s) at offset {args.offset}{note} -> {output}")
    return EXIT_OK


def cmd_image_gen(args: argparse.Namespace) -> int:
    resolution = Resolution[args.resolution.upper()]
    image = generate_fingerprint(args.seed, resolution)
    save_pgm(image, args.output)
    print_success(f"Wrote {image.width}x{image.height} fingerprint (seed {args.seed}) to {args.output}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("-v", "--verbose", action="store_true", help="debug logging on stderr")

    parser = argparse.ArgumentParser(
        prog="droplock",
        description="Discrete-event simulator of a BLE fingerprint-harvesting attack chain",
    )
    commands = parser.add_subparsers(dest="command", required=True)

    sim = commands.add_parser("simulate", parents=[common], help="run a scenario")
    sim.add_argument("scenario", help=f"one of: {', '.join(get_scenario_names())}")
    sim.add_argument("--seed", type=int, default=DEFAULT_SEED)
    sim.add_argument("--out", default=DEFAULT_OUT_DIR, help="directory for logs and images")
    sim.add_argument("--ble-interval-us", type=int)
    sim.add_argument("--ble-notifications", type=int)
    sim.add_argument("--uart-baud", type=int)
    sim.add_argument("--ring-capacity", type=int)
    sim.add_argument("--sensor-policy", choices=SENSOR_POLICIES)
    sim.add_argument("--no-downshift", action="store_true", help="keep the sensor at its power-on baud rate")
    sim.add_argument("--finger-at", type=float, help="seconds after connect when the finger lands")
    sim.add_argument("--poc-cycles", type=int)
    sim.set_defaults(handler=cmd_simulate)

    proto = commands.add_parser("proto", help="sensor protocol codec")
    proto_cmds = proto.add_subparsers(dest="proto_command", required=True)
    for name, handler in (("decode", cmd_proto_decode), ("encode", cmd_proto_encode)):
        sub = proto_cmds.add_parser(name, parents=[common])
        sub.set_defaults(handler=handler, input=sys.stdin)

    dfu = commands.add_parser("dfu", help="firmware update packages")
    dfu_cmds = dfu.add_subparsers(dest="dfu_command", required=True)

    pack = dfu_cmds.add_parser("pack", parents=[common])
    pack.add_argument("--fw", required=True, help="raw firmware image")
    pack.add_argument("--sign", help="Ed25519 private key (PEM); legacy CRC-16 if omitted")
    pack.add_argument("-o", "--output", required=True)
    pack.add_argument("--name", default="")
    pack.add_argument("--version", default="")
    pack.set_defaults(handler=cmd_dfu_pack)

    verify = dfu_cmds.add_parser("verify", parents=[common])
    verify.add_argument("--pkg", required=True)
    verify.add_argument("--require-signature", action="store_true")
    verify.add_argument("--trust", action="append", default=[], help="trusted public key (PEM), repeatable")
    verify.set_defaults(handler=cmd_dfu_verify)

    tamper = dfu_cmds.add_parser("tamper", parents=[common])
    tamper.add_argument("--pkg", required=True)
    tamper.add_argument("--offset", type=lambda v: int(v, 0), required=True)
    tamper.add_argument("--bytes", required=True, help="hex patch")
    tamper.add_argument("--fixup-crc", action="store_true")
    tamper.add_argument("-o", "--output", help="write here instead of in place")
    tamper.set_defaults(handler=cmd_dfu_tamper)

    image = commands.add_parser("image", help="synthetic fingerprints")
    image_cmds = image.add_subparsers(dest="image_command", required=True)
    gen = image_cmds.add_parser("gen", parents=[common])
    gen.add_argument("--seed", type=int, default=DEFAULT_SEED)
    gen.add_argument("--resolution", choices=["full", "quarter"], default="full")
    gen.add_argument("-o", "--output", required=True)
    gen.set_defaults(handler=cmd_image_gen)

    return parser


def main(argv: Optional[List[str]] = None) -> int:
    """
    Parse arguments and dispatch.

    Args:
        argv: Arguments without the program name; sys.argv[1:] if None

    Returns:
        int: Process exit code
    """
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return EXIT_OK if e.code in (0, None) else EXIT_USAGE
    configure_logging(args.verbose)

    try:
        return args.handler(args)
    except KeyboardInterrupt:
        print("\n\nInterrupted by user")
        return EXIT_FAILED
    except (ValueError, ArtifactError) as e:
        # malformed input: bad overrides, unknown scenario, unparsable package or hex
        print_error(str(e))
        logger.debug("Rejected input", exc_info=True)
        return EXIT_USAGE
    except DroplockError as e:
        print_error(str(e))
        logger.debug("Command failed", exc_info=True)
        return EXIT_FAILED
    except Exception as e:
        print_error(f"Fatal error: {e}")
        logger.exception("Fatal error occurred")
        return EXIT_FAILED


if __name__ == "__main__":
    sys.exit(main())
