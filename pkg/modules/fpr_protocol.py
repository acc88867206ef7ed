"""
Codec for the ID809-style fingerprint sensor protocol.

Wire layout (multi-byte fields little-endian):

    prefix(2) sid(1) did(1) cmd(2) len(2) payload cks(2)

Command and command-response frames always carry a 16-byte zero-padded
payload (26 bytes on the wire). Data frames carry 1..512 payload bytes.
The checksum is the byte sum of sid..payload modulo 65536.
"""

import logging
import struct
from dataclasses import dataclass, field
from enum import Enum, IntEnum
from typing import Callable, List, Optional

from .errors import ProtocolError

logger = logging.getLogger(__name__)

HEADER_SIZE = 8
CHECKSUM_SIZE = 2
COMMAND_PAYLOAD_SIZE = 16
COMMAND_FRAME_SIZE = HEADER_SIZE + COMMAND_PAYLOAD_SIZE + CHECKSUM_SIZE  # 26
MAX_DATA_PAYLOAD = 512

_HEADER = struct.Struct("<BBHH")


class FrameKind(Enum):
    """Frame family, valued by its two prefix bytes as they appear on the wire."""

    COMMAND = b"\xAA\x55"
    COMMAND_RESPONSE = b"\x55\xAA"
    DATA = b"\xA5\x5A"
    DATA_RESPONSE = b"\x5A\xA5"

    @property
    def prefix(self) -> bytes:
        return self.value

    @property
    def is_command(self) -> bool:
        return self in (FrameKind.COMMAND, FrameKind.COMMAND_RESPONSE)

    @property
    def label(self) -> str:
        return "".join(part.capitalize() for part in self.name.split("_"))

    @classmethod
    def from_prefix(cls, prefix: bytes) -> Optional["FrameKind"]:
        return _PREFIXES.get(bytes(prefix))

    @classmethod
    def from_label(cls, label: str) -> "FrameKind":
        for kind in cls:
            if kind.label.lower() == label.lower() or kind.name.lower() == label.lower():
                return kind
        raise ProtocolError(f"Unknown frame kind: {label}")


_PREFIXES = {kind.value: kind for kind in FrameKind}


class CommandWord(IntEnum):
    """Named command codes. Other 16-bit codes are still valid on the wire."""

    TEST_CONNECTION = 0x0001
    SET_BAUDRATE = 0x0002
    GET_IMAGE = 0x0020
    FINGER_DETECT = 0x0021
    UP_IMAGE = 0x0031
    GEN_TEMPLATE = 0x0060
    UP_TEMPLATE = 0x0061
    ACTUATE = 0x00F0


class ResultCode(IntEnum):
    SUCCESS = 0x0000
    FAIL = 0x0001
    NO_FINGER = 0x0002
    TIMEOUT = 0x0003
    UPLOAD_DISABLED = 0x0004
    BAD_CHECKSUM = 0x0005
    BUSY = 0x0006


def command_name(code: int) -> str:
    """Name a command code, falling back to hex for unknown codes."""
    try:
        return CommandWord(code).name
    except ValueError:
        return f"0x{code:04X}"


def parse_command(text: str) -> int:
    """Accept a CommandWord name or a numeric literal."""
    try:
        return CommandWord[text.upper()].value
    except KeyError:
        pass
    try:
        value = int(text, 0)
    except ValueError:
        raise ProtocolError(f"Unknown command: {text}")
    if not 0 <= value <= 0xFFFF:
        raise ProtocolError(f"Command code out of range: {text}")
    return value


@dataclass(frozen=True)
class Frame:
    """
    One protocol packet.

    For command kinds `payload` is normalized to 16 bytes and `length` is the
    number of used bytes. `cks` is the wire checksum when decoded; it does
    not take part in equality and is recomputed on encode.
    """

    kind: FrameKind
    cmd: int
    payload: bytes = b""
    sid: int = 0
    did: int = 0
    length: Optional[int] = None
    cks: Optional[int] = field(default=None, compare=False)

    def __post_init__(self):
        payload = bytes(self.payload)
        length = len(payload) if self.length is None else self.length
        if self.kind.is_command:
            if length > COMMAND_PAYLOAD_SIZE or len(payload) > COMMAND_PAYLOAD_SIZE:
                raise ProtocolError(
                    f"Command payload uses {max(length, len(payload))} bytes; at most {COMMAND_PAYLOAD_SIZE} allowed"
                )
            payload = payload.ljust(COMMAND_PAYLOAD_SIZE, b"\x00")
        else:
            if not 1 <= length <= MAX_DATA_PAYLOAD:
                raise ProtocolError(f"Data frame length {length} outside 1..{MAX_DATA_PAYLOAD}")
            if len(payload) != length:
                raise ProtocolError(f"Data frame length {length} does not match payload size {len(payload)}")
        if not (0 <= self.sid <= 0xFF and 0 <= self.did <= 0xFF):
            raise ProtocolError("sid/did must be single bytes")
        if not 0 <= self.cmd <= 0xFFFF:
            raise ProtocolError(f"Command code out of range: {self.cmd}")
        object.__setattr__(self, "payload", payload)
        object.__setattr__(self, "length", length)

    @property
    def used_payload(self) -> bytes:
        return self.payload[: self.length]

    @property
    def result(self) -> Optional[int]:
        """ResultCode carried by a command response."""
        if self.kind is not FrameKind.COMMAND_RESPONSE:
            return None
        return int.from_bytes(self.payload[0:2], "little")

    @property
    def total_length(self) -> int:
        """Announced upload size carried by a command response (bytes 2-3)."""
        return int.from_bytes(self.payload[2:4], "little")

    @property
    def wire_size(self) -> int:
        return HEADER_SIZE + len(self.payload) + CHECKSUM_SIZE

    def body(self) -> bytes:
        return _HEADER.pack(self.sid, self.did, self.cmd, self.length) + self.payload


def command(cmd: int, params: bytes = b"", sid: int = 0, did: int = 0) -> Frame:
    return Frame(FrameKind.COMMAND, cmd, params, sid=sid, did=did)


def response(cmd: int, result: int, total_length: Optional[int] = None, sid: int = 0, did: int = 0) -> Frame:
    params = struct.pack("<H", result)
    if total_length is not None:
        params += struct.pack("<H", total_length)
    return Frame(FrameKind.COMMAND_RESPONSE, cmd, params, sid=sid, did=did)


def data_response(cmd: int, chunk: bytes, sid: int = 0, did: int = 0) -> Frame:
    return Frame(FrameKind.DATA_RESPONSE, cmd, chunk, sid=sid, did=did)


def checksum(body: bytes) -> int:
    """Arithmetic byte sum modulo 65536 over sid..payload."""
    return sum(body) & 0xFFFF


def encode_frame(frame: Frame) -> bytes:
    """
    Serialize a frame.

    Args:
        frame: Frame to encode; its checksum is recomputed

    Returns:
        bytes: prefix ++ header ++ payload ++ checksum
    """
    body = frame.body()
    return frame.kind.prefix + body + struct.pack("<H", checksum(body))


def expected_frame_length(header: bytes) -> Optional[int]:
    """
    Total on-wire size of the frame whose first 8 bytes are given.

    Returns:
        int: Frame size in bytes, or None when the header cannot start a frame
    """
    if len(header) < HEADER_SIZE:
        raise ProtocolError(f"Header needs {HEADER_SIZE} bytes, got {len(header)}")
    kind = FrameKind.from_prefix(header[0:2])
    if kind is None:
        return None
    length = int.from_bytes(header[6:8], "little")
    if kind.is_command:
        return COMMAND_FRAME_SIZE if length <= COMMAND_PAYLOAD_SIZE else None
    if not 1 <= length <= MAX_DATA_PAYLOAD:
        return None
    return HEADER_SIZE + length + CHECKSUM_SIZE


def split_fragments(data: bytes, size: int = 20) -> List[bytes]:
    return [data[i:i + size] for i in range(0, len(data), size)]


class ParserState(Enum):
    SEEK_PREFIX = "SeekPrefix"
    NEED_HEADER = "NeedHeader"
    NEED_BODY = "NeedBody"


class StreamParser:
    """Incremental frame parser with prefix resynchronisation."""

    def __init__(self, on_bad_checksum: Optional[Callable[[bytes], None]] = None):
        """
        Initialize the parser.

        Args:
            on_bad_checksum: Called with the raw bytes of each discarded frame
        """
        self.buffer = bytearray()
        self.state = ParserState.SEEK_PREFIX
        self.on_bad_checksum = on_bad_checksum
        self.checksum_failures = 0
        self.discarded_bytes = 0
        self.frames_emitted = 0

    def reset(self) -> None:
        self.buffer.clear()
        self.state = ParserState.SEEK_PREFIX

    def push(self, chunk: bytes) -> List[Frame]:
        """Feed bytes and return every complete, checksum-valid frame."""
        self.buffer.extend(chunk)
        frames: List[Frame] = []
        while True:
            if len(self.buffer) < 2:
                self.state = ParserState.SEEK_PREFIX
                break
            if FrameKind.from_prefix(self.buffer[0:2]) is None:
                self._drop(1)
                continue
            if len(self.buffer) < HEADER_SIZE:
                self.state = ParserState.NEED_HEADER
                break
            total = expected_frame_length(self.buffer[:HEADER_SIZE])
            if total is None:
                self._drop(1)
                continue
            if len(self.buffer) < total:
                self.state = ParserState.NEED_BODY
                break
            raw = bytes(self.buffer[:total])
            frame = decode_frame(raw)
            if frame is None:
                self.checksum_failures += 1
                logger.warning(f"BAD_CHECKSUM on {len(raw)}-byte frame; resynchronising")
                if self.on_bad_checksum is not None:
                    self.on_bad_checksum(raw)
                # the whole framed region goes, including anything that looks like a frame inside it
                self._drop(total)
                continue
            del self.buffer[:total]
            self.frames_emitted += 1
            frames.append(frame)
        return frames

    def _drop(self, count: int) -> None:
        del self.buffer[:count]
        self.discarded_bytes += count
        self.state = ParserState.SEEK_PREFIX


def decode_frame(raw: bytes) -> Optional[Frame]:
    """Decode one complete frame; None if its checksum does not match."""
    kind = FrameKind.from_prefix(raw[0:2])
    if kind is None:
        raise ProtocolError(f"Invalid prefix {raw[0:2].hex()}")
    sid, did, cmd, length = _HEADER.unpack_from(raw, 2)
    body = raw[2:-CHECKSUM_SIZE]
    cks = int.from_bytes(raw[-CHECKSUM_SIZE:], "little")
    if checksum(body) != cks:
        return None
    payload = raw[HEADER_SIZE:-CHECKSUM_SIZE]
    return Frame(kind, cmd, payload, sid=sid, did=did, length=length, cks=cks)


def format_frame(frame: Frame) -> str:
    """One-line text form, accepted back by parse_frame_line()."""
    return (
        f"kind={frame.kind.label} sid=0x{frame.sid:02X} did=0x{frame.did:02X} "
        f"cmd={command_name(frame.cmd)} len={frame.length} payload={frame.used_payload.hex()}"
    )


def parse_frame_line(line: str) -> Frame:
    """Parse the key=value form printed by format_frame()."""
    fields = {}
    for token in line.split():
        key, sep, value = token.partition("=")
        if not sep:
            raise ProtocolError(f"Malformed token '{token}'")
        fields[key.lower()] = value
    try:
        kind = FrameKind.from_label(fields["kind"])
        cmd = parse_command(fields["cmd"])
    except KeyError as e:
        raise ProtocolError(f"Missing field {e} in '{line}'")
    try:
        payload = bytes.fromhex(fields.get("payload", ""))
        sid = int(fields.get("sid", "0"), 0)
        did = int(fields.get("did", "0"), 0)
        length = int(fields["len"], 0) if "len" in fields else None
    except ValueError as e:
        raise ProtocolError(f"Malformed frame line '{line}': {e}")
    return Frame(kind, cmd, payload, sid=sid, did=did, length=length)
