"""
Virtual fingerprint sensor: protocol state machine, synthetic ridge images,
template extraction and upload-policy enforcement.
"""

import logging
import struct
from dataclasses import dataclass
from enum import Enum
from typing import List, Optional

import numpy as np

from config import (
    CAPTURE_DELAY_MS,
    IMAGE_DPI,
    IMAGE_HEIGHT,
    IMAGE_WIDTH,
    TEMPLATE_BYTES,
    UART_BAUD_RATES,
)
from .errors import ProtocolError
from .fpr_protocol import (
    MAX_DATA_PAYLOAD,
    CommandWord,
    Frame,
    FrameKind,
    ResultCode,
    StreamParser,
    command,
    command_name,
    data_response,
    encode_frame,
    response,
)
from .sim_core import SimComponent, Simulator, millis

logger = logging.getLogger(__name__)

TEMPLATE_GRID = 16
TEMPLATE_BLOCK = 10


class Resolution(Enum):
    FULL = (IMAGE_WIDTH, IMAGE_HEIGHT)
    QUARTER = (IMAGE_WIDTH // 2, IMAGE_HEIGHT // 2)

    @property
    def width(self) -> int:
        return self.value[0]

    @property
    def height(self) -> int:
        return self.value[1]

    @property
    def dpi(self) -> int:
        return IMAGE_DPI if self is Resolution.FULL else IMAGE_DPI // 2

    @property
    def wire_code(self) -> int:
        return 0 if self is Resolution.FULL else 1


@dataclass(frozen=True)
class FingerprintImage:
    """8-bit grayscale raster, row-major."""

    width: int
    height: int
    dpi: int
    pixels: bytes

    def __post_init__(self):
        if len(self.pixels) != self.width * self.height:
            raise ValueError(f"{self.width}x{self.height} image needs {self.width * self.height} bytes, got {len(self.pixels)}")

    @property
    def resolution(self) -> Optional[Resolution]:
        for res in Resolution:
            if (self.width, self.height) == res.value:
                return res
        return None

    def as_array(self) -> np.ndarray:
        return np.frombuffer(self.pixels, dtype=np.uint8).reshape(self.height, self.width)

    @classmethod
    def from_array(cls, array: np.ndarray, dpi: int) -> "FingerprintImage":
        height, width = array.shape
        return cls(width=width, height=height, dpi=dpi, pixels=array.astype(np.uint8).tobytes())


class UploadPolicy(Enum):
    ALLOW_IMAGE = "allow_image"
    TEMPLATE_ONLY = "template_only"
    DENY = "deny"

    @property
    def permits_image(self) -> bool:
        return self is UploadPolicy.ALLOW_IMAGE

    @property
    def permits_template(self) -> bool:
        return self is not UploadPolicy.DENY


class SensorMode(Enum):
    IDLE = "Idle"
    FINGER_PRESENT = "FingerPresent"
    IMAGE_CAPTURED = "ImageCaptured"


def _full_raster(seed: int) -> np.ndarray:
    rng = np.random.default_rng(seed)
    y, x = np.mgrid[0:IMAGE_HEIGHT, 0:IMAGE_WIDTH].astype(np.float64)
    cx = IMAGE_WIDTH / 2 + rng.uniform(-12, 12)
    cy = IMAGE_HEIGHT / 2 + rng.uniform(-12, 12)
    dx, dy = x - cx, y - cy
    radius = np.hypot(dx, dy)
    angle = np.arctan2(dy, dx)

    # ~9 px ridge period at 508 dpi
    period = rng.uniform(8.0, 10.0)
    field = np.sin(2 * np.pi * radius / period + rng.integers(1, 3) * angle + rng.uniform(0, 2 * np.pi))
    for _ in range(3):
        theta = rng.uniform(0, np.pi)
        freq = 2 * np.pi / rng.uniform(8.0, 11.0)
        phase = rng.uniform(0, 2 * np.pi)
        weight = rng.uniform(0.2, 0.45)
        field += weight * np.sin(freq * (x * np.cos(theta) + y * np.sin(theta)) + phase)

    # elliptical contact area fading to the white background
    ax, ay = rng.uniform(55, 70), rng.uniform(68, 78)
    contact = np.clip(1.4 - np.hypot(dx / ax, dy / ay), 0.0, 1.0)
    ridges = (field - field.min()) / (field.max() - field.min())
    raster = 255 - contact * ridges * 200
    return np.clip(np.round(raster), 0, 255).astype(np.uint8)


def downsample(image: FingerprintImage) -> FingerprintImage:
    """2x2 block mean of a full-resolution image."""
    if image.resolution is not Resolution.FULL:
        raise ValueError("only full-resolution images can be downsampled")
    blocks = image.as_array().reshape(IMAGE_HEIGHT // 2, 2, IMAGE_WIDTH // 2, 2).astype(np.uint16)
    quarter = blocks.sum(axis=(1, 3)) // 4
    return FingerprintImage.from_array(quarter, Resolution.QUARTER.dpi)


def generate_fingerprint(seed: int, resolution: Resolution = Resolution.FULL) -> FingerprintImage:
    """
    Produce a deterministic synthetic ridge pattern.

    Args:
        seed: Unsigned 64-bit seed
        resolution: FULL (160x160) or QUARTER (80x80)

    Returns:
        FingerprintImage: Same seed and resolution always give identical bytes
    """
    full = FingerprintImage.from_array(_full_raster(seed), IMAGE_DPI)
    return full if resolution is Resolution.FULL else downsample(full)


def extract_template(image: FingerprintImage) -> bytes:
    """
    16x16 grid of 10x10 block means, 2 bytes little-endian per block.

    Raises:
        ValueError: If the image is not full resolution
    """
    if image.resolution is not Resolution.FULL:
        raise ValueError("template extraction needs a full-resolution image")
    blocks = image.as_array().reshape(TEMPLATE_GRID, TEMPLATE_BLOCK, TEMPLATE_GRID, TEMPLATE_BLOCK).astype(np.uint32)
    means = blocks.sum(axis=(1, 3)) // (TEMPLATE_BLOCK * TEMPLATE_BLOCK)
    template = means.astype("<u2").tobytes()
    assert len(template) == TEMPLATE_BYTES
    return template


class SensorSimulator(SimComponent):
    """Fingerprint chip on the far end of the UART."""

    def __init__(
        self,
        sim: Simulator,
        link,
        endpoint: str = "sensor",
        baud: int = 115200,
        policy: UploadPolicy = UploadPolicy.ALLOW_IMAGE,
        capture_delay_us: int = millis(CAPTURE_DELAY_MS),
    ):
        """
        Initialize the sensor.

        Args:
            sim: Simulator owning this component
            link: UartLink the sensor is attached to
            endpoint: Endpoint name on the link
            baud: Informational; the link carries the actual rate
            policy: Upload policy enforced for UP_IMAGE/UP_TEMPLATE
            capture_delay_us: Virtual time between GET_IMAGE and its reply
        """
        super().__init__(sim, endpoint)
        self.link = link
        self.endpoint = endpoint
        self.mode = SensorMode.IDLE
        self.baud = baud
        self.upload_policy = policy
        self.capture_delay_us = capture_delay_us
        self.finger_seed: Optional[int] = None
        self.image_buffer: Optional[FingerprintImage] = None
        self.template: Optional[bytes] = None
        self.capturing = False
        self._pending_baud: Optional[int] = None
        self.image_bytes_sent = 0
        self.parser = StreamParser(on_bad_checksum=self._bad_checksum)
        link.attach(endpoint, self.receive)

    def present_finger(self, seed: int) -> None:
        """A finger arrives on the sensor window."""
        if self.mode is not SensorMode.IDLE:
            self.record("FINGER_IGNORED", f"mode={self.mode.value}")
            logger.info(f"Finger ignored; sensor is {self.mode.value}")
            return
        self.finger_seed = seed
        self.mode = SensorMode.FINGER_PRESENT
        self.record("FINGER_PRESENT", f"seed={seed}")

    def _on_present_finger(self, seed: int) -> None:
        self.present_finger(seed)

    def reset(self) -> None:
        self.mode = SensorMode.IDLE
        self.finger_seed = None
        self.image_buffer = None
        self.template = None
        self.capturing = False
        self.parser.reset()

    def receive(self, data: bytes) -> None:
        for frame in self.parser.push(data):
            self.transmit(self.handle_frame(frame))

    def transmit(self, frames: List[Frame]) -> None:
        for frame in frames:
            if frame.kind is FrameKind.DATA_RESPONSE and frame.cmd == CommandWord.UP_IMAGE:
                self.image_bytes_sent += frame.length
            self.link.send(self.endpoint, encode_frame(frame))
        if self._pending_baud is not None:
            # takes effect once the acknowledgement has left the sensor
            self.link.change_baud_after_pending(self.endpoint, self._pending_baud)
            self._pending_baud = None

    def handle_frame(self, frame: Frame) -> List[Frame]:
        """
        Advance the state machine by one command.

        Args:
            frame: Checksum-valid frame from the UART

        Returns:
            list: Frames to transmit now; delayed replies are scheduled
        """
        if frame.kind is not FrameKind.COMMAND:
            self.record("UNEXPECTED_FRAME", f"kind={frame.kind.label}")
            return []
        cmd = frame.cmd
        self.record("CMD", command_name(cmd))
        if self.capturing:
            return [response(cmd, ResultCode.BUSY)]

        if cmd == CommandWord.TEST_CONNECTION:
            return [response(cmd, ResultCode.SUCCESS)]
        if cmd == CommandWord.FINGER_DETECT:
            found = self.mode is not SensorMode.IDLE
            return [response(cmd, ResultCode.SUCCESS if found else ResultCode.NO_FINGER)]
        if cmd == CommandWord.GET_IMAGE:
            return self._get_image(cmd)
        if cmd == CommandWord.UP_IMAGE:
            return self._up_image(frame)
        if cmd == CommandWord.GEN_TEMPLATE:
            return self._gen_template(cmd)
        if cmd == CommandWord.UP_TEMPLATE:
            return self._up_template(cmd)
        if cmd == CommandWord.SET_BAUDRATE:
            return self._set_baudrate(frame)
        if cmd == CommandWord.ACTUATE:
            self.record("ACTUATE", "actuator pulse")
            return [response(cmd, ResultCode.SUCCESS)]
        return [response(cmd, ResultCode.FAIL)]

    def _get_image(self, cmd: int) -> List[Frame]:
        if self.mode is SensorMode.IDLE:
            return [response(cmd, ResultCode.NO_FINGER)]
        self.capturing = True
        self.schedule_in(self.capture_delay_us, "capture_done")
        return []

    def _on_capture_done(self, _payload) -> None:
        self.capturing = False
        self.image_buffer = generate_fingerprint(self.finger_seed)
        self.template = None
        self.mode = SensorMode.IMAGE_CAPTURED
        self.record("IMAGE_CAPTURED", f"bytes={len(self.image_buffer.pixels)}")
        self.transmit([response(CommandWord.GET_IMAGE, ResultCode.SUCCESS)])

    def _up_image(self, frame: Frame) -> List[Frame]:
        cmd = frame.cmd
        if not self.upload_policy.permits_image:
            self.record("UPLOAD_DISABLED", f"policy={self.upload_policy.value}")
            return [response(cmd, ResultCode.UPLOAD_DISABLED)]
        if self.mode is not SensorMode.IMAGE_CAPTURED:
            return [response(cmd, ResultCode.FAIL)]
        image = self.image_buffer
        if frame.payload[0] == Resolution.QUARTER.wire_code:
            image = downsample(image)
        pixels = image.pixels
        self.record("UPLOAD_IMAGE", f"bytes={len(pixels)} frames={-(-len(pixels) // MAX_DATA_PAYLOAD)}")
        frames = [response(cmd, ResultCode.SUCCESS, total_length=len(pixels))]
        for offset in range(0, len(pixels), MAX_DATA_PAYLOAD):
            frames.append(data_response(cmd, pixels[offset:offset + MAX_DATA_PAYLOAD]))
        return frames

    def _ensure_template(self) -> Optional[bytes]:
        if self.mode is not SensorMode.IMAGE_CAPTURED:
            return None
        if self.template is None:
            self.template = extract_template(self.image_buffer)
        return self.template

    def _gen_template(self, cmd: int) -> List[Frame]:
        template = self._ensure_template()
        if template is None:
            return [response(cmd, ResultCode.FAIL)]
        if not self.upload_policy.permits_template:
            return [response(cmd, ResultCode.SUCCESS)]
        return [response(cmd, ResultCode.SUCCESS, total_length=len(template)), data_response(cmd, template)]

    def _up_template(self, cmd: int) -> List[Frame]:
        if not self.upload_policy.permits_template:
            self.record("UPLOAD_DISABLED", f"policy={self.upload_policy.value}")
            return [response(cmd, ResultCode.UPLOAD_DISABLED)]
        template = self._ensure_template()
        if template is None:
            return [response(cmd, ResultCode.FAIL)]
        return [response(cmd, ResultCode.SUCCESS, total_length=len(template)), data_response(cmd, template)]

    def _set_baudrate(self, frame: Frame) -> List[Frame]:
        baud = struct.unpack_from("<I", frame.payload, 0)[0]
        if baud not in UART_BAUD_RATES:
            return [response(frame.cmd, ResultCode.FAIL)]
        self.baud = baud
        self._pending_baud = baud
        self.record("BAUD_CHANGE", f"baud={baud}")
        return [response(frame.cmd, ResultCode.SUCCESS)]

    def _bad_checksum(self, raw: bytes) -> None:
        self.record("BAD_CHECKSUM", f"bytes={len(raw)}")


def set_baudrate_command(baud: int) -> Frame:
    if baud <= 0:
        raise ProtocolError(f"Invalid baud rate {baud}")
    return command(CommandWord.SET_BAUDRATE, struct.pack("<I", baud))
