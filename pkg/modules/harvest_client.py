"""
Attack-side host: finds the droplock bridge, drives the sensor protocol
through it and reassembles what the sensor uploads.
"""

import logging
from dataclasses import dataclass
from enum import Enum
from pathlib import Path
from typing import Iterable, Optional, Tuple, Union

import numpy as np

from config import (
    ADV_NAME,
    BLE_PAYLOAD_CAP,
    CAPTURE_TIMEOUT_S,
    FINGER_POLL_PERIOD_MS,
    UPLOAD_STALL_TIMEOUT_S,
)
from .errors import ArtifactError, CaptureError, CaptureTimeout, PolicyDenied
from .fpr_protocol import (
    CommandWord,
    Frame,
    FrameKind,
    ResultCode,
    StreamParser,
    command,
    command_name,
    encode_frame,
    split_fragments,
)
from .sensor_sim import FingerprintImage, Resolution, SensorSimulator
from .sim_core import US_PER_S, SimComponent, Simulator, VirtualTime, millis, seconds
from .transport import BleSession

logger = logging.getLogger(__name__)


@dataclass
class CaptureStats:
    """Upload measurements; duration runs from the UP_IMAGE hand-off to the last payload byte."""

    bytes_received: int = 0
    duration: float = 0.0
    overflow_events: int = 0
    checksum_failures: int = 0
    frames_received: int = 0

    @property
    def effective_kbps(self) -> float:
        if self.duration <= 0:
            return 0.0
        return self.bytes_received * 8 / self.duration / 1000


class CapturePhase(Enum):
    IDLE = "Idle"
    POLLING = "Polling"
    CAPTURING = "Capturing"
    UPLOADING = "Uploading"
    DONE = "Done"
    FAILED = "Failed"


class HarvestClient(SimComponent):
    """BLE central that harvests images through a transparent bridge."""

    def __init__(
        self,
        sim: Simulator,
        session: BleSession,
        component_id: str = "host",
        poll_period_us: VirtualTime = millis(FINGER_POLL_PERIOD_MS),
        stall_timeout_us: VirtualTime = seconds(UPLOAD_STALL_TIMEOUT_S),
    ):
        super().__init__(sim, component_id)
        self.session = session
        self.poll_period_us = poll_period_us
        self.stall_timeout_us = stall_timeout_us
        self.parser = StreamParser(on_bad_checksum=self._bad_checksum)
        self.bridge = None
        self.phase = CapturePhase.IDLE
        self.resolution = Resolution.FULL
        self.upload_cmd = CommandWord.UP_IMAGE
        self.expected = 0
        self.payload = bytearray()
        self.upload_started: Optional[VirtualTime] = None
        self.last_rx_at: VirtualTime = 0
        self.stats = CaptureStats()
        self.image: Optional[FingerprintImage] = None
        self.template: Optional[bytes] = None
        self.error: Optional[CaptureError] = None
        self._deadline_event: Optional[int] = None
        session.bind(central=self.receive)

    @property
    def finished(self) -> bool:
        return self.phase in (CapturePhase.DONE, CapturePhase.FAILED)

    def discover(self, devices: Iterable) -> Optional[object]:
        """Return the first device advertising the droplock name."""
        for device in devices:
            adv = device.advertisement()
            if adv is not None and adv.name == ADV_NAME:
                self.record("DISCOVERED", f"name=\"{adv.name}\" address={adv.address}")
                return device
        self.record("SCAN_EMPTY")
        return None

    def connect(self, bridge) -> None:
        """Open the BLE connection to a discovered bridge."""
        self.session.connect()
        bridge.on_ble_connect()
        self.bridge = bridge
        logger.info(f"Connected to {bridge.adv_name}")

    def send_command(self, frame: Frame) -> None:
        """Write one command frame in 20-byte pieces."""
        self.record("TX", f"cmd={command_name(frame.cmd)}")
        for piece in split_fragments(encode_frame(frame), BLE_PAYLOAD_CAP):
            self.session.write(piece)

    def start_capture(self, resolution: Resolution = Resolution.FULL, timeout_us: VirtualTime = seconds(CAPTURE_TIMEOUT_S)) -> None:
        """Begin the finger-detect / capture / upload sequence."""
        self._reset(CommandWord.UP_IMAGE)
        self.resolution = resolution
        self.phase = CapturePhase.POLLING
        self._deadline_event = self.schedule_in(timeout_us, "deadline")
        self.send_command(command(CommandWord.FINGER_DETECT))

    def start_template_fetch(self) -> None:
        """Ask the sensor for the template of the image it holds."""
        self._reset(CommandWord.UP_TEMPLATE)
        self.phase = CapturePhase.UPLOADING
        self._begin_upload(command(CommandWord.UP_TEMPLATE))

    def _reset(self, upload_cmd: int) -> None:
        self.upload_cmd = upload_cmd
        self.expected = 0
        self.payload = bytearray()
        self.upload_started = None
        self.error = None
        self.stats = CaptureStats()
        self.parser.reset()
        self.parser.checksum_failures = 0

    def _begin_upload(self, frame: Frame) -> None:
        self.upload_started = self.now()
        self.last_rx_at = self.now()
        self.record("UPLOAD_START", f"cmd={command_name(frame.cmd)}")
        self.send_command(frame)
        self.schedule_in(self.stall_timeout_us, "stall_check")

    def receive(self, chunk: bytes) -> None:
        self.last_rx_at = self.now()
        for frame in self.parser.push(chunk):
            if not self.finished:
                self._handle(frame)

    def _handle(self, frame: Frame) -> None:
        self.stats.frames_received += 1
        if frame.kind is FrameKind.DATA_RESPONSE:
            if self.phase is CapturePhase.UPLOADING and frame.cmd == self.upload_cmd:
                self.payload += frame.payload
                if self.expected and len(self.payload) >= self.expected:
                    self._upload_complete()
            return
        if frame.kind is not FrameKind.COMMAND_RESPONSE:
            return
        cmd, result = frame.cmd, frame.result
        if cmd == CommandWord.FINGER_DETECT and self.phase is CapturePhase.POLLING:
            if result == ResultCode.SUCCESS:
                self.phase = CapturePhase.CAPTURING
                self.record("FINGER_DETECTED")
                self.send_command(command(CommandWord.GET_IMAGE))
            else:
                self.schedule_in(self.poll_period_us, "poll")
        elif cmd == CommandWord.GET_IMAGE and self.phase is CapturePhase.CAPTURING:
            if result == ResultCode.SUCCESS:
                self.phase = CapturePhase.UPLOADING
                if self._deadline_event is not None:
                    self.sim.cancel(self._deadline_event)
                    self._deadline_event = None
                self._begin_upload(command(CommandWord.UP_IMAGE, bytes([self.resolution.wire_code])))
            elif result in (ResultCode.NO_FINGER, ResultCode.BUSY):
                self.phase = CapturePhase.POLLING
                self.schedule_in(self.poll_period_us, "poll")
            else:
                self._fail(CaptureError(f"GET_IMAGE failed with result 0x{result:04X}"))
        elif cmd == self.upload_cmd and self.phase is CapturePhase.UPLOADING:
            if result == ResultCode.SUCCESS:
                self.expected = frame.total_length
                self.record("UPLOAD_ACCEPTED", f"bytes={self.expected}")
            elif result == ResultCode.UPLOAD_DISABLED:
                self._fail(PolicyDenied(f"{command_name(cmd)} refused by the sensor's upload policy"))
            else:
                self._fail(CaptureError(f"{command_name(cmd)} failed with result 0x{result:04X}"))

    def _on_poll(self, _payload) -> None:
        if self.phase is CapturePhase.POLLING:
            self.send_command(command(CommandWord.FINGER_DETECT))

    def _on_deadline(self, _payload) -> None:
        self._deadline_event = None
        if self.phase in (CapturePhase.POLLING, CapturePhase.CAPTURING):
            self._fail(CaptureTimeout("no finger image before the capture deadline"))

    def _on_stall_check(self, _payload) -> None:
        if self.phase is not CapturePhase.UPLOADING:
            return
        idle = self.now() - self.last_rx_at
        if idle >= self.stall_timeout_us:
            self._fail(CaptureTimeout(f"upload stalled after {len(self.payload)} of {self.expected} bytes"))
        else:
            self.schedule_at(self.last_rx_at + self.stall_timeout_us, "stall_check")

    def _bad_checksum(self, raw: bytes) -> None:
        self.record("CHECKSUM_FAIL", f"bytes={len(raw)}")

    def _finish_stats(self) -> None:
        self.stats.checksum_failures = self.parser.checksum_failures
        self.stats.bytes_received = len(self.payload)
        if self.upload_started is not None:
            end = self.now() if self.phase is CapturePhase.DONE else self.last_rx_at
            self.stats.duration = max(0, end - self.upload_started) / US_PER_S
        if self.bridge is not None:
            self.stats.overflow_events = self.bridge.overflow_events

    def _upload_complete(self) -> None:
        data = bytes(self.payload[:self.expected])
        self.phase = CapturePhase.DONE
        self._finish_stats()
        self.stats.bytes_received = len(data)
        if self.upload_cmd == CommandWord.UP_TEMPLATE:
            self.template = data
        else:
            res = self.resolution
            self.image = FingerprintImage(res.width, res.height, res.dpi, data)
        self.record(
            "UPLOAD_DONE",
            f"bytes={len(data)} duration_us={self.now() - self.upload_started} kbps={self.stats.effective_kbps:.2f}",
        )
        logger.info(f"Received {len(data)} bytes in {self.stats.duration:.2f} s ({self.stats.effective_kbps:.2f} kbps)")

    def _fail(self, error: CaptureError) -> None:
        self.phase = CapturePhase.FAILED
        self._finish_stats()
        error.stats = self.stats
        self.error = error
        self.record("CAPTURE_FAILED", f"error={type(error).__name__} bytes={len(self.payload)}")
        logger.error(f"Capture failed: {error}")


def _run_until_finished(client: HarvestClient) -> None:
    client.sim.run_until(stop=lambda: client.finished)
    if not client.finished:
        client._fail(CaptureTimeout("simulation went quiet before the capture finished"))
    if client.error is not None:
        raise client.error


def capture_image(
    client: HarvestClient,
    sensor: Optional[SensorSimulator] = None,
    finger_seed: Optional[int] = None,
    timeout_s: float = CAPTURE_TIMEOUT_S,
    resolution: Resolution = Resolution.FULL,
    finger_delay_s: float = 0,
) -> Tuple[FingerprintImage, CaptureStats]:
    """
    Capture one image through a connected bridge.

    Args:
        client: Connected host client
        sensor: Sensor to place the finger on; None if already placed
        finger_seed: Seed of the finger presented
        timeout_s: Time allowed before the upload starts
        resolution: FULL or QUARTER
        finger_delay_s: Delay before the finger lands

    Returns:
        tuple: (image, stats)

    Raises:
        CaptureTimeout: No finger in time, or the upload stalled
        PolicyDenied: The sensor refused the upload
    """
    if sensor is not None and finger_seed is not None:
        sensor.sim.schedule_in(seconds(finger_delay_s), sensor.component_id, "present_finger", finger_seed)
    client.start_capture(resolution, seconds(timeout_s))
    _run_until_finished(client)
    return client.image, client.stats


def fetch_template(client: HarvestClient) -> bytes:
    """Upload the template of the last captured image."""
    client.start_template_fetch()
    _run_until_finished(client)
    return client.template


def save_pgm(image: FingerprintImage, path: Union[str, Path]) -> Path:
    """
    Write a binary (P5) PGM.

    Raises:
        ArtifactError: If the file cannot be written
    """
    path = Path(path)
    try:
        with open(path, "wb") as f:
            f.write(b"P5\n")
            f.write(f"{image.width} {image.height}\n".encode("ascii"))
            f.write(b"255\n")
            f.write(image.as_array().tobytes())
    except OSError as e:
        raise ArtifactError(str(path), e.strerror or str(e))
    logger.info(f"Wrote {image.width}x{image.height} image to {path}")
    return path


def load_pgm(path: Union[str, Path]) -> FingerprintImage:
    """Read a P5 PGM written by save_pgm()."""
    path = Path(path)
    try:
        raw = path.read_bytes()
    except OSError as e:
        raise ArtifactError(str(path), e.strerror or str(e))
    parts = raw.split(b"\n", 3)
    if len(parts) != 4 or parts[0] != b"P5" or parts[2] != b"255":
        raise ArtifactError(str(path), "not an 8-bit P5 PGM")
    try:
        width, height = (int(v) for v in parts[1].split())
    except ValueError:
        raise ArtifactError(str(path), "bad PGM dimensions")
    pixels = np.frombuffer(parts[3], dtype=np.uint8)
    if pixels.size != width * height:
        raise ArtifactError(str(path), f"expected {width * height} pixels, found {pixels.size}")
    dpi = Resolution.QUARTER.dpi if (width, height) == Resolution.QUARTER.value else Resolution.FULL.dpi
    return FingerprintImage.from_array(pixels.reshape(height, width), dpi)
