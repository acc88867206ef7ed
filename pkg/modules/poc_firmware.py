"""
Proof-of-concept harvester: a micro-controller wired straight to the sensor
UART that prompts for a finger, actuates a solenoid, and serves the captured
image from a web page for a limited window.
"""

import logging
from enum import Enum
from typing import Callable, List, Optional

from config import (
    FINGER_POLL_PERIOD_MS,
    POC_FETCH_WINDOW_S,
    POC_IDLE_TIMEOUT_S,
)
from .fpr_protocol import (
    CommandWord,
    Frame,
    FrameKind,
    ResultCode,
    StreamParser,
    command,
    command_name,
    encode_frame,
)
from .sensor_sim import FingerprintImage, Resolution
from .sim_core import SimComponent, Simulator, VirtualTime, millis, seconds
from .transport import UartLink

logger = logging.getLogger(__name__)


class PocState(Enum):
    IDLE = "Idle"
    WAITING = "WaitingForFinger"
    CAPTURING = "Capturing"
    UPLOADING = "Uploading"
    SERVING = "Serving"
    DONE = "Done"


class PocController(SimComponent):
    """State machine of the stand-alone harvesting device."""

    def __init__(
        self,
        sim: Simulator,
        uart: UartLink,
        endpoint: str = "poc",
        idle_timeout_us: VirtualTime = seconds(POC_IDLE_TIMEOUT_S),
        fetch_window_us: VirtualTime = seconds(POC_FETCH_WINDOW_S),
        poll_period_us: VirtualTime = millis(FINGER_POLL_PERIOD_MS),
    ):
        super().__init__(sim, endpoint)
        self.uart = uart
        self.endpoint = endpoint
        self.idle_timeout_us = idle_timeout_us
        self.fetch_window_us = fetch_window_us
        self.poll_period_us = poll_period_us
        self.state = PocState.IDLE
        self.parser = StreamParser()
        self.cycle = 0
        self.cycles_left = 0
        self.cycle_start: VirtualTime = 0
        self.image: Optional[FingerprintImage] = None
        self.image_ready_at: Optional[VirtualTime] = None
        self.upload_started: Optional[VirtualTime] = None
        self.upload_duration_us: Optional[int] = None
        self.fetched: List[FingerprintImage] = []
        self._expected = 0
        self._pixels = bytearray()
        self._idle_event: Optional[int] = None
        self._poll_event: Optional[int] = None
        self._cycle_listeners: List[Callable[[int], None]] = []
        self._ready_listeners: List[Callable[[FingerprintImage], None]] = []
        uart.attach(endpoint, self.receive)

    def on_cycle(self, callback: Callable[[int], None]) -> None:
        """Called with the cycle number whenever a new cycle begins."""
        self._cycle_listeners.append(callback)

    def on_image_ready(self, callback: Callable[[FingerprintImage], None]) -> None:
        """Called when a new image is published on the web page."""
        self._ready_listeners.append(callback)

    def start(self, cycles: int = 1) -> None:
        """Power on and run the prompt/capture/serve sequence."""
        if cycles < 1:
            raise ValueError(f"cycles must be >= 1, got {cycles}")
        self.cycles_left = cycles
        self.record("BOOT", f"cycles={cycles}")
        self._begin_cycle()

    def _begin_cycle(self) -> None:
        self.cycle += 1
        self.cycles_left -= 1
        self.cycle_start = self.now()
        self.state = PocState.WAITING
        self.parser.reset()
        for listener in self._cycle_listeners:
            listener(self.cycle)
        self.record("PROMPT", f"cycle={self.cycle}")
        self._idle_event = self.schedule_in(self.idle_timeout_us, "idle_deadline")
        self._send(command(CommandWord.FINGER_DETECT))

    def _end_cycle(self) -> None:
        if self.cycles_left > 0:
            self._begin_cycle()
        else:
            self.state = PocState.DONE
            self.record("DONE", f"cycles={self.cycle}")

    def _send(self, frame: Frame) -> None:
        self.uart.send(self.endpoint, encode_frame(frame))

    def _on_poll(self, _payload) -> None:
        self._poll_event = None
        if self.state is PocState.WAITING:
            self._send(command(CommandWord.FINGER_DETECT))

    def _on_idle_deadline(self, _payload) -> None:
        self._idle_event = None
        if self.state is not PocState.WAITING:
            return
        if self._poll_event is not None:
            self.sim.cancel(self._poll_event)
            self._poll_event = None
        self.record("ACTUATE", "reason=attention")
        self.record("RESET", f"cycle={self.cycle}")
        logger.info(f"No finger within {self.idle_timeout_us} us; actuated and reset")
        self._end_cycle()

    def receive(self, data: bytes) -> None:
        for frame in self.parser.push(data):
            self._handle(frame)

    def _handle(self, frame: Frame) -> None:
        if frame.kind is FrameKind.DATA_RESPONSE:
            if self.state is PocState.UPLOADING and frame.cmd == CommandWord.UP_IMAGE:
                self._pixels += frame.payload
                if self._expected and len(self._pixels) >= self._expected:
                    self._upload_complete()
            return
        if frame.kind is not FrameKind.COMMAND_RESPONSE:
            return
        cmd, result = frame.cmd, frame.result
        if cmd == CommandWord.FINGER_DETECT and self.state is PocState.WAITING:
            if result == ResultCode.SUCCESS:
                if self._idle_event is not None:
                    self.sim.cancel(self._idle_event)
                    self._idle_event = None
                self.state = PocState.CAPTURING
                self.record("FINGER_DETECTED", f"cycle={self.cycle}")
                self._send(command(CommandWord.GET_IMAGE))
            elif self._poll_event is None:
                # one poll chain even if a stale reply from the previous cycle arrives
                self._poll_event = self.schedule_in(self.poll_period_us, "poll")
        elif cmd == CommandWord.GET_IMAGE and self.state is PocState.CAPTURING:
            if result == ResultCode.SUCCESS:
                self.state = PocState.UPLOADING
                self.upload_started = self.now()
                self._pixels = bytearray()
                self._send(command(CommandWord.UP_IMAGE, bytes([Resolution.FULL.wire_code])))
            else:
                self._capture_failed(cmd, result)
        elif cmd == CommandWord.UP_IMAGE and self.state is PocState.UPLOADING:
            if result == ResultCode.SUCCESS:
                self._expected = frame.total_length
            else:
                self._capture_failed(cmd, result)

    def _capture_failed(self, cmd: int, result: int) -> None:
        self.record("CAPTURE_FAILED", f"cmd={command_name(cmd)} result=0x{result:04X}")
        logger.error(f"{command_name(cmd)} failed with result 0x{result:04X}")
        self.record("RESET", f"cycle={self.cycle}")
        self._end_cycle()

    def _upload_complete(self) -> None:
        self.upload_duration_us = self.now() - self.upload_started
        res = Resolution.FULL
        self.image = FingerprintImage(res.width, res.height, res.dpi, bytes(self._pixels[:self._expected]))
        self.record("UPLOAD_DONE", f"bytes={self._expected} duration_us={self.upload_duration_us}")
        self.record("ACTUATE", "reason=reward")
        self.image_ready_at = self.now()
        self.state = PocState.SERVING
        self.record("IMAGE_READY", f"window_s={self.fetch_window_us // 1_000_000}")
        self.schedule_in(self.fetch_window_us, "window_close")
        for listener in self._ready_listeners:
            listener(self.image)

    def _on_window_close(self, _payload) -> None:
        self.record("WINDOW_CLOSE", f"cycle={self.cycle}")
        self.image = None
        self._end_cycle()

    def fetch(self) -> Optional[FingerprintImage]:
        """A browser asks the web server for the image."""
        if self.state is PocState.SERVING and self.image is not None:
            self.record("FETCH", f"ok bytes={len(self.image.pixels)}")
            self.fetched.append(self.image)
            return self.image
        self.record("FETCH", "missed")
        return None

    def _on_fetch(self, _payload) -> None:
        self.fetch()
