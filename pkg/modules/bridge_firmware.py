"""
Droplock bridge firmware: a transparent UART <-> BLE bridge for the lock's
fingerprint chip.

Sensor output is buffered in a ring while the packet handler follows the
response headers, then drained toward the host in notifications of at most
20 bytes as fast as the BLE connection allows.
"""

import logging
from collections import deque
from dataclasses import dataclass
from enum import Enum
from typing import Callable, Deque, Optional

from config import ADV_NAME, BLE_PAYLOAD_CAP, BRIDGE_IDLE_FLUSH_US, DOWNSHIFT_BAUD, RING_CAPACITY, WAKE_WINDOW_S
from .errors import LinkError, RingBufferOverflow
from .fpr_protocol import (
    HEADER_SIZE,
    CommandWord,
    FrameKind,
    ResultCode,
    StreamParser,
    command_name,
    encode_frame,
    expected_frame_length,
)
from .sensor_sim import set_baudrate_command
from .sim_core import SimComponent, Simulator, VirtualTime, seconds
from .transport import BleSession, UartLink

logger = logging.getLogger(__name__)


class RingBuffer:
    """Fixed-capacity byte FIFO. Bytes that do not fit are dropped."""

    def __init__(self, capacity: int = RING_CAPACITY):
        if capacity < 1:
            raise ValueError(f"Ring capacity must be positive, got {capacity}")
        self.capacity = capacity
        self.storage = bytearray(capacity)
        self.head = 0
        self.tail = 0
        self.occupancy = 0
        self.high_watermark = 0

    def free(self) -> int:
        return self.capacity - self.occupancy

    def push(self, data: bytes) -> int:
        """
        Append bytes at the head.

        Args:
            data: Bytes to store

        Returns:
            int: Number of bytes stored

        Raises:
            RingBufferOverflow: If some bytes did not fit; the ones that fit are kept
        """
        accepted = min(len(data), self.free())
        for value in data[:accepted]:
            self.storage[self.head] = value
            self.head = (self.head + 1) % self.capacity
        self.occupancy += accepted
        self.high_watermark = max(self.high_watermark, self.occupancy)
        dropped = len(data) - accepted
        if dropped:
            raise RingBufferOverflow(dropped, self.capacity)
        return accepted

    def pop(self, count: int) -> bytes:
        """Remove and return up to count bytes from the tail."""
        count = min(count, self.occupancy)
        out = bytearray(count)
        for i in range(count):
            out[i] = self.storage[self.tail]
            self.tail = (self.tail + 1) % self.capacity
        self.occupancy -= count
        return bytes(out)

    def clear(self) -> None:
        self.head = self.tail = self.occupancy = 0


class HandlerState(Enum):
    SEEK_HEADER = "SeekHeader"
    STREAMING_BODY = "StreamingBody"


class FprPacketHandler:
    """Follows frame boundaries in the sensor's output stream."""

    def __init__(self, on_header: Optional[Callable[[FrameKind, int, int], None]] = None):
        """
        Initialize the handler.

        Args:
            on_header: Called with (kind, cmd, frame size) for each header seen
        """
        self.state = HandlerState.SEEK_HEADER
        self.remaining = 0
        self.header = bytearray()
        self.on_header = on_header
        self.frames_seen = 0
        self.resync_bytes = 0

    @property
    def at_boundary(self) -> bool:
        """True when every byte observed so far belongs to a finished frame."""
        return self.state is HandlerState.SEEK_HEADER and not self.header

    def observe(self, data: bytes) -> None:
        for value in data:
            if self.state is HandlerState.STREAMING_BODY:
                self.remaining -= 1
                if self.remaining == 0:
                    self.state = HandlerState.SEEK_HEADER
                continue
            self.header.append(value)
            self._scan_header()

    def _scan_header(self) -> None:
        while self.header:
            if len(self.header) >= 2 and FrameKind.from_prefix(self.header[0:2]) is None:
                self._skip()
                continue
            if len(self.header) == 1 and self.header[0] not in (0xAA, 0x55, 0xA5, 0x5A):
                self._skip()
                continue
            if len(self.header) < HEADER_SIZE:
                return
            total = expected_frame_length(bytes(self.header))
            if total is None:
                self._skip()
                continue
            kind = FrameKind.from_prefix(self.header[0:2])
            cmd = int.from_bytes(self.header[4:6], "little")
            self.frames_seen += 1
            self.remaining = total - HEADER_SIZE
            self.state = HandlerState.STREAMING_BODY
            self.header.clear()
            if self.on_header is not None:
                self.on_header(kind, cmd, total)
            return

    def _skip(self) -> None:
        del self.header[:1]
        self.resync_bytes += 1

    def reset(self) -> None:
        self.state = HandlerState.SEEK_HEADER
        self.remaining = 0
        self.header.clear()


class PowerState(Enum):
    SLEEPING = "Sleeping"
    ADVERTISING = "Advertising"
    CONNECTED = "Connected"


@dataclass(frozen=True)
class Advertisement:
    name: str
    address: str


class BridgeFirmware(SimComponent):
    """The droplock firmware running on the lock's BLE chip."""

    def __init__(
        self,
        sim: Simulator,
        uart: UartLink,
        ble: BleSession,
        endpoint: str = "bridge",
        ring_capacity: int = RING_CAPACITY,
        downshift: bool = True,
        downshift_baud: int = DOWNSHIFT_BAUD,
        wake_window_us: VirtualTime = seconds(WAKE_WINDOW_S),
        adv_name: str = ADV_NAME,
    ):
        """
        Initialize the bridge.

        Args:
            sim: Simulator owning this component
            uart: Link to the fingerprint sensor
            ble: BLE session toward the host
            endpoint: Endpoint name on the UART and component id
            ring_capacity: Ring buffer size in bytes
            downshift: Send SET_BAUDRATE on connect
            downshift_baud: Rate requested by the downshift
            wake_window_us: Advertising time after a button press
            adv_name: Advertised device name
        """
        super().__init__(sim, endpoint)
        self.uart = uart
        self.ble = ble
        self.endpoint = endpoint
        self.downshift = downshift
        self.downshift_baud = downshift_baud
        self.wake_window_us = wake_window_us
        self.adv_name = adv_name
        self.power = PowerState.SLEEPING
        self.wake_deadline: Optional[VirtualTime] = None
        self.ring = RingBuffer(ring_capacity)
        self.handler = FprPacketHandler(on_header=self._header_seen)
        self.awaiting_ack = False
        self.host_queue: Deque[bytes] = deque()
        self.last_uart_at: VirtualTime = 0
        self.overflow_events = 0
        self.dropped_bytes = 0
        self.fragments_sent = 0
        self.bytes_to_host = 0
        self.bytes_to_sensor = 0
        self._in_overflow = False
        self._sleep_event: Optional[int] = None
        self._idle_check_pending = False
        self._ack_parser = StreamParser()
        uart.attach(endpoint, self.on_uart_data)
        ble.bind(peripheral=self.on_ble_data)
        ble.on_tx_ready(self.pump)
        ble.on_disconnect(self._ble_lost)

    def advertisement(self) -> Optional[Advertisement]:
        """What a scanning host sees; None while not advertising."""
        if self.power is not PowerState.ADVERTISING:
            return None
        return Advertisement(self.adv_name, self.endpoint)

    def wake(self) -> None:
        """Button press: advertise for the wake window."""
        if self.power is not PowerState.SLEEPING:
            self.record("WAKE_IGNORED", f"power={self.power.value}")
            logger.info(f"Wake ignored; bridge is {self.power.value}")
            return
        self.power = PowerState.ADVERTISING
        self.wake_deadline = self.now() + self.wake_window_us
        self._sleep_event = self.schedule_at(self.wake_deadline, "sleep")
        self.record("ADVERTISING", f"name=\"{self.adv_name}\" until={self.wake_deadline}")
        logger.info(f"Advertising as '{self.adv_name}' until t={self.wake_deadline}")

    def _on_wake(self, _payload) -> None:
        self.wake()

    def _on_sleep(self, _payload) -> None:
        if self.power is PowerState.ADVERTISING:
            self.power = PowerState.SLEEPING
            self.wake_deadline = None
            self.record("SLEEP", "no connection")
            logger.info("Wake window expired without a connection")

    def on_ble_connect(self) -> None:
        """
        A central connected; downshift the sensor before forwarding host traffic.

        Raises:
            LinkError: If the bridge is not advertising
        """
        if self.power is not PowerState.ADVERTISING:
            raise LinkError(f"cannot connect while {self.power.value}")
        if self._sleep_event is not None:
            self.sim.cancel(self._sleep_event)
            self._sleep_event = None
        self.power = PowerState.CONNECTED
        self.wake_deadline = None
        self.record("CONNECTED")
        if self.downshift:
            self.awaiting_ack = True
            self.uart.send(self.endpoint, encode_frame(set_baudrate_command(self.downshift_baud)))
            self.record("DOWNSHIFT", f"baud={self.downshift_baud}")
            logger.info(f"Requested sensor downshift to {self.downshift_baud} bps")

    def _ble_lost(self) -> None:
        if self.power is PowerState.CONNECTED:
            self.power = PowerState.SLEEPING
            self.ring.clear()
            self.host_queue.clear()
            self.handler.reset()
            self._ack_parser.reset()
            self.awaiting_ack = False
            self._in_overflow = False
            self.record("SLEEP", "disconnected")

    def on_ble_data(self, chunk: bytes) -> None:
        """Forward a host write verbatim to the sensor."""
        if not chunk:
            return
        if self.power is not PowerState.CONNECTED:
            self.record("BLE_DROPPED", f"bytes={len(chunk)} power={self.power.value}")
            logger.warning(f"Dropped {len(chunk)} BLE bytes while {self.power.value}")
            return
        if self.awaiting_ack:
            self.host_queue.append(bytes(chunk))
            return
        self.bytes_to_sensor += len(chunk)
        self.uart.send(self.endpoint, chunk)

    def on_uart_data(self, data: bytes) -> None:
        """Buffer sensor output and drain what the radio can take."""
        if self.power is not PowerState.CONNECTED:
            return
        if self.awaiting_ack:
            self._consume_ack(data)
            return
        self.last_uart_at = self.now()
        try:
            accepted = self.ring.push(data)
            self._in_overflow = False
        except RingBufferOverflow as e:
            accepted = len(data) - e.dropped
            self.dropped_bytes += e.dropped
            if not self._in_overflow:
                self._in_overflow = True
                self.overflow_events += 1
                self.record("OVERFLOW", f"occupancy={self.ring.occupancy} capacity={self.ring.capacity}")
                logger.warning(f"Ring buffer overflow at t={self.now()}; dropping sensor bytes")
        self.handler.observe(data[:accepted])
        self.pump()
        self._arm_idle_check()

    def _consume_ack(self, data: bytes) -> None:
        for frame in self._ack_parser.push(data):
            if frame.kind is FrameKind.COMMAND_RESPONSE and frame.cmd == CommandWord.SET_BAUDRATE:
                self.awaiting_ack = False
                result = frame.result
                if result == ResultCode.SUCCESS:
                    self.record("DOWNSHIFT_ACK", f"baud={self.downshift_baud}")
                else:
                    self.record("DOWNSHIFT_FAILED", f"result=0x{result:04X}")
                    logger.error(f"Sensor rejected downshift with result 0x{result:04X}")
                self._release_host_queue()
                return
            self.record("UNEXPECTED_FRAME", f"cmd={command_name(frame.cmd)} while awaiting downshift")

    def _release_host_queue(self) -> None:
        while self.host_queue:
            chunk = self.host_queue.popleft()
            self.bytes_to_sensor += len(chunk)
            self.uart.send(self.endpoint, chunk)

    def _header_seen(self, kind: FrameKind, cmd: int, total: int) -> None:
        self.record("HEADER", f"kind={kind.label} cmd={command_name(cmd)} bytes={total}")

    def uart_idle(self) -> bool:
        return self.now() - self.last_uart_at >= BRIDGE_IDLE_FLUSH_US

    def pump(self) -> None:
        """Hand ring contents to the radio while it has free transmit buffers."""
        if self.power is not PowerState.CONNECTED or not self.ble.connected:
            return
        while self.ring.occupancy and self.ble.tx_space() > 0:
            if self.ring.occupancy < BLE_PAYLOAD_CAP and not (self.handler.at_boundary or self.uart_idle()):
                break
            chunk = self.ring.pop(BLE_PAYLOAD_CAP)
            self.ble.notify(chunk)
            self.fragments_sent += 1
            self.bytes_to_host += len(chunk)

    def _arm_idle_check(self) -> None:
        if not self._idle_check_pending:
            self._idle_check_pending = True
            self.schedule_at(self.last_uart_at + BRIDGE_IDLE_FLUSH_US, "idle_check")

    def _on_idle_check(self, _payload) -> None:
        self._idle_check_pending = False
        if self.uart_idle():
            # anything left over goes out on the radio's next connection event
            self.pump()
        else:
            self._arm_idle_check()
