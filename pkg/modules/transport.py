"""
Timing models for the two links: a baud-limited UART and a BLE connection
whose notifications are capped at 20 bytes and paced by the connection
interval.
"""

import logging
from collections import deque
from dataclasses import dataclass
from enum import Enum
from typing import Callable, Deque, Dict, List, Optional, Tuple

from config import (
    BLE_INTERVAL_UNIT_US,
    BLE_INTERVAL_US,
    BLE_NOTIFICATIONS_PER_INTERVAL,
    BLE_PAYLOAD_CAP,
    UART_FRAME_BITS,
)
from .errors import LinkError
from .sim_core import US_PER_S, SimComponent, Simulator, VirtualTime

logger = logging.getLogger(__name__)

Receiver = Callable[[bytes], None]


class _UartDirection:
    """Transmit state for one direction of the full-duplex line."""

    def __init__(self, source: str, sink: str):
        self.source = source
        self.sink = sink
        self.pending = bytearray()
        self.active = False
        self.origin: VirtualTime = 0
        self.sent = 0
        self.baud_after: Optional[int] = None
        self.bytes_delivered = 0


class UartLink(SimComponent):
    """Lossless, in-order serial line between two endpoints."""

    def __init__(self, sim: Simulator, endpoints: Tuple[str, str], baud: int, frame_overhead: int = UART_FRAME_BITS, component_id: str = "uart"):
        """
        Initialize the link.

        Args:
            sim: Simulator owning the link
            endpoints: The two endpoint names
            baud: Line rate in bits per second
            frame_overhead: Bits per byte on the wire (10 for 8N1)
            component_id: Component id for events and log entries
        """
        super().__init__(sim, component_id)
        if baud <= 0:
            raise LinkError(f"Invalid baud rate {baud}")
        a, b = endpoints
        self.endpoints = endpoints
        self.baud = baud
        self.frame_overhead = frame_overhead
        self._receivers: Dict[str, Receiver] = {}
        self._taps: List[Callable[[str, bytes], None]] = []
        self._directions = {a: _UartDirection(a, b), b: _UartDirection(b, a)}

    def attach(self, endpoint: str, receiver: Receiver) -> None:
        if endpoint not in self._directions:
            raise LinkError(f"'{endpoint}' is not an endpoint of {self.component_id}")
        self._receivers[endpoint] = receiver

    def add_tap(self, tap: Callable[[str, bytes], None]) -> None:
        """Observe every delivered byte as (source endpoint, data)."""
        self._taps.append(tap)

    def byte_time_us(self, k: int = 1) -> int:
        """Microseconds to clock out k bytes at the current rate."""
        return (k * self.frame_overhead * US_PER_S + self.baud // 2) // self.baud

    def send(self, source: str, data: bytes) -> None:
        """
        Queue bytes for transmission from one endpoint to its peer.

        Raises:
            LinkError: On empty data or unknown endpoint
        """
        if not data:
            raise LinkError("uart_send needs at least one byte")
        direction = self._directions.get(source)
        if direction is None:
            raise LinkError(f"'{source}' is not an endpoint of {self.component_id}")
        direction.pending.extend(data)
        if not direction.active:
            direction.active = True
            direction.origin = self.now()
            direction.sent = 0
            self._schedule_next(direction)

    def is_idle(self, source: str) -> bool:
        return not self._directions[source].active

    def change_baud_after_pending(self, source: str, baud: int) -> None:
        """Switch the line rate once every byte queued by source has been delivered."""
        direction = self._directions[source]
        if direction.active:
            direction.baud_after = baud
        else:
            self._apply_baud(baud)

    def _apply_baud(self, baud: int) -> None:
        if baud <= 0:
            raise LinkError(f"Invalid baud rate {baud}")
        old = self.baud
        self.baud = baud
        for direction in self._directions.values():
            if direction.active:
                # re-anchor at the last delivered byte so the new rate applies from here
                direction.origin = self.now()
                direction.sent = 0
        self.record("BAUD", f"{old}->{baud}")
        logger.info(f"UART rate changed from {old} to {baud} bps")

    def _schedule_next(self, direction: _UartDirection) -> None:
        at = direction.origin + self.byte_time_us(direction.sent + 1)
        self.schedule_at(at, "byte", direction.source)

    def _on_byte(self, source: str) -> None:
        direction = self._directions[source]
        value = bytes(direction.pending[:1])
        del direction.pending[:1]
        direction.sent += 1
        direction.bytes_delivered += 1
        if not direction.pending:
            direction.active = False
            if direction.baud_after is not None:
                baud, direction.baud_after = direction.baud_after, None
                self._apply_baud(baud)
        else:
            self._schedule_next(direction)
        for tap in self._taps:
            tap(source, value)
        receiver = self._receivers.get(direction.sink)
        if receiver is not None:
            receiver(value)


@dataclass(frozen=True)
class BleConnectionParams:
    """Connection interval and per-event notification budget."""

    interval_us: int = BLE_INTERVAL_US
    notifications_per_interval: int = BLE_NOTIFICATIONS_PER_INTERVAL
    payload_cap: int = BLE_PAYLOAD_CAP

    def __post_init__(self):
        if self.interval_us <= 0 or self.interval_us % BLE_INTERVAL_UNIT_US:
            raise LinkError(f"interval {self.interval_us} us is not a positive multiple of {BLE_INTERVAL_UNIT_US} us")
        if self.notifications_per_interval < 1:
            raise LinkError(f"notifications_per_interval must be positive, got {self.notifications_per_interval}")
        if self.payload_cap != BLE_PAYLOAD_CAP:
            raise LinkError(f"payload cap is fixed at {BLE_PAYLOAD_CAP} bytes")


def effective_rate(params: BleConnectionParams) -> float:
    """Payload bytes per second the connection can carry in one direction."""
    return params.payload_cap * params.notifications_per_interval * US_PER_S / params.interval_us


class BleState(Enum):
    DISCONNECTED = "Disconnected"
    CONNECTED = "Connected"


class BleSession(SimComponent):
    """
    One BLE connection between a central (host) and a peripheral (bridge).

    Notifications flow peripheral -> central, writes central -> peripheral.
    Both depart only at connection events, at most
    notifications_per_interval payloads per direction per event.
    """

    def __init__(self, sim: Simulator, params: Optional[BleConnectionParams] = None, component_id: str = "ble"):
        super().__init__(sim, component_id)
        self.params = params or BleConnectionParams()
        self.state = BleState.DISCONNECTED
        self.anchor: VirtualTime = 0
        self.tx_queue: Deque[bytes] = deque()
        self.rx_queue: Deque[bytes] = deque()
        self._tick_pending = False
        self._central: Optional[Receiver] = None
        self._peripheral: Optional[Receiver] = None
        self._tx_ready: List[Callable[[], None]] = []
        self._disconnect_listeners: List[Callable[[], None]] = []
        self._taps: List[Callable[[str, bytes], None]] = []
        self.notifications_delivered = 0
        self.notification_bytes = 0
        self.writes_delivered = 0
        self.max_per_event = 0

    def bind(self, central: Optional[Receiver] = None, peripheral: Optional[Receiver] = None) -> None:
        """Attach the receiving side of either role; None leaves it unchanged."""
        if central is not None:
            self._central = central
        if peripheral is not None:
            self._peripheral = peripheral

    def on_tx_ready(self, callback: Callable[[], None]) -> None:
        """Called after every connection event so the peripheral can refill."""
        self._tx_ready.append(callback)

    def on_disconnect(self, callback: Callable[[], None]) -> None:
        self._disconnect_listeners.append(callback)

    def add_tap(self, tap: Callable[[str, bytes], None]) -> None:
        """Observe departures as ('notify' | 'write', payload)."""
        self._taps.append(tap)

    def connect(self) -> None:
        if self.state is BleState.CONNECTED:
            raise LinkError("session already connected")
        self.state = BleState.CONNECTED
        self.anchor = self.now()
        self.record("CONNECTED", f"interval_us={self.params.interval_us} n={self.params.notifications_per_interval}")

    def disconnect(self) -> None:
        if self.state is BleState.DISCONNECTED:
            return
        self.state = BleState.DISCONNECTED
        self.tx_queue.clear()
        self.rx_queue.clear()
        self.record("DISCONNECTED")
        for listener in self._disconnect_listeners:
            listener()

    @property
    def connected(self) -> bool:
        return self.state is BleState.CONNECTED

    def tx_space(self) -> int:
        """Free SoftDevice transmit buffers for notifications."""
        return max(0, self.params.notifications_per_interval - len(self.tx_queue))

    def next_event_time(self) -> VirtualTime:
        """First connection event strictly after now."""
        interval = self.params.interval_us
        elapsed = self.now() - self.anchor
        return self.anchor + (elapsed // interval + 1) * interval

    def notify(self, payload: bytes) -> None:
        """
        Queue a notification from the peripheral.

        Raises:
            LinkError: If disconnected or payload is not 1..20 bytes
        """
        self._check(payload)
        self.tx_queue.append(bytes(payload))
        self._ensure_tick()

    def write(self, payload: bytes) -> None:
        """Queue a write-without-response from the central."""
        self._check(payload)
        self.rx_queue.append(bytes(payload))
        self._ensure_tick()

    def _check(self, payload: bytes) -> None:
        if self.state is not BleState.CONNECTED:
            raise LinkError("BLE session is disconnected")
        if not 1 <= len(payload) <= self.params.payload_cap:
            raise LinkError(f"BLE payload must be 1..{self.params.payload_cap} bytes, got {len(payload)}")

    def _ensure_tick(self) -> None:
        if not self._tick_pending:
            self._tick_pending = True
            self.schedule_at(self.next_event_time(), "connection_event")

    def _on_connection_event(self, _payload) -> None:
        self._tick_pending = False
        if self.state is not BleState.CONNECTED:
            return
        budget = self.params.notifications_per_interval
        writes = [self.rx_queue.popleft() for _ in range(min(budget, len(self.rx_queue)))]
        notes = [self.tx_queue.popleft() for _ in range(min(budget, len(self.tx_queue)))]
        self.max_per_event = max(self.max_per_event, len(notes))
        for payload in writes:
            self.writes_delivered += 1
            for tap in self._taps:
                tap("write", payload)
            if self._peripheral is not None:
                self._peripheral(payload)
        for payload in notes:
            self.notifications_delivered += 1
            self.notification_bytes += len(payload)
            for tap in self._taps:
                tap("notify", payload)
            if self._central is not None:
                self._central(payload)
        for callback in self._tx_ready:
            callback()
        if self.tx_queue or self.rx_queue:
            self._ensure_tick()
